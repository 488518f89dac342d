#pragma once

#include <cctype>
#include <cstddef>
#include <string>
#include <vector>

namespace ctis::text {

inline bool ascii_alnum(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

inline char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

// Canonical tokenizer: lowercase, split on whitespace, strip leading/trailing
// punctuation from each token. '+' is never stripped (HER2 "3+" style values
// survive) and internal punctuation such as hyphens is kept.
inline std::vector<std::string> tokenize(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = s.size();
  while (i < n) {
    while (i < n && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < n && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) {
      std::size_t b = i, e = j;
      auto keep = [&](char c) {
        return ascii_alnum(c) || c == '+' || static_cast<unsigned char>(c) >= 0x80;
      };
      while (b < e && !keep(s[b])) ++b;
      while (e > b && !keep(s[e - 1])) --e;
      if (e > b) {
        std::string tok;
        tok.reserve(e - b);
        for (std::size_t k = b; k < e; ++k) tok.push_back(ascii_lower(s[k]));
        out.push_back(std::move(tok));
      }
    }
    i = j;
  }
  return out;
}

// Tokenized form joined by single spaces; the equality key for option
// matching and closed-answer scoring.
inline std::string canonical(const std::string& s) {
  const auto toks = tokenize(s);
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out.push_back(' ');
    out += toks[i];
  }
  return out;
}

// Lossy lowercase view for keyword matching: runs of anything outside
// [a-z0-9+] collapse to one space; offsets map every normalized character
// back to a byte position in the original string.
struct NormalizedText {
  std::string norm;
  std::vector<std::size_t> offsets;

  static NormalizedText make(const std::string& s) {
    NormalizedText t;
    t.norm.reserve(s.size());
    t.offsets.reserve(s.size());
    bool pending_sep = false;
    std::size_t sep_at = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const char c = ascii_lower(s[i]);
      const bool keep = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '+';
      if (keep) {
        if (pending_sep && !t.norm.empty()) {
          t.norm.push_back(' ');
          t.offsets.push_back(sep_at);
        }
        pending_sep = false;
        t.norm.push_back(c);
        t.offsets.push_back(i);
      } else if (!pending_sep) {
        pending_sep = true;
        sep_at = i;
      }
    }
    return t;
  }

  // Original byte span [begin, end) covering normalized range [b, e).
  std::pair<std::size_t, std::size_t> original_span(std::size_t b, std::size_t e) const {
    if (b >= e || e > norm.size()) return {0, 0};
    return {offsets[b], offsets[e - 1] + 1};
  }
};

inline std::string normalize_pattern(const std::string& s) {
  return NormalizedText::make(s).norm;
}

// All word-boundary occurrences of `pat` in `norm` (both already normalized).
inline std::vector<std::size_t> find_word_matches(const std::string& norm,
                                                  const std::string& pat) {
  std::vector<std::size_t> hits;
  if (pat.empty() || pat.size() > norm.size()) return hits;
  std::size_t pos = 0;
  while ((pos = norm.find(pat, pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || norm[pos - 1] == ' ';
    const std::size_t end = pos + pat.size();
    const bool right_ok = end == norm.size() || norm[end] == ' ';
    if (left_ok && right_ok) hits.push_back(pos);
    ++pos;
  }
  return hits;
}

} // namespace ctis::text
