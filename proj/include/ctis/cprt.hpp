#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctis/error.hpp"
#include "ctis/hash.hpp"
#include "ctis/rng.hpp"
#include "ctis/text.hpp"
#include "ctis/version.hpp"

namespace ctis {

// The six report dimensions, in canonical order.
inline const std::array<std::string, 6>& cprt_dimensions() {
  static const std::array<std::string, 6> dims = {
      "Histological Features", "Lesion Characteristics", "Clinical Pathological Features",
      "Subtypes",              "Staging",                "Molecular Markers"};
  return dims;
}

inline bool is_cprt_dimension(const std::string& d) {
  for (const auto& k : cprt_dimensions())
    if (k == d) return true;
  return false;
}

struct OptionSpec {
  std::string value;
  // Lowercased keyword patterns the offline extractor accepts as evidence for
  // this option. Defaults to the normalized value itself.
  std::vector<std::string> patterns;
};

struct TemplateElement {
  std::string key;
  std::string dimension;
  bool closed = true;
  std::vector<OptionSpec> options; // closed elements only, >= 2
  std::string prompt_template;     // must contain "{report}" exactly once
  std::vector<std::string> synonyms;
  std::string phrase;       // short noun phrase for realized sentences
  std::string value_regex;  // open elements: value pattern, applied near a synonym
  std::vector<std::string> synth_values; // open elements: values for synthetic corpora

  const OptionSpec* match_option(const std::string& value) const {
    const std::string c = text::canonical(value);
    for (const auto& o : options)
      if (text::canonical(o.value) == c) return &o;
    return nullptr;
  }
};

struct CprtSchema {
  std::string name;
  std::vector<TemplateElement> elements;
  std::uint64_t checksum = 0; // FNV-1a of the schema file bytes

  const TemplateElement* find(const std::string& key) const {
    for (const auto& e : elements)
      if (e.key == key) return &e;
    return nullptr;
  }

  const TemplateElement& at(const std::string& key) const {
    const TemplateElement* e = find(key);
    require(e != nullptr, Errc::invalid_argument, "unknown schema key: " + key);
    return *e;
  }

  void validate() const {
    require(!elements.empty(), Errc::empty_input, "schema has no elements");
    std::map<std::string, int> seen;
    for (const auto& e : elements) {
      require(++seen[e.key] == 1, Errc::duplicate_key, "duplicate element key: " + e.key);
      require(is_cprt_dimension(e.dimension), Errc::unknown_dimension,
              "element " + e.key + ": unknown dimension \"" + e.dimension + "\"");
      const std::string ph = "{report}";
      std::size_t first = e.prompt_template.find(ph);
      require(first != std::string::npos &&
                  e.prompt_template.find(ph, first + 1) == std::string::npos,
              Errc::bad_prompt_template,
              "element " + e.key + ": prompt_template must contain {report} exactly once");
      if (e.closed) {
        require(e.options.size() >= 2, Errc::empty_options,
                "element " + e.key + ": closed element needs at least 2 options");
        std::map<std::string, int> vals;
        for (const auto& o : e.options) {
          require(!o.value.empty(), Errc::empty_options,
                  "element " + e.key + ": empty option value");
          require(++vals[text::canonical(o.value)] == 1, Errc::duplicate_key,
                  "element " + e.key + ": duplicate option \"" + o.value + "\"");
        }
      } else {
        require(e.options.empty(), Errc::invalid_argument,
                "element " + e.key + ": open element must not list options");
        if (!e.value_regex.empty()) {
          try {
            std::regex re(e.value_regex, std::regex::ECMAScript);
          } catch (const std::regex_error& err) {
            fail(Errc::file_format,
                 "element " + e.key + ": invalid value_regex: " + err.what());
          }
        }
      }
    }
  }
};

inline CprtSchema parse_schema(const nlohmann::json& j) {
  CprtSchema s;
  try {
    s.name = j.value("name", std::string("cprt"));
    if (j.contains("dimensions")) {
      const auto dims = j.at("dimensions").get<std::vector<std::string>>();
      require(dims.size() == 6, Errc::unknown_dimension,
              "schema must declare exactly 6 dimensions, got " + std::to_string(dims.size()));
      for (const auto& d : dims)
        require(is_cprt_dimension(d), Errc::unknown_dimension,
                "unknown dimension \"" + d + "\"");
    }
    for (const auto& je : j.at("elements")) {
      TemplateElement e;
      e.key = je.at("key").get<std::string>();
      e.dimension = je.at("dimension").get<std::string>();
      const std::string kind = je.at("answer_kind").get<std::string>();
      require(kind == "closed" || kind == "open", Errc::file_format,
              "element " + e.key + ": answer_kind must be closed or open");
      e.closed = kind == "closed";
      if (je.contains("options")) {
        for (const auto& jo : je.at("options")) {
          OptionSpec o;
          if (jo.is_string()) {
            o.value = jo.get<std::string>();
          } else {
            o.value = jo.at("value").get<std::string>();
            if (jo.contains("patterns"))
              o.patterns = jo.at("patterns").get<std::vector<std::string>>();
          }
          if (o.patterns.empty()) o.patterns.push_back(text::normalize_pattern(o.value));
          e.options.push_back(std::move(o));
        }
      }
      e.prompt_template = je.at("prompt_template").get<std::string>();
      if (je.contains("synonyms"))
        e.synonyms = je.at("synonyms").get<std::vector<std::string>>();
      e.phrase = je.value("phrase", e.key);
      e.value_regex = je.value("value_regex", std::string());
      if (je.contains("synth_values"))
        e.synth_values = je.at("synth_values").get<std::vector<std::string>>();
      s.elements.push_back(std::move(e));
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& ex) {
    fail(Errc::file_format, std::string("schema parse: ") + ex.what());
  }
  s.validate();
  return s;
}

inline CprtSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io_failure, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
  } catch (const std::exception& ex) {
    fail(Errc::file_format, path.string() + ": " + ex.what());
  }
  CprtSchema s = parse_schema(j);
  s.checksum = fnv1a64(bytes);
  return s;
}

// ---------------------------------------------------------------------------
// Reports and extracted features
// ---------------------------------------------------------------------------

struct PathologyReport {
  std::string case_id;
  std::vector<std::string> slide_ids;
  std::string text;
};

inline void write_reports(const std::vector<PathologyReport>& reports,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot open " + path.string());
  for (const auto& r : reports) {
    nlohmann::ordered_json j{{"case_id", r.case_id}, {"slide_ids", r.slide_ids},
                             {"text", r.text}};
    out << j.dump() << '\n';
  }
  require(out.good(), Errc::io_failure, "write failed on " + path.string());
}

inline std::vector<PathologyReport> read_reports(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io_failure, "cannot open " + path.string());
  std::vector<PathologyReport> out;
  std::map<std::string, int> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("record") && j.at("record") != "report") continue;
      PathologyReport r;
      r.case_id = j.at("case_id").get<std::string>();
      r.slide_ids = j.value("slide_ids", std::vector<std::string>{});
      r.text = j.at("text").get<std::string>();
      require(!r.text.empty(), Errc::empty_input,
              path.string() + " line " + std::to_string(line_no) + ": empty report text");
      require(++seen[r.case_id] == 1, Errc::duplicate_key,
              path.string() + " line " + std::to_string(line_no) + ": duplicate case_id " +
                  r.case_id);
      out.push_back(std::move(r));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& ex) {
      fail(Errc::file_format,
           path.string() + " line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

enum class FeatureStatus { extracted, verified, contradicted, absent };

inline const char* status_name(FeatureStatus s) {
  switch (s) {
    case FeatureStatus::extracted: return "extracted";
    case FeatureStatus::verified: return "verified";
    case FeatureStatus::contradicted: return "contradicted";
    case FeatureStatus::absent: return "absent";
  }
  return "absent";
}

inline FeatureStatus parse_status(const std::string& s) {
  if (s == "extracted") return FeatureStatus::extracted;
  if (s == "verified") return FeatureStatus::verified;
  if (s == "contradicted") return FeatureStatus::contradicted;
  if (s == "absent") return FeatureStatus::absent;
  fail(Errc::file_format, "unknown feature status: " + s);
}

struct ExtractedFeature {
  std::string case_id;
  std::string key;
  std::string value;
  FeatureStatus status = FeatureStatus::absent;
  std::string extractor;
  std::optional<std::pair<std::size_t, std::size_t>> span; // [begin, end) in report text

  bool usable() const {
    return status == FeatureStatus::extracted || status == FeatureStatus::verified;
  }
};

inline void write_feature_records(const std::vector<ExtractedFeature>& feats,
                                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot open " + path.string());
  for (const auto& f : feats) {
    nlohmann::ordered_json j{{"case_id", f.case_id},
                             {"key", f.key},
                             {"value", f.value},
                             {"status", status_name(f.status)},
                             {"extractor", f.extractor}};
    if (f.span) j["span"] = {f.span->first, f.span->second};
    out << j.dump() << '\n';
  }
  require(out.good(), Errc::io_failure, "write failed on " + path.string());
}

inline std::vector<ExtractedFeature> read_feature_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io_failure, "cannot open " + path.string());
  std::vector<ExtractedFeature> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("record") && j.at("record") != "feature") continue;
      ExtractedFeature f;
      f.case_id = j.at("case_id").get<std::string>();
      f.key = j.at("key").get<std::string>();
      f.value = j.value("value", std::string());
      f.status = parse_status(j.at("status").get<std::string>());
      f.extractor = j.value("extractor", std::string());
      if (j.contains("span")) {
        const auto sp = j.at("span").get<std::vector<std::size_t>>();
        require(sp.size() == 2, Errc::file_format, "span must be [begin, end)");
        f.span = std::make_pair(sp[0], sp[1]);
      }
      out.push_back(std::move(f));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& ex) {
      fail(Errc::file_format,
           path.string() + " line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Extractors
// ---------------------------------------------------------------------------

struct ElementExtraction {
  std::optional<std::string> value;
  std::optional<std::pair<std::size_t, std::size_t>> span;
};

enum class Verdict { confirmed, contradicted, unknown };

class Extractor {
 public:
  virtual ~Extractor() = default;
  virtual std::string name() const = 0;
  virtual ElementExtraction extract_element(const PathologyReport& report,
                                            const TemplateElement& element) = 0;
  virtual Verdict verify_element(const PathologyReport& report, const TemplateElement& element,
                                 const std::string& value) = 0;
};

// Deterministic keyword extractor. Closed elements: best word-bounded option
// pattern match (earliest position, then longest pattern, then declared option
// order) with negation suppression. Open elements: value_regex applied to a
// window after the earliest synonym mention.
class OfflineExtractor final : public Extractor {
 public:
  static constexpr std::size_t kWindow = 120;   // verification window (normalized chars)
  static constexpr std::size_t kNegationSpan = 24; // look-behind for negation cues

  std::string name() const override { return "offline"; }

  ElementExtraction extract_element(const PathologyReport& report,
                                    const TemplateElement& element) override {
    const auto norm = text::NormalizedText::make(report.text);
    if (element.closed)
      return best_option_match(norm, element, 0, norm.norm.size());
    return open_match(norm, report.text, element);
  }

  Verdict verify_element(const PathologyReport& report, const TemplateElement& element,
                         const std::string& value) override {
    const auto norm = text::NormalizedText::make(report.text);
    const auto anchor = earliest_synonym(norm, element);
    if (!anchor) return Verdict::unknown;
    if (element.closed) {
      const std::size_t lo = anchor->first;
      const std::size_t hi = std::min(norm.norm.size(), lo + anchor->second + kWindow);
      const auto hit = best_option_match(norm, element, lo, hi);
      if (!hit.value) return Verdict::unknown;
      return text::canonical(*hit.value) == text::canonical(value) ? Verdict::confirmed
                                                                   : Verdict::contradicted;
    }
    const std::size_t lo = std::min(norm.norm.size(), anchor->first + anchor->second);
    const std::size_t hi = std::min(norm.norm.size(), lo + kWindow);
    const auto hit = open_match_in(norm, report.text, element, lo, hi);
    if (!hit.value) return Verdict::unknown;
    return text::canonical(*hit.value) == text::canonical(value) ? Verdict::confirmed
                                                                 : Verdict::contradicted;
  }

 private:
  static bool pattern_self_negating(const std::string& pat) {
    for (const char* tok : {"no", "not", "negative", "absent", "without"})
      if (!text::find_word_matches(pat, tok).empty()) return true;
    return false;
  }

  static bool negated_at(const text::NormalizedText& norm, std::size_t pos,
                         const std::string& pat) {
    if (pattern_self_negating(pat)) return false;
    const std::size_t lo = pos > kNegationSpan ? pos - kNegationSpan : 0;
    const std::string pre = norm.norm.substr(lo, pos - lo);
    for (const char* cue : {"no", "negative for", "absent"})
      if (!text::find_word_matches(pre, cue).empty()) return true;
    return false;
  }

  static ElementExtraction best_option_match(const text::NormalizedText& norm,
                                             const TemplateElement& element, std::size_t lo,
                                             std::size_t hi) {
    ElementExtraction out;
    std::size_t best_pos = 0, best_len = 0;
    std::size_t best_opt = 0;
    bool found = false;
    for (std::size_t oi = 0; oi < element.options.size(); ++oi) {
      for (const auto& raw : element.options[oi].patterns) {
        const std::string pat = text::normalize_pattern(raw);
        if (pat.empty()) continue;
        for (std::size_t pos : text::find_word_matches(norm.norm, pat)) {
          if (pos < lo || pos + pat.size() > hi) continue;
          if (negated_at(norm, pos, pat)) continue;
          const bool better = !found || pos < best_pos ||
                              (pos == best_pos && pat.size() > best_len) ||
                              (pos == best_pos && pat.size() == best_len && oi < best_opt);
          if (better) {
            found = true;
            best_pos = pos;
            best_len = pat.size();
            best_opt = oi;
          }
          break; // matches scan left to right; later hits never beat this one
        }
      }
    }
    if (found) {
      out.value = element.options[best_opt].value;
      out.span = norm.original_span(best_pos, best_pos + best_len);
    }
    return out;
  }

  // Earliest synonym mention; ties at the same position prefer the longest
  // synonym so the window for open values starts past e.g. "ki 67 index".
  static std::optional<std::pair<std::size_t, std::size_t>> earliest_synonym(
      const text::NormalizedText& norm, const TemplateElement& element) {
    std::optional<std::pair<std::size_t, std::size_t>> best; // (pos, len)
    for (const auto& raw : element.synonyms) {
      const std::string pat = text::normalize_pattern(raw);
      if (pat.empty()) continue;
      const auto hits = text::find_word_matches(norm.norm, pat);
      if (hits.empty()) continue;
      const std::pair<std::size_t, std::size_t> cand{hits.front(), pat.size()};
      if (!best || cand.first < best->first ||
          (cand.first == best->first && cand.second > best->second))
        best = cand;
    }
    return best;
  }

  static ElementExtraction open_match_in(const text::NormalizedText& norm,
                                         const std::string& original,
                                         const TemplateElement& element, std::size_t lo,
                                         std::size_t hi) {
    ElementExtraction out;
    if (element.value_regex.empty()) return out;
    const std::string window = norm.norm.substr(lo, hi - lo);
    const std::regex re(element.value_regex, std::regex::ECMAScript);
    std::smatch m;
    if (!std::regex_search(window, m, re)) return out;
    const std::size_t b = lo + static_cast<std::size_t>(m.position(0));
    const std::size_t e = b + static_cast<std::size_t>(m.length(0));
    if (e == b) return out;
    const auto span = norm.original_span(b, e);
    out.span = span;
    out.value = original.substr(span.first, span.second - span.first);
    return out;
  }

  ElementExtraction open_match(const text::NormalizedText& norm, const std::string& original,
                               const TemplateElement& element) {
    const auto anchor = earliest_synonym(norm, element);
    if (!anchor) return {};
    const std::size_t lo = std::min(norm.norm.size(), anchor->first + anchor->second);
    const std::size_t hi = std::min(norm.norm.size(), lo + kWindow);
    return open_match_in(norm, original, element, lo, hi);
  }
};

// One feature per schema element; closed values canonicalized onto the option
// vocabulary, everything undeterminable recorded as absent.
inline std::vector<ExtractedFeature> extract(const PathologyReport& report,
                                             const CprtSchema& schema, Extractor& extractor) {
  std::vector<ExtractedFeature> out;
  out.reserve(schema.elements.size());
  for (const auto& element : schema.elements) {
    ExtractedFeature f;
    f.case_id = report.case_id;
    f.key = element.key;
    f.extractor = extractor.name();
    ElementExtraction ex = extractor.extract_element(report, element);
    if (ex.value && !ex.value->empty()) {
      if (element.closed) {
        const OptionSpec* opt = element.match_option(*ex.value);
        if (opt) {
          f.value = opt->value;
          f.status = FeatureStatus::extracted;
          f.span = ex.span;
        }
      } else {
        f.value = *ex.value;
        f.status = FeatureStatus::extracted;
        f.span = ex.span;
      }
    }
    out.push_back(std::move(f));
  }
  return out;
}

inline std::vector<ExtractedFeature> extract_corpus(const std::vector<PathologyReport>& reports,
                                                    const CprtSchema& schema,
                                                    Extractor& extractor) {
  std::vector<ExtractedFeature> out;
  out.reserve(reports.size() * schema.elements.size());
  for (const auto& r : reports) {
    auto fs = extract(r, schema, extractor);
    out.insert(out.end(), std::make_move_iterator(fs.begin()),
               std::make_move_iterator(fs.end()));
  }
  return out;
}

// Second-stage check of extracted pairs against the source text. Contradicted
// pairs are kept (never dropped); absent and already-contradicted pairs pass
// through untouched, so the operation is idempotent.
inline void self_verify(std::vector<ExtractedFeature>& features, const PathologyReport& report,
                        const CprtSchema& schema, Extractor& extractor) {
  for (auto& f : features) {
    if (f.case_id != report.case_id) continue;
    if (f.status == FeatureStatus::absent || f.status == FeatureStatus::contradicted) continue;
    const TemplateElement& element = schema.at(f.key);
    switch (extractor.verify_element(report, element, f.value)) {
      case Verdict::confirmed: f.status = FeatureStatus::verified; break;
      case Verdict::contradicted: f.status = FeatureStatus::contradicted; break;
      case Verdict::unknown: break;
    }
  }
}

inline void self_verify_corpus(std::vector<ExtractedFeature>& features,
                               const std::vector<PathologyReport>& reports,
                               const CprtSchema& schema, Extractor& extractor) {
  for (const auto& r : reports) self_verify(features, r, schema, extractor);
}

// ---------------------------------------------------------------------------
// Pathologist spot-check round trip (tab-separated review files)
// ---------------------------------------------------------------------------

inline void spot_check_export(const std::vector<ExtractedFeature>& features,
                              std::size_t sample_size, std::uint64_t seed,
                              const std::filesystem::path& path) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < features.size(); ++i)
    if (features[i].status != FeatureStatus::absent) eligible.push_back(i);
  const std::size_t k = std::min(sample_size, eligible.size());
  rng::Stream stream(rng::mix(seed, 0x73706f74ULL));
  std::vector<std::size_t> pick = stream.sample_without_replacement(eligible.size(), k);
  std::sort(pick.begin(), pick.end());

  std::ofstream out(path, std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot open " + path.string());
  for (std::size_t p : pick) {
    const auto& f = features[eligible[p]];
    out << f.case_id << '\t' << f.key << '\t' << f.value << '\t' << status_name(f.status)
        << '\t' << '-' << '\n';
  }
  require(out.good(), Errc::io_failure, "write failed on " + path.string());
}

// Merges human verdicts back: "-" leaves the pair untouched, "correct" marks
// it verified, "incorrect" marks it contradicted.
inline std::vector<ExtractedFeature> spot_check_import(std::vector<ExtractedFeature> features,
                                                       const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io_failure, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    require(cols.size() == 5, Errc::malformed_review_file,
            path.string() + " line " + std::to_string(line_no) + ": expected 5 columns, got " +
                std::to_string(cols.size()));
    ExtractedFeature* hit = nullptr;
    for (auto& f : features)
      if (f.case_id == cols[0] && f.key == cols[1]) {
        hit = &f;
        break;
      }
    require(hit != nullptr, Errc::malformed_review_file,
            path.string() + " line " + std::to_string(line_no) + ": unknown pair " + cols[0] +
                "/" + cols[1]);
    const std::string& verdict = cols[4];
    if (verdict == "-") continue;
    if (verdict == "correct") {
      hit->status = FeatureStatus::verified;
    } else if (verdict == "incorrect") {
      hit->status = FeatureStatus::contradicted;
    } else {
      fail(Errc::malformed_review_file,
           path.string() + " line " + std::to_string(line_no) + ": unknown verdict \"" +
               verdict + "\"");
    }
  }
  return features;
}

} // namespace ctis
