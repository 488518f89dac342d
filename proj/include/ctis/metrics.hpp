#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctis/builders.hpp"
#include "ctis/error.hpp"
#include "ctis/text.hpp"

namespace ctis::metrics {

using TokenSeq = std::vector<std::string>;

inline TokenSeq tokens(const std::string& s) { return text::tokenize(s); }

// ---------------------------------------------------------------------------
// BLEU: clipped modified n-gram precision, corpus counts aggregated, brevity
// penalty exp(1 - r/c) when c < r. Orders with no possible n-grams (sentence
// shorter than n) are skipped; any measurable order with zero matches makes
// the score 0 (no smoothing).
// ---------------------------------------------------------------------------

struct BleuCounts {
  std::array<std::uint64_t, 4> match{};
  std::array<std::uint64_t, 4> total{};
  std::uint64_t hyp_len = 0;
  std::uint64_t ref_len = 0;

  void add(const TokenSeq& hyp, const std::vector<TokenSeq>& refs) {
    require(!refs.empty(), Errc::empty_input, "bleu needs at least one reference");
    // closest reference length; ties prefer the shorter reference
    std::uint64_t closest = 0;
    bool first = true;
    for (const auto& r : refs) {
      const auto len = static_cast<std::uint64_t>(r.size());
      const auto d = len > hyp.size() ? len - hyp.size() : hyp.size() - len;
      const auto dc = closest > hyp.size() ? closest - hyp.size() : hyp.size() - closest;
      if (first || d < dc || (d == dc && len < closest)) {
        closest = len;
        first = false;
      }
    }
    hyp_len += hyp.size();
    ref_len += closest;

    for (std::size_t n = 1; n <= 4; ++n) {
      if (hyp.size() < n) continue;
      auto grams = [&](const TokenSeq& seq) {
        std::map<std::string, std::uint64_t> g;
        for (std::size_t i = 0; i + n <= seq.size(); ++i) {
          std::string key;
          for (std::size_t k = 0; k < n; ++k) {
            if (k) key.push_back('\x1f');
            key += seq[i + k];
          }
          ++g[key];
        }
        return g;
      };
      const auto hg = grams(hyp);
      std::map<std::string, std::uint64_t> clip;
      for (const auto& r : refs)
        for (const auto& [gram, count] : grams(r))
          clip[gram] = std::max(clip[gram], count);
      std::uint64_t m = 0;
      for (const auto& [gram, count] : hg) {
        const auto it = clip.find(gram);
        if (it != clip.end()) m += std::min(count, it->second);
      }
      match[n - 1] += m;
      total[n - 1] += hyp.size() - n + 1;
    }
  }

  double score(int max_n) const {
    require(max_n >= 1 && max_n <= 4, Errc::invalid_argument, "max_n must be in [1,4]");
    if (hyp_len == 0) return 0.0;
    double log_sum = 0.0;
    int used = 0;
    for (int n = 0; n < max_n; ++n) {
      if (total[static_cast<std::size_t>(n)] == 0) continue;
      if (match[static_cast<std::size_t>(n)] == 0) return 0.0;
      log_sum += std::log(static_cast<double>(match[static_cast<std::size_t>(n)]) /
                          static_cast<double>(total[static_cast<std::size_t>(n)]));
      ++used;
    }
    if (used == 0) return 0.0;
    const double geo = std::exp(log_sum / used);
    const double bp = hyp_len < ref_len
                          ? std::exp(1.0 - static_cast<double>(ref_len) /
                                               static_cast<double>(hyp_len))
                          : 1.0;
    return geo * bp;
  }
};

inline double bleu(const TokenSeq& hyp, const std::vector<TokenSeq>& refs, int max_n) {
  require(!hyp.empty(), Errc::empty_input, "empty hypothesis");
  require(!refs.empty(), Errc::empty_input, "no references");
  for (const auto& r : refs) require(!r.empty(), Errc::empty_input, "empty reference");
  BleuCounts c;
  c.add(hyp, refs);
  return c.score(max_n);
}

// ---------------------------------------------------------------------------
// meteor_x: exact-match METEOR variant. Unigram alignment is greedy left to
// right over the hypothesis, preferring the reference position adjacent to
// the previous match (fewest chunks), else the leftmost unused occurrence.
// ---------------------------------------------------------------------------

struct MeteorCounts {
  std::uint64_t m = 0;
  std::uint64_t hyp_len = 0;
  std::uint64_t ref_len = 0;
  std::uint64_t chunks = 0;

  void add(const TokenSeq& hyp, const TokenSeq& ref) {
    hyp_len += hyp.size();
    ref_len += ref.size();
    std::vector<bool> used(ref.size(), false);
    std::ptrdiff_t last_h = -2, last_r = -2;
    std::uint64_t local_m = 0, local_chunks = 0;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      std::ptrdiff_t pick = -1;
      const std::ptrdiff_t adj = last_r + 1;
      if (static_cast<std::ptrdiff_t>(i) == last_h + 1 && adj >= 0 &&
          adj < static_cast<std::ptrdiff_t>(ref.size()) &&
          !used[static_cast<std::size_t>(adj)] &&
          ref[static_cast<std::size_t>(adj)] == hyp[i]) {
        pick = adj;
      } else {
        for (std::size_t j = 0; j < ref.size(); ++j)
          if (!used[j] && ref[j] == hyp[i]) {
            pick = static_cast<std::ptrdiff_t>(j);
            break;
          }
      }
      if (pick < 0) continue;
      used[static_cast<std::size_t>(pick)] = true;
      const bool extends = static_cast<std::ptrdiff_t>(i) == last_h + 1 && pick == last_r + 1;
      if (!extends) ++local_chunks;
      ++local_m;
      last_h = static_cast<std::ptrdiff_t>(i);
      last_r = pick;
    }
    m += local_m;
    chunks += local_chunks;
  }

  double score() const {
    if (m == 0) return 0.0;
    const double p = static_cast<double>(m) / static_cast<double>(hyp_len);
    const double r = static_cast<double>(m) / static_cast<double>(ref_len);
    const double fmean = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(chunks) / static_cast<double>(m);
    const double penalty = 0.5 * frag * frag * frag;
    return fmean * (1.0 - penalty);
  }
};

inline double meteor_x(const TokenSeq& hyp, const TokenSeq& ref) {
  require(!hyp.empty() && !ref.empty(), Errc::empty_input, "empty input to meteor_x");
  MeteorCounts c;
  c.add(hyp, ref);
  return c.score();
}

// ---------------------------------------------------------------------------
// ROUGE-L: LCS-based F1.
// ---------------------------------------------------------------------------

inline std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

struct RougeCounts {
  std::uint64_t lcs = 0;
  std::uint64_t hyp_len = 0;
  std::uint64_t ref_len = 0;

  void add(const TokenSeq& hyp, const TokenSeq& ref) {
    lcs += lcs_length(hyp, ref);
    hyp_len += hyp.size();
    ref_len += ref.size();
  }

  double score() const {
    if (lcs == 0 || hyp_len == 0 || ref_len == 0) return 0.0;
    const double p = static_cast<double>(lcs) / static_cast<double>(hyp_len);
    const double r = static_cast<double>(lcs) / static_cast<double>(ref_len);
    return 2.0 * p * r / (p + r);
  }
};

inline double rouge_l(const TokenSeq& hyp, const TokenSeq& ref) {
  require(!hyp.empty() && !ref.empty(), Errc::empty_input, "empty input to rouge_l");
  RougeCounts c;
  c.add(hyp, ref);
  return c.score();
}

// ---------------------------------------------------------------------------
// Benchmark scoring
// ---------------------------------------------------------------------------

struct Prediction {
  std::string pair_id;
  std::string text;
};

inline std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io_failure, "cannot open " + path.string());
  std::vector<Prediction> out;
  std::map<std::string, int> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("record") && j.at("record") != "prediction") continue;
      Prediction p;
      p.pair_id = j.at("pair_id").get<std::string>();
      p.text = j.at("text").get<std::string>();
      require(++seen[p.pair_id] == 1, Errc::duplicate_key,
              path.string() + " line " + std::to_string(line_no) + ": duplicate pair_id " +
                  p.pair_id);
      out.push_back(std::move(p));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& ex) {
      fail(Errc::file_format,
           path.string() + " line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  require(!out.empty(), Errc::empty_input, path.string() + ": no predictions");
  return out;
}

inline void write_predictions(const std::vector<Prediction>& preds,
                              const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot open " + path.string());
  for (const auto& p : preds) {
    nlohmann::ordered_json j{{"pair_id", p.pair_id}, {"text", p.text}};
    out << j.dump() << '\n';
  }
  require(out.good(), Errc::io_failure, "write failed on " + path.string());
}

struct ScoreOptions {
  bool sentence_average = false; // mean of per-pair scores instead of corpus counts
  bool text_over_all = false;    // text metrics over all pairs, not just open ones
};

struct ScoreReport {
  double bleu1 = 0.0;
  double bleu4 = 0.0;
  double meteor = 0.0;
  double rouge = 0.0;
  double closed_accuracy = 0.0;
  std::vector<std::pair<std::string, double>> per_aspect; // canonical order, present only
  double average = 0.0;
  std::size_t n_scored = 0;
  std::size_t n_closed = 0;
  std::size_t n_open = 0;
  std::size_t n_text = 0;
  ScoreOptions options;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json aspects;
    for (const auto& [name, v] : per_aspect) aspects[name] = v;
    return {{"record", "score_report"},
            {"n_scored", n_scored},
            {"n_closed", n_closed},
            {"n_open", n_open},
            {"n_text", n_text},
            {"sentence_average", options.sentence_average},
            {"text_over_all", options.text_over_all},
            {"bleu1", bleu1},
            {"bleu4", bleu4},
            {"meteor_x", meteor},
            {"rouge_l", rouge},
            {"closed_accuracy", closed_accuracy},
            {"per_aspect_balanced_accuracy", aspects},
            {"average", average}};
  }

  std::string to_table() const {
    static const std::map<std::string, std::string> abbrev = {
        {"Histological Features", "H.F."},  {"Lesion Characteristics", "L.C."},
        {"Clinical Pathological Features", "C.P.F."},
        {"Subtypes", "Subtypes"},           {"Staging", "Staging"},
        {"Molecular Markers", "M.M."}};
    char buf[160];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%8s %8s %9s %8s %10s\n", "BLEU-1", "BLEU-4", "METEOR-x",
                  "ROUGE-L", "ClosedAcc");
    out += buf;
    std::snprintf(buf, sizeof(buf), "%8.4f %8.4f %9.4f %8.4f %10.4f\n\n", bleu1, bleu4, meteor,
                  rouge, closed_accuracy);
    out += buf;
    std::string head, row;
    for (const auto& dim : cprt_dimensions()) {
      double v = -1.0;
      for (const auto& [name, val] : per_aspect)
        if (name == dim) v = val;
      std::snprintf(buf, sizeof(buf), "%9s ", abbrev.at(dim).c_str());
      head += buf;
      if (v < 0.0)
        std::snprintf(buf, sizeof(buf), "%9s ", "-");
      else
        std::snprintf(buf, sizeof(buf), "%9.4f ", v);
      row += buf;
    }
    std::snprintf(buf, sizeof(buf), "%9s\n", "Avg");
    head += buf;
    std::snprintf(buf, sizeof(buf), "%9.4f\n", average);
    row += buf;
    return out + head + row;
  }
};

// Scores predictions against benchmark pairs. Every bench pair must have a
// prediction; predictions for unknown pairs are an error.
inline ScoreReport score_pairs(const std::vector<QaPair>& bench,
                               const std::vector<Prediction>& preds,
                               const ScoreOptions& opts = {}) {
  require(!bench.empty(), Errc::empty_input, "no benchmark pairs");
  std::map<std::string, const QaPair*> by_id;
  for (const auto& p : bench) by_id[p.pair_id] = &p;
  std::map<std::string, const std::string*> pred_text;
  for (const auto& p : preds) {
    require(by_id.count(p.pair_id) == 1, Errc::unknown_pair_id,
            "prediction for unknown pair " + p.pair_id);
    pred_text[p.pair_id] = &p.text;
  }
  for (const auto& p : bench)
    require(pred_text.count(p.pair_id) == 1, Errc::missing_prediction,
            "no prediction for pair " + p.pair_id);

  ScoreReport rep;
  rep.options = opts;
  rep.n_scored = bench.size();

  // closed accuracy and per-aspect balanced accuracy
  std::size_t closed_right = 0;
  // aspect -> gold class -> (total, correct)
  std::map<std::string, std::map<std::string, std::pair<std::size_t, std::size_t>>> classes;
  for (const auto& p : bench) {
    const std::string gold = text::canonical(p.answer);
    const std::string pred = text::canonical(*pred_text.at(p.pair_id));
    const bool correct = gold == pred;
    if (p.closed) {
      ++rep.n_closed;
      if (correct) ++closed_right;
    } else {
      ++rep.n_open;
    }
    auto& cls = classes[p.aspect][gold];
    ++cls.first;
    if (correct) ++cls.second;
  }
  rep.closed_accuracy =
      rep.n_closed ? static_cast<double>(closed_right) / static_cast<double>(rep.n_closed) : 0.0;

  double aspect_sum = 0.0;
  for (const auto& dim : cprt_dimensions()) {
    const auto it = classes.find(dim);
    if (it == classes.end()) continue; // aspect with no scored pairs: omitted
    double recall_sum = 0.0;
    for (const auto& [cls, tc] : it->second)
      recall_sum += static_cast<double>(tc.second) / static_cast<double>(tc.first);
    const double balanced = recall_sum / static_cast<double>(it->second.size());
    rep.per_aspect.emplace_back(dim, balanced);
    aspect_sum += balanced;
  }
  rep.average = rep.per_aspect.empty() ? 0.0 : aspect_sum / static_cast<double>(rep.per_aspect.size());

  // text metrics over open pairs (or all pairs with the flag)
  BleuCounts bleu_counts;
  MeteorCounts meteor_counts;
  RougeCounts rouge_counts;
  double s_bleu1 = 0.0, s_bleu4 = 0.0, s_meteor = 0.0, s_rouge = 0.0;
  for (const auto& p : bench) {
    if (p.closed && !opts.text_over_all) continue;
    ++rep.n_text;
    const TokenSeq hyp = tokens(*pred_text.at(p.pair_id));
    const TokenSeq ref = tokens(p.answer);
    if (opts.sentence_average) {
      if (!hyp.empty() && !ref.empty()) {
        BleuCounts b;
        b.add(hyp, {ref});
        s_bleu1 += b.score(1);
        s_bleu4 += b.score(4);
        s_meteor += meteor_x(hyp, ref);
        s_rouge += rouge_l(hyp, ref);
      }
    } else {
      bleu_counts.add(hyp, {ref});
      meteor_counts.add(hyp, ref);
      rouge_counts.add(hyp, ref);
    }
  }
  if (rep.n_text > 0) {
    if (opts.sentence_average) {
      const auto n = static_cast<double>(rep.n_text);
      rep.bleu1 = s_bleu1 / n;
      rep.bleu4 = s_bleu4 / n;
      rep.meteor = s_meteor / n;
      rep.rouge = s_rouge / n;
    } else {
      rep.bleu1 = bleu_counts.score(1);
      rep.bleu4 = bleu_counts.score(4);
      rep.meteor = meteor_counts.score();
      rep.rouge = rouge_counts.score();
    }
  }
  return rep;
}

inline ScoreReport score_run(const std::filesystem::path& pred_path,
                             const std::filesystem::path& bench_path,
                             const ScoreOptions& opts = {}) {
  const auto bench = read_bench(bench_path);
  require(!bench.empty(), Errc::empty_input, bench_path.string() + ": no pairs");
  const auto preds = read_predictions(pred_path);
  return score_pairs(bench, preds, opts);
}

} // namespace ctis::metrics
