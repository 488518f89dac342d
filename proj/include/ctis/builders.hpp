#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctis/cprt.hpp"
#include "ctis/error.hpp"
#include "ctis/hash.hpp"
#include "ctis/rng.hpp"
#include "ctis/text.hpp"
#include "ctis/version.hpp"

namespace ctis {

// Every dataset file starts with one header record carrying provenance.
inline nlohmann::ordered_json dataset_header(std::uint64_t seed, std::uint64_t schema_checksum) {
  return {{"record", "header"},
          {"seed", seed},
          {"schema_checksum", to_hex(schema_checksum)},
          {"tool_version", kToolVersion}};
}

// ---------------------------------------------------------------------------
// Realizers: turn (phrase, value) selections into description text.
// ---------------------------------------------------------------------------

class Realizer {
 public:
  virtual ~Realizer() = default;
  virtual std::string name() const = 0;
  virtual std::string realize(const std::string& case_id,
                              const std::vector<std::pair<std::string, std::string>>&
                                  phrase_values) = 0;
};

// Deterministic sentence-template realizer.
class OfflineRealizer final : public Realizer {
 public:
  std::string name() const override { return "offline"; }
  std::string realize(const std::string&,
                      const std::vector<std::pair<std::string, std::string>>& pv) override {
    std::string out;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      if (i) out += "; ";
      out += (i == 0 ? "The " : "the ") + pv[i].first + " is " + pv[i].second;
    }
    out += ".";
    return out;
  }
};

// ---------------------------------------------------------------------------
// Description alignment samples
// ---------------------------------------------------------------------------

struct AlignSample {
  std::string case_id;
  std::vector<std::string> feature_keys; // 3-5 distinct schema keys
  std::string description;
  std::size_t sample_index = 0;
  std::uint64_t seed_trace = 0;
};

struct AlignWarning {
  std::string case_id;
  std::string message;
};

struct AlignFailure {
  std::string case_id;
  std::size_t sample_index = 0;
  std::string reason;
};

struct AlignBuild {
  std::vector<AlignSample> samples;
  std::vector<AlignWarning> warnings;
  std::vector<AlignFailure> failures;
};

// Per eligible case (>= 3 usable features) draws samples_per_case samples of
// 3-5 features each and realizes them into a description. Deterministic under
// (inputs, seed); the realizer gets one retry per sample.
inline AlignBuild build_align(const std::vector<ExtractedFeature>& features,
                              const CprtSchema& schema, Realizer& realizer, std::uint64_t seed,
                              std::size_t samples_per_case = 100) {
  // usable features per case, in schema element order
  std::map<std::string, std::vector<const ExtractedFeature*>> by_case;
  for (const auto& f : features) {
    if (!f.usable()) continue;
    schema.at(f.key); // unknown keys are a hard error
    by_case[f.case_id].push_back(&f);
  }
  std::map<std::string, std::size_t> key_order;
  for (std::size_t i = 0; i < schema.elements.size(); ++i)
    key_order[schema.elements[i].key] = i;

  AlignBuild out;
  for (auto& [case_id, feats] : by_case) {
    std::sort(feats.begin(), feats.end(),
              [&](const ExtractedFeature* a, const ExtractedFeature* b) {
                return key_order.at(a->key) < key_order.at(b->key);
              });
    if (feats.size() < 3) {
      out.warnings.push_back({case_id, "only " + std::to_string(feats.size()) +
                                           " usable features, need 3; case skipped"});
      continue;
    }
    for (std::size_t s = 0; s < samples_per_case; ++s) {
      const std::uint64_t trace = rng::mix(seed, fnv1a64(case_id), s);
      rng::Stream stream(trace);
      std::size_t n = 3 + stream.next_below(3); // uniform over {3,4,5}
      n = std::min(n, feats.size());
      std::vector<std::size_t> pick = stream.sample_without_replacement(feats.size(), n);
      std::sort(pick.begin(), pick.end());

      AlignSample sample;
      sample.case_id = case_id;
      sample.sample_index = s;
      sample.seed_trace = trace;
      std::vector<std::pair<std::string, std::string>> pv;
      for (std::size_t p : pick) {
        sample.feature_keys.push_back(feats[p]->key);
        pv.emplace_back(schema.at(feats[p]->key).phrase, feats[p]->value);
      }

      // A valid description must mention every selected value.
      const auto mentions_all = [&](const std::string& desc) {
        const std::string c = " " + text::canonical(desc) + " ";
        for (const auto& [phrase, value] : pv) {
          (void)phrase;
          if (c.find(" " + text::canonical(value) + " ") == std::string::npos) return false;
        }
        return true;
      };

      std::string reason;
      bool ok = false;
      for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
        try {
          sample.description = realizer.realize(case_id, pv);
          if (mentions_all(sample.description)) {
            ok = true;
          } else {
            reason = "description does not mention every selected value";
          }
        } catch (const std::exception& e) {
          reason = e.what();
        }
      }
      if (ok) {
        out.samples.push_back(std::move(sample));
      } else {
        out.failures.push_back({case_id, s, reason});
      }
    }
  }
  return out;
}

inline void write_align(const AlignBuild& build, std::uint64_t seed,
                        std::uint64_t schema_checksum, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot open " + path.string());
  out << dataset_header(seed, schema_checksum).dump() << '\n';
  for (const auto& s : build.samples) {
    nlohmann::ordered_json j{{"record", "align"},
                             {"case_id", s.case_id},
                             {"sample_index", s.sample_index},
                             {"feature_keys", s.feature_keys},
                             {"description", s.description},
                             {"seed_trace", s.seed_trace}};
    out << j.dump() << '\n';
  }
  for (const auto& w : build.warnings) {
    nlohmann::ordered_json j{{"record", "warning"}, {"case_id", w.case_id},
                             {"message", w.message}};
    out << j.dump() << '\n';
  }
  for (const auto& f : build.failures) {
    nlohmann::ordered_json j{{"record", "failure"},
                             {"case_id", f.case_id},
                             {"sample_index", f.sample_index},
                             {"reason", f.reason}};
    out << j.dump() << '\n';
  }
  require(out.good(), Errc::io_failure, "write failed on " + path.string());
}

inline std::vector<AlignSample> read_align(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io_failure, "cannot open " + path.string());
  std::vector<AlignSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.value("record", std::string()) != "align") continue;
      AlignSample s;
      s.case_id = j.at("case_id").get<std::string>();
      s.sample_index = j.at("sample_index").get<std::size_t>();
      s.feature_keys = j.at("feature_keys").get<std::vector<std::string>>();
      s.description = j.at("description").get<std::string>();
      s.seed_trace = j.value("seed_trace", std::uint64_t{0});
      out.push_back(std::move(s));
    } catch (const std::exception& ex) {
      fail(Errc::file_format,
           path.string() + " line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Question bank and benchmark QA pairs
// ---------------------------------------------------------------------------

struct QuestionSpec {
  std::string question_id;
  std::string key;    // schema element the answer comes from
  std::string aspect; // must equal the element's dimension
  std::string text;
};

struct QuestionBank {
  std::vector<QuestionSpec> questions;
  std::uint64_t checksum = 0;
};

inline QuestionBank load_question_bank(const std::filesystem::path& path,
                                       const CprtSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io_failure, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  QuestionBank bank;
  bank.checksum = fnv1a64(bytes);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
    for (const auto& jq : j.at("questions")) {
      QuestionSpec q;
      q.question_id = jq.at("question_id").get<std::string>();
      q.key = jq.at("key").get<std::string>();
      q.aspect = jq.at("aspect").get<std::string>();
      q.text = jq.at("text").get<std::string>();
      bank.questions.push_back(std::move(q));
    }
  } catch (const std::exception& ex) {
    fail(Errc::file_format, path.string() + ": " + ex.what());
  }
  std::map<std::string, int> seen;
  for (const auto& q : bank.questions) {
    require(++seen[q.question_id] == 1, Errc::duplicate_key,
            "duplicate question_id " + q.question_id);
    const TemplateElement* e = schema.find(q.key);
    require(e != nullptr, Errc::question_bank_mismatch,
            "question " + q.question_id + " references unknown schema key " + q.key);
    require(e->dimension == q.aspect, Errc::question_bank_mismatch,
            "question " + q.question_id + " aspect \"" + q.aspect +
                "\" does not match element dimension \"" + e->dimension + "\"");
    require(!q.text.empty(), Errc::question_bank_mismatch,
            "question " + q.question_id + " has empty text");
  }
  return bank;
}

struct QaPair {
  std::string pair_id; // slide_id '#' question_id
  std::string slide_id;
  std::string question_id;
  std::string aspect;
  std::string question_text;
  bool closed = true;
  std::vector<std::string> options; // closed pairs only
  std::string answer;
};

// One pair per (slide, question) whose underlying feature is usable.
inline std::vector<QaPair> build_bench(const std::vector<PathologyReport>& reports,
                                       const std::vector<ExtractedFeature>& features,
                                       const QuestionBank& bank, const CprtSchema& schema) {
  std::map<std::pair<std::string, std::string>, const ExtractedFeature*> lookup;
  for (const auto& f : features) {
    if (!f.usable()) continue;
    const auto key = std::make_pair(f.case_id, f.key);
    require(lookup.emplace(key, &f).second, Errc::duplicate_key,
            "duplicate feature " + f.case_id + "/" + f.key);
  }
  std::vector<QaPair> out;
  for (const auto& r : reports) {
    for (const auto& slide_id : r.slide_ids) {
      for (const auto& q : bank.questions) {
        const auto it = lookup.find({r.case_id, q.key});
        if (it == lookup.end()) continue;
        const TemplateElement& e = schema.at(q.key);
        QaPair p;
        p.pair_id = slide_id + "#" + q.question_id;
        p.slide_id = slide_id;
        p.question_id = q.question_id;
        p.aspect = q.aspect;
        p.question_text = q.text;
        p.closed = e.closed;
        for (const auto& o : e.options) p.options.push_back(o.value);
        p.answer = it->second->value;
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

inline void write_bench(const std::vector<QaPair>& pairs, std::uint64_t seed,
                        std::uint64_t schema_checksum, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot open " + path.string());
  out << dataset_header(seed, schema_checksum).dump() << '\n';
  for (const auto& p : pairs) {
    nlohmann::ordered_json j{{"record", "pair"},
                             {"pair_id", p.pair_id},
                             {"slide_id", p.slide_id},
                             {"question_id", p.question_id},
                             {"aspect", p.aspect},
                             {"question_text", p.question_text},
                             {"answer_kind", p.closed ? "closed" : "open"}};
    if (p.closed) j["options"] = p.options;
    j["answer"] = p.answer;
    out << j.dump() << '\n';
  }
  require(out.good(), Errc::io_failure, "write failed on " + path.string());
}

inline std::vector<QaPair> read_bench(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io_failure, "cannot open " + path.string());
  std::vector<QaPair> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.value("record", std::string("pair")) != "pair") continue;
      QaPair p;
      p.pair_id = j.at("pair_id").get<std::string>();
      p.slide_id = j.at("slide_id").get<std::string>();
      p.question_id = j.at("question_id").get<std::string>();
      p.aspect = j.at("aspect").get<std::string>();
      p.question_text = j.value("question_text", std::string());
      p.closed = j.at("answer_kind").get<std::string>() == "closed";
      if (j.contains("options")) p.options = j.at("options").get<std::vector<std::string>>();
      p.answer = j.at("answer").get<std::string>();
      require(seen.insert(p.pair_id).second, Errc::duplicate_key,
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
  return out;
}

// ---------------------------------------------------------------------------
// Distribution-preserving splits (case-level units)
// ---------------------------------------------------------------------------

struct SplitTargets {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  std::size_t total() const { return train + val + test; }
};

struct SplitOptions {
  std::string stratify_key = "histologic_type";
  bool allow_scale = false;  // scale targets proportionally to the corpus size
  double tv_ceiling = 0.25;  // per-feature total-variation advisory ceiling
};

struct SplitResult {
  std::map<std::string, std::string> slide_split; // slide_id -> train|val|test
  SplitTargets targets;
  std::array<std::size_t, 3> achieved{0, 0, 0};
  nlohmann::ordered_json tv_per_feature; // element -> {train, val, test}
  double max_tv = 0.0;
  std::vector<std::string> notes;
};

namespace detail {

inline const std::array<std::string, 3>& split_names() {
  static const std::array<std::string, 3> n = {"train", "val", "test"};
  return n;
}

// Largest-remainder apportionment of `total` into parts proportional to
// weights; ties go to the lowest index.
inline std::array<std::size_t, 3> largest_remainder(const std::array<double, 3>& ideal,
                                                    std::size_t total) {
  std::array<std::size_t, 3> out{};
  std::array<double, 3> frac{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    out[i] = static_cast<std::size_t>(ideal[i]);
    frac[i] = ideal[i] - static_cast<double>(out[i]);
    used += out[i];
  }
  while (used < total) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (frac[i] > frac[best]) best = i;
    ++out[best];
    frac[best] = -1.0;
    ++used;
  }
  while (used > total) { // guard against rounding overshoot
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (frac[i] < frac[best]) best = i;
    if (out[best] > 0) --out[best];
    frac[best] = 2.0;
    --used;
  }
  return out;
}

} // namespace detail

// Stratifies cases on the primary key, apportions each stratum across the
// splits by largest remainder, then fixes residual size drift with moves that
// keep every closed feature's split distribution close to the global one.
inline SplitResult split_slides(const std::vector<PathologyReport>& reports,
                                const std::vector<ExtractedFeature>& features,
                                const CprtSchema& schema, SplitTargets targets,
                                std::uint64_t seed, const SplitOptions& opts = {}) {
  require(!reports.empty(), Errc::empty_input, "no reports to split");

  struct CaseInfo {
    std::string case_id;
    std::vector<std::string> slides;
    std::map<std::string, std::string> values; // closed key -> canonical value
  };
  std::map<std::pair<std::string, std::string>, std::string> feat;
  for (const auto& f : features)
    if (f.usable()) feat[{f.case_id, f.key}] = f.value;

  std::vector<CaseInfo> cases;
  std::size_t total_slides = 0;
  for (const auto& r : reports) {
    CaseInfo c;
    c.case_id = r.case_id;
    c.slides = r.slide_ids;
    for (const auto& e : schema.elements) {
      if (!e.closed) continue;
      const auto it = feat.find({r.case_id, e.key});
      c.values[e.key] = it == feat.end() ? "(absent)" : text::canonical(it->second);
    }
    total_slides += c.slides.size();
    cases.push_back(std::move(c));
  }
  require(total_slides > 0, Errc::empty_input, "corpus has no slides");

  SplitResult res;
  if (targets.total() != total_slides) {
    if (!opts.allow_scale)
      fail(Errc::infeasible_targets,
           "targets sum to " + std::to_string(targets.total()) + " but corpus has " +
               std::to_string(total_slides) + " slides (pass the scale option to adjust)");
    const double k = static_cast<double>(total_slides) / static_cast<double>(targets.total());
    const auto scaled = detail::largest_remainder(
        {targets.train * k, targets.val * k, targets.test * k}, total_slides);
    res.notes.push_back("targets scaled to corpus size");
    targets = {scaled[0], scaled[1], scaled[2]};
  }
  require(targets.total() == total_slides, Errc::infeasible_targets, "target scaling failed");
  res.targets = targets;
  const std::array<std::size_t, 3> target_arr{targets.train, targets.val, targets.test};

  // strata on the primary key
  require(schema.find(opts.stratify_key) != nullptr, Errc::invalid_argument,
          "unknown stratify key: " + opts.stratify_key);
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto it = cases[i].values.find(opts.stratify_key);
    strata[it == cases[i].values.end() ? "(absent)" : it->second].push_back(i);
  }

  std::vector<int> assign(cases.size(), -1);
  std::array<long long, 3> achieved{0, 0, 0};
  for (auto& [stratum, members] : strata) {
    rng::Stream stream(rng::mix(seed, 0x73706c74ULL, fnv1a64(stratum)));
    for (std::size_t i = members.size(); i > 1; --i)
      std::swap(members[i - 1], members[stream.next_below(i)]);

    std::size_t stratum_slides = 0;
    for (std::size_t m : members) stratum_slides += cases[m].slides.size();
    const double scale = static_cast<double>(stratum_slides) / static_cast<double>(total_slides);
    const auto quota = detail::largest_remainder(
        {target_arr[0] * scale, target_arr[1] * scale, target_arr[2] * scale}, stratum_slides);

    std::array<long long, 3> left{static_cast<long long>(quota[0]),
                                  static_cast<long long>(quota[1]),
                                  static_cast<long long>(quota[2])};
    for (std::size_t m : members) {
      int best = 0;
      for (int s = 1; s < 3; ++s)
        if (left[s] > left[best]) best = s;
      assign[m] = best;
      const auto w = static_cast<long long>(cases[m].slides.size());
      left[best] -= w;
      achieved[best] += w;
    }
  }

  // global and per-split (key, value) slide counts, updated incrementally
  std::map<std::string, std::map<std::string, double>> global_counts;
  std::array<std::map<std::string, std::map<std::string, double>>, 3> split_counts;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const double w = static_cast<double>(cases[i].slides.size());
    for (const auto& [key, value] : cases[i].values) {
      global_counts[key][value] += w;
      split_counts[static_cast<std::size_t>(assign[i])][key][value] += w;
    }
  }
  const auto split_tv = [&](int s, long long size) {
    if (size <= 0) return 0.0;
    double total = 0.0;
    for (const auto& [key, gvals] : global_counts) {
      const auto& sk = split_counts[static_cast<std::size_t>(s)];
      const auto it = sk.find(key);
      double tv = 0.0;
      for (const auto& [value, gcount] : gvals) {
        double scount = 0.0;
        if (it != sk.end()) {
          const auto vit = it->second.find(value);
          if (vit != it->second.end()) scount = vit->second;
        }
        tv += std::abs(scount / static_cast<double>(size) -
                       gcount / static_cast<double>(total_slides));
      }
      total += 0.5 * tv;
    }
    return total;
  };
  const auto apply_move = [&](std::size_t i, int from, int to, double sign) {
    const double w = sign * static_cast<double>(cases[i].slides.size());
    for (const auto& [key, value] : cases[i].values) {
      split_counts[static_cast<std::size_t>(from)][key][value] -= w;
      split_counts[static_cast<std::size_t>(to)][key][value] += w;
    }
  };

  // size fixup: move cases from oversized to undersized splits, greedily
  // picking the move that keeps the two affected splits' divergence lowest
  for (int guard = 0; guard < 256; ++guard) {
    int from = -1, to = -1;
    for (int s = 0; s < 3; ++s) {
      if (achieved[s] > static_cast<long long>(target_arr[s])) from = s;
      if (achieved[s] < static_cast<long long>(target_arr[s])) to = s;
    }
    if (from < 0 || to < 0) break;
    double best_obj = 0.0;
    std::ptrdiff_t best_case = -1;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      if (assign[i] != from) continue;
      const auto w = static_cast<long long>(cases[i].slides.size());
      apply_move(i, from, to, 1.0);
      const double obj = split_tv(from, achieved[from] - w) + split_tv(to, achieved[to] + w);
      apply_move(i, from, to, -1.0);
      if (best_case < 0 || obj < best_obj) {
        best_case = static_cast<std::ptrdiff_t>(i);
        best_obj = obj;
      }
    }
    if (best_case < 0) {
      res.notes.push_back("size fixup stopped early (case granularity)");
      break;
    }
    const auto bi = static_cast<std::size_t>(best_case);
    apply_move(bi, from, to, 1.0);
    const auto w = static_cast<long long>(cases[bi].slides.size());
    assign[bi] = to;
    achieved[from] -= w;
    achieved[to] += w;
  }

  for (int s = 0; s < 3; ++s) res.achieved[s] = static_cast<std::size_t>(achieved[s]);
  for (std::size_t i = 0; i < cases.size(); ++i)
    for (const auto& slide : cases[i].slides)
      res.slide_split[slide] = detail::split_names()[static_cast<std::size_t>(assign[i])];

  // divergence report
  for (const auto& e : schema.elements) {
    if (!e.closed) continue;
    nlohmann::ordered_json per_split;
    for (int s = 0; s < 3; ++s) {
      double tv = 0.0;
      if (achieved[s] > 0) {
        const auto& sk = split_counts[static_cast<std::size_t>(s)];
        const auto it = sk.find(e.key);
        for (const auto& [value, gcount] : global_counts[e.key]) {
          double scount = 0.0;
          if (it != sk.end()) {
            const auto vit = it->second.find(value);
            if (vit != it->second.end()) scount = vit->second;
          }
          tv += std::abs(scount / static_cast<double>(achieved[s]) -
                         gcount / static_cast<double>(total_slides));
        }
      }
      tv *= 0.5;
      per_split[detail::split_names()[static_cast<std::size_t>(s)]] = tv;
      res.max_tv = std::max(res.max_tv, tv);
    }
    res.tv_per_feature[e.key] = per_split;
  }
  if (res.max_tv > opts.tv_ceiling)
    res.notes.push_back("max total-variation divergence " + std::to_string(res.max_tv) +
                        " exceeds ceiling " + std::to_string(opts.tv_ceiling) +
                        " (best effort)");
  return res;
}

inline void write_split(const SplitResult& r, std::uint64_t seed, std::uint64_t schema_checksum,
                        const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["record"] = "split";
  j["seed"] = seed;
  j["schema_checksum"] = to_hex(schema_checksum);
  j["tool_version"] = kToolVersion;
  j["targets"] = {{"train", r.targets.train}, {"val", r.targets.val}, {"test", r.targets.test}};
  j["achieved"] = {{"train", r.achieved[0]}, {"val", r.achieved[1]}, {"test", r.achieved[2]}};
  j["max_tv"] = r.max_tv;
  j["tv_per_feature"] = r.tv_per_feature;
  j["notes"] = r.notes;
  nlohmann::ordered_json assignment;
  for (const auto& [slide, split] : r.slide_split) assignment[slide] = split;
  j["assignment"] = assignment;
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot open " + path.string());
  out << j.dump(2) << '\n';
  require(out.good(), Errc::io_failure, "write failed on " + path.string());
}

inline std::map<std::string, std::string> read_split_assignment(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io_failure, "cannot open " + path.string());
  std::map<std::string, std::string> out;
  try {
    nlohmann::json j;
    in >> j;
    for (const auto& [slide, split] : j.at("assignment").items())
      out[slide] = split.get<std::string>();
  } catch (const std::exception& ex) {
    fail(Errc::file_format, path.string() + ": " + ex.what());
  }
  return out;
}

inline std::vector<QaPair> filter_bench(const std::vector<QaPair>& pairs,
                                        const std::map<std::string, std::string>& slide_split,
                                        const std::string& subset) {
  std::vector<QaPair> out;
  for (const auto& p : pairs) {
    const auto it = slide_split.find(p.slide_id);
    require(it != slide_split.end(), Errc::unknown_pair_id,
            "slide " + p.slide_id + " is not covered by the split assignment");
    if (it->second == subset) out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset statistics
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json dataset_stats(const std::vector<QaPair>& pairs) {
  require(!pairs.empty(), Errc::empty_input, "no pairs to summarize");
  nlohmann::ordered_json j;
  j["record"] = "stats";
  j["kind"] = "bench";
  j["n_pairs"] = pairs.size();

  std::set<std::string> slides;
  std::map<std::string, std::size_t> per_aspect;
  std::size_t n_open = 0;
  std::map<std::string, std::map<std::string, std::size_t>> hist;
  for (const auto& p : pairs) {
    slides.insert(p.slide_id);
    ++per_aspect[p.aspect];
    if (!p.closed) ++n_open;
    ++hist[p.question_id][p.answer];
  }
  j["n_slides"] = slides.size();
  j["mean_pairs_per_slide"] =
      static_cast<double>(pairs.size()) / static_cast<double>(slides.size());
  nlohmann::ordered_json aspects;
  for (const auto& a : cprt_dimensions())
    if (per_aspect.count(a)) aspects[a] = per_aspect[a]; // empty aspects omitted
  j["per_aspect"] = aspects;
  j["n_open"] = n_open;
  j["n_closed"] = pairs.size() - n_open;
  j["open_ratio"] = static_cast<double>(n_open) / static_cast<double>(pairs.size());
  nlohmann::ordered_json per_q;
  for (const auto& [qid, answers] : hist) {
    nlohmann::ordered_json h;
    std::size_t n = 0;
    for (const auto& [ans, count] : answers) {
      h[ans] = count;
      n += count;
    }
    per_q[qid] = nlohmann::ordered_json{{"n", n}, {"answers", h}};
  }
  j["per_question"] = per_q;
  return j;
}

inline nlohmann::ordered_json align_stats(const std::vector<AlignSample>& samples) {
  require(!samples.empty(), Errc::empty_input, "no samples to summarize");
  nlohmann::ordered_json j;
  j["record"] = "stats";
  j["kind"] = "align";
  j["n_samples"] = samples.size();
  std::set<std::string> case_ids;
  std::map<std::size_t, std::size_t> key_hist;
  for (const auto& s : samples) {
    case_ids.insert(s.case_id);
    ++key_hist[s.feature_keys.size()];
  }
  j["n_cases"] = case_ids.size();
  nlohmann::ordered_json h;
  for (const auto& [k, n] : key_hist) h[std::to_string(k)] = n;
  j["feature_count_hist"] = h;
  return j;
}

} // namespace ctis
