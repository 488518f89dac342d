#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "ctis/cprt.hpp"
#include "ctis/hash.hpp"
#include "ctis/rng.hpp"

namespace ctis {

// Synthetic pathology-report corpus with known ground truth. Every generated
// sentence is phrased so the offline extractor recovers exactly the planted
// value, which makes end-to-end identity checks possible.
struct SynthReportConfig {
  std::size_t n_cases = 20;
  std::size_t slides_per_case = 1;
  double presence_rate = 0.9; // chance an element is stated in the report
  // Elements whose keys appear here use this rate instead (e.g. to hit a
  // target mean of answerable questions per slide).
  std::vector<std::string> rated_keys;
  std::optional<double> rated_presence_rate;
  std::uint64_t seed = 0;
};

struct SynthCorpus {
  std::vector<PathologyReport> reports;
  std::vector<ExtractedFeature> truth; // one record per (case, element)
};

namespace detail {

inline std::string format_id(const char* fmt, std::size_t a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, a);
  return buf;
}

inline std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

} // namespace detail

inline SynthCorpus synth_reports(const CprtSchema& schema, const SynthReportConfig& cfg) {
  require(cfg.n_cases >= 1, Errc::invalid_argument, "n_cases must be >= 1");
  require(cfg.slides_per_case >= 1, Errc::invalid_argument, "slides_per_case must be >= 1");
  require(cfg.presence_rate >= 0.0 && cfg.presence_rate <= 1.0, Errc::invalid_argument,
          "presence_rate must be in [0,1]");

  SynthCorpus out;
  out.reports.reserve(cfg.n_cases);
  out.truth.reserve(cfg.n_cases * schema.elements.size());

  for (std::size_t ci = 0; ci < cfg.n_cases; ++ci) {
    PathologyReport r;
    r.case_id = detail::format_id("CASE-%04zu", ci + 1);
    for (std::size_t si = 0; si < cfg.slides_per_case; ++si)
      r.slide_ids.push_back(r.case_id + detail::format_id("-S%02zu", si + 1));
    r.text = "Specimen: breast, excision.";

    for (const auto& element : schema.elements) {
      rng::Stream stream(rng::mix(cfg.seed, fnv1a64(r.case_id), fnv1a64(element.key)));
      double rate = cfg.presence_rate;
      if (cfg.rated_presence_rate &&
          std::find(cfg.rated_keys.begin(), cfg.rated_keys.end(), element.key) !=
              cfg.rated_keys.end())
        rate = *cfg.rated_presence_rate;
      const bool present = stream.next_unit() < rate;

      ExtractedFeature f;
      f.case_id = r.case_id;
      f.key = element.key;
      f.extractor = "synth";
      std::string value;
      if (present) {
        if (element.closed) {
          value = element.options[stream.next_below(element.options.size())].value;
        } else if (!element.synth_values.empty()) {
          value = element.synth_values[stream.next_below(element.synth_values.size())];
        }
      }
      if (!value.empty()) {
        r.text += " " + detail::capitalize(element.phrase) + ": " + value + ".";
        f.value = value;
        f.status = FeatureStatus::extracted;
      }
      out.truth.push_back(std::move(f));
    }
    out.reports.push_back(std::move(r));
  }
  return out;
}

} // namespace ctis
