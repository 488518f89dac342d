#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ctis {

enum class Errc {
  // container / io
  bad_magic,
  version_mismatch,
  truncated_payload,
  non_finite_value,
  checksum_mismatch,
  io_failure,
  invalid_shape,
  // clustering
  too_few_points,
  empty_input,
  dimension_mismatch,
  // patch perception
  non_divisible_config,
  all_masked_input,
  shape_mismatch,
  // schema / extraction
  duplicate_key,
  unknown_dimension,
  empty_options,
  bad_prompt_template,
  extractor_unreachable,
  malformed_extractor_reply,
  malformed_review_file,
  // builders
  realizer_failure,
  question_bank_mismatch,
  infeasible_targets,
  // scoring
  unknown_pair_id,
  missing_prediction,
  file_format,
  invalid_argument,
};

inline std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::bad_magic: return "bad-magic";
    case Errc::version_mismatch: return "version-mismatch";
    case Errc::truncated_payload: return "truncated-payload";
    case Errc::non_finite_value: return "non-finite-value";
    case Errc::checksum_mismatch: return "checksum-mismatch";
    case Errc::io_failure: return "io-failure";
    case Errc::invalid_shape: return "invalid-shape";
    case Errc::too_few_points: return "too-few-points";
    case Errc::empty_input: return "empty-input";
    case Errc::dimension_mismatch: return "dimension-mismatch";
    case Errc::non_divisible_config: return "non-divisible-config";
    case Errc::all_masked_input: return "all-masked-input";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::duplicate_key: return "duplicate-key";
    case Errc::unknown_dimension: return "unknown-dimension";
    case Errc::empty_options: return "empty-options";
    case Errc::bad_prompt_template: return "bad-prompt-template";
    case Errc::extractor_unreachable: return "extractor-unreachable";
    case Errc::malformed_extractor_reply: return "malformed-extractor-reply";
    case Errc::malformed_review_file: return "malformed-review-file";
    case Errc::realizer_failure: return "realizer-failure";
    case Errc::question_bank_mismatch: return "question-bank-mismatch";
    case Errc::infeasible_targets: return "infeasible-targets";
    case Errc::unknown_pair_id: return "unknown-pair-id";
    case Errc::missing_prediction: return "missing-prediction";
    case Errc::file_format: return "file-format";
    case Errc::invalid_argument: return "invalid-argument";
  }
  return "unknown";
}

class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, Errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

} // namespace ctis
