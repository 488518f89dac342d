#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "ctis/error.hpp"
#include "ctis/features.hpp"
#include "ctis/rng.hpp"

namespace ctis {

// Fuses the global representation (one d-vector) with the L local attention
// tokens (L x d) into a (1 + L) x d_out token block: every row goes through
// the same affine map, optionally after per-stream pre-projections.
struct FusionParams {
  Eigen::MatrixXd proj;  // d x d_out
  Eigen::VectorXd bias;  // d_out
  std::optional<Eigen::MatrixXd> pre_global; // d_in_g x d
  std::optional<Eigen::MatrixXd> pre_local;  // d_in_l x d

  std::size_t d_in() const { return static_cast<std::size_t>(proj.rows()); }
  std::size_t d_out() const { return static_cast<std::size_t>(proj.cols()); }

  void validate() const {
    require(proj.rows() >= 1 && proj.cols() >= 1, Errc::invalid_shape,
            "projection must be non-empty");
    require(bias.size() == proj.cols(), Errc::shape_mismatch,
            "bias length " + std::to_string(bias.size()) + " does not match d_out " +
                std::to_string(proj.cols()));
    if (pre_global)
      require(pre_global->cols() == proj.rows(), Errc::shape_mismatch,
              "pre_global output dim does not match projection input dim");
    if (pre_local)
      require(pre_local->cols() == proj.rows(), Errc::shape_mismatch,
              "pre_local output dim does not match projection input dim");
    require(proj.allFinite() && bias.allFinite(), Errc::non_finite_value,
            "fusion parameters contain non-finite values");
  }
};

inline FusionParams fusion_init(std::uint64_t seed, std::size_t d_in, std::size_t d_out) {
  require(d_in >= 1 && d_out >= 1, Errc::invalid_argument, "d_in and d_out must be >= 1");
  rng::Stream stream(rng::mix(seed, 0x66757365ULL));
  FusionParams p;
  p.proj.resize(static_cast<Eigen::Index>(d_in), static_cast<Eigen::Index>(d_out));
  for (Eigen::Index i = 0; i < p.proj.rows(); ++i)
    for (Eigen::Index j = 0; j < p.proj.cols(); ++j)
      p.proj(i, j) = stream.next_unit() * 0.2 - 0.1;
  p.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d_out));
  return p;
}

// Returns (1 + L) x d_out: row 0 is the projected global vector, rows 1..L
// the projected local tokens.
inline Eigen::MatrixXd fuse(const Eigen::VectorXd& global_vec, const Eigen::MatrixXd& local_tokens,
                            const FusionParams& p) {
  p.validate();

  Eigen::RowVectorXd g = global_vec.transpose();
  Eigen::MatrixXd l = local_tokens;
  if (p.pre_global) {
    require(g.cols() == p.pre_global->rows(), Errc::dimension_mismatch,
            "global vector dim " + std::to_string(g.cols()) + " does not match pre_global rows " +
                std::to_string(p.pre_global->rows()));
    g = g * (*p.pre_global);
  }
  if (p.pre_local) {
    require(l.cols() == p.pre_local->rows(), Errc::dimension_mismatch,
            "local token dim " + std::to_string(l.cols()) + " does not match pre_local rows " +
                std::to_string(p.pre_local->rows()));
    l = l * (*p.pre_local);
  }
  require(g.cols() == static_cast<Eigen::Index>(p.d_in()), Errc::dimension_mismatch,
          "global vector dim " + std::to_string(g.cols()) + " does not match projection dim " +
              std::to_string(p.d_in()));
  require(l.cols() == static_cast<Eigen::Index>(p.d_in()), Errc::dimension_mismatch,
          "local token dim " + std::to_string(l.cols()) + " does not match projection dim " +
              std::to_string(p.d_in()));

  Eigen::MatrixXd out(1 + l.rows(), static_cast<Eigen::Index>(p.d_out()));
  out.row(0) = g * p.proj + p.bias.transpose();
  out.bottomRows(l.rows()) = (l * p.proj).rowwise() + p.bias.transpose();
  return out;
}

// Token blocks travel in the same binary container as patch features.
inline std::uint64_t write_tokens(const Eigen::MatrixXd& tokens, const std::string& slide_id,
                                  const std::filesystem::path& path) {
  PatchFeatureMatrix m;
  m.slide_id = slide_id;
  m.n_patches = static_cast<std::size_t>(tokens.rows());
  m.dim = static_cast<std::size_t>(tokens.cols());
  m.data.resize(m.n_patches * m.dim);
  for (std::size_t i = 0; i < m.n_patches; ++i)
    for (std::size_t j = 0; j < m.dim; ++j)
      m.at(i, j) = static_cast<float>(
          tokens(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
  return write_features(m, path);
}

} // namespace ctis
