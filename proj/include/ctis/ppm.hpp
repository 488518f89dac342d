#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ctis/error.hpp"
#include "ctis/features.hpp"
#include "ctis/hash.hpp"
#include "ctis/rng.hpp"

namespace ctis {

// ---------------------------------------------------------------------------
// Length normalization: every slide is brought to exactly m_max patch rows.
// Short slides are zero padded (and masked); long slides are subsampled with
// systematic per-segment sampling so every region keeps proportional coverage.
// ---------------------------------------------------------------------------

struct NormalizedPatchSet {
  Eigen::MatrixXd x;                      // m_max x d
  std::vector<std::uint8_t> mask;         // 1 = real patch, 0 = padding
  std::vector<std::int64_t> source_indices; // row in the input, -1 for padding
  std::size_t m_max = 0;
  std::size_t n_segments = 0;

  std::size_t n_real() const {
    std::size_t c = 0;
    for (auto m : mask) c += m;
    return c;
  }
};

inline NormalizedPatchSet normalize_length(const Eigen::MatrixXd& x, std::size_t m_max,
                                           std::size_t n_segments, std::uint64_t seed) {
  require(m_max >= 1 && n_segments >= 1, Errc::invalid_argument,
          "m_max and n_segments must be >= 1");
  require(m_max % n_segments == 0, Errc::non_divisible_config,
          "m_max=" + std::to_string(m_max) + " is not divisible by n_segments=" +
              std::to_string(n_segments));
  require(x.rows() >= 1, Errc::empty_input, "no patches to normalize");

  const std::size_t n = static_cast<std::size_t>(x.rows());
  NormalizedPatchSet out;
  out.m_max = m_max;
  out.n_segments = n_segments;
  out.x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m_max), x.cols());
  out.mask.assign(m_max, 0);
  out.source_indices.assign(m_max, -1);

  if (n < m_max) {
    out.x.topRows(static_cast<Eigen::Index>(n)) = x;
    for (std::size_t i = 0; i < n; ++i) {
      out.mask[i] = 1;
      out.source_indices[i] = static_cast<std::int64_t>(i);
    }
    return out;
  }

  // Systematic sampling: split the slide into n_segments contiguous runs and
  // draw q = m_max / n_segments evenly spaced rows from each, with one random
  // phase per segment.
  const std::size_t q = m_max / n_segments;
  rng::Stream stream(rng::mix(seed, 0x73616d70ULL));
  std::size_t w = 0;
  for (std::size_t s = 0; s < n_segments; ++s) {
    const std::size_t seg_begin = s * n / n_segments;
    const std::size_t seg_end = (s + 1) * n / n_segments;
    const std::size_t len = seg_end - seg_begin;
    const double phase = stream.next_unit();
    for (std::size_t j = 0; j < q; ++j) {
      const std::size_t idx =
          seg_begin + static_cast<std::size_t>(
                          std::floor((static_cast<double>(j) + phase) *
                                     static_cast<double>(len) / static_cast<double>(q)));
      out.x.row(static_cast<Eigen::Index>(w)) = x.row(static_cast<Eigen::Index>(idx));
      out.mask[w] = 1;
      out.source_indices[w] = static_cast<std::int64_t>(idx);
      ++w;
    }
  }
  return out;
}

inline NormalizedPatchSet normalize_length(const PatchFeatureMatrix& m, std::size_t m_max,
                                           std::size_t n_segments, std::uint64_t seed) {
  m.validate();
  return normalize_length(m.to_eigen(), m_max, n_segments,
                          rng::mix(seed, fnv1a64(m.slide_id)));
}

// ---------------------------------------------------------------------------
// Learnable-query cross attention over the normalized patch set.
//   Q = Lq Wq^T, K = X Wk^T, V = X Wv^T
//   R = softmax(Q K^T / sqrt(d) + mask bias) V
// Padding rows get a -1e30 score bias, which underflows to exactly zero
// attention weight after the softmax.
// ---------------------------------------------------------------------------

inline constexpr double kMaskBias = -1e30;

struct PpmParams {
  Eigen::MatrixXd queries; // L x d
  Eigen::MatrixXd w_q;     // d x d
  Eigen::MatrixXd w_k;     // d x d
  Eigen::MatrixXd w_v;     // d x d

  std::size_t n_queries() const { return static_cast<std::size_t>(queries.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(w_q.cols()); }

  void validate() const {
    require(queries.rows() >= 1, Errc::invalid_shape, "need at least one query");
    const Eigen::Index d = queries.cols();
    require(d >= 1, Errc::invalid_shape, "query dim must be >= 1");
    auto square = [&](const Eigen::MatrixXd& w, const char* name) {
      require(w.rows() == d && w.cols() == d, Errc::shape_mismatch,
              std::string(name) + " must be d x d with d = " + std::to_string(d));
    };
    square(w_q, "w_q");
    square(w_k, "w_k");
    square(w_v, "w_v");
    require(queries.allFinite() && w_q.allFinite() && w_k.allFinite() && w_v.allFinite(),
            Errc::non_finite_value, "parameters contain non-finite values");
  }
};

inline PpmParams ppm_init(std::uint64_t seed, std::size_t n_queries, std::size_t dim) {
  require(n_queries >= 1 && dim >= 1, Errc::invalid_argument,
          "n_queries and dim must be >= 1");
  rng::Stream stream(rng::mix(seed, 0x70706d69ULL));
  auto fill = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j)
        m(i, j) = stream.next_unit() * 0.2 - 0.1;
    return m;
  };
  PpmParams p;
  const auto l = static_cast<Eigen::Index>(n_queries);
  const auto d = static_cast<Eigen::Index>(dim);
  p.queries = fill(l, d);
  p.w_q = fill(d, d);
  p.w_k = fill(d, d);
  p.w_v = fill(d, d);
  return p;
}

// Row-wise softmax of `scores` with kMaskBias added to masked (0) columns.
// Requires at least one unmasked column.
inline Eigen::MatrixXd masked_softmax(const Eigen::MatrixXd& scores,
                                      const std::vector<std::uint8_t>& mask) {
  require(static_cast<std::size_t>(scores.cols()) == mask.size(), Errc::shape_mismatch,
          "mask length does not match score columns");
  bool any = false;
  for (auto m : mask) any = any || m != 0;
  require(any, Errc::all_masked_input, "softmax over fully masked input");

  Eigen::MatrixXd biased = scores;
  for (Eigen::Index j = 0; j < biased.cols(); ++j)
    if (!mask[static_cast<std::size_t>(j)]) biased.col(j).array() += kMaskBias;

  Eigen::MatrixXd out(biased.rows(), biased.cols());
  for (Eigen::Index i = 0; i < biased.rows(); ++i) {
    const double mx = biased.row(i).maxCoeff();
    Eigen::ArrayXd e = (biased.row(i).array() - mx).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return out;
}

struct PpmForwardOptions {
  bool mask_padding = true; // false reproduces plain softmax over all rows
};

struct PpmForward {
  Eigen::MatrixXd r_local; // L x d
  Eigen::MatrixXd attn;    // L x M
  Eigen::MatrixXd q;       // L x d
  Eigen::MatrixXd k;       // M x d
  Eigen::MatrixXd v;       // M x d
};

inline PpmForward ppm_forward(const Eigen::MatrixXd& x, const std::vector<std::uint8_t>& mask,
                              const PpmParams& p, const PpmForwardOptions& opts = {}) {
  p.validate();
  require(static_cast<std::size_t>(x.cols()) == p.dim(), Errc::shape_mismatch,
          "patch dim " + std::to_string(x.cols()) + " does not match parameter dim " +
              std::to_string(p.dim()));
  require(static_cast<std::size_t>(x.rows()) == mask.size(), Errc::shape_mismatch,
          "mask length does not match patch rows");
  require(x.rows() >= 1, Errc::empty_input, "no patch rows");

  PpmForward f;
  f.q = p.queries * p.w_q.transpose();
  f.k = x * p.w_k.transpose();
  f.v = x * p.w_v.transpose();
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.dim()));
  const Eigen::MatrixXd scores = f.q * f.k.transpose() * scale;
  if (opts.mask_padding) {
    f.attn = masked_softmax(scores, mask);
  } else {
    const std::vector<std::uint8_t> all_on(mask.size(), 1);
    f.attn = masked_softmax(scores, all_on);
  }
  f.r_local = f.attn * f.v;
  return f;
}

inline PpmForward ppm_forward(const NormalizedPatchSet& s, const PpmParams& p,
                              const PpmForwardOptions& opts = {}) {
  return ppm_forward(s.x, s.mask, p, opts);
}

struct PpmGradients {
  Eigen::MatrixXd d_queries;
  Eigen::MatrixXd d_wq;
  Eigen::MatrixXd d_wk;
  Eigen::MatrixXd d_wv;
};

// Analytic gradients of a scalar loss w.r.t. all learnable parameters, given
// g = dLoss/dR from the caller. Softmax backward uses
//   dS = A .* (dA - rowsum(dA .* A)), which is zero on masked columns.
inline PpmGradients ppm_backward(const PpmForward& f, const Eigen::MatrixXd& x,
                                 const PpmParams& p, const Eigen::MatrixXd& g) {
  require(g.rows() == f.r_local.rows() && g.cols() == f.r_local.cols(), Errc::shape_mismatch,
          "upstream gradient shape does not match r_local");
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.dim()));

  const Eigen::MatrixXd dv = f.attn.transpose() * g;                     // M x d
  const Eigen::MatrixXd da = g * f.v.transpose();                        // L x M
  const Eigen::VectorXd row_dot = (da.array() * f.attn.array()).rowwise().sum();
  const Eigen::MatrixXd ds =
      (f.attn.array() * (da.array().colwise() - row_dot.array())).matrix(); // L x M
  const Eigen::MatrixXd dq = ds * f.k * scale;                           // L x d
  const Eigen::MatrixXd dk = ds.transpose() * f.q * scale;               // M x d

  PpmGradients out;
  out.d_queries = dq * p.w_q;
  out.d_wq = dq.transpose() * p.queries;
  out.d_wk = dk.transpose() * x;
  out.d_wv = dv.transpose() * x;
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check on a random problem instance.
// ---------------------------------------------------------------------------

struct GradCheckReport {
  std::size_t n_queries = 0;
  std::size_t n_patches = 0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  double step = 0.0;
  double tol = 0.0;
  double max_rel_err_queries = 0.0;
  double max_rel_err_wq = 0.0;
  double max_rel_err_wk = 0.0;
  double max_rel_err_wv = 0.0;
  double max_rel_err = 0.0;
  bool pass = false;

  nlohmann::ordered_json to_json() const {
    return {{"n_queries", n_queries},
            {"n_patches", n_patches},
            {"dim", dim},
            {"seed", seed},
            {"step", step},
            {"tol", tol},
            {"max_rel_err", {{"queries", max_rel_err_queries},
                             {"w_q", max_rel_err_wq},
                             {"w_k", max_rel_err_wk},
                             {"w_v", max_rel_err_wv},
                             {"overall", max_rel_err}}},
            {"pass", pass}};
  }
};

// Checks d(sum(R .* W))/dtheta for every parameter coordinate against
// Richardson-extrapolated central differences (steps h and h/2), which drop
// the O(h^2) truncation term that plain central differences leave behind.
// With truncation gone the step can stay coarse (~eps^(1/5)), keeping the
// up-down cancellation noise far below the gradient magnitudes. The instance
// includes padded rows so the masked path is exercised.
inline GradCheckReport grad_check(std::uint64_t seed, std::size_t n_queries,
                                  std::size_t n_patches, std::size_t dim,
                                  double step = 1e-3, double tol = 1e-6) {
  require(n_patches >= 2, Errc::invalid_argument, "need at least 2 patch rows");
  rng::Stream stream(rng::mix(seed, 0x67636b21ULL));
  const auto l = static_cast<Eigen::Index>(n_queries);
  const auto m = static_cast<Eigen::Index>(n_patches);
  const auto d = static_cast<Eigen::Index>(dim);

  Eigen::MatrixXd x(m, d);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = stream.next_normal();
  std::vector<std::uint8_t> mask(n_patches, 1);
  mask.back() = 0; // one padded row
  x.row(m - 1).setZero();

  Eigen::MatrixXd w(l, d); // fixed loss weights: loss = sum(R .* w)
  for (Eigen::Index i = 0; i < l; ++i)
    for (Eigen::Index j = 0; j < d; ++j) w(i, j) = stream.next_normal();

  PpmParams p = ppm_init(rng::mix(seed, 1), n_queries, dim);

  const auto loss = [&](const PpmParams& q) {
    return (ppm_forward(x, mask, q).r_local.array() * w.array()).sum();
  };
  const PpmForward f = ppm_forward(x, mask, p);
  const PpmGradients an = ppm_backward(f, x, p, w);

  const auto check_block = [&](Eigen::MatrixXd& block, const Eigen::MatrixXd& analytic) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < block.rows(); ++i) {
      for (Eigen::Index j = 0; j < block.cols(); ++j) {
        const double saved = block(i, j);
        const auto central = [&](double h) {
          block(i, j) = saved + h;
          const double up = loss(p);
          block(i, j) = saved - h;
          const double dn = loss(p);
          block(i, j) = saved;
          return (up - dn) / (2.0 * h);
        };
        const double fd = (4.0 * central(step / 2.0) - central(step)) / 3.0;
        const double a = analytic(i, j);
        const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
        if (rel > worst) worst = rel;
      }
    }
    return worst;
  };

  GradCheckReport r;
  r.n_queries = n_queries;
  r.n_patches = n_patches;
  r.dim = dim;
  r.seed = seed;
  r.step = step;
  r.tol = tol;
  r.max_rel_err_queries = check_block(p.queries, an.d_queries);
  r.max_rel_err_wq = check_block(p.w_q, an.d_wq);
  r.max_rel_err_wk = check_block(p.w_k, an.d_wk);
  r.max_rel_err_wv = check_block(p.w_v, an.d_wv);
  r.max_rel_err = std::max({r.max_rel_err_queries, r.max_rel_err_wq, r.max_rel_err_wk,
                            r.max_rel_err_wv});
  r.pass = r.max_rel_err < tol;
  return r;
}

// ---------------------------------------------------------------------------
// Parameter container: fixed little-endian layout with an FNV-1a trailer.
//   bytes 0..7   magic "CTISPPMP"
//   bytes 8..9   version (u16)
//   bytes 10..13 n_queries (u32)
//   bytes 14..17 dim (u32)
//   bytes 18..31 reserved, zero
//   then queries, w_q, w_k, w_v as row-major float64
//   then u64 FNV-1a of all preceding bytes
// ---------------------------------------------------------------------------

inline constexpr char kPpmMagic[9] = "CTISPPMP";
inline constexpr std::uint16_t kPpmVersion = 1;
inline constexpr std::size_t kPpmHeaderSize = 32;

inline std::uint64_t write_ppm_params(const PpmParams& p, const std::filesystem::path& path) {
  p.validate();
  const std::size_t l = p.n_queries();
  const std::size_t d = p.dim();
  std::string buf;
  buf.reserve(kPpmHeaderSize + (l * d + 3 * d * d) * 8 + 8);
  buf.append(kPpmMagic, 8);
  detail::le_put_u16(buf, kPpmVersion);
  detail::le_put_u32(buf, static_cast<std::uint32_t>(l));
  detail::le_put_u32(buf, static_cast<std::uint32_t>(d));
  buf.append(kPpmHeaderSize - buf.size(), '\0');
  auto put_block = [&](const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) detail::le_put_f64(buf, m(i, j));
  };
  put_block(p.queries);
  put_block(p.w_q);
  put_block(p.w_k);
  put_block(p.w_v);
  const std::uint64_t checksum = fnv1a64(buf.data(), buf.size());
  detail::le_put_u64(buf, checksum);
  detail::write_file_bytes(path, buf);
  return checksum;
}

inline PpmParams read_ppm_params(const std::filesystem::path& path) {
  const std::string buf = detail::read_file_bytes(path);
  const auto* ptr = reinterpret_cast<const unsigned char*>(buf.data());
  require(buf.size() >= kPpmHeaderSize + 8, Errc::truncated_payload,
          path.string() + ": file too small for header (" + std::to_string(buf.size()) +
              " bytes)");
  require(std::memcmp(buf.data(), kPpmMagic, 8) == 0, Errc::bad_magic,
          path.string() + ": bad magic at byte offset 0");
  const std::uint16_t version = detail::le_get_u16(ptr + 8);
  require(version == kPpmVersion, Errc::version_mismatch,
          path.string() + ": unsupported version " + std::to_string(version) +
              " at byte offset 8");
  const std::uint32_t l = detail::le_get_u32(ptr + 10);
  const std::uint32_t d = detail::le_get_u32(ptr + 14);
  require(l >= 1 && d >= 1, Errc::invalid_shape,
          path.string() + ": zero n_queries or dim in header");

  const std::size_t payload =
      (static_cast<std::size_t>(l) * d + 3 * static_cast<std::size_t>(d) * d) * 8;
  const std::size_t expected = kPpmHeaderSize + payload + 8;
  require(buf.size() == expected, Errc::truncated_payload,
          path.string() + ": expected " + std::to_string(expected) + " bytes, got " +
              std::to_string(buf.size()));

  const std::uint64_t stored = detail::le_get_u64(ptr + buf.size() - 8);
  const std::uint64_t actual = fnv1a64(buf.data(), buf.size() - 8);
  require(stored == actual, Errc::checksum_mismatch,
          path.string() + ": checksum trailer at byte offset " +
              std::to_string(buf.size() - 8) + " does not match contents");

  std::size_t off = kPpmHeaderSize;
  auto get_block = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) {
        const double v = detail::le_get_f64(ptr + off);
        require(std::isfinite(v), Errc::non_finite_value,
                path.string() + ": non-finite value at byte offset " + std::to_string(off));
        m(i, j) = v;
        off += 8;
      }
    return m;
  };
  PpmParams p;
  p.queries = get_block(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(d));
  p.w_q = get_block(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  p.w_k = get_block(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  p.w_v = get_block(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  return p;
}

} // namespace ctis
