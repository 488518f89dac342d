#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ctis/error.hpp"
#include "ctis/features.hpp"
#include "ctis/rng.hpp"

namespace ctis {

struct ClusterConfig {
  std::size_t n_clusters = 16;
  std::size_t max_iters = 100;
  double tol = 1e-6; // max centroid shift (feature units) below which we stop
  std::uint64_t seed = 0;
  std::size_t n_restarts = 4;

  void validate() const {
    require(n_clusters >= 1, Errc::invalid_argument, "n_clusters must be >= 1");
    require(max_iters >= 1, Errc::invalid_argument, "max_iters must be >= 1");
    require(tol >= 0.0, Errc::invalid_argument, "tol must be >= 0");
    require(n_restarts >= 1, Errc::invalid_argument, "n_restarts must be >= 1");
  }
};

struct ClusteringResult {
  Eigen::MatrixXd centroids;             // K x d
  std::vector<std::int32_t> assignments; // length N, values in [0, K)
  double inertia = 0.0;
  std::size_t iterations = 0;
  // Objective recomputed after every Lloyd assignment step of the winning
  // restart, plus the final value; non-increasing by construction.
  std::vector<double> inertia_trace;
  std::size_t restart_index = 0;
};

// Nearest-centroid assignment, ties broken by lowest centroid index.
inline std::vector<std::int32_t> assign(const Eigen::MatrixXd& points,
                                        const Eigen::MatrixXd& centroids) {
  require(points.cols() == centroids.cols(), Errc::dimension_mismatch,
          "points have dim " + std::to_string(points.cols()) + ", centroids " +
              std::to_string(centroids.cols()));
  std::vector<std::int32_t> out(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::int32_t best_k = 0;
    for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
      const double d2 = (points.row(i) - centroids.row(k)).squaredNorm();
      if (d2 < best) {
        best = d2;
        best_k = static_cast<std::int32_t>(k);
      }
    }
    out[static_cast<std::size_t>(i)] = best_k;
  }
  return out;
}

namespace detail {

// k-means++ seeding: first centroid uniform, then proportional to squared
// distance to the nearest chosen centroid.
inline Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& x, std::size_t k,
                                     rng::Stream& stream) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd centroids(static_cast<Eigen::Index>(k), x.cols());
  Eigen::VectorXd min_d2 = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());

  Eigen::Index first = static_cast<Eigen::Index>(stream.next_below(static_cast<std::uint64_t>(n)));
  centroids.row(0) = x.row(first);
  for (Eigen::Index i = 0; i < n; ++i)
    min_d2(i) = (x.row(i) - centroids.row(0)).squaredNorm();

  for (std::size_t c = 1; c < k; ++c) {
    const double total = min_d2.sum();
    Eigen::Index pick;
    if (total <= 0.0) {
      pick = static_cast<Eigen::Index>(stream.next_below(static_cast<std::uint64_t>(n)));
    } else {
      const double target = stream.next_unit() * total;
      double cum = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        cum += min_d2(i);
        if (cum > target) {
          pick = i;
          break;
        }
      }
    }
    centroids.row(static_cast<Eigen::Index>(c)) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d2 = (x.row(i) - centroids.row(static_cast<Eigen::Index>(c))).squaredNorm();
      if (d2 < min_d2(i)) min_d2(i) = d2;
    }
  }
  return centroids;
}

struct LloydOutcome {
  Eigen::MatrixXd centroids;
  std::vector<std::int32_t> assignments;
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::vector<double> trace;
};

// One Lloyd run from the given initial centroids. Distances use the expanded
// form |x|^2 - 2 x.c + |c|^2 so the assignment step is a single gemm; the
// final inertia is recomputed from exact squared distances.
inline LloydOutcome lloyd(const Eigen::MatrixXd& x, Eigen::MatrixXd centroids,
                          const ClusterConfig& cfg) {
  const Eigen::Index n = x.rows();
  const Eigen::Index k = centroids.rows();
  const Eigen::VectorXd xsq = x.rowwise().squaredNorm();

  LloydOutcome out;
  std::vector<std::int32_t> z(static_cast<std::size_t>(n), 0);
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);

  auto assign_pass = [&](double& objective) {
    const Eigen::MatrixXd g = x * centroids.transpose(); // n x k
    const Eigen::VectorXd csq = centroids.rowwise().squaredNorm();
    objective = 0.0;
    std::fill(counts.begin(), counts.end(), Eigen::Index{0});
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      Eigen::Index best_k = 0;
      for (Eigen::Index c = 0; c < k; ++c) {
        const double d2 = xsq(i) - 2.0 * g(i, c) + csq(c);
        if (d2 < best) {
          best = d2;
          best_k = c;
        }
      }
      z[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(best_k);
      ++counts[static_cast<std::size_t>(best_k)];
      objective += best > 0.0 ? best : 0.0;
    }
  };

  for (std::size_t iter = 1; iter <= cfg.max_iters; ++iter) {
    double objective = 0.0;
    assign_pass(objective);
    out.trace.push_back(objective);

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    for (Eigen::Index i = 0; i < n; ++i)
      sums.row(z[static_cast<std::size_t>(i)]) += x.row(i);

    Eigen::MatrixXd next = centroids;
    for (Eigen::Index c = 0; c < k; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0)
        next.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);

    // Empty clusters take the point farthest from its centroid in the
    // largest cluster, keeping exactly K populated centroids.
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      Eigen::Index donor = 0;
      for (Eigen::Index d = 1; d < k; ++d)
        if (counts[static_cast<std::size_t>(d)] > counts[static_cast<std::size_t>(donor)]) donor = d;
      if (counts[static_cast<std::size_t>(donor)] < 2) continue;
      Eigen::Index far_i = -1;
      double far_d2 = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (z[static_cast<std::size_t>(i)] != static_cast<std::int32_t>(donor)) continue;
        const double d2 = (x.row(i) - next.row(donor)).squaredNorm();
        if (d2 > far_d2) {
          far_d2 = d2;
          far_i = i;
        }
      }
      next.row(c) = x.row(far_i);
      z[static_cast<std::size_t>(far_i)] = static_cast<std::int32_t>(c);
      --counts[static_cast<std::size_t>(donor)];
      ++counts[static_cast<std::size_t>(c)];
    }

    const double shift = (next - centroids).rowwise().norm().maxCoeff();
    centroids = std::move(next);
    out.iterations = iter;
    if (shift < cfg.tol) break;
  }

  // Final exact pass so assignments are nearest w.r.t. the returned centroids.
  out.assignments = assign(x, centroids);
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    inertia += (x.row(i) - centroids.row(out.assignments[static_cast<std::size_t>(i)])).squaredNorm();
  out.inertia = inertia;
  out.trace.push_back(inertia);
  out.centroids = std::move(centroids);
  return out;
}

} // namespace detail

// Best-of-restarts Lloyd's algorithm from k-means++ seeding (or from the
// caller's explicit initial centroids, in which case exactly one run is made).
inline ClusteringResult kmeans_fit(const Eigen::MatrixXd& points, const ClusterConfig& cfg,
                                   const std::optional<Eigen::MatrixXd>& init = {}) {
  cfg.validate();
  require(points.rows() >= 1, Errc::empty_input, "no points to cluster");
  require(points.allFinite(), Errc::non_finite_value, "points contain non-finite values");
  const std::size_t k = cfg.n_clusters;

  if (init) {
    require(static_cast<std::size_t>(init->rows()) == k, Errc::dimension_mismatch,
            "explicit init must have n_clusters rows");
    require(init->cols() == points.cols(), Errc::dimension_mismatch,
            "explicit init dim does not match points");
    require(init->allFinite(), Errc::non_finite_value, "explicit init contains non-finite values");
  } else {
    require(static_cast<std::size_t>(points.rows()) >= k, Errc::too_few_points,
            "need at least n_clusters=" + std::to_string(k) + " points, got " +
                std::to_string(points.rows()));
  }

  ClusteringResult best;
  bool have_best = false;
  const std::size_t restarts = init ? 1 : cfg.n_restarts;
  for (std::size_t r = 0; r < restarts; ++r) {
    Eigen::MatrixXd start;
    if (init) {
      start = *init;
    } else {
      rng::Stream stream(rng::mix(cfg.seed, 0x6b6d6e73ULL, r));
      start = detail::kmeanspp_init(points, k, stream);
    }
    detail::LloydOutcome run = detail::lloyd(points, std::move(start), cfg);
    if (!have_best || run.inertia < best.inertia) {
      best.centroids = std::move(run.centroids);
      best.assignments = std::move(run.assignments);
      best.inertia = run.inertia;
      best.iterations = run.iterations;
      best.inertia_trace = std::move(run.trace);
      best.restart_index = r;
      have_best = true;
    }
  }
  return best;
}

inline ClusteringResult kmeans_fit(const PatchFeatureMatrix& m, const ClusterConfig& cfg,
                                   const std::optional<Eigen::MatrixXd>& init = {}) {
  m.validate();
  return kmeans_fit(m.to_eigen(), cfg, init);
}

// Slide-level global representation: the arithmetic mean of the K centroids.
struct GlobalRepresentation {
  Eigen::VectorXd vector;
};

inline GlobalRepresentation global_representation(const ClusteringResult& r) {
  require(r.centroids.rows() >= 1, Errc::invalid_shape, "clustering result has no centroids");
  GlobalRepresentation g;
  g.vector = r.centroids.colwise().mean().transpose();
  return g;
}

// --- serialization: centroids in the binary container, the rest as JSON ---

inline void write_clustering(const ClusteringResult& r, const ClusterConfig& cfg,
                             const std::filesystem::path& centroids_path,
                             const std::filesystem::path& sidecar_path) {
  PatchFeatureMatrix c;
  c.slide_id = "centroids";
  c.n_patches = static_cast<std::size_t>(r.centroids.rows());
  c.dim = static_cast<std::size_t>(r.centroids.cols());
  c.data.resize(c.n_patches * c.dim);
  for (std::size_t i = 0; i < c.n_patches; ++i)
    for (std::size_t j = 0; j < c.dim; ++j)
      c.at(i, j) = static_cast<float>(r.centroids(static_cast<Eigen::Index>(i),
                                                  static_cast<Eigen::Index>(j)));
  write_features(c, centroids_path);

  nlohmann::ordered_json j;
  j["assignments"] = r.assignments;
  j["inertia"] = r.inertia;
  j["iterations"] = r.iterations;
  j["restart_index"] = r.restart_index;
  j["config"] = {{"n_clusters", cfg.n_clusters}, {"max_iters", cfg.max_iters},
                 {"tol", cfg.tol},               {"seed", cfg.seed},
                 {"n_restarts", cfg.n_restarts}};
  std::ofstream out(sidecar_path, std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot open " + sidecar_path.string());
  out << j.dump(2) << '\n';
  require(out.good(), Errc::io_failure, "write failed on " + sidecar_path.string());
}

inline ClusteringResult read_clustering(const std::filesystem::path& centroids_path,
                                        const std::filesystem::path& sidecar_path) {
  const PatchFeatureMatrix c = read_features(centroids_path);
  ClusteringResult r;
  r.centroids = c.to_eigen();
  std::ifstream in(sidecar_path);
  require(in.good(), Errc::io_failure, "cannot open " + sidecar_path.string());
  nlohmann::json j;
  try {
    in >> j;
    r.assignments = j.at("assignments").get<std::vector<std::int32_t>>();
    r.inertia = j.at("inertia").get<double>();
    r.iterations = j.at("iterations").get<std::size_t>();
    r.restart_index = j.value("restart_index", std::size_t{0});
  } catch (const std::exception& e) {
    fail(Errc::file_format, sidecar_path.string() + ": " + e.what());
  }
  return r;
}

} // namespace ctis
