#pragma once

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctis/error.hpp"
#include "ctis/features.hpp"
#include "ctis/fusion.hpp"
#include "ctis/hash.hpp"
#include "ctis/kmeans.hpp"
#include "ctis/ppm.hpp"
#include "ctis/rng.hpp"
#include "ctis/version.hpp"

namespace ctis {

// Structured logs go to stderr as JSON lines; data never does.
class JsonlLogger {
 public:
  explicit JsonlLogger(std::ostream& out = std::cerr, bool enabled = true)
      : out_(&out), enabled_(enabled) {}

  void log(const std::string& level, const std::string& event,
           nlohmann::ordered_json fields = nlohmann::ordered_json::object()) {
    if (!enabled_) return;
    nlohmann::ordered_json j{{"level", level}, {"event", event}};
    for (auto& [k, v] : fields.items()) j[k] = v;
    std::scoped_lock lock(mu_);
    (*out_) << j.dump() << '\n';
    out_->flush();
  }

  void info(const std::string& event, nlohmann::ordered_json fields = nlohmann::ordered_json::object()) {
    log("info", event, std::move(fields));
  }
  void warn(const std::string& event, nlohmann::ordered_json fields = nlohmann::ordered_json::object()) {
    log("warn", event, std::move(fields));
  }
  void error(const std::string& event, nlohmann::ordered_json fields = nlohmann::ordered_json::object()) {
    log("error", event, std::move(fields));
  }

 private:
  std::ostream* out_;
  bool enabled_;
  std::mutex mu_;
};

inline std::uint64_t checksum_file(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  return fnv1a64(bytes.data(), bytes.size());
}

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Provenance sidecar written by every subcommand. The timestamps here are the
// only non-deterministic bytes any command produces.
class RunManifest {
 public:
  RunManifest(std::string command, std::uint64_t seed)
      : command_(std::move(command)), seed_(seed), started_(utc_timestamp()),
        t0_(std::chrono::steady_clock::now()) {}

  void set_config(nlohmann::ordered_json config) { config_ = std::move(config); }

  void add_input(const std::filesystem::path& path) {
    inputs_.push_back({{"path", path.string()}, {"checksum", to_hex(checksum_file(path))}});
  }
  void add_output(const std::filesystem::path& path) {
    outputs_.push_back({{"path", path.string()}, {"checksum", to_hex(checksum_file(path))}});
  }
  void add_note(const std::string& note) { notes_.push_back(note); }

  nlohmann::ordered_json finish() const {
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0_)
                        .count();
    nlohmann::ordered_json j;
    j["record"] = "run_manifest";
    j["tool"] = kToolName;
    j["tool_version"] = kToolVersion;
    j["command"] = command_;
    j["seed"] = seed_;
    j["config"] = config_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["notes"] = notes_;
    j["started_at"] = started_;
    j["finished_at"] = utc_timestamp();
    j["total_ms"] = ms;
    return j;
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::io_failure, "cannot open " + path.string());
    out << finish().dump(2) << '\n';
    require(out.good(), Errc::io_failure, "write failed on " + path.string());
  }

 private:
  std::string command_;
  std::uint64_t seed_;
  nlohmann::ordered_json config_;
  std::vector<nlohmann::ordered_json> inputs_;
  std::vector<nlohmann::ordered_json> outputs_;
  std::vector<std::string> notes_;
  std::string started_;
  std::chrono::steady_clock::time_point t0_;
};

// ---------------------------------------------------------------------------
// Slide encoding: features -> k-means global vector + attention tokens ->
// fused (1 + L) x d_out token block per slide.
// ---------------------------------------------------------------------------

struct EncodeConfig {
  std::filesystem::path manifest_path;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  std::size_t n_clusters = 16;
  std::size_t max_iters = 100;
  double tol = 1e-6;
  std::size_t n_restarts = 4;
  std::size_t m_max = 4096;
  std::size_t n_segments = 8;
  std::size_t l_queries = 32;
  std::size_t d_out = 0; // 0: keep the input feature dim
  std::size_t workers = 1;
  bool strict = false;       // fail fast instead of per-slide isolation
  bool mask_padding = true;
  std::filesystem::path ppm_params_path; // empty: seed-derived init

  nlohmann::ordered_json to_json() const {
    return {{"manifest", manifest_path.string()},
            {"out_dir", out_dir.string()},
            {"n_clusters", n_clusters},
            {"max_iters", max_iters},
            {"tol", tol},
            {"n_restarts", n_restarts},
            {"m_max", m_max},
            {"n_segments", n_segments},
            {"l_queries", l_queries},
            {"d_out", d_out},
            {"workers", workers},
            {"strict", strict},
            {"mask_padding", mask_padding},
            {"ppm_params", ppm_params_path.string()}};
  }
};

struct SlideEncodeRecord {
  std::string slide_id;
  std::string input_path;
  std::string output_path;
  bool ok = false;
  std::string error;
  std::uint64_t output_checksum = 0;
  std::size_t n_patches = 0;
  double kmeans_inertia = 0.0;
  std::size_t kmeans_iterations = 0;
  long long ms = 0;
};

struct EncodeResult {
  std::vector<SlideEncodeRecord> records;
  std::size_t n_ok = 0;
  std::size_t n_failed = 0;
};

inline EncodeResult encode_slides(const EncodeConfig& cfg, JsonlLogger& log) {
  require(cfg.workers >= 1, Errc::invalid_argument, "workers must be >= 1");
  const SlideManifest manifest = read_slide_manifest(cfg.manifest_path);
  require(!manifest.empty(), Errc::empty_input,
          cfg.manifest_path.string() + ": empty manifest");
  std::filesystem::create_directories(cfg.out_dir);

  const std::size_t d = manifest.front().dim;
  const std::size_t d_out = cfg.d_out ? cfg.d_out : d;

  PpmParams ppm = cfg.ppm_params_path.empty()
                      ? ppm_init(rng::mix(cfg.seed, 0x70706d70ULL), cfg.l_queries, d)
                      : read_ppm_params(cfg.ppm_params_path);
  require(ppm.dim() == d, Errc::dimension_mismatch,
          "attention parameter dim " + std::to_string(ppm.dim()) +
              " does not match feature dim " + std::to_string(d));
  const FusionParams fusion = fusion_init(rng::mix(cfg.seed, 0x66757350ULL), d, d_out);

  EncodeResult result;
  result.records.resize(manifest.size());

  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr first_error;
  std::mutex error_mu;

  const auto worker = [&]() {
    while (!abort.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= manifest.size()) break;
      const auto& entry = manifest[i];
      SlideEncodeRecord& rec = result.records[i];
      rec.slide_id = entry.slide_id;
      const auto in_path = resolve_manifest_path(cfg.manifest_path, entry.path);
      rec.input_path = in_path.string();
      const auto t0 = std::chrono::steady_clock::now();
      try {
        PatchFeatureMatrix m = read_features(in_path);
        m.slide_id = entry.slide_id;
        require(m.dim == d, Errc::dimension_mismatch,
                entry.slide_id + ": feature dim " + std::to_string(m.dim) +
                    " differs from run dim " + std::to_string(d));
        rec.n_patches = m.n_patches;
        const Eigen::MatrixXd x = m.to_eigen();

        ClusterConfig kcfg;
        kcfg.n_clusters = cfg.n_clusters;
        kcfg.max_iters = cfg.max_iters;
        kcfg.tol = cfg.tol;
        kcfg.n_restarts = cfg.n_restarts;
        kcfg.seed = rng::mix(cfg.seed, fnv1a64(entry.slide_id), 0x6b6dULL);
        const ClusteringResult clusters = kmeans_fit(x, kcfg);
        rec.kmeans_inertia = clusters.inertia;
        rec.kmeans_iterations = clusters.iterations;
        const GlobalRepresentation g = global_representation(clusters);

        const NormalizedPatchSet norm =
            normalize_length(x, cfg.m_max, cfg.n_segments,
                             rng::mix(cfg.seed, fnv1a64(entry.slide_id)));
        PpmForwardOptions fopts;
        fopts.mask_padding = cfg.mask_padding;
        const PpmForward fwd = ppm_forward(norm, ppm, fopts);

        const Eigen::MatrixXd tokens = fuse(g.vector, fwd.r_local, fusion);
        const auto out_path = cfg.out_dir / (entry.slide_id + ".tokens.ctisf");
        rec.output_checksum = write_tokens(tokens, entry.slide_id, out_path);
        rec.output_path = out_path.string();
        rec.ok = true;
      } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
        if (cfg.strict) {
          std::scoped_lock lock(error_mu);
          if (!first_error) first_error = std::current_exception();
          abort.store(true);
        }
      }
      rec.ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - t0)
                   .count();
      if (rec.ok) {
        log.info("slide_encoded", {{"slide_id", rec.slide_id},
                                   {"n_patches", rec.n_patches},
                                   {"ms", rec.ms}});
      } else {
        log.error("slide_failed", {{"slide_id", rec.slide_id}, {"error", rec.error}});
      }
    }
  };

  if (cfg.workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < cfg.workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  for (const auto& rec : result.records) {
    if (rec.slide_id.empty()) continue; // strict abort left it unprocessed
    if (rec.ok)
      ++result.n_ok;
    else
      ++result.n_failed;
  }
  return result;
}

} // namespace ctis
