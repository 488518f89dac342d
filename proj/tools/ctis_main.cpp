// ctis command line tool: slide encoding, report structuring, dataset builds,
// splits and scoring. Every subcommand logs JSON lines to stderr, writes its
// data to the paths given on the command line and drops a run manifest next
// to its primary output. Exit code 0 means the run produced no error records.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctis/builders.hpp"
#include "ctis/cprt.hpp"
#include "ctis/error.hpp"
#include "ctis/features.hpp"
#include "ctis/metrics.hpp"
#include "ctis/pipeline.hpp"
#include "ctis/remote.hpp"
#include "ctis/report_synth.hpp"
#include "ctis/synth.hpp"
#include "ctis/version.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string default_manifest_path(const fs::path& primary) {
  return primary.string() + ".run.json";
}

std::string format_id(const char* fmt, std::size_t v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

struct RemoteOpts {
  std::string url;
  std::string model = "extractor";
  int timeout = 30;

  bool enabled() const { return !url.empty(); }
  ctis::RemoteConfig config() const {
    ctis::RemoteConfig c;
    c.base_url = url;
    c.model = model;
    c.timeout_seconds = timeout;
    return c;
  }
};

void add_remote_opts(CLI::App* cmd, RemoteOpts& r) {
  cmd->add_option("--remote-url", r.url,
                  "base URL of a remote extractor service (offline engine when unset)");
  cmd->add_option("--remote-model", r.model, "remote model name");
  cmd->add_option("--remote-timeout", r.timeout, "remote request timeout in seconds");
}

// ---------------------------------------------------------------------------

struct EncodeArgs {
  ctis::EncodeConfig cfg;
  std::string run_manifest;
};

int run_encode(const EncodeArgs& a, ctis::JsonlLogger& log) {
  ctis::RunManifest manifest("encode", a.cfg.seed);
  manifest.set_config(a.cfg.to_json());
  manifest.add_input(a.cfg.manifest_path);

  const ctis::EncodeResult res = ctis::encode_slides(a.cfg, log);
  for (const auto& rec : res.records)
    if (rec.ok) manifest.add_output(rec.output_path);

  log.info("encode_done", {{"n_ok", res.n_ok}, {"n_failed", res.n_failed}});
  const fs::path mpath = a.run_manifest.empty()
                             ? fs::path(default_manifest_path(a.cfg.out_dir / "encode"))
                             : fs::path(a.run_manifest);
  manifest.write(mpath);
  return res.n_failed == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string schema_path;
  std::string reports_path;
  std::string out_path;
  std::uint64_t seed = 0;
  RemoteOpts remote;
  std::string run_manifest;
};

int run_extract(const ExtractArgs& a, ctis::JsonlLogger& log) {
  ctis::RunManifest manifest("extract", a.seed);
  manifest.set_config({{"schema", a.schema_path},
                       {"reports", a.reports_path},
                       {"out", a.out_path},
                       {"remote", a.remote.enabled()}});
  manifest.add_input(a.schema_path);
  manifest.add_input(a.reports_path);

  const ctis::CprtSchema schema = ctis::load_schema(a.schema_path);
  const auto reports = ctis::read_reports(a.reports_path);

  std::unique_ptr<ctis::Extractor> engine;
  if (a.remote.enabled())
    engine = std::make_unique<ctis::RemoteExtractor>(a.remote.config());
  else
    engine = std::make_unique<ctis::OfflineExtractor>();

  const auto features = ctis::extract_corpus(reports, schema, *engine);
  ctis::write_feature_records(features, a.out_path);
  manifest.add_output(a.out_path);

  std::size_t extracted = 0;
  for (const auto& f : features)
    if (f.status != ctis::FeatureStatus::absent) ++extracted;
  log.info("extract_done", {{"engine", engine->name()},
                            {"n_reports", reports.size()},
                            {"n_features", features.size()},
                            {"n_extracted", extracted}});
  manifest.write(a.run_manifest.empty() ? default_manifest_path(a.out_path) : a.run_manifest);
  return 0;
}

// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::string schema_path;
  std::string reports_path;
  std::string features_path;
  std::string out_path;
  std::string spot_export;
  std::size_t spot_n = 20;
  std::uint64_t spot_seed = 0;
  std::string spot_import;
  RemoteOpts remote;
  std::string run_manifest;
};

int run_verify(const VerifyArgs& a, ctis::JsonlLogger& log) {
  ctis::RunManifest manifest("verify", a.spot_seed);
  manifest.set_config({{"schema", a.schema_path},
                       {"reports", a.reports_path},
                       {"features", a.features_path},
                       {"out", a.out_path},
                       {"spot_export", a.spot_export},
                       {"spot_n", a.spot_n},
                       {"spot_import", a.spot_import}});
  manifest.add_input(a.schema_path);
  manifest.add_input(a.features_path);

  const ctis::CprtSchema schema = ctis::load_schema(a.schema_path);
  auto features = ctis::read_feature_records(a.features_path);

  if (!a.spot_import.empty()) {
    manifest.add_input(a.spot_import);
    features = ctis::spot_check_import(std::move(features), a.spot_import);
  } else {
    manifest.add_input(a.reports_path);
    const auto reports = ctis::read_reports(a.reports_path);
    std::unique_ptr<ctis::Extractor> engine;
    if (a.remote.enabled())
      engine = std::make_unique<ctis::RemoteExtractor>(a.remote.config());
    else
      engine = std::make_unique<ctis::OfflineExtractor>();
    ctis::self_verify_corpus(features, reports, schema, *engine);
  }

  ctis::write_feature_records(features, a.out_path);
  manifest.add_output(a.out_path);
  if (!a.spot_export.empty()) {
    ctis::spot_check_export(features, a.spot_n, a.spot_seed, a.spot_export);
    manifest.add_output(a.spot_export);
  }

  std::map<std::string, std::size_t> by_status;
  for (const auto& f : features) ++by_status[ctis::status_name(f.status)];
  ordered_json counts;
  for (const auto& [k, v] : by_status) counts[k] = v;
  log.info("verify_done", {{"n_features", features.size()}, {"by_status", counts}});
  manifest.write(a.run_manifest.empty() ? default_manifest_path(a.out_path) : a.run_manifest);
  return 0;
}

// ---------------------------------------------------------------------------

struct SplitArgs {
  std::string reports_path;
  std::string features_path;
  std::string schema_path;
  std::string out_path;
  ctis::SplitTargets targets;
  std::uint64_t seed = 0;
  ctis::SplitOptions opts;
  std::string run_manifest;
};

int run_split(const SplitArgs& a, ctis::JsonlLogger& log) {
  ctis::RunManifest manifest("split", a.seed);
  manifest.set_config({{"reports", a.reports_path},
                       {"features", a.features_path},
                       {"schema", a.schema_path},
                       {"train", a.targets.train},
                       {"val", a.targets.val},
                       {"test", a.targets.test},
                       {"stratify_key", a.opts.stratify_key},
                       {"allow_scale", a.opts.allow_scale},
                       {"tv_ceiling", a.opts.tv_ceiling}});
  manifest.add_input(a.reports_path);
  manifest.add_input(a.features_path);
  manifest.add_input(a.schema_path);

  const ctis::CprtSchema schema = ctis::load_schema(a.schema_path);
  const auto reports = ctis::read_reports(a.reports_path);
  const auto features = ctis::read_feature_records(a.features_path);

  const ctis::SplitResult res =
      ctis::split_slides(reports, features, schema, a.targets, a.seed, a.opts);
  ctis::write_split(res, a.seed, schema.checksum, a.out_path);
  manifest.add_output(a.out_path);

  for (const auto& note : res.notes) log.warn("split_note", {{"note", note}});
  log.info("split_done", {{"train", res.achieved[0]},
                          {"val", res.achieved[1]},
                          {"test", res.achieved[2]},
                          {"max_tv", res.max_tv}});
  manifest.write(a.run_manifest.empty() ? default_manifest_path(a.out_path) : a.run_manifest);
  return 0;
}

// ---------------------------------------------------------------------------

struct BuildAlignArgs {
  std::string features_path;
  std::string schema_path;
  std::string out_path;
  std::uint64_t seed = 0;
  std::size_t samples_per_case = 100;
  RemoteOpts remote;
  std::string run_manifest;
};

int run_build_align(const BuildAlignArgs& a, ctis::JsonlLogger& log) {
  ctis::RunManifest manifest("build-align", a.seed);
  manifest.set_config({{"features", a.features_path},
                       {"schema", a.schema_path},
                       {"out", a.out_path},
                       {"samples_per_case", a.samples_per_case},
                       {"remote", a.remote.enabled()}});
  manifest.add_input(a.features_path);
  manifest.add_input(a.schema_path);

  const ctis::CprtSchema schema = ctis::load_schema(a.schema_path);
  const auto features = ctis::read_feature_records(a.features_path);

  std::unique_ptr<ctis::Realizer> realizer;
  if (a.remote.enabled())
    realizer = std::make_unique<ctis::RemoteRealizer>(a.remote.config());
  else
    realizer = std::make_unique<ctis::OfflineRealizer>();

  const ctis::AlignBuild build =
      ctis::build_align(features, schema, *realizer, a.seed, a.samples_per_case);
  ctis::write_align(build, a.seed, schema.checksum, a.out_path);
  manifest.add_output(a.out_path);

  for (const auto& w : build.warnings)
    log.warn("align_case_skipped", {{"case_id", w.case_id}, {"message", w.message}});
  for (const auto& f : build.failures)
    log.error("align_sample_failed", {{"case_id", f.case_id},
                                      {"sample_index", f.sample_index},
                                      {"reason", f.reason}});
  log.info("align_done", {{"n_samples", build.samples.size()},
                          {"n_skipped_cases", build.warnings.size()},
                          {"n_failures", build.failures.size()}});
  manifest.write(a.run_manifest.empty() ? default_manifest_path(a.out_path) : a.run_manifest);
  return build.failures.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct BuildBenchArgs {
  std::string reports_path;
  std::string features_path;
  std::string bank_path;
  std::string schema_path;
  std::string out_path;
  std::uint64_t seed = 0;
  std::string split_path;
  std::string subset;
  std::string run_manifest;
};

int run_build_bench(const BuildBenchArgs& a, ctis::JsonlLogger& log) {
  ctis::RunManifest manifest("build-bench", a.seed);
  manifest.set_config({{"reports", a.reports_path},
                       {"features", a.features_path},
                       {"bank", a.bank_path},
                       {"schema", a.schema_path},
                       {"out", a.out_path},
                       {"split", a.split_path},
                       {"subset", a.subset}});
  manifest.add_input(a.reports_path);
  manifest.add_input(a.features_path);
  manifest.add_input(a.bank_path);
  manifest.add_input(a.schema_path);

  const ctis::CprtSchema schema = ctis::load_schema(a.schema_path);
  const auto reports = ctis::read_reports(a.reports_path);
  const auto features = ctis::read_feature_records(a.features_path);
  const ctis::QuestionBank bank = ctis::load_question_bank(a.bank_path, schema);

  std::vector<ctis::QaPair> pairs = ctis::build_bench(reports, features, bank, schema);
  if (!a.split_path.empty()) {
    manifest.add_input(a.split_path);
    const auto assignment = ctis::read_split_assignment(a.split_path);
    pairs = ctis::filter_bench(pairs, assignment, a.subset);
  }
  if (pairs.empty())
    log.warn("bench_empty", {{"message", "no usable (slide, question) pairs; writing header only"}});

  ctis::write_bench(pairs, a.seed, schema.checksum, a.out_path);
  manifest.add_output(a.out_path);
  log.info("bench_done", {{"n_pairs", pairs.size()}});
  manifest.write(a.run_manifest.empty() ? default_manifest_path(a.out_path) : a.run_manifest);
  return 0;
}

// ---------------------------------------------------------------------------

struct ScoreArgs {
  std::string bench_path;
  std::string pred_path;
  std::string out_path = "score_report.json";
  ctis::metrics::ScoreOptions opts;
  std::string run_manifest;
};

int run_score(const ScoreArgs& a, ctis::JsonlLogger& log) {
  ctis::RunManifest manifest("score", 0);
  manifest.set_config({{"bench", a.bench_path},
                       {"predictions", a.pred_path},
                       {"out", a.out_path},
                       {"sentence_average", a.opts.sentence_average},
                       {"text_over_all", a.opts.text_over_all}});
  manifest.add_input(a.bench_path);
  manifest.add_input(a.pred_path);

  const ctis::metrics::ScoreReport rep =
      ctis::metrics::score_run(a.pred_path, a.bench_path, a.opts);

  std::ofstream out(a.out_path, std::ios::trunc);
  ctis::require(out.good(), ctis::Errc::io_failure, "cannot open " + a.out_path);
  out << rep.to_json().dump(2) << '\n';
  ctis::require(out.good(), ctis::Errc::io_failure, "write failed on " + a.out_path);
  manifest.add_output(a.out_path);

  std::cout << rep.to_table();
  log.info("score_done", {{"n_scored", rep.n_scored},
                          {"closed_accuracy", rep.closed_accuracy},
                          {"average", rep.average}});
  manifest.write(a.run_manifest.empty() ? default_manifest_path(a.out_path) : a.run_manifest);
  return 0;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t queries = 4;
  std::size_t patches = 8;
  std::size_t dim = 16;
  double step = 1e-3;
  double tol = 1e-6;
  std::string out_path = "gradcheck_report.json";
  std::string run_manifest;
};

int run_gradcheck(const GradcheckArgs& a, ctis::JsonlLogger& log) {
  ctis::RunManifest manifest("gradcheck", a.seed);
  manifest.set_config({{"queries", a.queries},
                       {"patches", a.patches},
                       {"dim", a.dim},
                       {"step", a.step},
                       {"tol", a.tol}});

  const ctis::GradCheckReport rep =
      ctis::grad_check(a.seed, a.queries, a.patches, a.dim, a.step, a.tol);
  std::ofstream out(a.out_path, std::ios::trunc);
  ctis::require(out.good(), ctis::Errc::io_failure, "cannot open " + a.out_path);
  out << rep.to_json().dump(2) << '\n';
  ctis::require(out.good(), ctis::Errc::io_failure, "write failed on " + a.out_path);
  manifest.add_output(a.out_path);

  std::cout << rep.to_json().dump(2) << '\n';
  if (rep.pass) {
    log.info("gradcheck_done", {{"max_rel_err", rep.max_rel_err}});
  } else {
    log.error("gradcheck_failed", {{"max_rel_err", rep.max_rel_err}, {"tol", rep.tol}});
  }
  manifest.write(a.run_manifest.empty() ? default_manifest_path(a.out_path) : a.run_manifest);
  return rep.pass ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct StatsArgs {
  std::string bench_path;
  std::string align_path;
  std::string out_path = "stats.json";
  std::string run_manifest;
};

int run_stats(const StatsArgs& a, ctis::JsonlLogger& log) {
  ctis::RunManifest manifest("stats", 0);
  manifest.set_config({{"bench", a.bench_path}, {"align", a.align_path}, {"out", a.out_path}});

  ordered_json j;
  if (!a.bench_path.empty()) {
    manifest.add_input(a.bench_path);
    j = ctis::dataset_stats(ctis::read_bench(a.bench_path));
  } else {
    manifest.add_input(a.align_path);
    j = ctis::align_stats(ctis::read_align(a.align_path));
  }

  std::ofstream out(a.out_path, std::ios::trunc);
  ctis::require(out.good(), ctis::Errc::io_failure, "cannot open " + a.out_path);
  out << j.dump(2) << '\n';
  ctis::require(out.good(), ctis::Errc::io_failure, "write failed on " + a.out_path);
  manifest.add_output(a.out_path);

  std::cout << j.dump(2) << '\n';
  log.info("stats_done", {{"kind", j.value("kind", std::string())}});
  manifest.write(a.run_manifest.empty() ? default_manifest_path(a.out_path) : a.run_manifest);
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string mode; // slides | reports
  // slides
  std::string out_dir;
  std::size_t n_slides = 4;
  std::size_t patches = 256;
  std::size_t dim = 64;
  std::size_t modes = 4;
  // reports
  std::string schema_path;
  std::string out_reports;
  std::string out_truth;
  std::size_t cases = 20;
  std::size_t slides_per_case = 1;
  double presence_rate = 0.9;
  std::string bank_path;
  double rated_rate = -1.0;
  std::vector<std::string> rated_keys;
  std::uint64_t seed = 0;
  std::string run_manifest;
};

int run_synth(const SynthArgs& a, ctis::JsonlLogger& log) {
  ctis::RunManifest manifest("synth", a.seed);

  if (a.mode == "slides") {
    ctis::require(!a.out_dir.empty(), ctis::Errc::invalid_argument,
                  "synth --mode slides needs --out");
    manifest.set_config({{"mode", a.mode},
                         {"out", a.out_dir},
                         {"n_slides", a.n_slides},
                         {"patches", a.patches},
                         {"dim", a.dim},
                         {"modes", a.modes}});
    fs::create_directories(a.out_dir);
    ctis::SlideManifest entries;
    for (std::size_t i = 0; i < a.n_slides; ++i) {
      ctis::PatchFeatureMatrix m =
          ctis::synth_slide(ctis::rng::mix(a.seed, i), a.patches, a.dim, a.modes);
      m.slide_id = format_id("SYN-%04zu", i + 1);
      const std::string fname = m.slide_id + ".ctisf";
      const std::uint64_t checksum = ctis::write_features(m, fs::path(a.out_dir) / fname);
      entries.push_back({m.slide_id, fname, m.n_patches, m.dim, checksum});
      manifest.add_output(fs::path(a.out_dir) / fname);
    }
    const fs::path mpath = fs::path(a.out_dir) / "manifest.jsonl";
    ctis::write_slide_manifest(entries, mpath);
    manifest.add_output(mpath);
    log.info("synth_done", {{"mode", "slides"}, {"n_slides", a.n_slides}});
    manifest.write(a.run_manifest.empty() ? default_manifest_path(mpath) : a.run_manifest);
    return 0;
  }

  ctis::require(a.mode == "reports", ctis::Errc::invalid_argument,
                "synth mode must be slides or reports");
  ctis::require(!a.schema_path.empty() && !a.out_reports.empty() && !a.out_truth.empty(),
                ctis::Errc::invalid_argument,
                "synth --mode reports needs --schema, --out-reports and --out-truth");
  manifest.set_config({{"mode", a.mode},
                       {"schema", a.schema_path},
                       {"out_reports", a.out_reports},
                       {"out_truth", a.out_truth},
                       {"cases", a.cases},
                       {"slides_per_case", a.slides_per_case},
                       {"presence_rate", a.presence_rate},
                       {"bank", a.bank_path},
                       {"rated_rate", a.rated_rate}});
  manifest.add_input(a.schema_path);

  const ctis::CprtSchema schema = ctis::load_schema(a.schema_path);
  ctis::SynthReportConfig cfg;
  cfg.n_cases = a.cases;
  cfg.slides_per_case = a.slides_per_case;
  cfg.presence_rate = a.presence_rate;
  cfg.seed = a.seed;
  cfg.rated_keys = a.rated_keys;
  if (!a.bank_path.empty()) {
    manifest.add_input(a.bank_path);
    for (const auto& q : ctis::load_question_bank(a.bank_path, schema).questions)
      cfg.rated_keys.push_back(q.key);
  }
  if (a.rated_rate >= 0.0) cfg.rated_presence_rate = a.rated_rate;

  const ctis::SynthCorpus corpus = ctis::synth_reports(schema, cfg);
  ctis::write_reports(corpus.reports, a.out_reports);
  ctis::write_feature_records(corpus.truth, a.out_truth);
  manifest.add_output(a.out_reports);
  manifest.add_output(a.out_truth);
  log.info("synth_done", {{"mode", "reports"},
                          {"n_cases", corpus.reports.size()},
                          {"n_truth", corpus.truth.size()}});
  manifest.write(a.run_manifest.empty() ? default_manifest_path(a.out_reports) : a.run_manifest);
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"whole-slide feature encoding and report structuring toolkit"};
  app.set_version_flag("--version", std::string(ctis::kToolVersion));
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("--quiet", quiet, "suppress stderr logging");

  EncodeArgs enc;
  auto* c_enc = app.add_subcommand("encode", "encode slides listed in a feature manifest");
  c_enc->add_option("--manifest", enc.cfg.manifest_path, "slide manifest (jsonl)")
      ->required()->check(CLI::ExistingFile);
  c_enc->add_option("--out", enc.cfg.out_dir, "output directory for token files")->required();
  c_enc->add_option("--seed", enc.cfg.seed, "run seed");
  c_enc->add_option("--clusters", enc.cfg.n_clusters, "k-means cluster count");
  c_enc->add_option("--max-iters", enc.cfg.max_iters, "k-means iteration cap");
  c_enc->add_option("--tol", enc.cfg.tol, "k-means centroid-shift tolerance");
  c_enc->add_option("--restarts", enc.cfg.n_restarts, "k-means restarts");
  c_enc->add_option("--m-max", enc.cfg.m_max, "normalized patch count per slide");
  c_enc->add_option("--segments", enc.cfg.n_segments, "subsampling segments");
  c_enc->add_option("--queries", enc.cfg.l_queries, "attention query count");
  c_enc->add_option("--d-out", enc.cfg.d_out, "fused token dim (0: keep input dim)");
  c_enc->add_option("--workers", enc.cfg.workers, "worker threads");
  c_enc->add_flag("--strict", enc.cfg.strict, "abort on the first failing slide");
  c_enc->add_flag("!--no-mask-padding", enc.cfg.mask_padding,
                  "attend to zero padding instead of masking it");
  c_enc->add_option("--ppm-params", enc.cfg.ppm_params_path,
                    "attention parameter file (seed-derived when unset)")
      ->check(CLI::ExistingFile);
  c_enc->add_option("--run-manifest", enc.run_manifest, "run manifest path");

  ExtractArgs ext;
  auto* c_ext = app.add_subcommand("extract", "structure reports against a template schema");
  c_ext->add_option("--schema", ext.schema_path, "template schema json")
      ->required()->check(CLI::ExistingFile);
  c_ext->add_option("--reports", ext.reports_path, "pathology reports (jsonl)")
      ->required()->check(CLI::ExistingFile);
  c_ext->add_option("--out", ext.out_path, "extracted feature records (jsonl)")->required();
  c_ext->add_option("--seed", ext.seed, "run seed (recorded in the manifest)");
  add_remote_opts(c_ext, ext.remote);
  c_ext->add_option("--run-manifest", ext.run_manifest, "run manifest path");

  VerifyArgs ver;
  auto* c_ver = app.add_subcommand("verify",
                                   "self-verify extracted features against their reports");
  c_ver->add_option("--schema", ver.schema_path, "template schema json")
      ->required()->check(CLI::ExistingFile);
  c_ver->add_option("--reports", ver.reports_path, "pathology reports (jsonl)")
      ->check(CLI::ExistingFile);
  c_ver->add_option("--features", ver.features_path, "extracted feature records (jsonl)")
      ->required()->check(CLI::ExistingFile);
  c_ver->add_option("--out", ver.out_path, "updated feature records (jsonl)")->required();
  auto* spot_exp = c_ver->add_option("--spot-export", ver.spot_export,
                                     "write a review sample (tsv) for pathologist spot checks");
  c_ver->add_option("--spot-n", ver.spot_n, "review sample size");
  c_ver->add_option("--spot-seed", ver.spot_seed, "review sampling seed");
  c_ver->add_option("--spot-import", ver.spot_import,
                    "merge reviewed verdicts from a tsv instead of re-verifying")
      ->check(CLI::ExistingFile)->excludes(spot_exp);
  add_remote_opts(c_ver, ver.remote);
  c_ver->add_option("--run-manifest", ver.run_manifest, "run manifest path");

  SplitArgs spl;
  auto* c_spl = app.add_subcommand("split", "stratified case-level train/val/test split");
  c_spl->add_option("--reports", spl.reports_path, "pathology reports (jsonl)")
      ->required()->check(CLI::ExistingFile);
  c_spl->add_option("--features", spl.features_path, "extracted feature records (jsonl)")
      ->required()->check(CLI::ExistingFile);
  c_spl->add_option("--schema", spl.schema_path, "template schema json")
      ->required()->check(CLI::ExistingFile);
  c_spl->add_option("--out", spl.out_path, "split assignment json")->required();
  c_spl->add_option("--train", spl.targets.train, "train slide count")->required();
  c_spl->add_option("--val", spl.targets.val, "val slide count")->required();
  c_spl->add_option("--test", spl.targets.test, "test slide count")->required();
  c_spl->add_option("--seed", spl.seed, "run seed");
  c_spl->add_option("--stratify-key", spl.opts.stratify_key, "primary stratification element");
  c_spl->add_flag("--allow-scale", spl.opts.allow_scale,
                  "scale targets proportionally when they do not sum to the corpus");
  c_spl->add_option("--tv-ceiling", spl.opts.tv_ceiling, "divergence advisory ceiling");
  c_spl->add_option("--run-manifest", spl.run_manifest, "run manifest path");

  BuildAlignArgs bal;
  auto* c_bal = app.add_subcommand("build-align", "build description alignment samples");
  c_bal->add_option("--features", bal.features_path, "extracted feature records (jsonl)")
      ->required()->check(CLI::ExistingFile);
  c_bal->add_option("--schema", bal.schema_path, "template schema json")
      ->required()->check(CLI::ExistingFile);
  c_bal->add_option("--out", bal.out_path, "alignment samples (jsonl)")->required();
  c_bal->add_option("--seed", bal.seed, "run seed");
  c_bal->add_option("--samples-per-case", bal.samples_per_case, "samples per eligible case");
  add_remote_opts(c_bal, bal.remote);
  c_bal->add_option("--run-manifest", bal.run_manifest, "run manifest path");

  BuildBenchArgs bbe;
  auto* c_bbe = app.add_subcommand("build-bench", "build slide-level QA benchmark pairs");
  c_bbe->add_option("--reports", bbe.reports_path, "pathology reports (jsonl)")
      ->required()->check(CLI::ExistingFile);
  c_bbe->add_option("--features", bbe.features_path, "extracted feature records (jsonl)")
      ->required()->check(CLI::ExistingFile);
  c_bbe->add_option("--bank", bbe.bank_path, "question bank json")
      ->required()->check(CLI::ExistingFile);
  c_bbe->add_option("--schema", bbe.schema_path, "template schema json")
      ->required()->check(CLI::ExistingFile);
  c_bbe->add_option("--out", bbe.out_path, "benchmark pairs (jsonl)")->required();
  c_bbe->add_option("--seed", bbe.seed, "run seed");
  auto* split_opt = c_bbe->add_option("--split", bbe.split_path, "split assignment json")
                        ->check(CLI::ExistingFile);
  c_bbe->add_option("--subset", bbe.subset, "keep only slides assigned to this split")
      ->check(CLI::IsMember({"train", "val", "test"}))->needs(split_opt);
  split_opt->needs("--subset");
  c_bbe->add_option("--run-manifest", bbe.run_manifest, "run manifest path");

  ScoreArgs sco;
  auto* c_sco = app.add_subcommand("score", "score predictions against benchmark pairs");
  c_sco->add_option("--bench", sco.bench_path, "benchmark pairs (jsonl)")
      ->required()->check(CLI::ExistingFile);
  c_sco->add_option("--pred", sco.pred_path, "predictions (jsonl with pair_id/text)")
      ->required()->check(CLI::ExistingFile);
  c_sco->add_option("--out", sco.out_path, "score report json");
  c_sco->add_flag("--sentence-average", sco.opts.sentence_average,
                  "average per-pair text scores instead of corpus counts");
  c_sco->add_flag("--text-all", sco.opts.text_over_all,
                  "run text metrics over all pairs, not just open ones");
  c_sco->add_option("--run-manifest", sco.run_manifest, "run manifest path");

  GradcheckArgs gra;
  auto* c_gra = app.add_subcommand("gradcheck",
                                   "finite-difference check of the attention gradients");
  c_gra->add_option("--seed", gra.seed, "instance seed");
  c_gra->add_option("--queries", gra.queries, "query count");
  c_gra->add_option("--patches", gra.patches, "patch rows");
  c_gra->add_option("--dim", gra.dim, "feature dim");
  c_gra->add_option("--step", gra.step, "central difference step");
  c_gra->add_option("--tol", gra.tol, "max relative error tolerance");
  c_gra->add_option("--out", gra.out_path, "report json path");
  c_gra->add_option("--run-manifest", gra.run_manifest, "run manifest path");

  StatsArgs sta;
  auto* c_sta = app.add_subcommand("stats", "summarize a benchmark or alignment dataset");
  auto* sta_bench = c_sta->add_option("--bench", sta.bench_path, "benchmark pairs (jsonl)")
                        ->check(CLI::ExistingFile);
  c_sta->add_option("--align", sta.align_path, "alignment samples (jsonl)")
      ->check(CLI::ExistingFile)->excludes(sta_bench);
  c_sta->add_option("--out", sta.out_path, "stats json path");
  c_sta->add_option("--run-manifest", sta.run_manifest, "run manifest path");

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "generate synthetic slides or report corpora");
  c_syn->add_option("--mode", syn.mode, "slides | reports")
      ->required()->check(CLI::IsMember({"slides", "reports"}));
  c_syn->add_option("--out", syn.out_dir, "output directory (slides mode)");
  c_syn->add_option("--n-slides", syn.n_slides, "slide count (slides mode)");
  c_syn->add_option("--patches", syn.patches, "patches per slide (slides mode)");
  c_syn->add_option("--dim", syn.dim, "feature dim (slides mode)");
  c_syn->add_option("--modes", syn.modes, "mixture modes (slides mode)");
  c_syn->add_option("--schema", syn.schema_path, "template schema json (reports mode)")
      ->check(CLI::ExistingFile);
  c_syn->add_option("--out-reports", syn.out_reports, "report corpus path (reports mode)");
  c_syn->add_option("--out-truth", syn.out_truth, "ground-truth features path (reports mode)");
  c_syn->add_option("--cases", syn.cases, "case count (reports mode)");
  c_syn->add_option("--slides-per-case", syn.slides_per_case, "slides per case (reports mode)");
  c_syn->add_option("--presence-rate", syn.presence_rate,
                    "chance an element is stated (reports mode)");
  c_syn->add_option("--bank", syn.bank_path,
                    "question bank whose keys use --rated-rate (reports mode)")
      ->check(CLI::ExistingFile);
  c_syn->add_option("--rated-keys", syn.rated_keys, "extra keys that use --rated-rate");
  c_syn->add_option("--rated-rate", syn.rated_rate, "presence rate for rated keys");
  c_syn->add_option("--seed", syn.seed, "run seed");
  c_syn->add_option("--run-manifest", syn.run_manifest, "run manifest path");

  CLI11_PARSE(app, argc, argv);

  ctis::JsonlLogger log(std::cerr, !quiet);
  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    if (sub == "encode") return run_encode(enc, log);
    if (sub == "extract") return run_extract(ext, log);
    if (sub == "verify") return run_verify(ver, log);
    if (sub == "split") return run_split(spl, log);
    if (sub == "build-align") return run_build_align(bal, log);
    if (sub == "build-bench") return run_build_bench(bbe, log);
    if (sub == "score") return run_score(sco, log);
    if (sub == "gradcheck") return run_gradcheck(gra, log);
    if (sub == "stats") return run_stats(sta, log);
    if (sub == "synth") return run_synth(syn, log);
    log.error("unknown_command", {{"command", sub}});
    return 2;
  } catch (const ctis::Error& e) {
    log.error("command_failed", {{"command", sub},
                                 {"error", ctis::errc_name(e.code())},
                                 {"message", e.what()}});
    return 1;
  } catch (const std::exception& e) {
    log.error("command_failed", {{"command", sub},
                                 {"error", "internal"},
                                 {"message", e.what()}});
    return 1;
  }
}
