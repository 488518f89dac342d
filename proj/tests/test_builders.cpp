#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "ctis/builders.hpp"
#include "ctis/report_synth.hpp"

using namespace ctis;
namespace fs = std::filesystem;

namespace {

fs::path data_dir() { return fs::path(CTIS_DATA_DIR); }

const CprtSchema& brca_schema() {
  static const CprtSchema s = load_schema(data_dir() / "cprt_brca_schema.json");
  return s;
}

auto errc_is(Errc want) {
  return Catch::Matchers::Predicate<Error>([want](const Error& e) { return e.code() == want; });
}

ExtractedFeature feat(const char* case_id, const char* key, const char* value,
                      FeatureStatus status = FeatureStatus::extracted) {
  ExtractedFeature f;
  f.case_id = case_id;
  f.key = key;
  f.value = value;
  f.status = status;
  f.extractor = "offline";
  return f;
}

PathologyReport rep(const char* case_id, std::vector<std::string> slides) {
  PathologyReport r;
  r.case_id = case_id;
  r.slide_ids = std::move(slides);
  r.text = "Specimen: breast, excision.";
  return r;
}

std::vector<ExtractedFeature> rich_case(const char* case_id) {
  return {feat(case_id, "histologic_type", "Invasive ductal carcinoma"),
          feat(case_id, "histologic_grade", "Grade 2"),
          feat(case_id, "er_status", "Positive"),
          feat(case_id, "pr_status", "Negative"),
          feat(case_id, "tumor_size", "2.3 cm", FeatureStatus::verified)};
}

class CountingRealizer final : public Realizer {
 public:
  explicit CountingRealizer(std::string reply) : reply_(std::move(reply)) {}
  std::string name() const override { return "counting"; }
  std::string realize(const std::string&,
                      const std::vector<std::pair<std::string, std::string>>&) override {
    ++calls;
    return reply_;
  }
  int calls = 0;

 private:
  std::string reply_;
};

class ThrowingRealizer final : public Realizer {
 public:
  std::string name() const override { return "throwing"; }
  std::string realize(const std::string&,
                      const std::vector<std::pair<std::string, std::string>>&) override {
    throw std::runtime_error("backend down");
  }
};

} // namespace

// --- description alignment builder -----------------------------------------------

TEST_CASE("align builder draws per-case samples with 3-5 features") {
  std::vector<ExtractedFeature> features = rich_case("A");
  const auto more = rich_case("B");
  features.insert(features.end(), more.begin(), more.end());

  OfflineRealizer realizer;
  const auto build = build_align(features, brca_schema(), realizer, 42, 20);
  CHECK(build.warnings.empty());
  CHECK(build.failures.empty());
  REQUIRE(build.samples.size() == 40); // 2 eligible cases x 20

  std::map<std::string, std::size_t> key_order;
  for (std::size_t i = 0; i < brca_schema().elements.size(); ++i)
    key_order[brca_schema().elements[i].key] = i;

  for (const auto& s : build.samples) {
    CHECK((s.case_id == "A" || s.case_id == "B"));
    CHECK(s.feature_keys.size() >= 3);
    CHECK(s.feature_keys.size() <= 5);
    std::set<std::string> uniq(s.feature_keys.begin(), s.feature_keys.end());
    CHECK(uniq.size() == s.feature_keys.size());
    for (std::size_t i = 1; i < s.feature_keys.size(); ++i)
      CHECK(key_order.at(s.feature_keys[i - 1]) < key_order.at(s.feature_keys[i]));
    CHECK_FALSE(s.description.empty());
    // realized text mentions every selected value
    const std::string canon = " " + text::canonical(s.description) + " ";
    for (const auto& k : s.feature_keys) {
      bool found = false;
      for (const auto& f : features)
        if (f.case_id == s.case_id && f.key == k)
          found = canon.find(" " + text::canonical(f.value) + " ") != std::string::npos;
      CHECK(found);
    }
  }

  // sample sizes vary across draws once enough features exist
  std::set<std::size_t> sizes;
  for (const auto& s : build.samples) sizes.insert(s.feature_keys.size());
  CHECK(sizes.size() > 1);
}

TEST_CASE("align builder is deterministic in the seed") {
  const auto features = rich_case("A");
  OfflineRealizer realizer;
  const auto a = build_align(features, brca_schema(), realizer, 7, 10);
  const auto b = build_align(features, brca_schema(), realizer, 7, 10);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].feature_keys == b.samples[i].feature_keys);
    CHECK(a.samples[i].description == b.samples[i].description);
    CHECK(a.samples[i].seed_trace == b.samples[i].seed_trace);
  }
  const auto c = build_align(features, brca_schema(), realizer, 8, 10);
  bool any_diff = false;
  for (std::size_t i = 0; i < c.samples.size(); ++i)
    any_diff = any_diff || c.samples[i].feature_keys != a.samples[i].feature_keys;
  CHECK(any_diff);
}

TEST_CASE("cases without three usable features are skipped with a warning") {
  std::vector<ExtractedFeature> features = {
      feat("A", "er_status", "Positive"),
      feat("A", "pr_status", "Negative"),
      feat("A", "her2_status", "Negative", FeatureStatus::contradicted), // unusable
      feat("B", "er_status", "Negative"),
      feat("B", "pr_status", "Negative"),
      feat("B", "her2_status", "Positive"),
  };
  OfflineRealizer realizer;
  const auto build = build_align(features, brca_schema(), realizer, 1, 5);
  REQUIRE(build.warnings.size() == 1);
  CHECK(build.warnings[0].case_id == "A");
  CHECK(build.warnings[0].message.find("2 usable") != std::string::npos);
  CHECK(build.samples.size() == 5); // only case B
  for (const auto& s : build.samples) CHECK(s.case_id == "B");
}

TEST_CASE("align builder records realizer failures after one retry") {
  const auto features = rich_case("A");
  CountingRealizer bad("nothing relevant here");
  const auto build = build_align(features, brca_schema(), bad, 3, 1);
  CHECK(build.samples.empty());
  REQUIRE(build.failures.size() == 1);
  CHECK(build.failures[0].case_id == "A");
  CHECK(build.failures[0].reason.find("mention") != std::string::npos);
  CHECK(bad.calls == 2); // one retry

  ThrowingRealizer worse;
  const auto b2 = build_align(features, brca_schema(), worse, 3, 1);
  REQUIRE(b2.failures.size() == 1);
  CHECK(b2.failures[0].reason == "backend down");
}

TEST_CASE("align builder rejects features with unknown keys") {
  const std::vector<ExtractedFeature> features = {feat("A", "made_up_key", "x")};
  OfflineRealizer realizer;
  CHECK_THROWS_MATCHES(build_align(features, brca_schema(), realizer, 1, 1), Error,
                       errc_is(Errc::invalid_argument));
}

TEST_CASE("align files round trip samples and keep failure records separate") {
  std::vector<ExtractedFeature> features = rich_case("A");
  features.push_back(feat("C", "er_status", "Positive")); // 1 usable: warning
  OfflineRealizer realizer;
  auto build = build_align(features, brca_schema(), realizer, 11, 4);
  build.failures.push_back({"A", 99, "synthetic failure row"});
  REQUIRE(build.samples.size() == 4);
  REQUIRE(build.warnings.size() == 1);

  const fs::path dir = fs::temp_directory_path() / "ctis_align_rt";
  fs::create_directories(dir);
  const fs::path p = dir / "align.jsonl";
  write_align(build, 11, brca_schema().checksum, p);

  // header first, then only align records are surfaced by the reader
  std::ifstream in(p);
  std::string first;
  std::getline(in, first);
  const auto hdr = nlohmann::json::parse(first);
  CHECK(hdr.at("record") == "header");
  CHECK(hdr.at("seed") == 11);

  const auto back = read_align(p);
  REQUIRE(back.size() == build.samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].case_id == build.samples[i].case_id);
    CHECK(back[i].sample_index == build.samples[i].sample_index);
    CHECK(back[i].feature_keys == build.samples[i].feature_keys);
    CHECK(back[i].description == build.samples[i].description);
    CHECK(back[i].seed_trace == build.samples[i].seed_trace);
  }
  fs::remove_all(dir);
}

// --- question bank ---------------------------------------------------------------

TEST_CASE("bundled question bank matches the schema") {
  const auto bank = load_question_bank(data_dir() / "question_bank.json", brca_schema());
  CHECK(bank.questions.size() == 20);
  CHECK(bank.checksum != 0);
  for (const auto& q : bank.questions) {
    const TemplateElement* e = brca_schema().find(q.key);
    REQUIRE(e != nullptr);
    CHECK(e->dimension == q.aspect);
    CHECK_FALSE(q.text.empty());
  }
}

TEST_CASE("question bank validation failures") {
  const fs::path dir = fs::temp_directory_path() / "ctis_bank_bad";
  fs::create_directories(dir);
  const fs::path p = dir / "bank.json";
  auto write_bank = [&](const nlohmann::json& j) {
    std::ofstream out(p, std::ios::trunc);
    out << j.dump();
  };
  auto q = [](const char* id, const char* key, const char* aspect, const char* txt) {
    return nlohmann::json{{"question_id", id}, {"key", key}, {"aspect", aspect}, {"text", txt}};
  };

  write_bank({{"questions", {q("Q1", "er_status", "Molecular Markers", "ER?"),
                             q("Q1", "pr_status", "Molecular Markers", "PR?")}}});
  CHECK_THROWS_MATCHES(load_question_bank(p, brca_schema()), Error, errc_is(Errc::duplicate_key));

  write_bank({{"questions", {q("Q1", "no_such_key", "Molecular Markers", "?")}}});
  CHECK_THROWS_MATCHES(load_question_bank(p, brca_schema()), Error,
                       errc_is(Errc::question_bank_mismatch));

  write_bank({{"questions", {q("Q1", "er_status", "Staging", "ER?")}}});
  CHECK_THROWS_MATCHES(load_question_bank(p, brca_schema()), Error,
                       errc_is(Errc::question_bank_mismatch));

  write_bank({{"questions", {q("Q1", "er_status", "Molecular Markers", "")}}});
  CHECK_THROWS_MATCHES(load_question_bank(p, brca_schema()), Error,
                       errc_is(Errc::question_bank_mismatch));

  write_bank({{"papers", 3}});
  CHECK_THROWS_MATCHES(load_question_bank(p, brca_schema()), Error, errc_is(Errc::file_format));
  fs::remove_all(dir);
}

// --- benchmark pair builder -------------------------------------------------------

namespace {

QuestionBank tiny_bank() {
  QuestionBank bank;
  bank.questions = {
      {"Q1", "er_status", "Molecular Markers", "What is the ER status?"},
      {"Q2", "tumor_size", "Clinical Pathological Features", "What is the tumor size?"},
      {"Q3", "histologic_grade", "Histological Features", "What is the grade?"},
  };
  bank.checksum = 1;
  return bank;
}

} // namespace

TEST_CASE("bench builder emits one pair per slide and answerable question") {
  const std::vector<PathologyReport> reports = {rep("A", {"A-S1", "A-S2"}), rep("B", {"B-S1"})};
  const std::vector<ExtractedFeature> features = {
      feat("A", "er_status", "Positive"),
      feat("A", "tumor_size", "2.3 cm", FeatureStatus::verified),
      feat("A", "histologic_grade", "Grade 2", FeatureStatus::contradicted), // unusable
      feat("B", "er_status", "Negative"),
  };
  const auto pairs = build_bench(reports, features, tiny_bank(), brca_schema());
  REQUIRE(pairs.size() == 5); // A slides answer Q1+Q2, B answers Q1

  std::set<std::string> ids;
  for (const auto& p : pairs) ids.insert(p.pair_id);
  CHECK(ids == std::set<std::string>{"A-S1#Q1", "A-S1#Q2", "A-S2#Q1", "A-S2#Q2", "B-S1#Q1"});

  for (const auto& p : pairs) {
    if (p.question_id == "Q1") {
      CHECK(p.closed);
      CHECK(p.options == std::vector<std::string>{"Positive", "Negative"});
      CHECK(p.aspect == "Molecular Markers");
      CHECK(p.answer == (p.slide_id[0] == 'A' ? "Positive" : "Negative"));
      CHECK(p.question_text == "What is the ER status?");
    } else {
      CHECK_FALSE(p.closed);
      CHECK(p.options.empty());
      CHECK(p.answer == "2.3 cm");
    }
  }
}

TEST_CASE("bench builder rejects duplicate usable features") {
  const std::vector<PathologyReport> reports = {rep("A", {"A-S1"})};
  const std::vector<ExtractedFeature> features = {feat("A", "er_status", "Positive"),
                                                  feat("A", "er_status", "Negative")};
  CHECK_THROWS_MATCHES(build_bench(reports, features, tiny_bank(), brca_schema()), Error,
                       errc_is(Errc::duplicate_key));
}

TEST_CASE("bench files round trip through the header format") {
  const std::vector<PathologyReport> reports = {rep("A", {"A-S1"})};
  const std::vector<ExtractedFeature> features = {feat("A", "er_status", "Positive"),
                                                  feat("A", "tumor_size", "15 mm")};
  const auto pairs = build_bench(reports, features, tiny_bank(), brca_schema());
  REQUIRE(pairs.size() == 2);

  const fs::path dir = fs::temp_directory_path() / "ctis_bench_rt";
  fs::create_directories(dir);
  const fs::path p = dir / "bench.jsonl";
  write_bench(pairs, 99, brca_schema().checksum, p);

  std::ifstream in(p);
  std::string first;
  std::getline(in, first);
  const auto hdr = nlohmann::json::parse(first);
  CHECK(hdr.at("record") == "header");
  CHECK(hdr.at("schema_checksum") == to_hex(brca_schema().checksum));

  const auto back = read_bench(p);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].pair_id == pairs[i].pair_id);
    CHECK(back[i].slide_id == pairs[i].slide_id);
    CHECK(back[i].aspect == pairs[i].aspect);
    CHECK(back[i].closed == pairs[i].closed);
    CHECK(back[i].options == pairs[i].options);
    CHECK(back[i].answer == pairs[i].answer);
  }

  {
    std::ofstream out(p, std::ios::app);
    nlohmann::ordered_json dup{{"record", "pair"},      {"pair_id", pairs[0].pair_id},
                               {"slide_id", "A-S1"},    {"question_id", "Q1"},
                               {"aspect", "Staging"},   {"answer_kind", "open"},
                               {"answer", "x"}};
    out << dup.dump() << '\n';
  }
  CHECK_THROWS_MATCHES(read_bench(p), Error, errc_is(Errc::duplicate_key));

  // an empty bench file still carries its provenance header
  const fs::path p2 = dir / "empty.jsonl";
  write_bench({}, 99, brca_schema().checksum, p2);
  CHECK(read_bench(p2).empty());
  fs::remove_all(dir);
}

// --- splits ------------------------------------------------------------------------

namespace {

// n_idc ductal + n_ilc lobular single-slide cases
void typed_corpus(std::size_t n_idc, std::size_t n_ilc, std::vector<PathologyReport>& reports,
                  std::vector<ExtractedFeature>& features, std::size_t slides_per_case = 1) {
  auto add = [&](const std::string& id, const char* type) {
    std::vector<std::string> slides;
    for (std::size_t s = 0; s < slides_per_case; ++s)
      slides.push_back(id + "-S" + std::to_string(s + 1));
    reports.push_back(rep(id.c_str(), slides));
    features.push_back(feat(id.c_str(), "histologic_type", type));
  };
  for (std::size_t i = 0; i < n_idc; ++i)
    add("IDC" + std::to_string(i), "Invasive ductal carcinoma");
  for (std::size_t i = 0; i < n_ilc; ++i)
    add("ILC" + std::to_string(i), "Invasive lobular carcinoma");
}

} // namespace

TEST_CASE("split hits exact sizes and balances the stratification key") {
  std::vector<PathologyReport> reports;
  std::vector<ExtractedFeature> features;
  typed_corpus(6, 4, reports, features);

  const auto res = split_slides(reports, features, brca_schema(), {6, 2, 2}, 17);
  CHECK(res.achieved == std::array<std::size_t, 3>{6, 2, 2});
  REQUIRE(res.slide_split.size() == 10);

  std::map<std::string, std::array<std::size_t, 2>> class_counts; // split -> {idc, ilc}
  for (const auto& [slide, split] : res.slide_split) {
    CHECK((split == "train" || split == "val" || split == "test"));
    ++class_counts[split][slide.substr(0, 3) == "IDC" ? 0 : 1];
  }
  CHECK(class_counts["train"] == std::array<std::size_t, 2>{4, 2});
  CHECK(class_counts["val"] == std::array<std::size_t, 2>{1, 1});
  CHECK(class_counts["test"] == std::array<std::size_t, 2>{1, 1});
  CHECK(res.max_tv <= 0.25);
  CHECK(res.tv_per_feature.contains("histologic_type"));
}

TEST_CASE("split keeps all slides of a case together") {
  std::vector<PathologyReport> reports;
  std::vector<ExtractedFeature> features;
  typed_corpus(3, 2, reports, features, 2); // 5 cases x 2 slides

  const auto res = split_slides(reports, features, brca_schema(), {6, 2, 2}, 3);
  CHECK(res.achieved == std::array<std::size_t, 3>{6, 2, 2});
  for (const auto& r : reports) {
    const auto s0 = res.slide_split.at(r.slide_ids[0]);
    const auto s1 = res.slide_split.at(r.slide_ids[1]);
    CHECK(s0 == s1);
  }
}

TEST_CASE("split is deterministic and covers absent strata") {
  std::vector<PathologyReport> reports;
  std::vector<ExtractedFeature> features;
  typed_corpus(4, 3, reports, features);
  reports.push_back(rep("NOTYPE", {"NOTYPE-S1"})); // no histologic_type feature

  const auto a = split_slides(reports, features, brca_schema(), {5, 2, 1}, 21);
  const auto b = split_slides(reports, features, brca_schema(), {5, 2, 1}, 21);
  CHECK(a.slide_split == b.slide_split);
  CHECK(a.slide_split.count("NOTYPE-S1") == 1);
}

TEST_CASE("split target mismatches error out unless scaling is allowed") {
  std::vector<PathologyReport> reports;
  std::vector<ExtractedFeature> features;
  typed_corpus(6, 4, reports, features);

  CHECK_THROWS_MATCHES(split_slides(reports, features, brca_schema(), {8, 2, 2}, 1), Error,
                       errc_is(Errc::infeasible_targets));

  SplitOptions opts;
  opts.allow_scale = true;
  const auto res = split_slides(reports, features, brca_schema(), {60, 20, 20}, 1, opts);
  CHECK(res.achieved == std::array<std::size_t, 3>{6, 2, 2});
  REQUIRE_FALSE(res.notes.empty());
  CHECK(res.notes[0].find("scaled") != std::string::npos);

  SplitOptions bad;
  bad.stratify_key = "not_a_key";
  CHECK_THROWS_MATCHES(split_slides(reports, features, brca_schema(), {6, 2, 2}, 1, bad), Error,
                       errc_is(Errc::invalid_argument));

  CHECK_THROWS_MATCHES(split_slides({}, features, brca_schema(), {0, 0, 0}, 1), Error,
                       errc_is(Errc::empty_input));
}

TEST_CASE("split files round trip the assignment") {
  std::vector<PathologyReport> reports;
  std::vector<ExtractedFeature> features;
  typed_corpus(6, 4, reports, features);
  const auto res = split_slides(reports, features, brca_schema(), {6, 2, 2}, 17);

  const fs::path dir = fs::temp_directory_path() / "ctis_split_rt";
  fs::create_directories(dir);
  const fs::path p = dir / "split.json";
  write_split(res, 17, brca_schema().checksum, p);

  const auto assignment = read_split_assignment(p);
  CHECK(assignment == res.slide_split);

  std::ifstream in(p);
  nlohmann::json j;
  in >> j;
  CHECK(j.at("record") == "split");
  CHECK(j.at("achieved").at("train") == 6);
  CHECK(j.at("targets").at("val") == 2);
  CHECK(j.at("tv_per_feature").contains("er_status"));
  fs::remove_all(dir);
}

TEST_CASE("bench filtering by split subset") {
  const std::vector<PathologyReport> reports = {rep("A", {"A-S1"}), rep("B", {"B-S1"})};
  const std::vector<ExtractedFeature> features = {feat("A", "er_status", "Positive"),
                                                  feat("B", "er_status", "Negative")};
  const auto pairs = build_bench(reports, features, tiny_bank(), brca_schema());
  REQUIRE(pairs.size() == 2);

  const std::map<std::string, std::string> split = {{"A-S1", "train"}, {"B-S1", "test"}};
  const auto train = filter_bench(pairs, split, "train");
  REQUIRE(train.size() == 1);
  CHECK(train[0].slide_id == "A-S1");
  CHECK(filter_bench(pairs, split, "val").empty());

  const std::map<std::string, std::string> partial = {{"A-S1", "train"}};
  CHECK_THROWS_MATCHES(filter_bench(pairs, partial, "train"), Error,
                       errc_is(Errc::unknown_pair_id));
}

// --- statistics ----------------------------------------------------------------------

TEST_CASE("bench statistics tally aspects and answers") {
  const std::vector<PathologyReport> reports = {rep("A", {"A-S1", "A-S2"}), rep("B", {"B-S1"})};
  const std::vector<ExtractedFeature> features = {
      feat("A", "er_status", "Positive"),
      feat("A", "tumor_size", "2.3 cm"),
      feat("B", "er_status", "Negative"),
  };
  const auto pairs = build_bench(reports, features, tiny_bank(), brca_schema());
  REQUIRE(pairs.size() == 5);

  const auto j = dataset_stats(pairs);
  CHECK(j.at("record") == "stats");
  CHECK(j.at("kind") == "bench");
  CHECK(j.at("n_pairs") == 5);
  CHECK(j.at("n_slides") == 3);
  CHECK(j.at("mean_pairs_per_slide").get<double>() == Catch::Approx(5.0 / 3.0).margin(1e-12));
  CHECK(j.at("n_open") == 2);
  CHECK(j.at("n_closed") == 3);
  CHECK(j.at("open_ratio").get<double>() == Catch::Approx(0.4).margin(1e-12));

  const auto& aspects = j.at("per_aspect");
  REQUIRE(aspects.size() == 2); // only present aspects, canonical order
  auto it = aspects.begin();
  CHECK(it.key() == "Clinical Pathological Features");
  CHECK(it.value() == 2);
  ++it;
  CHECK(it.key() == "Molecular Markers");
  CHECK(it.value() == 3);

  CHECK(j.at("per_question").at("Q1").at("n") == 3);
  CHECK(j.at("per_question").at("Q1").at("answers").at("Positive") == 2);
  CHECK(j.at("per_question").at("Q1").at("answers").at("Negative") == 1);

  CHECK_THROWS_MATCHES(dataset_stats({}), Error, errc_is(Errc::empty_input));
}

TEST_CASE("align statistics summarize sample cardinalities") {
  const auto features = rich_case("A");
  OfflineRealizer realizer;
  const auto build = build_align(features, brca_schema(), realizer, 13, 30);
  REQUIRE(build.samples.size() == 30);

  const auto j = align_stats(build.samples);
  CHECK(j.at("kind") == "align");
  CHECK(j.at("n_samples") == 30);
  CHECK(j.at("n_cases") == 1);
  std::size_t total = 0;
  for (const auto& [k, n] : j.at("feature_count_hist").items()) {
    CHECK((k == "3" || k == "4" || k == "5"));
    total += n.get<std::size_t>();
  }
  CHECK(total == 30);

  CHECK_THROWS_MATCHES(align_stats({}), Error, errc_is(Errc::empty_input));
}
