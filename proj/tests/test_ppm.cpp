#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "ctis/ppm.hpp"
#include "ctis/rng.hpp"
#include "oracles.hpp"

using namespace ctis;

namespace {

Eigen::MatrixXd random_matrix(rng::Stream& stream, int r, int c) {
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = stream.next_normal();
  return m;
}

} // namespace

// --- length normalization ---------------------------------------------------

TEST_CASE("short slides are padded with masked zero rows") {
  rng::Stream stream(1);
  const auto x = random_matrix(stream, 3, 4);
  const auto s = normalize_length(x, 5, 1, 0);
  REQUIRE(s.x.rows() == 5);
  CHECK(s.mask == std::vector<std::uint8_t>{1, 1, 1, 0, 0});
  CHECK(s.x.topRows(3) == x);
  CHECK(s.x.bottomRows(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.source_indices[0] == 0);
  CHECK(s.source_indices[2] == 2);
  CHECK(s.source_indices[3] == -1);
  CHECK(s.n_real() == 3);
}

TEST_CASE("exact-length slides pass through unchanged") {
  rng::Stream stream(2);
  const auto x = random_matrix(stream, 6, 3);
  const auto s = normalize_length(x, 6, 2, 77);
  CHECK(s.x == x);
  CHECK(s.n_real() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(s.source_indices[i] == static_cast<std::int64_t>(i));
}

TEST_CASE("long slides draw a per-segment quota of increasing source rows") {
  rng::Stream stream(3);
  const auto x = random_matrix(stream, 40, 2);
  const auto s = normalize_length(x, 8, 2, 5);
  REQUIRE(s.x.rows() == 8);
  CHECK(s.n_real() == 8);
  // strictly increasing sources, 4 from each half
  std::size_t in_first = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    REQUIRE(s.source_indices[i] >= 0);
    if (i > 0) CHECK(s.source_indices[i] > s.source_indices[i - 1]);
    if (s.source_indices[i] < 20) ++in_first;
    // each output row is a verbatim copy of its source row
    CHECK(s.x.row(static_cast<Eigen::Index>(i)) ==
          x.row(static_cast<Eigen::Index>(s.source_indices[i])));
  }
  CHECK(in_first == 4);
}

TEST_CASE("normalization is deterministic per seed") {
  rng::Stream stream(4);
  const auto x = random_matrix(stream, 100, 3);
  const auto a = normalize_length(x, 10, 5, 123);
  const auto b = normalize_length(x, 10, 5, 123);
  CHECK(a.x == b.x);
  CHECK(a.source_indices == b.source_indices);
}

TEST_CASE("fuzzed normalization keeps every structural invariant") {
  rng::Stream meta(5);
  for (int it = 0; it < 300; ++it) {
    const std::size_t n_segments = 1 + meta.next_below(6);
    const std::size_t q = 1 + meta.next_below(6);
    const std::size_t m_max = n_segments * q;
    const std::size_t n = 1 + meta.next_below(3 * m_max);
    rng::Stream data(meta.next_u64());
    const auto x = random_matrix(data, static_cast<int>(n), 2);
    const auto s = normalize_length(x, m_max, n_segments, meta.next_u64());

    REQUIRE(static_cast<std::size_t>(s.x.rows()) == m_max);
    REQUIRE(s.mask.size() == m_max);
    REQUIRE(s.source_indices.size() == m_max);

    if (n < m_max) {
      for (std::size_t i = 0; i < m_max; ++i) {
        CHECK(s.mask[i] == (i < n ? 1 : 0));
        if (i >= n) CHECK(s.x.row(static_cast<Eigen::Index>(i)).cwiseAbs().maxCoeff() == 0.0);
      }
    } else {
      std::set<std::int64_t> seen;
      for (std::size_t i = 0; i < m_max; ++i) {
        CHECK(s.mask[i] == 1);
        REQUIRE(s.source_indices[i] >= 0);
        REQUIRE(s.source_indices[i] < static_cast<std::int64_t>(n));
        if (i > 0) CHECK(s.source_indices[i] > s.source_indices[i - 1]);
        seen.insert(s.source_indices[i]);
        // per-segment quota: segment boundaries at s*n/n_segments
        const std::size_t seg = i / q;
        const auto lo = static_cast<std::int64_t>(seg * n / n_segments);
        const auto hi = static_cast<std::int64_t>((seg + 1) * n / n_segments);
        CHECK(s.source_indices[i] >= lo);
        CHECK(s.source_indices[i] < hi);
      }
      CHECK(seen.size() == m_max); // no row drawn twice
    }
  }
}

TEST_CASE("indivisible segment configuration is rejected") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(4, 2);
  CHECK_THROWS_MATCHES(normalize_length(x, 10, 3, 0), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == Errc::non_divisible_config;
                       }));
}

// --- attention forward -------------------------------------------------------

TEST_CASE("attention matches a scalar-arithmetic reference") {
  rng::Stream stream(11);
  for (int it = 0; it < 50; ++it) {
    const int L = 1 + static_cast<int>(stream.next_below(4));
    const int M = 2 + static_cast<int>(stream.next_below(6));
    const int d = 1 + static_cast<int>(stream.next_below(5));
    PpmParams p;
    p.queries = random_matrix(stream, L, d);
    p.w_q = random_matrix(stream, d, d);
    p.w_k = random_matrix(stream, d, d);
    p.w_v = random_matrix(stream, d, d);
    const auto x = random_matrix(stream, M, d);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(M), 1);
    mask[static_cast<std::size_t>(stream.next_below(static_cast<std::uint64_t>(M)))] = 0;

    const auto f = ppm_forward(x, mask, p);
    const auto ref = oracle::attention_reference(p.queries, p.w_q, p.w_k, p.w_v, x, mask);
    CHECK((f.r_local - ref).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("hand-case: one query, two patches, tiny integers") {
  PpmParams p;
  p.queries.resize(1, 2);
  p.queries << 1, 0;
  p.w_q = Eigen::MatrixXd::Identity(2, 2);
  p.w_k = Eigen::MatrixXd::Identity(2, 2);
  p.w_v = Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd x(2, 2);
  x << 1, 0, 0, 1;
  const std::vector<std::uint8_t> mask = {1, 1};
  const auto f = ppm_forward(x, mask, p);
  // scores = (1,0)·x^T/sqrt(2) = (1/√2, 0); weights = softmax of that
  const double s = 1.0 / std::sqrt(2.0);
  const double w0 = std::exp(s) / (std::exp(s) + 1.0);
  CHECK(f.attn(0, 0) == Catch::Approx(w0).margin(1e-15));
  CHECK(f.attn(0, 1) == Catch::Approx(1.0 - w0).margin(1e-15));
  CHECK(f.r_local(0, 0) == Catch::Approx(w0).margin(1e-14));
  CHECK(f.r_local(0, 1) == Catch::Approx(1.0 - w0).margin(1e-14));
}

TEST_CASE("zero keys give uniform attention over unmasked rows") {
  rng::Stream stream(13);
  PpmParams p;
  p.queries = random_matrix(stream, 3, 4);
  p.w_q = random_matrix(stream, 4, 4);
  p.w_k = Eigen::MatrixXd::Zero(4, 4);
  p.w_v = random_matrix(stream, 4, 4);
  const auto x = random_matrix(stream, 6, 4);
  const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 0, 1};
  const auto f = ppm_forward(x, mask, p);
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(4);
  for (int i : {0, 1, 3, 5}) mean += (x.row(i) * p.w_v.transpose());
  mean /= 4.0;
  for (int l = 0; l < 3; ++l)
    CHECK((f.r_local.row(l) - mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("single unmasked patch dominates every token") {
  rng::Stream stream(14);
  PpmParams p;
  p.queries = random_matrix(stream, 2, 3);
  p.w_q = random_matrix(stream, 3, 3);
  p.w_k = random_matrix(stream, 3, 3);
  p.w_v = random_matrix(stream, 3, 3);
  const auto x = random_matrix(stream, 4, 3);
  const std::vector<std::uint8_t> mask = {0, 0, 1, 0};
  const auto f = ppm_forward(x, mask, p);
  const Eigen::RowVectorXd expected = x.row(2) * p.w_v.transpose();
  for (int l = 0; l < 2; ++l) {
    CHECK(f.attn(l, 2) == Catch::Approx(1.0).margin(1e-12));
    CHECK((f.r_local.row(l) - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("attention rows sum to one and masked columns carry exact zero") {
  rng::Stream stream(15);
  for (int it = 0; it < 100; ++it) {
    const int L = 1 + static_cast<int>(stream.next_below(4));
    const int M = 2 + static_cast<int>(stream.next_below(8));
    const int d = 1 + static_cast<int>(stream.next_below(6));
    PpmParams p;
    p.queries = random_matrix(stream, L, d);
    p.w_q = random_matrix(stream, d, d);
    p.w_k = random_matrix(stream, d, d);
    p.w_v = random_matrix(stream, d, d);
    const auto x = random_matrix(stream, M, d);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(M), 1);
    for (int j = 0; j < M - 1; ++j)
      if (stream.next_unit() < 0.3) mask[static_cast<std::size_t>(j)] = 0;

    const auto f = ppm_forward(x, mask, p);
    for (int l = 0; l < L; ++l) {
      CHECK(f.attn.row(l).sum() == Catch::Approx(1.0).margin(1e-9));
      for (int j = 0; j < M; ++j)
        if (!mask[static_cast<std::size_t>(j)]) CHECK(f.attn(l, j) == 0.0);
    }
  }
}

TEST_CASE("output tokens stay in the convex hull of unmasked value rows") {
  rng::Stream stream(16);
  for (int it = 0; it < 50; ++it) {
    const int d = 2 + static_cast<int>(stream.next_below(4));
    PpmParams p;
    p.queries = random_matrix(stream, 2, d);
    p.w_q = random_matrix(stream, d, d);
    p.w_k = random_matrix(stream, d, d);
    p.w_v = random_matrix(stream, d, d);
    const auto x = random_matrix(stream, 7, d);
    const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0, 1, 1};
    const auto f = ppm_forward(x, mask, p);
    const Eigen::MatrixXd v = x * p.w_v.transpose();
    for (int j = 0; j < d; ++j) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (int i = 0; i < 7; ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        lo = std::min(lo, v(i, j));
        hi = std::max(hi, v(i, j));
      }
      for (int l = 0; l < 2; ++l) {
        CHECK(f.r_local(l, j) >= lo - 1e-12);
        CHECK(f.r_local(l, j) <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("masked row content cannot influence the output") {
  rng::Stream stream(17);
  PpmParams p = ppm_init(99, 3, 5);
  auto x = random_matrix(stream, 6, 5);
  const std::vector<std::uint8_t> mask = {1, 1, 1, 1, 0, 0};
  const auto base = ppm_forward(x, mask, p);
  x.row(4).setConstant(1e6);
  x.row(5).setConstant(-42.0);
  const auto poked = ppm_forward(x, mask, p);
  CHECK((base.r_local - poked.r_local).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("unmasked compatibility mode attends to padding") {
  rng::Stream stream(18);
  PpmParams p = ppm_init(5, 2, 3);
  auto x = random_matrix(stream, 4, 3);
  const std::vector<std::uint8_t> mask = {1, 1, 0, 0};
  PpmForwardOptions opts;
  opts.mask_padding = false;
  const auto open = ppm_forward(x, mask, p, opts);
  for (int l = 0; l < 2; ++l) CHECK(open.attn(l, 2) > 0.0);
  // and the padded-row content now matters
  auto x2 = x;
  x2.row(2).setConstant(3.0);
  const auto poked = ppm_forward(x2, mask, p, opts);
  CHECK((open.r_local - poked.r_local).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("fully masked input is rejected") {
  PpmParams p = ppm_init(1, 2, 2);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 2);
  const std::vector<std::uint8_t> mask = {0, 0, 0};
  CHECK_THROWS_MATCHES(ppm_forward(x, mask, p), Error,
                       Catch::Matchers::Predicate<Error>(
                           [](const Error& e) { return e.code() == Errc::all_masked_input; }));
}

TEST_CASE("logit shift invariance") {
  // adding a constant to every logit of a row leaves the softmax unchanged;
  // exercised through masked_softmax directly
  rng::Stream stream(19);
  const auto scores = random_matrix(stream, 3, 5);
  const std::vector<std::uint8_t> mask = {1, 1, 1, 0, 1};
  const auto a = masked_softmax(scores, mask);
  Eigen::MatrixXd shifted = scores;
  shifted.array() += 123.456;
  const auto b = masked_softmax(shifted, mask);
  CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
}

// --- attention backward ------------------------------------------------------

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  rng::Stream stream(21);
  PpmParams p = ppm_init(3, 2, 4);
  const auto x = random_matrix(stream, 5, 4);
  const std::vector<std::uint8_t> mask = {1, 1, 1, 1, 0};
  const auto f = ppm_forward(x, mask, p);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(2, 4);
  const auto g = ppm_backward(f, x, p, zero);
  CHECK(g.d_queries.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.d_wq.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.d_wk.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.d_wv.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("grad_check passes on small instances") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = grad_check(seed, 2, 5, 4);
    INFO("seed " << seed << " max_rel_err " << r.max_rel_err);
    CHECK(r.pass);
    CHECK(r.max_rel_err < 1e-6);
  }
}

TEST_CASE("grad_check report serializes every field") {
  const auto r = grad_check(3, 2, 4, 3);
  const auto j = r.to_json();
  CHECK(j.at("n_queries") == 2);
  CHECK(j.at("n_patches") == 4);
  CHECK(j.at("dim") == 3);
  CHECK(j.at("pass") == r.pass);
  CHECK(j.at("max_rel_err").at("overall").get<double>() == r.max_rel_err);
}

TEST_CASE("a perturbed analytic gradient is detected") {
  // negative control: inject a 1e-3 error into one analytic entry and rerun
  // the same finite-difference comparison grad_check uses
  rng::Stream stream(23);
  PpmParams p = ppm_init(50, 2, 3);
  const auto x = random_matrix(stream, 4, 3);
  const std::vector<std::uint8_t> mask = {1, 1, 1, 0};
  Eigen::MatrixXd w = random_matrix(stream, 2, 3);
  const auto f = ppm_forward(x, mask, p);
  auto g = ppm_backward(f, x, p, w);
  g.d_wk(0, 0) += 1e-3;

  const double step = 1e-5;
  const double saved = p.w_k(0, 0);
  p.w_k(0, 0) = saved + step;
  const double up = (ppm_forward(x, mask, p).r_local.array() * w.array()).sum();
  p.w_k(0, 0) = saved - step;
  const double dn = (ppm_forward(x, mask, p).r_local.array() * w.array()).sum();
  p.w_k(0, 0) = saved;
  const double fd = (up - dn) / (2.0 * step);
  const double rel =
      std::abs(g.d_wk(0, 0) - fd) / std::max({std::abs(g.d_wk(0, 0)), std::abs(fd), 1e-6});
  CHECK(rel > 1e-5); // the corrupted gradient no longer passes
}

TEST_CASE("zero-key case has near-zero query gradients") {
  rng::Stream stream(25);
  PpmParams p = ppm_init(7, 2, 3);
  p.w_k = Eigen::MatrixXd::Zero(3, 3);
  const auto x = random_matrix(stream, 5, 3);
  const std::vector<std::uint8_t> mask = {1, 1, 1, 1, 1};
  const Eigen::MatrixXd w = random_matrix(stream, 2, 3);
  const auto f = ppm_forward(x, mask, p);
  const auto g = ppm_backward(f, x, p, w);
  CHECK(g.d_queries.cwiseAbs().maxCoeff() < 1e-8);
}
