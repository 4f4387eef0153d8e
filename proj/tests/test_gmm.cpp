#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "lyapem/errors.hpp"
#include "lyapem/gmm.hpp"
#include "lyapem/oracle.hpp"
#include "test_support.hpp"

using namespace lyapem;
using namespace testsup;

TEST_CASE("GmmSpec validation") {
  CHECK_THROWS_AS(GmmSpec({0.5, 0.6}, {Matrix::identity(1), Matrix::identity(1)}),
                  ConfigError);
  CHECK_THROWS_AS(GmmSpec({-0.5, 1.5}, {Matrix::identity(1), Matrix::identity(1)}),
                  ConfigError);
  Matrix not_spd(2, 2);
  not_spd(0, 0) = 1.0;
  not_spd(1, 1) = -1.0;
  CHECK_THROWS_AS(GmmSpec({1.0}, {not_spd}), DegenerateCovariance);
  Matrix asym = Matrix::identity(2);
  asym(0, 1) = 0.5;
  CHECK_THROWS_AS(GmmSpec({1.0}, {asym}), DegenerateCovariance);
}

TEST_CASE("e_step: single component gives responsibility exactly one") {
  const GmmSpec spec({1.0}, {Matrix::identity(2)});
  const Dataset data(2, 2, {0.0, 0.0, 5.0, -3.0});
  const Responsibilities resp = e_step(spec, data, ParamPoint({1.0, 1.0}));
  for (std::size_t i = 0; i < data.n; ++i) CHECK(resp(i, 0) == 1.0);
}

TEST_CASE("e_step: equidistant datum splits evenly under symmetric components") {
  const GmmSpec spec({0.5, 0.5}, {Matrix::identity(1), Matrix::identity(1)});
  const Dataset data(1, 1, {0.0});
  const Responsibilities resp = e_step(spec, data, ParamPoint({-2.0, 2.0}));
  CHECK(resp(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(resp(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("e_step rows match the direct density-ratio oracle") {
  const GmmSpec spec = fig_spec();
  const Dataset data = sample_dataset(spec, fig_truth(), 50, 11);
  const Responsibilities resp = e_step(spec, data, fig_init());
  for (std::size_t i = 0; i < data.n; ++i) {
    const auto direct = direct_resp_row(spec, data.row(i), fig_init());
    for (std::size_t m = 0; m < spec.components(); ++m)
      CHECK(std::abs(resp(i, m) - static_cast<double>(direct[m])) <= 1e-12);
  }
}

TEST_CASE("e_step rows sum to one and stay finite for distant means") {
  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t d = 1 + rng.next_u64() % 2;
    const std::size_t m = 1 + rng.next_u64() % 3;
    const GmmSpec spec = random_spec(rng, m, d);
    const Dataset data = sample_dataset(spec, spread_means(rng, m, d), 20, rng.next_u64());
    // Far-away means would underflow a direct-space implementation.
    const ParamPoint theta = random_point(rng, m * d, 40.0);
    const Responsibilities resp = e_step(spec, data, theta);
    for (std::size_t i = 0; i < data.n; ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < m; ++c) {
        CHECK(resp(i, c) >= 0.0);
        CHECK(resp(i, c) <= 1.0);
        sum += resp(i, c);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("parallel e_step is bit-identical to the serial reference") {
  Rng rng(6);
  const GmmSpec spec = random_spec(rng, 3, 2);
  const Dataset data = sample_dataset(spec, spread_means(rng, 3, 2), 4096, 12);
  const ParamPoint theta = spread_means(rng, 3, 2);
  const Responsibilities par = e_step(spec, data, theta);
  const Responsibilities ser = e_step_serial(spec, data, theta);
  for (std::size_t i = 0; i < data.n; ++i)
    for (std::size_t m = 0; m < spec.components(); ++m) {
      CHECK(par(i, m) == ser(i, m));
      CHECK(par.log_at(i, m) == ser.log_at(i, m));
    }
}

TEST_CASE("m_step: flat prior with unit responsibility on one datum") {
  const GmmSpec spec({1.0}, {Matrix::identity(2)});
  const Dataset data(1, 2, {1.25, -0.5});
  Responsibilities resp(1, 1);
  resp.mutable_row(0)[0] = 1.0;
  const ParamPoint update = m_step(spec, PriorSpec::flat(), data, resp);
  CHECK(update[0] == 1.25);
  CHECK(update[1] == -0.5);
}

TEST_CASE("m_step: zero responsibility collapses to the prior mean") {
  const GmmSpec spec({0.5, 0.5}, {Matrix::identity(1), Matrix::identity(1)});
  const Dataset data(2, 1, {4.0, 4.2});
  Responsibilities resp(2, 2);
  for (std::size_t i = 0; i < 2; ++i) {
    resp.mutable_row(i)[0] = 1.0;  // component 2 gets nothing
    resp.mutable_row(i)[1] = 0.0;
  }
  const PriorSpec prior = PriorSpec::gaussian({{0.0}, {-7.5}},
                                              {Matrix::identity(1), Matrix::identity(1)});
  const ParamPoint update = m_step(spec, prior, data, resp);
  CHECK(update[1] == doctest::Approx(-7.5).epsilon(1e-14));
}

TEST_CASE("m_step: empty dataset returns the prior means; flat prior needs a fallback") {
  const GmmSpec spec = fig_spec();
  const Dataset empty(0, 2, {});
  const Responsibilities resp(0, 2);
  Rng rng(3);
  const PriorSpec prior = PriorSpec::gaussian({{0.4, -0.3}, {1.9, 2.2}},
                                              {random_spd(rng, 2), random_spd(rng, 2)});

  const ParamPoint update = m_step(spec, prior, empty, resp);
  CHECK(update[0] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(update[1] == doctest::Approx(-0.3).epsilon(1e-12));
  CHECK(update[2] == doctest::Approx(1.9).epsilon(1e-12));
  CHECK(update[3] == doctest::Approx(2.2).epsilon(1e-12));

  CHECK_THROWS_AS(m_step(spec, PriorSpec::flat(), empty, resp), SingularSystem);
  const ParamPoint prev({5.0, 6.0, 7.0, 8.0});
  std::vector<std::size_t> starved;
  const ParamPoint kept = m_step(spec, PriorSpec::flat(), empty, resp, &prev, &starved);
  CHECK(kept == prev);
  CHECK(starved == std::vector<std::size_t>{0, 1});
}

TEST_CASE("step: one component, one datum, flat prior maps everything to the datum") {
  const GmmSpec spec({1.0}, {Matrix::identity(2)});
  const Dataset data(1, 2, {0.75, -2.5});
  const GmmMapEmSystem system(spec, PriorSpec::flat(), data);
  for (const auto& start : {ParamPoint({0.0, 0.0}), ParamPoint({100.0, -40.0})}) {
    const ParamPoint next = system.step(start);
    CHECK(next[0] == 0.75);
    CHECK(next[1] == -2.5);
  }
}

TEST_CASE("step: composed update matches the lattice oracle on the reference config") {
  const GmmSpec spec = fig_spec();
  const Dataset data = sample_dataset(spec, fig_truth(), 30, 23);
  const PriorSpec prior = sample_prior_means(spec, fig_truth(), 0.1, 24);
  const GmmMapEmSystem system(spec, prior, data);

  const ParamPoint closed = system.step(fig_init());
  const ParamPoint numeric = numeric_m_step(system, fig_init(), LatticeSearchConfig{});
  for (std::size_t j = 0; j < closed.size(); ++j)
    CHECK(std::abs(closed[j] - numeric[j]) <= 1e-6);
}

TEST_CASE("log_unnorm_posterior: empty data") {
  const GmmSpec spec = fig_spec();
  const Dataset empty(0, 2, {});
  CHECK(log_unnorm_posterior(spec, PriorSpec::flat(), empty, fig_init()) == 0.0);

  // With only a Gaussian prior the maximum sits exactly at the prior means.
  const PriorSpec prior = PriorSpec::gaussian(
      {{0.5, 0.5}, {-1.0, 2.0}}, {Matrix::identity(2), Matrix::scaled_identity(2, 0.3)});
  const ParamPoint mode({0.5, 0.5, -1.0, 2.0});
  const double at_mode = log_unnorm_posterior(spec, prior, empty, mode);
  CHECK(at_mode == 0.0);
  Rng rng(9);
  for (int k = 0; k < 20; ++k) {
    const ParamPoint other = random_point(rng, 4, 2.0);
    CHECK(log_unnorm_posterior(spec, prior, empty, other) <= at_mode);
  }
}

TEST_CASE("log_unnorm_posterior differences match extended-precision evaluation") {
  Rng rng(10);
  const GmmSpec spec = random_spec(rng, 2, 2);
  const ParamPoint truth = spread_means(rng, 2, 2);
  const Dataset data = sample_dataset(spec, truth, 5, 31);
  for (const bool flat : {true, false}) {
    const PriorSpec prior =
        flat ? PriorSpec::flat() : random_gaussian_prior(rng, spec, truth, 0.7);
    const ParamPoint a = spread_means(rng, 2, 2);
    const ParamPoint b = spread_means(rng, 2, 2);
    const double lib_diff = log_unnorm_posterior(spec, prior, data, a) -
                            log_unnorm_posterior(spec, prior, data, b);
    const long double direct_diff =
        direct_log_post(spec, prior, data, a) - direct_log_post(spec, prior, data, b);
    CHECK(std::abs(lib_diff - static_cast<double>(direct_diff)) <= 1e-10);
  }
}

TEST_CASE("latent_kl: zero at equal points, positive elsewhere") {
  const GmmSpec spec = fig_spec();
  const Dataset data = sample_dataset(spec, fig_truth(), 40, 41);
  CHECK(latent_kl(spec, data, fig_init(), fig_init()) == 0.0);
  CHECK(latent_kl(spec, data, fig_truth(), fig_init()) > 0.0);
}

TEST_CASE("latent_kl: a single component is latent-blind") {
  // With M=1 every responsibility row is (1) for any parameter value, so the
  // premetric is identically zero between distinct points: the zero-iff-equal
  // direction requires identifiable latent conditionals.
  const GmmSpec spec({1.0}, {Matrix::identity(2)});
  const Dataset data = sample_dataset(spec, ParamPoint({0.0, 0.0}), 10, 43);
  CHECK(latent_kl(spec, data, ParamPoint({3.0, -1.0}), ParamPoint({0.5, 0.5})) == 0.0);
}

TEST_CASE("latent_kl: saturated responsibilities against an even split give log 2") {
  // Component 2 sits so far away that its responsibility underflows to
  // exactly zero under theta_hat, while theta merges both components.
  const GmmSpec spec({0.5, 0.5}, {Matrix::identity(1), Matrix::identity(1)});
  const Dataset data(1, 1, {0.0});
  const ParamPoint theta_hat({0.0, 1000.0});
  const ParamPoint theta({0.0, 0.0});
  const Responsibilities hat = e_step(spec, data, theta_hat);
  REQUIRE(hat(0, 0) == 1.0);
  REQUIRE(hat(0, 1) == 0.0);
  CHECK(latent_kl(spec, data, theta, theta_hat) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("latent_kl equals the summed kl_direct rows") {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 1 + rng.next_u64() % 2;
    const std::size_t m = 2 + rng.next_u64() % 2;
    const GmmSpec spec = random_spec(rng, m, d);
    const Dataset data = sample_dataset(spec, compact_means(rng, m, d), 8, rng.next_u64());
    const ParamPoint theta = compact_means(rng, m, d);
    const ParamPoint theta_hat = compact_means(rng, m, d);

    const Responsibilities rp = e_step(spec, data, theta_hat);
    const Responsibilities rq = e_step(spec, data, theta);
    double expected = 0.0;
    for (std::size_t i = 0; i < data.n; ++i) {
      std::vector<double> p(rp.row(i).begin(), rp.row(i).end());
      std::vector<double> q(rq.row(i).begin(), rq.row(i).end());
      // kl_direct insists on exactly stochastic rows; renormalize the tail.
      double hp = 0.0, hq = 0.0;
      for (std::size_t c = 0; c + 1 < m; ++c) {
        hp += p[c];
        hq += q[c];
      }
      p.back() = std::max(1.0 - hp, 0.0);
      q.back() = std::max(1.0 - hq, 0.0);
      expected += kl_direct(p, q);
    }
    CHECK(latent_kl(spec, data, theta, theta_hat) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("q_value: evaluating at theta_hat recovers the log posterior") {
  const GmmSpec spec = fig_spec();
  const Dataset data = sample_dataset(spec, fig_truth(), 25, 51);
  const PriorSpec prior = sample_prior_means(spec, fig_truth(), 0.15, 52);
  const double q = q_value(spec, prior, data, fig_init(), fig_init());
  CHECK(q == log_unnorm_posterior(spec, prior, data, fig_init()));
}

TEST_CASE("q_value difference identity on random triples") {
  Rng rng(13);
  const GmmSpec spec = random_spec(rng, 2, 2);
  const ParamPoint truth = spread_means(rng, 2, 2);
  const Dataset data = sample_dataset(spec, truth, 10, 61);
  const PriorSpec prior = random_gaussian_prior(rng, spec, truth, 0.5);
  for (int k = 0; k < 50; ++k) {
    const ParamPoint theta = spread_means(rng, 2, 2);
    const ParamPoint theta2 = spread_means(rng, 2, 2);
    const ParamPoint theta_hat = spread_means(rng, 2, 2);
    const double lhs = q_value(spec, prior, data, theta, theta_hat) -
                       q_value(spec, prior, data, theta2, theta_hat);
    const double ell_diff = (-log_unnorm_posterior(spec, prior, data, theta2)) -
                            (-log_unnorm_posterior(spec, prior, data, theta));
    const double d_diff = latent_kl(spec, data, theta, theta_hat) -
                          latent_kl(spec, data, theta2, theta_hat);
    CHECK(lhs == doctest::Approx(ell_diff - d_diff).epsilon(1e-10));
  }
}

TEST_CASE("monotone q improvement: one step never lowers Q") {
  Rng rng(14);
  const GmmSpec spec = fig_spec();
  const Dataset data = sample_dataset(spec, fig_truth(), 30, 71);
  for (const bool flat : {true, false}) {
    const PriorSpec prior =
        flat ? PriorSpec::flat() : sample_prior_means(spec, fig_truth(), 0.1, 72);
    const GmmMapEmSystem system(spec, prior, data);
    for (int k = 0; k < 20; ++k) {
      const ParamPoint theta_hat = random_point(rng, 4, 3.0);
      const ParamPoint next = system.step(theta_hat);
      CHECK(system.q_value(next, theta_hat) >= system.q_value(theta_hat, theta_hat) - 1e-9);
    }
  }
}

TEST_CASE("flat-prior limit: a very wide Gaussian prior matches the flat update") {
  Rng rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 1 + rng.next_u64() % 2;
    const GmmSpec spec = random_spec(rng, 2, d);
    const ParamPoint truth = spread_means(rng, 2, d);
    const Dataset data = sample_dataset(spec, truth, 25, rng.next_u64());
    const Responsibilities resp = e_step(spec, data, truth);

    std::vector<std::vector<double>> centers(2, std::vector<double>(d, 0.0));
    const PriorSpec wide = PriorSpec::gaussian(
        centers, {Matrix::scaled_identity(d, 1e8), Matrix::scaled_identity(d, 1e8)});
    const ParamPoint gauss = m_step(spec, wide, data, resp);
    const ParamPoint flat = m_step(spec, PriorSpec::flat(), data, resp);
    for (std::size_t j = 0; j < gauss.size(); ++j)
      CHECK(std::abs(gauss[j] - flat[j]) <= 1e-4);
  }
}

TEST_CASE("cluster: zero distance wins and ties break to the lowest index") {
  const GmmSpec spec = fig_spec();
  const ParamPoint theta({-1.0, -1.0, 1.0, 1.0});
  CHECK(cluster(spec, theta, std::vector<double>{-1.0, -1.0}) == 1);
  CHECK(cluster(spec, theta, std::vector<double>{1.0, 1.0}) == 2);

  const GmmSpec same({0.5, 0.5}, {Matrix::identity(2), Matrix::identity(2)});
  // Midpoint of the two means is equidistant from both.
  CHECK(cluster(same, theta, std::vector<double>{0.0, 0.0}) == 1);
}

TEST_CASE("cluster: true-parameter classifier accuracy on a fresh sample") {
  const GmmSpec spec = fig_spec();
  const Dataset fresh = sample_dataset(spec, fig_truth(), 300, 81);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < fresh.n; ++i)
    if (cluster(spec, fig_truth(), fresh.row(i)) == fresh.labels[i]) ++correct;
  CHECK(static_cast<double>(correct) / static_cast<double>(fresh.n) > 0.9);
}

TEST_CASE("sample_dataset: basic shape and determinism") {
  const GmmSpec spec({1.0}, {Matrix::identity(2)});
  const Dataset one = sample_dataset(spec, ParamPoint({0.0, 0.0}), 1, 5);
  CHECK(one.n == 1);
  CHECK(one.labels == std::vector<int>{1});
  CHECK(std::isfinite(one.points[0]));

  const Dataset a = sample_dataset(fig_spec(), fig_truth(), 100, 123);
  const Dataset b = sample_dataset(fig_spec(), fig_truth(), 100, 123);
  CHECK(a.points == b.points);
  CHECK(a.labels == b.labels);
}

TEST_CASE("sample_dataset: empirical class frequencies and moments") {
  const GmmSpec spec = fig_spec();
  const std::size_t n = 100000;
  const Dataset data = sample_dataset(spec, fig_truth(), n, 321);

  std::vector<std::size_t> counts(2, 0);
  for (int z : data.labels) ++counts[static_cast<std::size_t>(z - 1)];
  CHECK(std::abs(static_cast<double>(counts[0]) / n - 0.5) <= 0.01);
  CHECK(std::abs(static_cast<double>(counts[1]) / n - 0.5) <= 0.01);

  for (std::size_t m = 0; m < 2; ++m) {
    std::vector<double> mean(2, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (data.labels[i] != static_cast<int>(m) + 1) continue;
      for (std::size_t j = 0; j < 2; ++j) mean[j] += data.row(i)[j];
    }
    for (double& v : mean) v /= static_cast<double>(counts[m]);

    Matrix cov(2, 2);
    for (std::size_t i = 0; i < n; ++i) {
      if (data.labels[i] != static_cast<int>(m) + 1) continue;
      const auto y = data.row(i);
      for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c)
          cov(r, c) += (y[r] - mean[r]) * (y[c] - mean[c]);
    }
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 2; ++c) {
        cov(r, c) /= static_cast<double>(counts[m] - 1);
        CHECK(std::abs(cov(r, c) - spec.covariance(m)(r, c)) <= 0.05);
      }
  }
}

TEST_CASE("sample_prior_means: degenerate limit, determinism, spread") {
  const GmmSpec spec = fig_spec();

  const PriorSpec tight = sample_prior_means(spec, fig_truth(), 1e-8, 7);
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(std::abs(tight.mean(m)[j] - fig_truth()[m * 2 + j]) <= 1e-6);

  const PriorSpec a = sample_prior_means(spec, fig_truth(), 0.1, 9);
  const PriorSpec b = sample_prior_means(spec, fig_truth(), 0.1, 9);
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t j = 0; j < 2; ++j) CHECK(a.mean(m)[j] == b.mean(m)[j]);

  const double sigma = 0.1;
  double sq_sum = 0.0;
  const std::size_t trials = 10000;
  for (std::size_t s = 0; s < trials; ++s) {
    const PriorSpec p = sample_prior_means(spec, fig_truth(), sigma, child_seed(1, 2, s));
    const double dev = p.mean(0)[0] - fig_truth()[0];
    sq_sum += dev * dev;
  }
  const double var = sq_sum / static_cast<double>(trials);
  CHECK(std::abs(var - sigma * sigma) <= 0.1 * sigma * sigma);
}

TEST_CASE("dataset csv round-trips") {
  const Dataset data = sample_dataset(fig_spec(), fig_truth(), 25, 42);
  std::stringstream ss;
  write_dataset_csv(data, ss);
  std::stringstream in(ss.str());
  const Dataset back = read_dataset_csv(in);
  CHECK(back.n == data.n);
  CHECK(back.dim == data.dim);
  CHECK(back.points == data.points);
  CHECK(back.labels == data.labels);

  // Label-less datasets keep the same shape without the label column.
  Dataset unlabeled = data;
  unlabeled.labels.clear();
  std::stringstream ss2;
  write_dataset_csv(unlabeled, ss2);
  CHECK(ss2.str().rfind("x_0,x_1\n", 0) == 0);
  std::stringstream in2(ss2.str());
  const Dataset back2 = read_dataset_csv(in2);
  CHECK(back2.points == data.points);
  CHECK(back2.labels.empty());
}

TEST_CASE("system construction rejects mismatched pieces") {
  const GmmSpec spec = fig_spec();
  const Dataset wrong_dim(2, 1, {0.0, 1.0});
  CHECK_THROWS_AS(GmmMapEmSystem(spec, PriorSpec::flat(), wrong_dim), ConfigError);

  const PriorSpec one_prior = PriorSpec::gaussian({{0.0, 0.0}}, {Matrix::identity(2)});
  const Dataset ok = sample_dataset(spec, fig_truth(), 4, 1);
  CHECK_THROWS_AS(GmmMapEmSystem(spec, one_prior, ok), ConfigError);
}
