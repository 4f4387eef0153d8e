#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "lyapem/errors.hpp"
#include "lyapem/gmm.hpp"
#include "lyapem/oracle.hpp"
#include "test_support.hpp"

using namespace lyapem;
using namespace testsup;

TEST_CASE("kl_direct: identical distributions give exactly zero") {
  const std::vector<double> p{0.3, 0.2, 0.5};
  CHECK(kl_direct(p, p) == 0.0);
}

TEST_CASE("kl_direct: point mass against the uniform pair is log 2") {
  const std::vector<double> p{1.0, 0.0};
  const std::vector<double> q{0.5, 0.5};
  CHECK(kl_direct(p, q) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("kl_direct: nonnegative on random stochastic pairs") {
  Rng rng(101);
  auto random_stochastic = [&rng](std::size_t len) {
    std::vector<double> v(len);
    double sum = 0.0;
    for (double& x : v) {
      x = rng.uniform_pos();
      sum += x;
    }
    for (double& x : v) x /= sum;
    // Pin the sum exactly; kl_direct requires stochastic rows within 1e-12.
    double head = 0.0;
    for (std::size_t i = 0; i + 1 < len; ++i) head += v[i];
    v.back() = 1.0 - head;
    return v;
  };
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t len = 2 + rng.next_u64() % 4;
    CHECK(kl_direct(random_stochastic(len), random_stochastic(len)) >= -1e-14);
  }
}

TEST_CASE("kl_direct: mass where the reference has none diverges") {
  const std::vector<double> p{0.5, 0.5};
  const std::vector<double> q{1.0, 0.0};
  CHECK(kl_direct(p, q) == std::numeric_limits<double>::infinity());
}

TEST_CASE("kl_direct: rejects bad inputs") {
  CHECK_THROWS_AS(kl_direct(std::vector<double>{1.0}, std::vector<double>{0.5, 0.5}), Error);
  CHECK_THROWS_AS(kl_direct(std::vector<double>{0.7, 0.7}, std::vector<double>{0.5, 0.5}), Error);
}

TEST_CASE("fd_gradient: linear field recovers its coefficients") {
  const std::vector<double> a{1.5, -2.0, 0.25};
  auto field = [&](const ParamPoint& p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * p[i];
    return acc;
  };
  const auto grad = fd_gradient(field, ParamPoint({0.3, -1.0, 2.0}), 1e-5);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(grad[i] == doctest::Approx(a[i]).epsilon(1e-8));
}

TEST_CASE("fd_gradient: vanishes at a quadratic maximum") {
  const ParamPoint c({0.7, -0.2});
  auto field = [&](const ParamPoint& p) {
    const double d = distance(p, c);
    return -d * d;
  };
  const auto grad = fd_gradient(field, c, 1e-5);
  for (double g : grad) CHECK(std::abs(g) <= 1e-6);
}

TEST_CASE("numeric_m_step: finds the maximizer of a quadratic surface") {
  const ParamPoint c({0.8, -1.3, 2.1});
  QuadraticToy toy(c);
  LatticeSearchConfig config;
  const ParamPoint found = numeric_m_step(toy, ParamPoint({0.0, 0.0, 0.0}), config);
  const double final_spacing = 2.0 * config.initial_radius *
                               std::pow(config.shrink_factor, config.rounds - 1) /
                               static_cast<double>(config.points_per_axis - 1);
  for (std::size_t j = 0; j < c.size(); ++j)
    CHECK(std::abs(found[j] - c[j]) <= 10.0 * final_spacing + 1e-9);
}

TEST_CASE("numeric_m_step: enforces its evaluation budget") {
  QuadraticToy toy(ParamPoint({0.0, 0.0, 0.0, 0.0}));
  LatticeSearchConfig config;
  config.budget = 100;
  CHECK_THROWS_AS(numeric_m_step(toy, ParamPoint::zeros(4), config), BudgetExceeded);
}

TEST_CASE("numeric_m_step: validates lattice parameters") {
  QuadraticToy toy(ParamPoint({0.0}));
  LatticeSearchConfig config;
  config.points_per_axis = 4;
  CHECK_THROWS_AS(numeric_m_step(toy, ParamPoint::zeros(1), config), ConfigError);
}

TEST_CASE("numeric_m_step: agrees with the closed-form update on mixtures") {
  Rng rng(2024);
  for (const std::size_t d : {std::size_t{1}, std::size_t{2}}) {
    const GmmSpec spec = random_spec(rng, 2, d);
    const ParamPoint truth = spread_means(rng, 2, d);
    const Dataset data = sample_dataset(spec, truth, 3 + d, rng.next_u64());

    for (const bool flat : {true, false}) {
      const PriorSpec prior =
          flat ? PriorSpec::flat() : random_gaussian_prior(rng, spec, truth, 0.4);
      const GmmMapEmSystem system(spec, prior, data);
      const ParamPoint theta_hat = spread_means(rng, 2, d);

      const ParamPoint closed = system.step(theta_hat);
      const ParamPoint numeric = numeric_m_step(system, theta_hat, LatticeSearchConfig{});
      for (std::size_t j = 0; j < closed.size(); ++j)
        CHECK(std::abs(closed[j] - numeric[j]) <= 1e-5);
    }
  }
}

TEST_CASE("numeric_m_step: three components still agree with the closed form") {
  // M*d = 6 is the top of the advertised desk scale; one full-budget sweep.
  Rng rng(3033);
  const GmmSpec spec = random_spec(rng, 3, 2);
  const ParamPoint truth = spread_means(rng, 3, 2);
  const Dataset data = sample_dataset(spec, truth, 8, rng.next_u64());
  const PriorSpec prior = random_gaussian_prior(rng, spec, truth, 0.4);
  const GmmMapEmSystem system(spec, prior, data);

  const ParamPoint theta_hat = spread_means(rng, 3, 2);
  const ParamPoint closed = system.step(theta_hat);
  const ParamPoint numeric = numeric_m_step(system, theta_hat, LatticeSearchConfig{});
  for (std::size_t j = 0; j < closed.size(); ++j)
    CHECK(std::abs(closed[j] - numeric[j]) <= 1e-5);
}

TEST_CASE("numeric_m_step: flat prior lattice argmax is the weighted mean") {
  Rng rng(77);
  const GmmSpec spec = random_spec(rng, 2, 1);
  const ParamPoint truth = spread_means(rng, 2, 1);
  const Dataset data = sample_dataset(spec, truth, 5, 99);
  const GmmMapEmSystem system(spec, PriorSpec::flat(), data);

  const ParamPoint theta_hat = spread_means(rng, 2, 1);
  const Responsibilities resp = e_step(spec, data, theta_hat);
  std::vector<double> expected(2, 0.0);
  for (std::size_t m = 0; m < 2; ++m) {
    double s = 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < data.n; ++i) {
      s += resp(i, m);
      acc += resp(i, m) * data.row(i)[0];
    }
    expected[m] = acc / s;
  }
  const ParamPoint numeric = numeric_m_step(system, theta_hat, LatticeSearchConfig{});
  CHECK(std::abs(numeric[0] - expected[0]) <= 1e-5);
  CHECK(std::abs(numeric[1] - expected[1]) <= 1e-5);
}
