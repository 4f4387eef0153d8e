#include "lyapem/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

#include "lyapem/errors.hpp"
#include "lyapem/parallel.hpp"
#include "lyapem/rng.hpp"

namespace lyapem {

namespace {

constexpr double kWeightSumTol = 1e-12;
// Below this total responsibility a flat-prior component has no data pull
// and its weighted-mean solve is numerically singular.
constexpr double kStarvationTol = 1e-12;

double log_sum_exp(std::span<const double> args) {
  const double max_arg = *std::max_element(args.begin(), args.end());
  double sum = 0.0;
  for (double a : args) sum += std::exp(a - max_arg);
  return max_arg + std::log(sum);
}

}  // namespace

GmmSpec::GmmSpec(std::vector<double> weights, std::vector<Matrix> covariances)
    : weights_(std::move(weights)), covariances_(std::move(covariances)) {
  if (weights_.empty()) throw ConfigError("weights", "at least one component required");
  if (covariances_.size() != weights_.size())
    throw ConfigError("covariances", "count must match weights");

  double sum = 0.0;
  for (std::size_t m = 0; m < weights_.size(); ++m) {
    if (!(weights_[m] > 0.0))
      throw ConfigError("weights[" + std::to_string(m) + "]", "must be strictly positive");
    sum += weights_[m];
  }
  if (std::abs(sum - 1.0) > kWeightSumTol)
    throw ConfigError("weights", "must sum to 1 within 1e-12");

  dim_ = covariances_.front().rows();
  log_weights_.reserve(weights_.size());
  for (double w : weights_) log_weights_.push_back(std::log(w));

  const double log_two_pi = std::log(2.0 * std::numbers::pi);
  for (std::size_t m = 0; m < covariances_.size(); ++m) {
    const Matrix& cov = covariances_[m];
    if (cov.rows() != dim_ || cov.cols() != dim_)
      throw ConfigError("covariances[" + std::to_string(m) + "]", "inconsistent dimension");
    auto chol = Cholesky::factor(cov);
    if (!chol)
      throw DegenerateCovariance("covariance " + std::to_string(m) +
                                 " is not symmetric positive definite");
    log_norm_const_.push_back(-0.5 * static_cast<double>(dim_) * log_two_pi -
                              0.5 * chol->log_det());
    cov_inv_.push_back(chol->inverse());
    cov_chol_.push_back(std::move(*chol));
  }
}

PriorSpec PriorSpec::flat() {
  PriorSpec p;
  p.kind_ = Kind::Flat;
  return p;
}

PriorSpec PriorSpec::gaussian(std::vector<std::vector<double>> means,
                              std::vector<Matrix> covariances) {
  if (means.empty() || means.size() != covariances.size())
    throw ConfigError("prior", "means and covariances must be non-empty and match");
  PriorSpec p;
  p.kind_ = Kind::Gaussian;
  p.means_ = std::move(means);
  p.covariances_ = std::move(covariances);
  const std::size_t d = p.means_.front().size();
  for (std::size_t m = 0; m < p.means_.size(); ++m) {
    if (p.means_[m].size() != d)
      throw ConfigError("prior.means[" + std::to_string(m) + "]", "inconsistent dimension");
    auto chol = Cholesky::factor(p.covariances_[m]);
    if (!chol)
      throw DegenerateCovariance("prior covariance " + std::to_string(m) +
                                 " is not symmetric positive definite");
    p.precisions_.push_back(chol->inverse());
    p.precision_means_.push_back(p.precisions_.back() * p.means_[m]);
    p.cov_chol_.push_back(std::move(*chol));
  }
  return p;
}

Dataset::Dataset(std::size_t n_, std::size_t dim_, std::vector<double> points_,
                 std::vector<int> labels_)
    : n(n_), dim(dim_), points(std::move(points_)), labels(std::move(labels_)) {
  if (points.size() != n * dim) throw ConfigError("dataset.points", "size must be n*dim");
  for (double v : points)
    if (!std::isfinite(v)) throw NonFiniteState("dataset contains a non-finite point");
  if (!labels.empty() && labels.size() != n)
    throw ConfigError("dataset.labels", "must be empty or one per point");
  for (int z : labels)
    if (z < 1) throw ConfigError("dataset.labels", "labels are 1-based positive integers");
}

void write_dataset_csv(const Dataset& data, std::ostream& os) {
  std::string line;
  for (std::size_t j = 0; j < data.dim; ++j) {
    if (j) line += ',';
    line += "x_" + std::to_string(j);
  }
  if (!data.labels.empty()) line += ",label";
  os << line << '\n';
  char buf[40];
  for (std::size_t i = 0; i < data.n; ++i) {
    line.clear();
    const auto row = data.row(i);
    for (std::size_t j = 0; j < data.dim; ++j) {
      if (j) line += ',';
      std::snprintf(buf, sizeof buf, "%.17g", row[j]);
      line += buf;
    }
    if (!data.labels.empty()) line += ',' + std::to_string(data.labels[i]);
    os << line << '\n';
  }
}

Dataset read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error("dataset csv: missing header");
  std::vector<std::string> cells;
  {
    std::stringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) cells.push_back(cell);
  }
  const bool has_label = !cells.empty() && cells.back() == "label";
  const std::size_t dim = cells.size() - (has_label ? 1 : 0);
  if (dim == 0) throw Error("dataset csv: no coordinate columns");

  std::vector<double> points;
  std::vector<int> labels;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::size_t j = 0;
    while (std::getline(row, cell, ',')) {
      if (j < dim)
        points.push_back(std::stod(cell));
      else if (has_label)
        labels.push_back(std::stoi(cell));
      ++j;
    }
    if (j != dim + (has_label ? 1 : 0))
      throw Error("dataset csv: inconsistent row width at data row " + std::to_string(n));
    ++n;
  }
  return Dataset(n, dim, std::move(points), std::move(labels));
}

Responsibilities::Responsibilities(std::size_t n, std::size_t m)
    : n_(n), m_(m), r_(n * m, 0.0), log_r_(n * m, 0.0) {}

double Responsibilities::column_sum(std::size_t m) const {
  double acc = 0.0;
  for (std::size_t i = 0; i < n_; ++i) acc += r_[i * m_ + m];
  return acc;
}

namespace {

// Per-row E-step kernel: log weighted densities, log-sum-exp, normalize.
// Shared verbatim by the serial and parallel drivers so both produce the
// same bits.
void e_step_row(const GmmSpec& spec, const Dataset& data, const ParamPoint& theta,
                std::size_t i, std::span<double> log_row, std::span<double> row,
                std::span<double> scratch) {
  const std::size_t m_count = spec.components();
  const auto y = data.row(i);
  for (std::size_t m = 0; m < m_count; ++m) {
    for (std::size_t j = 0; j < spec.dim(); ++j)
      scratch[j] = y[j] - spec.mean_block(theta, m)[j];
    const double quad = spec.cov_chol(m).quad_form_inv(scratch.first(spec.dim()));
    log_row[m] = spec.log_weight(m) + spec.log_norm_const(m) - 0.5 * quad;
  }
  const double lse = log_sum_exp(log_row);
  for (std::size_t m = 0; m < m_count; ++m) {
    log_row[m] -= lse;
    row[m] = std::exp(log_row[m]);
  }
}

void check_theta(const GmmSpec& spec, const ParamPoint& theta) {
  if (theta.size() != spec.state_dim())
    throw Error("theta length " + std::to_string(theta.size()) +
                " does not match M*d = " + std::to_string(spec.state_dim()));
}

}  // namespace

Responsibilities e_step_serial(const GmmSpec& spec, const Dataset& data,
                               const ParamPoint& theta) {
  check_theta(spec, theta);
  Responsibilities resp(data.n, spec.components());
  std::vector<double> scratch(spec.dim());
  for (std::size_t i = 0; i < data.n; ++i)
    e_step_row(spec, data, theta, i, resp.mutable_log_row(i), resp.mutable_row(i), scratch);
  return resp;
}

Responsibilities e_step(const GmmSpec& spec, const Dataset& data, const ParamPoint& theta) {
  check_theta(spec, theta);
  Responsibilities resp(data.n, spec.components());
  const int workers = workers_for(data.n, 512);
  if (workers <= 1) {
    std::vector<double> scratch(spec.dim());
    for (std::size_t i = 0; i < data.n; ++i)
      e_step_row(spec, data, theta, i, resp.mutable_log_row(i), resp.mutable_row(i), scratch);
    return resp;
  }
#pragma omp parallel num_threads(workers)
  {
    std::vector<double> scratch(spec.dim());
#pragma omp for schedule(static)
    for (long long i = 0; i < static_cast<long long>(data.n); ++i) {
      const auto idx = static_cast<std::size_t>(i);
      e_step_row(spec, data, theta, idx, resp.mutable_log_row(idx), resp.mutable_row(idx),
                 scratch);
    }
  }
  return resp;
}

ParamPoint m_step(const GmmSpec& spec, const PriorSpec& prior, const Dataset& data,
                  const Responsibilities& resp, const ParamPoint* previous,
                  std::vector<std::size_t>* starved_out) {
  if (resp.n() != data.n || resp.components() != spec.components())
    throw Error("responsibilities shape does not match dataset/spec");
  if (previous) check_theta(spec, *previous);

  const std::size_t d = spec.dim();
  std::vector<double> next(spec.state_dim(), 0.0);

  for (std::size_t m = 0; m < spec.components(); ++m) {
    double s = 0.0;
    std::vector<double> weighted_sum(d, 0.0);
    for (std::size_t i = 0; i < data.n; ++i) {
      const double r = resp(i, m);
      s += r;
      const auto y = data.row(i);
      for (std::size_t j = 0; j < d; ++j) weighted_sum[j] += r * y[j];
    }

    std::vector<double> theta_m;
    if (prior.is_flat()) {
      if (s <= kStarvationTol) {
        if (!previous) {
          throw SingularSystem("flat-prior component " + std::to_string(m) +
                               " has zero total responsibility");
        }
        const auto prev = spec.mean_block(*previous, m);
        theta_m.assign(prev.begin(), prev.end());
        if (starved_out) starved_out->push_back(m);
      } else {
        theta_m.resize(d);
        for (std::size_t j = 0; j < d; ++j) theta_m[j] = weighted_sum[j] / s;
      }
    } else {
      // Assemble the SPD system Σ_{m,0}⁻¹ + s Σ_m⁻¹ and its right-hand side.
      const Matrix& prior_prec = prior.precision(m);
      const Matrix& cov_inv = spec.cov_inverse(m);
      Matrix a(d, d);
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) a(r, c) = prior_prec(r, c) + s * cov_inv(r, c);
      std::vector<double> rhs = cov_inv * std::span<const double>(weighted_sum);
      const auto pm = prior.precision_mean(m);
      for (std::size_t j = 0; j < d; ++j) rhs[j] += pm[j];
      auto chol = Cholesky::factor(a);
      if (!chol)
        throw SingularSystem("assembled M-step matrix for component " + std::to_string(m) +
                             " is not positive definite");
      theta_m = chol->solve(rhs);
    }
    std::copy(theta_m.begin(), theta_m.end(), next.begin() + static_cast<long>(m * d));
  }
  return ParamPoint(std::move(next));
}

double log_unnorm_posterior(const GmmSpec& spec, const PriorSpec& prior,
                            const Dataset& data, const ParamPoint& theta) {
  check_theta(spec, theta);
  const std::size_t m_count = spec.components();

  // Parallel map of per-datum mixture log densities; summed serially in
  // index order afterwards, so the total is independent of the thread count.
  std::vector<double> terms(data.n);
  const int workers = workers_for(data.n, 512);
#pragma omp parallel num_threads(workers) if (workers > 1)
  {
    std::vector<double> lw(m_count);
    std::vector<double> diff(spec.dim());
#pragma omp for schedule(static)
    for (long long i = 0; i < static_cast<long long>(data.n); ++i) {
      const auto y = data.row(static_cast<std::size_t>(i));
      for (std::size_t m = 0; m < m_count; ++m) {
        for (std::size_t j = 0; j < spec.dim(); ++j)
          diff[j] = y[j] - spec.mean_block(theta, m)[j];
        lw[m] = spec.log_weight(m) + spec.log_norm_const(m) -
                0.5 * spec.cov_chol(m).quad_form_inv(diff);
      }
      terms[static_cast<std::size_t>(i)] = log_sum_exp(lw);
    }
  }
  double acc = 0.0;
  for (double t : terms) acc += t;

  if (!prior.is_flat()) {
    std::vector<double> diff(spec.dim());
    for (std::size_t m = 0; m < m_count; ++m) {
      const auto mean = prior.mean(m);
      const auto block = spec.mean_block(theta, m);
      for (std::size_t j = 0; j < spec.dim(); ++j) diff[j] = block[j] - mean[j];
      acc -= 0.5 * prior.cov_chol(m).quad_form_inv(diff);
    }
  }
  return acc;
}

double latent_kl(const GmmSpec& spec, const Dataset& data, const ParamPoint& theta,
                 const ParamPoint& theta_hat) {
  const Responsibilities at_hat = e_step(spec, data, theta_hat);
  const Responsibilities at_theta = e_step(spec, data, theta);
  double acc = 0.0;
  for (std::size_t i = 0; i < data.n; ++i) {
    const auto p_log = at_hat.log_row(i);
    const auto q_log = at_theta.log_row(i);
    double row = 0.0;
    for (std::size_t m = 0; m < spec.components(); ++m) {
      const double p = std::exp(p_log[m]);
      if (p > 0.0) row += p * (p_log[m] - q_log[m]);
    }
    // Each row is a KL divergence; clamp the rounding noise of nearly
    // identical rows so the premetric stays nonnegative.
    acc += std::max(row, 0.0);
  }
  return acc;
}

double q_value(const GmmSpec& spec, const PriorSpec& prior, const Dataset& data,
               const ParamPoint& theta, const ParamPoint& theta_hat) {
  return log_unnorm_posterior(spec, prior, data, theta) -
         latent_kl(spec, data, theta, theta_hat);
}

int cluster(const GmmSpec& spec, const ParamPoint& theta_hat, std::span<const double> point) {
  check_theta(spec, theta_hat);
  if (point.size() != spec.dim()) throw Error("cluster: point dimension mismatch");
  std::vector<double> diff(spec.dim());
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_m = 0;
  for (std::size_t m = 0; m < spec.components(); ++m) {
    const auto mean = spec.mean_block(theta_hat, m);
    for (std::size_t j = 0; j < spec.dim(); ++j) diff[j] = point[j] - mean[j];
    const double dist2 = spec.cov_chol(m).quad_form_inv(diff);
    if (dist2 < best) {  // strict: ties keep the lowest index
      best = dist2;
      best_m = m;
    }
  }
  return static_cast<int>(best_m) + 1;
}

Dataset sample_dataset(const GmmSpec& spec, const ParamPoint& true_means, std::size_t n,
                       std::uint64_t seed) {
  check_theta(spec, true_means);
  Rng rng(seed);
  const std::size_t d = spec.dim();
  std::vector<double> points(n * d);
  std::vector<int> labels(n);
  std::vector<double> z(d);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    std::size_t m = 0;
    double cum = 0.0;
    for (; m + 1 < spec.components(); ++m) {
      cum += spec.weight(m);
      if (u < cum) break;
    }
    labels[i] = static_cast<int>(m) + 1;
    for (double& zj : z) zj = rng.normal();
    const std::vector<double> lz = spec.cov_chol(m).mul_lower(z);
    const auto mean = spec.mean_block(true_means, m);
    for (std::size_t j = 0; j < d; ++j) points[i * d + j] = mean[j] + lz[j];
  }
  return Dataset(n, d, std::move(points), std::move(labels));
}

PriorSpec sample_prior_means(const GmmSpec& spec, const ParamPoint& true_means,
                             double prior_sigma, std::uint64_t seed) {
  if (!(prior_sigma > 0.0)) throw ConfigError("prior_sigma", "must be positive");
  check_theta(spec, true_means);
  Rng rng(seed);
  const std::size_t d = spec.dim();
  std::vector<std::vector<double>> means(spec.components());
  std::vector<Matrix> covs(spec.components());
  for (std::size_t m = 0; m < spec.components(); ++m) {
    means[m].resize(d);
    const auto truth = spec.mean_block(true_means, m);
    for (std::size_t j = 0; j < d; ++j) means[m][j] = truth[j] + prior_sigma * rng.normal();
    covs[m] = Matrix::scaled_identity(d, prior_sigma * prior_sigma);
  }
  return PriorSpec::gaussian(std::move(means), std::move(covs));
}

GmmMapEmSystem::GmmMapEmSystem(GmmSpec spec, PriorSpec prior, Dataset data)
    : spec_(std::move(spec)), prior_(std::move(prior)), data_(std::move(data)) {
  if (data_.n > 0 && data_.dim != spec_.dim())
    throw ConfigError("dataset", "dimension does not match mixture spec");
  if (!prior_.is_flat() && prior_.components() != spec_.components())
    throw ConfigError("prior", "component count does not match mixture spec");
}

ParamPoint GmmMapEmSystem::step(const ParamPoint& point) const {
  const Responsibilities resp = e_step(spec_, data_, point);
  std::vector<std::size_t> starved;
  ParamPoint next = m_step(spec_, prior_, data_, resp, &point, &starved);
  if (!starved.empty())
    starved_updates_.fetch_add(static_cast<long>(starved.size()), std::memory_order_relaxed);
  return next;
}

double GmmMapEmSystem::neg_log_posterior(const ParamPoint& point) const {
  return -log_unnorm_posterior(spec_, prior_, data_, point);
}

double GmmMapEmSystem::latent_kl(const ParamPoint& theta, const ParamPoint& theta_hat) const {
  return lyapem::latent_kl(spec_, data_, theta, theta_hat);
}

}  // namespace lyapem
