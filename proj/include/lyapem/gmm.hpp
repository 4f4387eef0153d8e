#pragma once

// Gaussian mixture with known weights and covariances, unknown component
// means, and an independent Gaussian (or flat) prior on the means. This is
// the concrete EmSystem the diagnostics run against: the E-step computes
// responsibilities in log space, the M-step is a per-component SPD solve.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "lyapem/em_system.hpp"
#include "lyapem/linalg.hpp"
#include "lyapem/param_point.hpp"

namespace lyapem {

// Known mixture structure: M components of dimension d, strictly positive
// weights summing to 1, SPD covariances. Cholesky factors are computed once
// here and cached for density evaluation and Mahalanobis distances.
class GmmSpec {
 public:
  GmmSpec(std::vector<double> weights, std::vector<Matrix> covariances);

  std::size_t components() const { return weights_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t state_dim() const { return components() * dim_; }

  double weight(std::size_t m) const { return weights_[m]; }
  double log_weight(std::size_t m) const { return log_weights_[m]; }
  const Matrix& covariance(std::size_t m) const { return covariances_[m]; }
  const Cholesky& cov_chol(std::size_t m) const { return cov_chol_[m]; }
  const Matrix& cov_inverse(std::size_t m) const { return cov_inv_[m]; }
  // log of the Gaussian normalizer: -d/2 log(2π) - 1/2 log det Σ_m.
  double log_norm_const(std::size_t m) const { return log_norm_const_[m]; }

  std::span<const double> mean_block(const ParamPoint& theta, std::size_t m) const {
    return theta.block(m * dim_, dim_);
  }

 private:
  std::size_t dim_ = 0;
  std::vector<double> weights_;
  std::vector<double> log_weights_;
  std::vector<Matrix> covariances_;
  std::vector<Cholesky> cov_chol_;
  std::vector<Matrix> cov_inv_;
  std::vector<double> log_norm_const_;
};

// Prior on the component means. Flat is a distinct variant, not a large
// sigma, so the maximum-likelihood limit is exact.
class PriorSpec {
 public:
  enum class Kind { Flat, Gaussian };

  static PriorSpec flat();
  static PriorSpec gaussian(std::vector<std::vector<double>> means,
                            std::vector<Matrix> covariances);

  Kind kind() const { return kind_; }
  bool is_flat() const { return kind_ == Kind::Flat; }

  // Gaussian accessors; must not be called on a flat prior.
  std::span<const double> mean(std::size_t m) const { return means_[m]; }
  const Matrix& covariance(std::size_t m) const { return covariances_[m]; }
  const Cholesky& cov_chol(std::size_t m) const { return cov_chol_[m]; }
  const Matrix& precision(std::size_t m) const { return precisions_[m]; }
  std::span<const double> precision_mean(std::size_t m) const { return precision_means_[m]; }
  std::size_t components() const { return means_.size(); }

 private:
  PriorSpec() = default;

  Kind kind_ = Kind::Flat;
  std::vector<std::vector<double>> means_;
  std::vector<Matrix> covariances_;
  std::vector<Cholesky> cov_chol_;
  std::vector<Matrix> precisions_;        // Σ_{m,0}⁻¹
  std::vector<std::vector<double>> precision_means_;  // Σ_{m,0}⁻¹ θ_{m,0}
};

// Observations, row-major n x d, with optional 1-based true labels kept for
// evaluation only.
struct Dataset {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> points;  // n * dim
  std::vector<int> labels;     // empty or size n, values in 1..M

  Dataset() = default;
  Dataset(std::size_t n_, std::size_t dim_, std::vector<double> points_,
          std::vector<int> labels_ = {});

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(points).subspan(i * dim, dim);
  }
};

// CSV with header x_0..x_{d-1}[,label].
void write_dataset_csv(const Dataset& data, std::ostream& os);
Dataset read_dataset_csv(std::istream& is);

// Posterior class probabilities, one row per datum. Row-stochastic; the log
// values are kept alongside because the latent KL works on them directly.
class Responsibilities {
 public:
  Responsibilities(std::size_t n, std::size_t m);

  std::size_t n() const { return n_; }
  std::size_t components() const { return m_; }

  double operator()(std::size_t i, std::size_t m) const { return r_[i * m_ + m]; }
  double log_at(std::size_t i, std::size_t m) const { return log_r_[i * m_ + m]; }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(r_).subspan(i * m_, m_);
  }
  std::span<const double> log_row(std::size_t i) const {
    return std::span<const double>(log_r_).subspan(i * m_, m_);
  }

  // Total responsibility mass of component m over all rows.
  double column_sum(std::size_t m) const;

  std::span<double> mutable_row(std::size_t i) {
    return std::span<double>(r_).subspan(i * m_, m_);
  }
  std::span<double> mutable_log_row(std::size_t i) {
    return std::span<double>(log_r_).subspan(i * m_, m_);
  }

 private:
  std::size_t n_;
  std::size_t m_;
  std::vector<double> r_;
  std::vector<double> log_r_;
};

// E-step: responsibilities of every datum under theta, computed in log
// space with log-sum-exp so distant means cannot underflow a row to NaN.
// The parallel version maps rows across threads with per-row arithmetic
// unchanged, so its output is bit-identical to the serial reference.
Responsibilities e_step(const GmmSpec& spec, const Dataset& data, const ParamPoint& theta);
Responsibilities e_step_serial(const GmmSpec& spec, const Dataset& data, const ParamPoint& theta);

// M-step: per-component solve of
//   (Σ_{m,0}⁻¹ + s_m Σ_m⁻¹) θ_m = Σ_{m,0}⁻¹ θ_{m,0} + Σ_m⁻¹ Σ_i r_im y_i
// with s_m = Σ_i r_im; the flat prior drops the prior terms and reduces to
// the responsibility-weighted mean. A flat-prior component with (numerically)
// zero total responsibility keeps its previous mean when `previous` is
// given, recording the component index in `starved_out`; without a fallback
// point the solve raises SingularSystem.
ParamPoint m_step(const GmmSpec& spec, const PriorSpec& prior, const Dataset& data,
                  const Responsibilities& resp, const ParamPoint* previous = nullptr,
                  std::vector<std::size_t>* starved_out = nullptr);

// log p(θ) + Σ_i log Σ_m α_m φ_m(y_i | θ_m), up to a constant independent
// of θ. A flat prior contributes 0.
double log_unnorm_posterior(const GmmSpec& spec, const PriorSpec& prior,
                            const Dataset& data, const ParamPoint& theta);

// d(θ, θ̂) = Σ_i KL(resp_i(θ̂) || resp_i(θ)), the KL divergence between the
// per-datum latent class conditionals. Nonnegative; exactly 0 at θ == θ̂.
double latent_kl(const GmmSpec& spec, const Dataset& data, const ParamPoint& theta,
                 const ParamPoint& theta_hat);

// Q(θ, θ̂) = log_unnorm_posterior(θ) - latent_kl(θ, θ̂).
double q_value(const GmmSpec& spec, const PriorSpec& prior, const Dataset& data,
               const ParamPoint& theta, const ParamPoint& theta_hat);

// Class with the smallest Mahalanobis distance ||point - θ̂_m||_{Σ_m⁻¹};
// 1-based, ties broken by the lowest component index.
int cluster(const GmmSpec& spec, const ParamPoint& theta_hat, std::span<const double> point);

// n i.i.d. draws: class by categorical(α), point by N(θ_m, Σ_m). True
// labels are recorded. Deterministic per seed.
Dataset sample_dataset(const GmmSpec& spec, const ParamPoint& true_means, std::size_t n,
                       std::uint64_t seed);

// Gaussian prior with Σ_{m,0} = prior_sigma² I and centers drawn from
// N(θ_m, Σ_{m,0}). Deterministic per seed.
PriorSpec sample_prior_means(const GmmSpec& spec, const ParamPoint& true_means,
                             double prior_sigma, std::uint64_t seed);

// The MAP-EM iteration as a dynamical system: step = m_step ∘ e_step.
// Immutable after construction and safe to share across threads; the only
// mutable member is a relaxed counter of starved-component fallbacks.
class GmmMapEmSystem : public EmSystem {
 public:
  GmmMapEmSystem(GmmSpec spec, PriorSpec prior, Dataset data);

  // The atomic counter is not movable; carry its value across explicitly.
  GmmMapEmSystem(GmmMapEmSystem&& other) noexcept
      : spec_(std::move(other.spec_)),
        prior_(std::move(other.prior_)),
        data_(std::move(other.data_)),
        starved_updates_(other.starved_updates_.load(std::memory_order_relaxed)) {}
  GmmMapEmSystem(const GmmMapEmSystem& other)
      : spec_(other.spec_),
        prior_(other.prior_),
        data_(other.data_),
        starved_updates_(other.starved_updates_.load(std::memory_order_relaxed)) {}
  GmmMapEmSystem& operator=(const GmmMapEmSystem&) = delete;
  GmmMapEmSystem& operator=(GmmMapEmSystem&&) = delete;

  std::size_t state_dim() const override { return spec_.state_dim(); }
  ParamPoint step(const ParamPoint& point) const override;
  double neg_log_posterior(const ParamPoint& point) const override;
  double latent_kl(const ParamPoint& theta, const ParamPoint& theta_hat) const override;

  const GmmSpec& spec() const { return spec_; }
  const PriorSpec& prior() const { return prior_; }
  const Dataset& data() const { return data_; }

  // Number of m_step component updates that fell back to the previous mean.
  long starved_update_count() const { return starved_updates_.load(std::memory_order_relaxed); }

 private:
  GmmSpec spec_;
  PriorSpec prior_;
  Dataset data_;
  mutable std::atomic<long> starved_updates_{0};
};

}  // namespace lyapem
