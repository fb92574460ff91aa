#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include "dpmn/hierarchy.hpp"
#include "dpmn/matrix.hpp"

namespace dpmn {

/// Floor applied to rates inside log terms so that y > 0 against a zero
/// rate yields a large negative log-pmf instead of -inf/NaN.
inline constexpr double kRateFloor = 1e-8;

inline double log_poisson(double y, double rate) {
  if (y == 0.0) return -rate;
  return y * std::log(std::max(rate, kRateFloor)) - rate - std::lgamma(y + 1.0);
}

/// Stable log(sum(exp(v))). All -inf entries give -inf.
inline double logsumexp(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("logsumexp: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  if (m == -std::numeric_limits<double>::infinity()) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// Univariate Poisson mixture for one series (bottom or aggregate) at one step.
struct MixtureMarginal {
  std::vector<double> weights;
  std::vector<double> rates;

  double mean() const {
    double m = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) m += weights[k] * rates[k];
    return m;
  }
  double variance() const {
    const double mu = mean();
    double v = mu;
    for (std::size_t k = 0; k < weights.size(); ++k) v += weights[k] * (rates[k] - mu) * (rates[k] - mu);
    return v;
  }
};

/// Joint forecast: shared weights w[k] and rates[series][k][tau]. The
/// series axis holds bottoms, or all stacked rows after aggregate_rates.
class PoissonMixtureForecast {
 public:
  PoissonMixtureForecast() = default;
  PoissonMixtureForecast(std::vector<double> weights, std::size_t n_series, std::size_t horizon,
                         std::vector<double> rates)
      : weights_(std::move(weights)), n_series_(n_series), horizon_(horizon), rates_(std::move(rates)) {
    validate();
  }

  std::size_t n_series() const noexcept { return n_series_; }
  std::size_t n_components() const noexcept { return weights_.size(); }
  std::size_t horizon() const noexcept { return horizon_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const std::vector<double>& rates() const noexcept { return rates_; }

  double rate(std::size_t series, std::size_t k, std::size_t tau) const {
    return rates_[(series * weights_.size() + k) * horizon_ + tau];
  }

  /// Mixture mean sum_k w_k lambda_{series,k,tau}.
  double mean(std::size_t series, std::size_t tau) const {
    double m = 0.0;
    for (std::size_t k = 0; k < weights_.size(); ++k) m += weights_[k] * rate(series, k, tau);
    return m;
  }

  void check_index(std::size_t series, std::size_t tau) const {
    if (series >= n_series_ || tau >= horizon_) {
      throw std::out_of_range("forecast index (" + std::to_string(series) + ", " + std::to_string(tau) +
                              ") outside " + shape_str(n_series_, horizon_));
    }
  }

 private:
  void validate() const {
    if (weights_.empty()) throw std::invalid_argument("mixture: at least one component required");
    if (horizon_ == 0) throw std::invalid_argument("mixture: horizon must be >= 1");
    if (rates_.size() != n_series_ * weights_.size() * horizon_) {
      throw std::invalid_argument("mixture: rate tensor size does not match series x components x horizon");
    }
    double total = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("mixture: weights must be finite and >= 0");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mixture: weights must sum to 1");
    for (double r : rates_) {
      if (!(r >= 0.0) || !std::isfinite(r)) throw std::invalid_argument("mixture: rates must be finite and >= 0");
    }
  }

  std::vector<double> weights_;
  std::size_t n_series_ = 0;
  std::size_t horizon_ = 0;
  std::vector<double> rates_;
};

namespace detail {
inline void check_counts(const MatrixD& y, std::size_t rows, std::size_t cols, const char* who) {
  if (y.rows() != rows || y.cols() != cols) {
    throw std::invalid_argument(std::string(who) + ": observation shape " + shape_str(y.rows(), y.cols()) +
                                " does not match forecast " + shape_str(rows, cols));
  }
  for (double v : y.data()) {
    if (!(v >= 0.0) || v != std::floor(v)) throw std::invalid_argument(std::string(who) + ": observations must be nonnegative integers");
  }
}
}  // namespace detail

/// log sum_k w_k prod_{series,tau} Poisson(y | lambda). y is series x horizon.
inline double log_joint_pmf(const PoissonMixtureForecast& f, const MatrixD& y) {
  detail::check_counts(y, f.n_series(), f.horizon(), "log_joint_pmf");
  std::vector<double> terms(f.n_components());
  for (std::size_t k = 0; k < f.n_components(); ++k) {
    double s = f.weights()[k] > 0.0 ? std::log(f.weights()[k]) : -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < f.n_series(); ++b)
      for (std::size_t t = 0; t < f.horizon(); ++t) s += log_poisson(y(b, t), f.rate(b, k, t));
    terms[k] = s;
  }
  return logsumexp(terms);
}

/// Marginal of one series at one step: drop every other series and step.
inline MixtureMarginal bottom_marginal(const PoissonMixtureForecast& f, std::size_t series, std::size_t tau) {
  f.check_index(series, tau);
  MixtureMarginal m{f.weights(), std::vector<double>(f.n_components())};
  for (std::size_t k = 0; k < f.n_components(); ++k) m.rates[k] = f.rate(series, k, tau);
  return m;
}

/// Per component and step, stacked rates S * lambda_[b]. Weights unchanged.
inline PoissonMixtureForecast aggregate_rates(const PoissonMixtureForecast& f, const HierarchyStructure& h) {
  if (f.n_series() != h.n_bottom()) {
    throw std::invalid_argument("aggregate_rates: forecast has " + std::to_string(f.n_series()) +
                                " series, hierarchy has " + std::to_string(h.n_bottom()) + " bottoms");
  }
  const std::size_t k_n = f.n_components(), hz = f.horizon(), na = h.n_agg(), nb = h.n_bottom();
  std::vector<double> out((na + nb) * k_n * hz, 0.0);
  const std::size_t block = k_n * hz;
  for (std::size_t i = 0; i < na; ++i) {
    double* o = out.data() + i * block;
    for (std::size_t j = 0; j < nb; ++j) {
      if (!h.agg_matrix()(i, j)) continue;
      const double* r = f.rates().data() + j * block;
      for (std::size_t c = 0; c < block; ++c) o[c] += r[c];
    }
  }
  std::copy(f.rates().begin(), f.rates().end(), out.begin() + na * block);
  return PoissonMixtureForecast(f.weights(), na + nb, hz, std::move(out));
}

inline double marginal_pmf(const MixtureMarginal& m, std::int64_t y) {
  if (y < 0) return 0.0;
  double p = 0.0;
  for (std::size_t k = 0; k < m.weights.size(); ++k) {
    if (m.weights[k] == 0.0) continue;
    if (m.rates[k] <= 0.0) {
      p += y == 0 ? m.weights[k] : 0.0;
      continue;
    }
    p += m.weights[k] * std::exp(log_poisson(static_cast<double>(y), m.rates[k]));
  }
  return p;
}

/// P(Y <= y) = sum_k w_k Q(y + 1, lambda_k), Q the regularized upper gamma.
inline double marginal_cdf(const MixtureMarginal& m, std::int64_t y) {
  if (y < 0) return 0.0;
  double c = 0.0;
  for (std::size_t k = 0; k < m.weights.size(); ++k) {
    if (m.weights[k] == 0.0) continue;
    if (m.rates[k] <= 0.0) {
      c += m.weights[k];
      continue;
    }
    c += m.weights[k] * boost::math::gamma_q(static_cast<double>(y) + 1.0, m.rates[k]);
  }
  return std::min(c, 1.0);
}

/// min{y : F(y) >= q}: exponential bracket from the mean, then bisection.
inline std::int64_t marginal_quantile(const MixtureMarginal& m, double q) {
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("marginal_quantile: q must lie in (0, 1)");
  if (marginal_cdf(m, 0) >= q) return 0;
  constexpr std::int64_t kLimit = std::int64_t{1} << 52;
  std::int64_t hi = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(m.mean())));
  std::int64_t lo = 0;  // invariant: F(lo) < q
  if (marginal_cdf(m, hi) >= q) {
    std::int64_t probe = hi / 2;
    while (probe > 0 && marginal_cdf(m, probe) >= q) {
      hi = probe;
      probe /= 2;
    }
    lo = probe;
  } else {
    while (marginal_cdf(m, hi) < q) {
      lo = hi;
      if (hi > kLimit) throw std::overflow_error("marginal_quantile: quantile beyond representable range");
      hi = 2 * hi + 1;
    }
  }
  while (hi - lo > 1) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    if (marginal_cdf(m, mid) >= q) hi = mid;
    else lo = mid;
  }
  return hi;
}

/// samples x rows x horizon integer tensor.
struct SampleTensor {
  std::size_t n_samples = 0;
  std::size_t n_rows = 0;
  std::size_t horizon = 0;
  std::vector<std::int64_t> values;

  std::int64_t operator()(std::size_t s, std::size_t r, std::size_t t) const {
    return values[(s * n_rows + r) * horizon + t];
  }
  /// One sample as a rows x horizon panel.
  MatrixD panel(std::size_t s) const {
    MatrixD out(n_rows, horizon);
    for (std::size_t i = 0; i < n_rows * horizon; ++i) out.data()[i] = static_cast<double>(values[s * n_rows * horizon + i]);
    return out;
  }
};

/// Draws kappa ~ Categorical(w) once per sample, independent Poisson
/// bottoms under that component, then aggregates through S.
inline SampleTensor sample_coherent(const PoissonMixtureForecast& f, const HierarchyStructure& h, std::size_t n_samples,
                                    std::uint64_t seed) {
  if (f.n_series() != h.n_bottom()) throw std::invalid_argument("sample_coherent: forecast/hierarchy bottom mismatch");
  const std::size_t nb = h.n_bottom(), na = h.n_agg(), hz = f.horizon();
  SampleTensor out{n_samples, na + nb, hz, std::vector<std::int64_t>(n_samples * (na + nb) * hz, 0)};
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(f.weights().begin(), f.weights().end());
  for (std::size_t s = 0; s < n_samples; ++s) {
    const std::size_t k = pick(rng);
    std::int64_t* base = out.values.data() + s * (na + nb) * hz;
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t t = 0; t < hz; ++t) {
        const double lam = f.rate(b, k, t);
        std::int64_t y = 0;
        if (lam > 0.0) y = std::poisson_distribution<std::int64_t>(lam)(rng);
        base[(na + b) * hz + t] = y;
      }
    }
    for (std::size_t i = 0; i < na; ++i) {
      for (std::size_t b = 0; b < nb; ++b) {
        if (!h.agg_matrix()(i, b)) continue;
        for (std::size_t t = 0; t < hz; ++t) base[i * hz + t] += base[(na + b) * hz + t];
      }
    }
  }
  return out;
}

/// Cov(Y_{b,t}, Y_{b',t'}) by the law of total covariance.
inline double covariance(const PoissonMixtureForecast& f, std::size_t b1, std::size_t t1, std::size_t b2,
                         std::size_t t2) {
  f.check_index(b1, t1);
  f.check_index(b2, t2);
  const double m1 = f.mean(b1, t1), m2 = f.mean(b2, t2);
  double c = (b1 == b2 && t1 == t2) ? m1 : 0.0;
  for (std::size_t k = 0; k < f.n_components(); ++k) {
    c += f.weights()[k] * (f.rate(b1, k, t1) - m1) * (f.rate(b2, k, t2) - m2);
  }
  return c;
}

/// sum_k w_k (lambda_k - mean)(lambda_k - mean)^T over series at step tau.
inline MatrixD dispersion_matrix(const PoissonMixtureForecast& f, std::size_t tau) {
  const std::size_t n = f.n_series();
  MatrixD d(n, n);
  std::vector<double> mu(n);
  for (std::size_t b = 0; b < n; ++b) mu[b] = f.mean(b, tau);
  for (std::size_t k = 0; k < f.n_components(); ++k) {
    const double w = f.weights()[k];
    for (std::size_t i = 0; i < n; ++i) {
      const double di = f.rate(i, k, tau) - mu[i];
      for (std::size_t j = 0; j < n; ++j) d(i, j) += w * di * (f.rate(j, k, tau) - mu[j]);
    }
  }
  return d;
}

/// Numerical rank of the dispersion matrix: eigenvalues above 1e-9 of the largest.
inline std::size_t covariance_matrix_nondiag_rank(const PoissonMixtureForecast& f, std::size_t tau) {
  if (f.n_series() < 2) throw std::invalid_argument("covariance_matrix_nondiag_rank: needs at least two series");
  if (tau >= f.horizon()) throw std::out_of_range("covariance_matrix_nondiag_rank: tau out of range");
  const MatrixD d = dispersion_matrix(f, tau);
  const auto n = static_cast<Eigen::Index>(d.rows());
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> view(d.data().data(), n, n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(view, Eigen::EigenvaluesOnly);
  const auto& ev = solver.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  if (top == 0.0) return 0;
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (std::abs(ev[i]) > 1e-9 * top) ++rank;
  return rank;
}

}  // namespace dpmn
