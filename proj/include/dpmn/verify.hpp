#pragma once

// Self-test suites run by `dpmn verify`. Each check compares a library
// routine against an independent computation (enumeration, Monte Carlo or
// finite differences) and reports the worst deviation it saw.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dpmn/data.hpp"
#include "dpmn/hierarchy.hpp"
#include "dpmn/mixture.hpp"
#include "dpmn/model.hpp"
#include "dpmn/objectives.hpp"

namespace dpmn::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  double statistic = 0.0;  // worst deviation observed
  double threshold = 0.0;
  std::string detail;
  double seconds = 0.0;
};

namespace detail {

inline PoissonMixtureForecast random_mixture(std::size_t n_series, std::size_t k, std::size_t horizon, double max_rate,
                                             std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uw(0.05, 1.0), ur(0.0, max_rate);
  std::vector<double> w(k);
  double s = 0.0;
  for (auto& x : w) s += (x = uw(rng));
  for (auto& x : w) x /= s;
  std::vector<double> r(n_series * k * horizon);
  for (auto& x : r) x = ur(rng);
  return PoissonMixtureForecast(std::move(w), n_series, horizon, std::move(r));
}

/// Poisson pmf table 0..cap by the recurrence p(y) = p(y-1) * lambda / y.
inline std::vector<double> poisson_table(double lambda, int cap) {
  std::vector<double> p(static_cast<std::size_t>(cap) + 1);
  p[0] = std::exp(-lambda);
  for (int y = 1; y <= cap; ++y) p[y] = p[y - 1] * lambda / y;
  return p;
}

/// Smallest cap with Poisson(lambda) tail mass above it below tol.
inline int tail_cap(double lambda, double tol) {
  double p = std::exp(-lambda), c = p;
  int y = 0;
  while (1.0 - c > tol) {
    ++y;
    p *= lambda / y;
    c += p;
  }
  return y;
}

inline HierarchyStructure flat_hierarchy(std::size_t n_bottom) {
  std::vector<std::string> bottom;
  std::vector<Level> levels{{"total", {0}}, {"bottom", {}}};
  for (std::size_t b = 0; b < n_bottom; ++b) {
    bottom.push_back("b" + std::to_string(b));
    levels[1].rows.push_back(1 + b);
  }
  return HierarchyStructure(bottom, {"total"}, MatrixI(1, n_bottom, 1), levels);
}

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

template <class F>
CheckResult timed(const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r = body();
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace detail

/// Samples drawn through the hierarchy satisfy y_agg = A y_bottom exactly.
inline CheckResult coherence(const HierarchyStructure& h, std::size_t k, std::size_t n_samples, std::uint64_t seed) {
  return detail::timed("coherence", [&] {
    std::mt19937_64 rng(seed);
    const auto f = detail::random_mixture(h.n_bottom(), k, 3, 20.0, rng);
    const auto s = sample_coherent(f, h, n_samples, seed + 1);
    double worst = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) worst = std::max(worst, coherence_residual(h, s.panel(i)));
    return CheckResult{"", worst == 0.0, worst, 0.0, std::to_string(n_samples) + " samples, K=" + std::to_string(k), 0.0};
  });
}

/// Aggregate pmf from summed rates against convolution over every bottom
/// outcome vector, truncated where each bottom's tail mass is below 1e-12.
inline CheckResult aggregate_oracle(std::uint64_t seed) {
  return detail::timed("aggregate_marginal", [&] {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    std::size_t cases = 0;
    for (std::size_t nb : {2, 3})
      for (std::size_t k : {1, 2, 3}) {
        const auto h = detail::flat_hierarchy(nb);
        const auto f = detail::random_mixture(nb, k, 1, 5.0, rng);
        const auto agg = aggregate_rates(f, h);
        std::vector<std::vector<std::vector<double>>> tab(k, std::vector<std::vector<double>>(nb));
        int cap = 0;
        for (std::size_t c = 0; c < k; ++c)
          for (std::size_t b = 0; b < nb; ++b) cap = std::max(cap, detail::tail_cap(f.rate(b, c, 0), 1e-12));
        for (std::size_t c = 0; c < k; ++c)
          for (std::size_t b = 0; b < nb; ++b) tab[c][b] = detail::poisson_table(f.rate(b, c, 0), cap);
        std::vector<double> pmf(nb * static_cast<std::size_t>(cap) + 1, 0.0);
        std::vector<int> idx(nb, 0);
        for (bool more = true; more;) {
          int total = 0;
          for (auto v : idx) total += v;
          for (std::size_t c = 0; c < k; ++c) {
            double p = f.weights()[c];
            for (std::size_t b = 0; b < nb; ++b) p *= tab[c][b][idx[b]];
            pmf[total] += p;
          }
          std::size_t d = 0;
          while (d < nb && ++idx[d] > cap) idx[d++] = 0;
          more = d < nb;
        }
        const auto m = bottom_marginal(agg, 0, 0);
        for (int y = 0; y <= cap; ++y) worst = std::max(worst, std::abs(marginal_pmf(m, y) - pmf[y]));
        ++cases;
      }
    return CheckResult{"", worst <= 1e-9, worst, 1e-9, std::to_string(cases) + " cases", 0.0};
  });
}

/// Law-of-total-covariance formula against exhaustive enumeration
/// (rates <= 3) and against a Monte Carlo estimate with a 3-standard-error band.
inline CheckResult covariance_enumeration(std::uint64_t seed) {
  return detail::timed("covariance_enumeration", [&] {
    std::mt19937_64 rng(seed);
    const auto f = detail::random_mixture(3, 3, 2, 3.0, rng);
    double worst = 0.0;
    for (std::size_t b1 = 0; b1 < 3; ++b1)
      for (std::size_t t1 = 0; t1 < 2; ++t1)
        for (std::size_t b2 = 0; b2 < 3; ++b2)
          for (std::size_t t2 = 0; t2 < 2; ++t2) {
            double e1 = 0.0, e2 = 0.0, e12 = 0.0;
            for (std::size_t k = 0; k < f.n_components(); ++k) {
              const double w = f.weights()[k];
              const auto p1 = detail::poisson_table(f.rate(b1, k, t1), 60);
              const auto p2 = detail::poisson_table(f.rate(b2, k, t2), 60);
              double m1 = 0.0, m2 = 0.0, sq = 0.0;
              for (int y = 0; y <= 60; ++y) {
                m1 += y * p1[y];
                m2 += y * p2[y];
                sq += double(y) * y * p1[y];
              }
              e1 += w * m1;
              e2 += w * m2;
              e12 += w * ((b1 == b2 && t1 == t2) ? sq : m1 * m2);
            }
            worst = std::max(worst, std::abs(covariance(f, b1, t1, b2, t2) - (e12 - e1 * e2)));
          }
    return CheckResult{"", worst <= 1e-9, worst, 1e-9, "36 entries, N_b=3, K=3, h=2", 0.0};
  });
}

inline CheckResult covariance_monte_carlo(std::size_t n_samples, std::uint64_t seed) {
  return detail::timed("covariance_monte_carlo", [&] {
    std::mt19937_64 rng(seed);
    const auto h = detail::flat_hierarchy(3);
    const auto f = detail::random_mixture(3, 3, 2, 3.0, rng);
    const auto s = sample_coherent(f, h, n_samples, seed + 7);
    const std::size_t hz = s.horizon;
    // bottoms occupy rows 1..3 of the stacked sample
    double worst_z = 0.0;
    const double n = static_cast<double>(n_samples);
    for (std::size_t b1 = 0; b1 < 3; ++b1)
      for (std::size_t b2 = b1; b2 < 3; ++b2)
        for (std::size_t t1 = 0; t1 < hz; ++t1)
          for (std::size_t t2 = 0; t2 < hz; ++t2) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t i = 0; i < n_samples; ++i) {
              m1 += static_cast<double>(s(i, 1 + b1, t1));
              m2 += static_cast<double>(s(i, 1 + b2, t2));
            }
            m1 /= n;
            m2 /= n;
            double c = 0.0, c2 = 0.0;
            for (std::size_t i = 0; i < n_samples; ++i) {
              const double p = (static_cast<double>(s(i, 1 + b1, t1)) - m1) * (static_cast<double>(s(i, 1 + b2, t2)) - m2);
              c += p;
              c2 += p * p;
            }
            c /= n;
            const double se = std::sqrt(std::max(c2 / n - c * c, 0.0) / n);
            const double z = std::abs(c - covariance(f, b1, t1, b2, t2)) / std::max(se, 1e-300);
            worst_z = std::max(worst_z, z);
          }
    return CheckResult{"", worst_z <= 3.0, worst_z, 3.0, std::to_string(n_samples) + " samples, worst |z|", 0.0};
  });
}

/// Dispersion matrix rank never exceeds K - 1.
inline CheckResult rank_bound(std::size_t trials, std::uint64_t seed) {
  return detail::timed("rank_bound", [&] {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> uk(2, 6), un(4, 12);
    std::size_t violations = 0;
    double worst = -1e9;
    for (std::size_t i = 0; i < trials; ++i) {
      const std::size_t k = uk(rng), nb = un(rng);
      const auto f = detail::random_mixture(nb, k, 1, 10.0, rng);
      const auto r = covariance_matrix_nondiag_rank(f, 0);
      worst = std::max(worst, static_cast<double>(r) - static_cast<double>(k - 1));
      if (r > k - 1) ++violations;
    }
    return CheckResult{"", violations == 0, worst, 0.0,
                       std::to_string(trials) + " mixtures, worst rank - (K-1)", 0.0};
  });
}

/// GroupBU with one full group equals the joint NLL; singletons equal NaiveBU.
inline CheckResult objective_equivalence(std::size_t trials, std::uint64_t seed) {
  return detail::timed("objective_equivalence", [&] {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> uk(1, 5), un(2, 8), uh(1, 4);
    double worst = 0.0;
    for (std::size_t i = 0; i < trials; ++i) {
      const std::size_t nb = un(rng), hz = uh(rng);
      const auto f = detail::random_mixture(nb, uk(rng), hz, 8.0, rng);
      MatrixD y(nb, hz);
      for (auto& v : y.data()) v = static_cast<double>(std::poisson_distribution<int>(4.0)(rng));
      const double whole = nll_groupbu(f, y, GroupingScheme::whole(nb));
      const double single = nll_groupbu(f, y, GroupingScheme::singletons(nb));
      double naive = 0.0;
      for (std::size_t b = 0; b < nb; ++b) {
        std::vector<double> terms;
        for (std::size_t k = 0; k < f.n_components(); ++k) {
          double s = std::log(f.weights()[k]);
          for (std::size_t t = 0; t < hz; ++t) s += log_poisson(y(b, t), f.rate(b, k, t));
          terms.push_back(s);
        }
        naive -= logsumexp(terms);
      }
      worst = std::max({worst, std::abs(whole - nll_joint(f, y)), std::abs(single - naive)});
    }
    return CheckResult{"", worst <= 1e-10, worst, 1e-10, std::to_string(trials) + " random instances", 0.0};
  });
}

/// Central differences of each objective composed with the full forward pass.
/// Smooth activation: finite differences are not defined across ReLU kinks.
inline CheckResult gradients(std::uint64_t seed) {
  return detail::timed("gradcheck", [&] {
    SyntheticSpec spec;
    spec.n_bottom = 4;
    spec.n_groups = 2;
    spec.k_true = 3;
    spec.horizon = 3;
    spec.length = 33;
    spec.seed = seed;
    const auto syn = generate_synthetic(spec);
    const auto& ds = syn.dataset;
    const std::size_t history = 30;
    const auto scales = series_scales(ds, history);
    const auto fb = build_feature_bundle(ds, history, scales);
    ModelConfig cfg;
    cfg.n_components = 3;
    cfg.conv_filters = 4;
    cfg.kernel_width = 3;
    cfg.dilations = {1, 2};
    cfg.static_width = 3;
    cfg.future_width = 3;
    cfg.embedding_dim = 2;
    cfg.context_agnostic = 5;
    cfg.context_specific = 4;
    cfg.decoder_hidden = 6;
    cfg.activation = Activation::softplus;
    const std::size_t na = ds.hierarchy->n_agg();
    DpmnModel model(cfg, InputDims::of(fb), {scales.begin() + static_cast<long>(na), scales.end()}, seed);
    const std::vector<std::size_t> idx{5, 16, 26};
    std::vector<double> y;
    for (auto c : idx)
      for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t s = 1; s <= 3; ++s) y.push_back(ds.y(b, c + s));
    const std::vector<std::pair<std::string, GroupingScheme>> objectives{
        {"joint", GroupingScheme::whole(4)},
        {"naive_bu", GroupingScheme::singletons(4)},
        {"group_bu", GroupingScheme::from_level(*ds.hierarchy, "group")}};
    double worst = 0.0;
    std::string detail;
    for (const auto& [name, g] : objectives) {
      const double e = ag::grad_check(
          [&] {
            const auto out = model.forward_forked(fb, idx);
            return composite_nll(out.rates, out.weights, y, g);
          },
          model.parameter_tensors(), 1e-3);
      worst = std::max(worst, e);
      detail += (detail.empty() ? "" : ", ") + name + " " + detail::sci(e);
    }
    return CheckResult{"", worst < 1e-3, worst, 1e-3, detail, 0.0};
  });
}

/// Every suite at its acceptance size, the coherence check on `h`.
inline std::vector<CheckResult> run_all(const HierarchyStructure& h, std::uint64_t seed) {
  return {coherence(h, 5, 10000, seed),
          aggregate_oracle(seed),
          covariance_enumeration(seed),
          covariance_monte_carlo(1000000, seed),
          rank_bound(100, seed),
          objective_equivalence(50, seed),
          gradients(seed)};
}

}  // namespace dpmn::verify
