#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>
#include <json.hpp>

#include "dpmn/hierarchy.hpp"
#include "dpmn/io.hpp"
#include "dpmn/matrix.hpp"
#include "dpmn/mixture.hpp"

namespace dpmn {

struct QuantileGrid {
  std::vector<double> levels;

  /// n levels i / (n + 1); n = 99 gives 0.01 .. 0.99.
  static QuantileGrid uniform(std::size_t n = 99) {
    if (n == 0) throw std::invalid_argument("quantile grid: need at least one level");
    QuantileGrid g;
    for (std::size_t i = 1; i <= n; ++i) g.levels.push_back(static_cast<double>(i) / static_cast<double>(n + 1));
    return g;
  }

  void validate() const {
    if (levels.empty()) throw std::invalid_argument("quantile grid: empty");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (!(levels[i] > 0.0 && levels[i] < 1.0)) throw std::invalid_argument("quantile grid: levels must lie in (0, 1)");
      if (i && !(levels[i] > levels[i - 1])) throw std::invalid_argument("quantile grid: levels must be strictly increasing");
    }
  }
  std::size_t size() const { return levels.size(); }
};

inline double quantile_loss(double f_inv_q, double y, double q) {
  return ((y <= f_inv_q ? 1.0 : 0.0) - q) * (f_inv_q - y);
}

/// 2 * mean over the grid of the quantile loss (left Riemann rule).
inline double crps(const std::vector<double>& quantiles, double y, const QuantileGrid& grid) {
  if (quantiles.size() != grid.size()) throw std::invalid_argument("crps: one quantile per grid level required");
  double s = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) s += quantile_loss(quantiles[i], y, grid.levels[i]);
  return 2.0 * s / static_cast<double>(grid.size());
}

/// Quantiles at every grid level by one upward CDF scan. The scan starts
/// far enough below the lowest component to skip only negligible mass,
/// whose exact CDF value seeds the running sum.
inline std::vector<double> marginal_quantiles(const MixtureMarginal& m, const QuantileGrid& grid) {
  const std::size_t nk = m.weights.size();
  double lo_rate = INFINITY, hi_rate = 0.0;
  for (std::size_t k = 0; k < nk; ++k) {
    if (m.weights[k] == 0.0) continue;
    lo_rate = std::min(lo_rate, m.rates[k]);
    hi_rate = std::max(hi_rate, m.rates[k]);
  }
  std::int64_t y = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(lo_rate - 12.0 * std::sqrt(hi_rate) - 1.0)));
  double cdf = y > 0 ? marginal_cdf(m, y - 1) : 0.0;
  std::vector<double> out;
  out.reserve(grid.size());
  std::size_t qi = 0;
  const std::int64_t limit = y + static_cast<std::int64_t>(hi_rate - lo_rate + 40.0 * std::sqrt(hi_rate + 1.0) + 100.0);
  while (qi < grid.size()) {
    if (y > limit) {
      // numerical shortfall in the running sum: finish with exact bisection
      for (; qi < grid.size(); ++qi) out.push_back(static_cast<double>(marginal_quantile(m, grid.levels[qi])));
      break;
    }
    const double lg = std::lgamma(static_cast<double>(y) + 1.0);
    double p = 0.0;
    for (std::size_t k = 0; k < nk; ++k) {
      if (m.weights[k] == 0.0) continue;
      const double r = m.rates[k];
      if (r <= 0.0) {
        p += y == 0 ? m.weights[k] : 0.0;
        continue;
      }
      p += m.weights[k] * std::exp(static_cast<double>(y) * std::log(r) - r - lg);
    }
    cdf += p;
    while (qi < grid.size() && cdf >= grid.levels[qi]) {
      out.push_back(static_cast<double>(y));
      ++qi;
    }
    ++y;
  }
  return out;
}

inline double crps(const MixtureMarginal& m, double y, const QuantileGrid& grid) {
  return crps(marginal_quantiles(m, grid), y, grid);
}

/// Level score from per-series quantiles q[i][tau][grid] and actuals
/// (series x h): mean over tau of (1/|[i]|) sum_i crps_{i,tau}, divided by
/// sum_{i,tau} |y|. Missing when that sum is zero.
inline std::optional<double> scrps_level(const std::vector<std::vector<std::vector<double>>>& quantiles, const MatrixD& actuals,
                                         const QuantileGrid& grid) {
  if (quantiles.empty()) throw std::invalid_argument("scrps_level: level has no series");
  if (actuals.rows() != quantiles.size()) throw std::invalid_argument("scrps_level: series count mismatch");
  const std::size_t hz = actuals.cols();
  if (hz == 0) throw std::invalid_argument("scrps_level: empty horizon");
  const std::size_t n = quantiles.size();
  double num = 0.0, den = 0.0;
  for (std::size_t t = 0; t < hz; ++t) {
    double level_crps = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (quantiles[i].size() != hz) throw std::invalid_argument("scrps_level: horizon mismatch");
      level_crps += crps(quantiles[i][t], actuals(i, t), grid);
      den += std::abs(actuals(i, t));
    }
    num += level_crps / static_cast<double>(n);
  }
  num /= static_cast<double>(hz);
  if (den == 0.0) return std::nullopt;
  return num / den;
}

// ------------------------------------------------------------ point forecasts

inline std::vector<double> naive1(const std::vector<double>& history, std::size_t h) {
  if (history.empty()) throw std::invalid_argument("naive1: empty history");
  return std::vector<double>(h, history.back());
}

inline std::vector<double> seasonal_naive(const std::vector<double>& history, std::size_t period, std::size_t h) {
  if (period == 0 || history.size() < period) throw std::invalid_argument("seasonal_naive: history shorter than one period");
  std::vector<double> out(h);
  const std::size_t base = history.size() - period;
  for (std::size_t j = 0; j < h; ++j) out[j] = history[base + j % period];
  return out;
}

/// MSE(actual, forecast) / MSE(actual, naive); missing when the naive MSE is zero.
inline std::optional<double> msse(const std::vector<double>& actual, const std::vector<double>& forecast,
                                  const std::vector<double>& naive) {
  if (actual.size() != forecast.size() || actual.size() != naive.size() || actual.empty()) {
    throw std::invalid_argument("msse: horizon mismatch");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    num += (actual[i] - forecast[i]) * (actual[i] - forecast[i]);
    den += (actual[i] - naive[i]) * (actual[i] - naive[i]);
  }
  if (den == 0.0) return std::nullopt;
  return num / den;
}

// ------------------------------------------------------------ report

struct LevelScore {
  std::string level;
  std::optional<double> scrps;
  std::optional<double> msse;
};

struct EvaluationReport {
  std::vector<LevelScore> levels;
  std::optional<double> overall_scrps;
  std::optional<double> overall_msse;
  QuantileGrid grid;
  std::size_t horizon = 0;
  std::vector<std::string> row_names;   // stacked rows, aggregates first
  std::vector<double> quantiles;         // [row][tau][q], count units
  std::vector<double> means;             // [row][tau]

  double quantile(std::size_t row, std::size_t tau, std::size_t q) const {
    return quantiles[(row * horizon + tau) * grid.size() + q];
  }
  const LevelScore& level(const std::string& label) const {
    for (const auto& l : levels)
      if (l.level == label) return l;
    throw std::out_of_range("report: unknown level '" + label + "'");
  }
};

namespace detail {
inline std::optional<double> mean_of_present(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : v)
    if (x) {
      s += *x;
      ++n;
    }
  if (!n) return std::nullopt;
  return s / static_cast<double>(n);
}
}  // namespace detail

/// Scores a bottom-level mixture forecast at every hierarchy level.
/// `actual` is N_b x h over the forecast window and `history` N_b x T holds
/// the observations before it (the Naive1 anchor for MSSE).
inline EvaluationReport evaluate(const PoissonMixtureForecast& forecast, const HierarchyStructure& h, const MatrixD& actual,
                                 const MatrixD& history, const QuantileGrid& grid = QuantileGrid::uniform()) {
  grid.validate();
  const std::size_t hz = forecast.horizon();
  if (forecast.n_series() != h.n_bottom()) throw std::invalid_argument("evaluate: forecast/hierarchy bottom count mismatch");
  if (actual.rows() != h.n_bottom() || actual.cols() != hz) throw std::invalid_argument("evaluate: actuals must be N_b x h");
  if (history.rows() != h.n_bottom() || history.cols() == 0) throw std::invalid_argument("evaluate: history must be N_b x T, T >= 1");
  const auto full = aggregate_rates(forecast, h);
  const MatrixD y = aggregate_values(h, actual);
  const MatrixD past = aggregate_values(h, history);
  const std::size_t nr = h.n_rows(), nq = grid.size();

  EvaluationReport rep;
  rep.grid = grid;
  rep.horizon = hz;
  rep.quantiles.resize(nr * hz * nq);
  rep.means.resize(nr * hz);
  for (std::size_t r = 0; r < nr; ++r) {
    rep.row_names.push_back(h.row_name(r));
    for (std::size_t t = 0; t < hz; ++t) {
      const auto m = bottom_marginal(full, r, t);
      const auto q = marginal_quantiles(m, grid);
      std::copy(q.begin(), q.end(), rep.quantiles.begin() + static_cast<long>((r * hz + t) * nq));
      rep.means[r * hz + t] = m.mean();
    }
  }
  std::vector<std::optional<double>> scrps_all, msse_all;
  for (const auto& lv : h.levels()) {
    std::vector<std::vector<std::vector<double>>> qs;
    MatrixD ya(lv.rows.size(), hz);
    std::vector<std::optional<double>> per_series;
    for (std::size_t i = 0; i < lv.rows.size(); ++i) {
      const std::size_t r = lv.rows[i];
      qs.emplace_back(hz);
      std::vector<double> act(hz), mean(hz);
      for (std::size_t t = 0; t < hz; ++t) {
        qs.back()[t].assign(rep.quantiles.begin() + static_cast<long>((r * hz + t) * nq),
                            rep.quantiles.begin() + static_cast<long>((r * hz + t + 1) * nq));
        ya(i, t) = y(r, t);
        act[t] = y(r, t);
        mean[t] = rep.means[r * hz + t];
      }
      per_series.push_back(msse(act, mean, naive1(past.row(r), hz)));
    }
    LevelScore s{lv.label, scrps_level(qs, ya, grid), detail::mean_of_present(per_series)};
    scrps_all.push_back(s.scrps);
    msse_all.push_back(s.msse);
    rep.levels.push_back(std::move(s));
  }
  rep.overall_scrps = detail::mean_of_present(scrps_all);
  rep.overall_msse = detail::mean_of_present(msse_all);
  return rep;
}

// ------------------------------------------------------------ output

inline nlohmann::ordered_json to_json(const EvaluationReport& rep) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); };
  nlohmann::ordered_json j;
  j["overall"] = {{"scrps", opt(rep.overall_scrps)}, {"msse", opt(rep.overall_msse)}};
  j["levels"] = nlohmann::ordered_json::array();
  for (const auto& l : rep.levels) j["levels"].push_back({{"level", l.level}, {"scrps", opt(l.scrps)}, {"msse", opt(l.msse)}});
  j["quantile_levels"] = rep.grid.levels;
  j["horizon"] = rep.horizon;
  return j;
}

/// Flat (level, metric, value) table; missing values are written as NA.
inline std::string to_csv(const EvaluationReport& rep) {
  std::ostringstream os;
  auto put = [&](const std::string& level, const char* metric, const std::optional<double>& v) {
    os << level << "," << metric << "," << (v ? io::fmt(*v) : std::string("NA")) << "\n";
  };
  os << "level,metric,value\n";
  put("overall", "scrps", rep.overall_scrps);
  put("overall", "msse", rep.overall_msse);
  for (const auto& l : rep.levels) {
    put(l.level, "scrps", l.scrps);
    put(l.level, "msse", l.msse);
  }
  return os.str();
}

}  // namespace dpmn
