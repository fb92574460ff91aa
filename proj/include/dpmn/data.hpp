#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dpmn/error.hpp"
#include "dpmn/features.hpp"
#include "dpmn/hierarchy.hpp"
#include "dpmn/io.hpp"
#include "dpmn/matrix.hpp"
#include "dpmn/mixture.hpp"

namespace dpmn {

using Date = std::chrono::sys_days;

enum class Frequency { daily, weekly, monthly };

inline Frequency parse_frequency(const std::string& s) {
  if (s == "daily" || s == "D") return Frequency::daily;
  if (s == "weekly" || s == "W") return Frequency::weekly;
  if (s == "monthly" || s == "M") return Frequency::monthly;
  throw InputError("unsupported frequency '" + s + "' (expected daily, weekly or monthly)");
}

inline std::string to_string(Frequency f) {
  switch (f) {
    case Frequency::daily: return "daily";
    case Frequency::weekly: return "weekly";
    case Frequency::monthly: return "monthly";
  }
  return "?";
}

/// Strict YYYY-MM-DD.
inline Date parse_iso_date(const std::string& s) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  if (s.size() != 10 || s[4] != '-' || s[7] != '-' ||
      std::sscanf(s.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3) {
    throw InputError("invalid ISO-8601 date '" + s + "'");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw InputError("invalid calendar date '" + s + "'");
  return Date(ymd);
}

inline std::string format_date(Date d) {
  const std::chrono::year_month_day ymd(d);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

inline Date advance(Date d, Frequency f, long steps) {
  switch (f) {
    case Frequency::daily: return d + std::chrono::days(steps);
    case Frequency::weekly: return d + std::chrono::days(7 * steps);
    case Frequency::monthly: {
      const std::chrono::year_month_day ymd(d);
      const auto shifted = ymd + std::chrono::months(steps);
      if (!shifted.ok()) throw InputError("monthly calendar: day " + std::to_string(static_cast<unsigned>(ymd.day())) +
                                          " does not exist in every month");
      return Date(shifted);
    }
  }
  return d;
}

/// Bottom target panel with calendar and optional future-known covariates.
struct SeriesDataset {
  std::shared_ptr<const HierarchyStructure> hierarchy;
  MatrixD y;  // N_b x N_t
  Date start{};
  Frequency frequency = Frequency::daily;
  std::size_t horizon = 1;
  double value_scale = 1.0;  // counts = round(raw * value_scale)

  // Covariates, N_b x F x N_t and F~ x N_t. Extended past N_t by repeating the last value.
  std::vector<std::string> bottom_covariate_names;
  std::vector<double> bottom_covariates;
  std::vector<std::string> shared_covariate_names;
  std::vector<double> shared_covariates;

  std::size_t n_bottom() const { return y.rows(); }
  std::size_t n_time() const { return y.cols(); }
  Date date_at(std::size_t i) const { return advance(start, frequency, static_cast<long>(i)); }

  double bottom_covariate(std::size_t b, std::size_t f, std::size_t t) const {
    const std::size_t tt = std::min(t, n_time() - 1);
    return bottom_covariates[(b * bottom_covariate_names.size() + f) * n_time() + tt];
  }
  double shared_covariate(std::size_t f, std::size_t t) const {
    return shared_covariates[f * n_time() + std::min(t, n_time() - 1)];
  }

  /// Steps [begin, end) of the panel and its covariates.
  SeriesDataset window(std::size_t begin, std::size_t end) const {
    if (begin >= end || end > n_time()) throw std::out_of_range("dataset window: bad range");
    const std::size_t len = end - begin;
    SeriesDataset out = *this;
    out.start = date_at(begin);
    out.y = MatrixD(n_bottom(), len);
    for (std::size_t b = 0; b < n_bottom(); ++b) std::copy_n(y.row_ptr(b) + begin, len, out.y.row_ptr(b));
    auto cut = [&](const std::vector<double>& src, std::size_t rows) {
      std::vector<double> dst(rows * len);
      for (std::size_t r = 0; r < rows; ++r) std::copy_n(src.data() + r * n_time() + begin, len, dst.data() + r * len);
      return dst;
    };
    out.bottom_covariates = cut(bottom_covariates, n_bottom() * bottom_covariate_names.size());
    out.shared_covariates = cut(shared_covariates, shared_covariate_names.size());
    return out;
  }

  /// Dataset truncated to its first `length` steps.
  SeriesDataset head(std::size_t length) const {
    if (length == 0 || length > n_time()) throw std::out_of_range("dataset head: bad length");
    return window(0, length);
  }
};

// ------------------------------------------------------------ partition

/// Half-open, zero-based index ranges.
struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct Partition {
  Range train, val, test;
};

inline Partition partition(std::size_t n_time, std::size_t h) {
  if (h == 0) throw InputError("partition: horizon must be >= 1");
  if (n_time <= 2 * h) {
    throw InputError("partition: series of length " + std::to_string(n_time) + " too short for horizon " +
                     std::to_string(h) + " (need more than " + std::to_string(2 * h) + " steps)");
  }
  return {{0, n_time - 2 * h}, {n_time - 2 * h, n_time - h}, {n_time - h, n_time}};
}

inline Partition partition(const SeriesDataset& ds, std::size_t h) { return partition(ds.n_time(), h); }

// ------------------------------------------------------------ calendar

inline std::size_t calendar_channels(Frequency f) {
  switch (f) {
    case Frequency::daily: return 7;
    case Frequency::weekly:
    case Frequency::monthly: return 12;
  }
  return 0;
}

/// One-hot calendar, channels x count: day of week (Monday first) for
/// daily data, month of year otherwise.
inline MatrixD build_calendar_features(Frequency f, Date start, std::size_t count) {
  MatrixD out(calendar_channels(f), count);
  for (std::size_t t = 0; t < count; ++t) {
    const Date d = advance(start, f, static_cast<long>(t));
    std::size_t c = 0;
    if (f == Frequency::daily) {
      c = std::chrono::weekday(d).iso_encoding() - 1;
    } else {
      c = static_cast<unsigned>(std::chrono::year_month_day(d).month()) - 1;
    }
    out(c, t) = 1.0;
  }
  return out;
}

inline MatrixD build_calendar_features(const SeriesDataset& ds) {
  return build_calendar_features(ds.frequency, ds.start, ds.n_time() + ds.horizon);
}

// ------------------------------------------------------------ ingestion

namespace detail {

inline std::vector<std::vector<std::string>> read_csv_records(const std::string& text, const std::vector<std::string>& header,
                                                              const std::string& what) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InputError(what + ": empty file");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  auto cols = io::split_csv_line(line);
  for (auto& c : cols) c = io::trim(c);
  if (cols != header) {
    std::string want;
    for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
    throw InputError(what + ": expected header '" + want + "'");
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (io::trim(line).empty() || io::trim(line) == "\r") continue;
    auto f = io::split_csv_line(line);
    if (f.size() != header.size()) {
      throw InputError(what + ": line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields, expected " +
                       std::to_string(header.size()));
    }
    for (auto& x : f) x = io::trim(x);
    rows.push_back(std::move(f));
  }
  return rows;
}

inline double parse_number(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError(where + ": invalid number '" + s + "'");
  }
}

/// Sorted unique dates, checked to be gap-free at frequency `f`.
inline std::vector<Date> calendar_of(const std::vector<Date>& raw, Frequency f, const std::string& what) {
  std::vector<Date> d = raw;
  std::sort(d.begin(), d.end());
  d.erase(std::unique(d.begin(), d.end()), d.end());
  for (std::size_t i = 1; i < d.size(); ++i) {
    if (advance(d[i - 1], f, 1) != d[i]) {
      throw InputError(what + ": calendar gap between " + format_date(d[i - 1]) + " and " + format_date(d[i]) + " at " +
                       to_string(f) + " frequency");
    }
  }
  return d;
}

}  // namespace detail

/// Long-format (series_id, date, value) panel over the hierarchy's bottom series.
inline SeriesDataset load_csv_text(const std::string& text, std::shared_ptr<const HierarchyStructure> h, Frequency f,
                                   std::size_t horizon) {
  const auto rows = detail::read_csv_records(text, {"series_id", "date", "value"}, "series csv");
  if (rows.empty()) throw InputError("series csv: no data rows");
  std::vector<Date> raw_dates;
  raw_dates.reserve(rows.size());
  for (const auto& r : rows) raw_dates.push_back(parse_iso_date(r[1]));
  const auto dates = detail::calendar_of(raw_dates, f, "series csv");
  std::map<Date, std::size_t> date_index;
  for (std::size_t i = 0; i < dates.size(); ++i) date_index[dates[i]] = i;

  const std::size_t nb = h->n_bottom(), na = h->n_agg();
  MatrixD y(nb, dates.size(), 0.0);
  std::vector<char> seen(nb * dates.size(), 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& id = rows[i][0];
    if (!h->contains(id) || h->row_index(id) < na) throw InputError("series csv: unknown bottom series id '" + id + "'");
    const std::size_t b = h->row_index(id) - na, t = date_index.at(raw_dates[i]);
    if (seen[b * dates.size() + t]) throw InputError("series csv: duplicate cell (" + id + ", " + rows[i][1] + ")");
    seen[b * dates.size() + t] = 1;
    const double v = detail::parse_number(rows[i][2], "series csv (" + id + ", " + rows[i][1] + ")");
    if (v < 0.0) throw InputError("series csv: negative value at (" + id + ", " + rows[i][1] + ")");
    y(b, t) = v;
  }
  std::vector<std::string> missing;
  std::size_t n_missing = 0;
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t t = 0; t < dates.size(); ++t)
      if (!seen[b * dates.size() + t]) {
        if (missing.size() < 5) missing.push_back("(" + h->bottom_names()[b] + ", " + format_date(dates[t]) + ")");
        ++n_missing;
      }
  if (n_missing) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw InputError("series csv: unbalanced panel, " + std::to_string(n_missing) + " missing cells, first: " + list);
  }
  SeriesDataset ds;
  ds.hierarchy = std::move(h);
  ds.y = std::move(y);
  ds.start = dates.front();
  ds.frequency = f;
  ds.horizon = horizon;
  return ds;
}

inline SeriesDataset load_csv(const std::filesystem::path& path, std::shared_ptr<const HierarchyStructure> h, Frequency f,
                              std::size_t horizon) {
  return load_csv_text(io::read_text_file(path), std::move(h), f, horizon);
}

/// Long-format (series_id, date, feature, value) covariates; series_id
/// "__shared__" marks a shared feature. Every declared feature must cover
/// every panel date for every series it applies to.
inline void load_feature_csv_text(SeriesDataset& ds, const std::string& text) {
  const auto rows = detail::read_csv_records(text, {"series_id", "date", "feature", "value"}, "feature csv");
  const auto& h = *ds.hierarchy;
  std::map<std::string, std::size_t> bidx, sidx;
  for (const auto& r : rows) {
    if (r[0] == "__shared__") sidx.emplace(r[2], 0);
    else bidx.emplace(r[2], 0);
  }
  std::vector<std::string> bnames, snames;
  for (auto& [name, i] : bidx) {
    i = bnames.size();
    bnames.push_back(name);
  }
  for (auto& [name, i] : sidx) {
    i = snames.size();
    snames.push_back(name);
  }
  const std::size_t nt = ds.n_time(), nb = ds.n_bottom();
  std::vector<double> bvals(nb * bnames.size() * nt, 0.0), svals(snames.size() * nt, 0.0);
  std::vector<char> bseen(bvals.size(), 0), sseen(svals.size(), 0);
  std::map<Date, std::size_t> date_index;
  for (std::size_t i = 0; i < nt; ++i) date_index[ds.date_at(i)] = i;
  for (const auto& r : rows) {
    const auto found = date_index.find(parse_iso_date(r[1]));
    if (found == date_index.end()) continue;  // outside the panel calendar
    const std::size_t t = found->second;
    const double v = detail::parse_number(r[3], "feature csv (" + r[0] + ", " + r[1] + ", " + r[2] + ")");
    if (r[0] == "__shared__") {
      const std::size_t at = sidx.at(r[2]) * nt + t;
      svals[at] = v;
      sseen[at] = 1;
    } else {
      if (!h.contains(r[0]) || h.row_index(r[0]) < h.n_agg()) throw InputError("feature csv: unknown bottom series id '" + r[0] + "'");
      const std::size_t b = h.row_index(r[0]) - h.n_agg();
      const std::size_t at = (b * bnames.size() + bidx.at(r[2])) * nt + t;
      bvals[at] = v;
      bseen[at] = 1;
    }
  }
  for (std::size_t i = 0; i < sseen.size(); ++i)
    if (!sseen[i]) throw InputError("feature csv: shared feature '" + snames[i / nt] + "' missing at " + format_date(ds.date_at(i % nt)));
  for (std::size_t i = 0; i < bseen.size(); ++i)
    if (!bseen[i]) {
      const std::size_t b = i / (nt * bnames.size());
      throw InputError("feature csv: feature '" + bnames[(i / nt) % bnames.size()] + "' missing for series '" +
                       h.bottom_names()[b] + "' at " + format_date(ds.date_at(i % nt)));
    }
  ds.bottom_covariate_names = std::move(bnames);
  ds.bottom_covariates = std::move(bvals);
  ds.shared_covariate_names = std::move(snames);
  ds.shared_covariates = std::move(svals);
}

// ------------------------------------------------------------ preprocessing

enum class CountMode { round, scale_round };

/// Rounds targets to counts, optionally after multiplying by `scale`.
/// The factor is stored so forecasts can be mapped back with 1/scale.
inline SeriesDataset preprocess_counts(SeriesDataset ds, CountMode mode, double scale = 1.0) {
  if (mode == CountMode::scale_round && !(scale > 0.0 && std::isfinite(scale))) {
    throw InputError("preprocess: scale must be positive and finite");
  }
  const double c = mode == CountMode::scale_round ? scale : 1.0;
  for (auto& v : ds.y.data()) {
    if (v < 0.0) throw InputError("preprocess: negative target value");
    v = std::round(v * c);
  }
  ds.value_scale *= c;
  return ds;
}

// ------------------------------------------------------------ model inputs

/// Per stacked row: 1 + mean of the first `length` aggregated observations.
inline std::vector<double> series_scales(const SeriesDataset& ds, std::size_t length) {
  if (length == 0 || length > ds.n_time()) throw std::out_of_range("series_scales: bad length");
  const MatrixD full = aggregate_values(*ds.hierarchy, ds.y);
  std::vector<double> out(full.rows());
  for (std::size_t i = 0; i < full.rows(); ++i) {
    double s = 0.0;
    for (std::size_t t = 0; t < length; ++t) s += full(i, t);
    out[i] = 1.0 + s / static_cast<double>(length);
  }
  return out;
}

/// Model inputs over the first `history` steps of `ds`; `scales` holds one
/// normalizer per stacked row (see series_scales).
///   hist bottom: own scaled target
///   hist shared: scaled aggregate targets, calendar, shared covariates
///   fut bottom:  bottom covariates
///   fut shared:  calendar, shared covariates
///   static bottom: aggregate membership (columns of A)
inline FeatureBundle build_feature_bundle(const SeriesDataset& ds, std::size_t history, const std::vector<double>& scales) {
  const auto& h = *ds.hierarchy;
  if (history == 0 || history > ds.n_time()) throw std::out_of_range("feature bundle: history outside the panel");
  if (scales.size() != h.n_rows()) throw std::invalid_argument("feature bundle: one scale per stacked row required");
  const std::size_t nb = h.n_bottom(), na = h.n_agg(), hz = ds.horizon, tf = history + hz;
  const MatrixD full = aggregate_values(h, ds.y);
  const MatrixD cal = build_calendar_features(ds.frequency, ds.start, tf);
  const std::size_t nc = cal.rows(), fb_n = ds.bottom_covariate_names.size(), fs_n = ds.shared_covariate_names.size();

  FeatureBundle fb;
  fb.n_bottom = nb;
  fb.history = history;
  fb.horizon = hz;
  fb.static_bottom = MatrixD(nb, na);
  for (std::size_t a = 0; a < na; ++a)
    for (std::size_t b = 0; b < nb; ++b) fb.static_bottom(b, a) = h.agg_matrix()(a, b);

  fb.hist_bottom_channels = 1;
  fb.hist_bottom.resize(nb * history);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t t = 0; t < history; ++t) fb.hist_b(b, 0, t) = full(na + b, t) / scales[na + b];

  fb.hist_shared_channels = na + nc + fs_n;
  fb.hist_shared.resize(fb.hist_shared_channels * history);
  for (std::size_t t = 0; t < history; ++t) {
    for (std::size_t a = 0; a < na; ++a) fb.hist_s(a, t) = full(a, t) / scales[a];
    for (std::size_t c = 0; c < nc; ++c) fb.hist_s(na + c, t) = cal(c, t);
    for (std::size_t f = 0; f < fs_n; ++f) fb.hist_s(na + nc + f, t) = ds.shared_covariate(f, t);
  }

  fb.fut_bottom_channels = fb_n;
  fb.fut_bottom.resize(nb * fb_n * tf);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t f = 0; f < fb_n; ++f)
      for (std::size_t t = 0; t < tf; ++t) fb.fut_bottom[(b * fb_n + f) * tf + t] = ds.bottom_covariate(b, f, t);

  fb.fut_shared_channels = nc + fs_n;
  fb.fut_shared.resize(fb.fut_shared_channels * tf);
  for (std::size_t t = 0; t < tf; ++t) {
    for (std::size_t c = 0; c < nc; ++c) fb.fut_shared[c * tf + t] = cal(c, t);
    for (std::size_t f = 0; f < fs_n; ++f) fb.fut_shared[(nc + f) * tf + t] = ds.shared_covariate(f, t);
  }
  fb.validate();
  return fb;
}

// ------------------------------------------------------------ synthetic data

/// Poisson-mixture panel generator. Bottom b sits in group b % n_groups;
/// the hierarchy is total > groups > bottoms. Time is cut into h-step
/// windows aligned to the end of the panel and one component kappa is drawn
/// per window. Under component k the rate is
///   base_b * mult_{k, group(b)} * (1 + amp * sin(2 pi (t mod 7) / 7 + phase_b)) * u_{b, window}
/// with mult_{k,g} = exp(spread * r_k + jitter * z_{k,g}): the first half of
/// the components form a low regime (r = -1), the rest a high one (r = +1),
/// and z is standard normal. u is a mean-one lognormal factor of log-sd
/// `idiosyncratic` (u = 1 when idiosyncratic = 0, the exact mixture case).
struct SyntheticSpec {
  std::size_t n_bottom = 16;
  std::size_t n_groups = 4;
  std::size_t k_true = 4;
  std::size_t horizon = 7;
  std::size_t length = 400;
  std::vector<double> weights;  // empty: uniform
  double base_min = 5.0;
  double base_max = 20.0;
  double component_spread = 0.8;
  double component_jitter = 0.25;
  double seasonal_amplitude = 0.3;
  double idiosyncratic = 0.0;
  std::uint64_t seed = 1;
};

struct SyntheticTruth {
  std::vector<double> weights;
  std::vector<double> base;        // N_b
  std::vector<double> phase;       // N_b
  MatrixD multiplier;              // K x G
  std::vector<std::size_t> group;  // N_b
  std::vector<std::size_t> window_component;  // per time step
  double seasonal_amplitude = 0.0;

  double rate(std::size_t b, std::size_t k, std::size_t t) const {
    const double season = 1.0 + seasonal_amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t % 7) / 7.0 + phase[b]);
    return base[b] * multiplier(k, group[b]) * season;
  }

  /// Generative mixture for the window t0 .. t0 + h - 1 (idiosyncratic factor marginalised to its mean).
  PoissonMixtureForecast forecast_at(std::size_t t0, std::size_t h) const {
    const std::size_t nb = base.size(), nk = weights.size();
    std::vector<double> r(nb * nk * h);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t k = 0; k < nk; ++k)
        for (std::size_t t = 0; t < h; ++t) r[(b * nk + k) * h + t] = rate(b, k, t0 + t);
    return PoissonMixtureForecast(weights, nb, h, std::move(r));
  }
};

struct SyntheticData {
  SeriesDataset dataset;
  SyntheticTruth truth;
};

inline std::shared_ptr<const HierarchyStructure> grouped_hierarchy(std::size_t n_bottom, std::size_t n_groups) {
  if (n_groups == 0 || n_groups > n_bottom) throw std::invalid_argument("grouped hierarchy: need 1 <= groups <= bottoms");
  std::vector<std::string> bottom, agg{"total"};
  for (std::size_t b = 0; b < n_bottom; ++b) bottom.push_back("s" + std::to_string(b));
  for (std::size_t g = 0; g < n_groups; ++g) agg.push_back("g" + std::to_string(g));
  MatrixI a(1 + n_groups, n_bottom);
  for (std::size_t b = 0; b < n_bottom; ++b) {
    a(0, b) = 1;
    a(1 + b % n_groups, b) = 1;
  }
  std::vector<Level> levels{{"total", {0}}, {"group", {}}, {"bottom", {}}};
  for (std::size_t g = 0; g < n_groups; ++g) levels[1].rows.push_back(1 + g);
  for (std::size_t b = 0; b < n_bottom; ++b) levels[2].rows.push_back(1 + n_groups + b);
  return std::make_shared<const HierarchyStructure>(bottom, agg, a, levels);
}

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.k_true == 0 || spec.horizon == 0 || spec.length == 0) throw std::invalid_argument("synthetic: sizes must be >= 1");
  if (!(spec.base_min > 0.0) || spec.base_max < spec.base_min) throw std::invalid_argument("synthetic: need 0 < base_min <= base_max");
  std::mt19937_64 rng(spec.seed);
  SyntheticTruth tr;
  tr.weights = spec.weights.empty() ? std::vector<double>(spec.k_true, 1.0 / static_cast<double>(spec.k_true)) : spec.weights;
  if (tr.weights.size() != spec.k_true) throw std::invalid_argument("synthetic: weights length must equal k_true");
  tr.seasonal_amplitude = spec.seasonal_amplitude;
  std::uniform_real_distribution<double> ubase(spec.base_min, spec.base_max), uphase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> z(0.0, 1.0);
  for (std::size_t b = 0; b < spec.n_bottom; ++b) {
    tr.base.push_back(ubase(rng));
    tr.phase.push_back(uphase(rng));
    tr.group.push_back(b % spec.n_groups);
  }
  tr.multiplier = MatrixD(spec.k_true, spec.n_groups, 1.0);
  if (spec.k_true > 1)
    for (std::size_t k = 0; k < spec.k_true; ++k) {
      const double regime = 2 * k < spec.k_true ? -1.0 : 1.0;
      for (std::size_t g = 0; g < spec.n_groups; ++g)
        tr.multiplier(k, g) = std::exp(spec.component_spread * regime + spec.component_jitter * z(rng));
    }

  const std::size_t T = spec.length, h = spec.horizon;
  const std::size_t n_windows = (T + h - 1) / h;
  std::discrete_distribution<std::size_t> pick(tr.weights.begin(), tr.weights.end());
  std::vector<std::size_t> comp(n_windows);
  for (auto& c : comp) c = pick(rng);
  MatrixD idio(spec.n_bottom, n_windows, 1.0);
  if (spec.idiosyncratic > 0.0) {
    const double s = spec.idiosyncratic;
    for (auto& u : idio.data()) u = std::exp(s * z(rng) - 0.5 * s * s);
  }
  tr.window_component.resize(T);
  SeriesDataset ds;
  ds.hierarchy = grouped_hierarchy(spec.n_bottom, spec.n_groups);
  ds.y = MatrixD(spec.n_bottom, T);
  ds.start = Date(std::chrono::year{2021} / std::chrono::January / std::chrono::day{4});  // a Monday
  ds.frequency = Frequency::daily;
  ds.horizon = h;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t w = (T - 1 - t) / h;  // 0 = last window
    tr.window_component[t] = comp[w];
    for (std::size_t b = 0; b < spec.n_bottom; ++b) {
      std::poisson_distribution<long> pois(tr.rate(b, comp[w], t) * idio(b, w));
      ds.y(b, t) = static_cast<double>(pois(rng));
    }
  }
  return {std::move(ds), std::move(tr)};
}

}  // namespace dpmn
