#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dpmn/data.hpp"
#include "test_support.hpp"

using namespace dpmn;

namespace {

std::shared_ptr<const HierarchyStructure> toy() { return std::make_shared<const HierarchyStructure>(fixtures::toy_hierarchy()); }

std::string toy_csv(std::size_t days, bool drop_one = false) {
  std::ostringstream os;
  os << "series_id,date,value\n";
  const Date start = parse_iso_date("2022-03-01");
  for (std::size_t t = 0; t < days; ++t)
    for (int b = 1; b <= 4; ++b) {
      if (drop_one && t == 3 && b == 2) continue;
      os << "b" << b << "," << format_date(start + std::chrono::days(t)) << "," << (b * 10 + t % 5) << "\n";
    }
  return os.str();
}

}  // namespace

TEST(Dates, ParseAndFormatRoundTrip) {
  EXPECT_EQ(format_date(parse_iso_date("2024-02-29")), "2024-02-29");
  EXPECT_THROW(parse_iso_date("2023-02-29"), InputError);
  EXPECT_THROW(parse_iso_date("2023/01/01"), InputError);
  EXPECT_THROW(parse_iso_date("2023-01-01T00"), InputError);
  EXPECT_EQ(format_date(advance(parse_iso_date("2023-01-31"), Frequency::daily, 1)), "2023-02-01");
  EXPECT_EQ(format_date(advance(parse_iso_date("2023-01-01"), Frequency::monthly, 13)), "2024-02-01");
}

TEST(LoadCsv, ToyFileMatchesPanel) {
  const auto ds = load_csv_text(toy_csv(20), toy(), Frequency::daily, 3);
  ASSERT_EQ(ds.n_bottom(), 4u);
  ASSERT_EQ(ds.n_time(), 20u);
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t t = 0; t < 20; ++t) EXPECT_EQ(ds.y(b, t), static_cast<double>((b + 1) * 10 + t % 5));
  EXPECT_EQ(format_date(ds.start), "2022-03-01");
}

TEST(LoadCsv, RowOrderDoesNotMatter) {
  std::istringstream in(toy_csv(6));
  std::string header, line;
  std::getline(in, header);
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  std::reverse(lines.begin(), lines.end());
  std::string text = header + "\n";
  for (const auto& l : lines) text += l + "\n";
  EXPECT_EQ(load_csv_text(text, toy(), Frequency::daily, 1).y, load_csv_text(toy_csv(6), toy(), Frequency::daily, 1).y);
}

TEST(LoadCsv, MissingCellIsReported) {
  try {
    load_csv_text(toy_csv(10, true), toy(), Frequency::daily, 2);
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("(b2, 2022-03-04)"), std::string::npos) << e.what();
  }
}

TEST(LoadCsv, UnknownSeriesAndNegativeValuesRejected) {
  EXPECT_THROW(load_csv_text("series_id,date,value\nzz,2020-01-01,1\n", toy(), Frequency::daily, 1), InputError);
  EXPECT_THROW(load_csv_text("series_id,date,value\ntotal,2020-01-01,1\n", toy(), Frequency::daily, 1), InputError);
  std::string neg = toy_csv(3);
  neg.replace(neg.find("b1,2022-03-01,10"), 16, "b1,2022-03-01,-1");
  EXPECT_THROW(load_csv_text(neg, toy(), Frequency::daily, 1), InputError);
  EXPECT_THROW(load_csv_text("id,date,value\n", toy(), Frequency::daily, 1), InputError);
}

TEST(LoadCsv, CalendarGapRejected) {
  std::string text = "series_id,date,value\n";
  for (int b = 1; b <= 4; ++b) text += "b" + std::to_string(b) + ",2020-01-01,1\nb" + std::to_string(b) + ",2020-01-03,1\n";
  EXPECT_THROW(load_csv_text(text, toy(), Frequency::daily, 1), InputError);
}

TEST(LoadCsv, TourismShapedFileAggregatesTo555Rows) {
  const auto h = std::make_shared<const HierarchyStructure>(parse_hierarchy_spec(fixtures::tourism_like_spec()));
  std::ostringstream os;
  os << "series_id,date,value\n";
  const Date start = parse_iso_date("1998-01-01");
  for (const auto& name : h->bottom_names())
    for (int m = 0; m < 12; ++m) os << name << "," << format_date(advance(start, Frequency::monthly, m)) << "," << m % 3 << "\n";
  const auto ds = load_csv_text(os.str(), h, Frequency::monthly, 3);
  EXPECT_EQ(ds.n_bottom(), 304u);
  EXPECT_EQ(aggregate_values(*ds.hierarchy, ds.y).rows(), 555u);
  std::size_t geo = 0;
  for (const char* lv : {"total", "state", "zone", "region"}) geo += h->level(lv).rows.size();
  EXPECT_EQ(geo, 111u);
  EXPECT_EQ(555u - geo, 444u);
}

TEST(Partition, HundredStepsHorizonSeven) {
  const auto p = partition(100, 7);
  // 1-based [1..86], [87..93], [94..100]
  EXPECT_EQ(p.train.begin + 1, 1u);
  EXPECT_EQ(p.train.end, 86u);
  EXPECT_EQ(p.val.begin + 1, 87u);
  EXPECT_EQ(p.val.end, 93u);
  EXPECT_EQ(p.test.begin + 1, 94u);
  EXPECT_EQ(p.test.end, 100u);
}

TEST(Partition, BoundaryAndTooShort) {
  EXPECT_EQ(partition(15, 7).train.size(), 1u);
  EXPECT_THROW(partition(14, 7), InputError);
  EXPECT_THROW(partition(10, 0), InputError);
}

TEST(Partition, FavoritaHorizonValidationIsThe34StepsBeforeTest) {
  const auto p = partition(300, 34);
  EXPECT_EQ(p.val.size(), 34u);
  EXPECT_EQ(p.val.end, p.test.begin);
  EXPECT_EQ(p.test.size(), 34u);
}

TEST(Partition, WindowsDisjointAndCovering) {
  for (std::size_t n : {5u, 30u, 101u})
    for (std::size_t h : {1u, 2u}) {
      if (n <= 2 * h) continue;
      const auto p = partition(n, h);
      EXPECT_EQ(p.train.begin, 0u);
      EXPECT_EQ(p.train.end, p.val.begin);
      EXPECT_EQ(p.val.end, p.test.begin);
      EXPECT_EQ(p.test.end, n);
    }
}

TEST(Calendar, ChannelCountsAndOneHot) {
  const Date d0 = parse_iso_date("2023-01-02");  // Monday
  const auto daily = build_calendar_features(Frequency::daily, d0, 30);
  const auto monthly = build_calendar_features(Frequency::monthly, d0, 30);
  const auto weekly = build_calendar_features(Frequency::weekly, d0, 30);
  EXPECT_EQ(daily.rows(), 7u);
  EXPECT_EQ(monthly.rows(), 12u);
  EXPECT_EQ(weekly.rows(), 12u);
  for (const auto* m : {&daily, &monthly, &weekly})
    for (std::size_t t = 0; t < 30; ++t) {
      double s = 0.0;
      for (std::size_t c = 0; c < m->rows(); ++c) s += (*m)(c, t);
      EXPECT_EQ(s, 1.0);
    }
  EXPECT_EQ(daily(0, 0), 1.0);  // Monday
  EXPECT_EQ(daily(6, 6), 1.0);  // Sunday
  EXPECT_EQ(monthly(0, 0), 1.0);
  EXPECT_EQ(monthly(1, 1), 1.0);
  EXPECT_THROW(parse_frequency("hourly"), InputError);
}

TEST(Preprocess, RoundingModes) {
  auto ds = load_csv_text(toy_csv(5), toy(), Frequency::daily, 1);
  EXPECT_EQ(preprocess_counts(ds, CountMode::round).y, ds.y);
  ds.y(0, 0) = 0.4;
  ds.y(1, 0) = 2.6;
  const auto r = preprocess_counts(ds, CountMode::round);
  EXPECT_EQ(r.y(0, 0), 0.0);
  EXPECT_EQ(r.y(1, 0), 3.0);
  ds.y(2, 0) = -0.1;
  EXPECT_THROW(preprocess_counts(ds, CountMode::round), InputError);
}

TEST(Preprocess, ScaleRoundTripWithinHalfStep) {
  auto ds = load_csv_text(toy_csv(5), toy(), Frequency::daily, 1);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : ds.y.data()) v = u(rng);
  const auto orig = ds.y;
  const auto s = preprocess_counts(ds, CountMode::scale_round, 100.0);
  EXPECT_EQ(s.value_scale, 100.0);
  for (std::size_t i = 0; i < orig.data().size(); ++i) {
    EXPECT_EQ(s.y.data()[i], std::floor(s.y.data()[i]));
    EXPECT_LE(std::abs(s.y.data()[i] / s.value_scale - orig.data()[i]), 0.005 + 1e-12);
  }
}

TEST(Features, AggregateHistoryEqualsSummationOfBottomHistory) {
  const auto ds = load_csv_text(toy_csv(12), toy(), Frequency::daily, 2);
  const std::vector<double> ones(7, 1.0);
  const auto fb = build_feature_bundle(ds, 10, ones);
  const auto full = aggregate_values(*ds.hierarchy, ds.y);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t t = 0; t < 10; ++t) EXPECT_EQ(fb.hist_shared[a * 10 + t], full(a, t));
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t t = 0; t < 10; ++t) EXPECT_EQ(fb.hist_bottom[b * 10 + t], ds.y(b, t));
  EXPECT_EQ(fb.hist_shared_channels, 3u + 7u);
  EXPECT_EQ(fb.fut_shared_channels, 7u);
  EXPECT_EQ(fb.fut_bottom_channels, 0u);
  EXPECT_EQ(fb.static_bottom(0, 0), 1.0);
  EXPECT_EQ(fb.static_bottom(0, 1), 1.0);
  EXPECT_EQ(fb.static_bottom(0, 2), 0.0);
}

TEST(Features, ScalesAreOnePlusTrainMean) {
  const auto ds = load_csv_text(toy_csv(10), toy(), Frequency::daily, 2);
  const auto s = series_scales(ds, 5);
  // b1 over t = 0..4: 10, 11, 12, 13, 14
  EXPECT_DOUBLE_EQ(s[3], 13.0);
  EXPECT_DOUBLE_EQ(s[0], 1.0 + (12.0 + 22.0 + 32.0 + 42.0));
}

TEST(FeatureCsv, CovariatesLoadAndExtendPastPanel) {
  auto ds = load_csv_text(toy_csv(4), toy(), Frequency::daily, 2);
  std::string text = "series_id,date,feature,value\n";
  for (int t = 0; t < 4; ++t) {
    const auto d = format_date(ds.date_at(t));
    text += "__shared__," + d + ",promo," + std::to_string(t) + "\n";
    for (int b = 1; b <= 4; ++b) text += "b" + std::to_string(b) + "," + d + ",price," + std::to_string(b + t) + "\n";
  }
  load_feature_csv_text(ds, text);
  ASSERT_EQ(ds.shared_covariate_names, std::vector<std::string>{"promo"});
  ASSERT_EQ(ds.bottom_covariate_names, std::vector<std::string>{"price"});
  EXPECT_EQ(ds.shared_covariate(0, 2), 2.0);
  EXPECT_EQ(ds.shared_covariate(0, 5), 3.0);
  EXPECT_EQ(ds.bottom_covariate(2, 0, 1), 4.0);
  const auto fb = build_feature_bundle(ds, 4, std::vector<double>(7, 1.0));
  EXPECT_EQ(fb.fut_bottom_channels, 1u);
  EXPECT_EQ(fb.fut_shared_channels, 8u);
  EXPECT_EQ(fb.fut_s(7, 5), 3.0);

  auto broken = load_csv_text(toy_csv(4), toy(), Frequency::daily, 2);
  EXPECT_THROW(load_feature_csv_text(broken, "series_id,date,feature,value\n__shared__,2022-03-01,promo,1\n"), InputError);
}

TEST(Dataset, WindowSlicesPanelAndCovariates) {
  auto ds = load_csv_text(toy_csv(6), toy(), Frequency::daily, 2);
  std::string text = "series_id,date,feature,value\n";
  for (int t = 0; t < 6; ++t) {
    const auto d = format_date(ds.date_at(t));
    text += "__shared__," + d + ",promo," + std::to_string(t) + "\n";
    for (int b = 1; b <= 4; ++b) text += "b" + std::to_string(b) + "," + d + ",price," + std::to_string(10 * b + t) + "\n";
  }
  load_feature_csv_text(ds, text);
  const auto w = ds.window(2, 5);
  ASSERT_EQ(w.n_time(), 3u);
  EXPECT_EQ(w.start, ds.date_at(2));
  for (std::size_t b = 0; b < ds.n_bottom(); ++b)
    for (std::size_t t = 0; t < 3; ++t) {
      EXPECT_EQ(w.y(b, t), ds.y(b, t + 2));
      EXPECT_EQ(w.bottom_covariate(b, 0, t), ds.bottom_covariate(b, 0, t + 2));
    }
  EXPECT_EQ(w.shared_covariate(0, 0), 2.0);
  EXPECT_EQ(w.shared_covariate(0, 9), 4.0);
  EXPECT_EQ(ds.head(4).y(3, 3), ds.y(3, 3));
  EXPECT_THROW(ds.window(3, 3), std::out_of_range);
  EXPECT_THROW(ds.window(0, 7), std::out_of_range);
}

TEST(Synthetic, SingleComponentIsPlainPoisson) {
  SyntheticSpec spec;
  spec.k_true = 1;
  spec.n_bottom = 4;
  spec.n_groups = 2;
  spec.length = 50;
  const auto s = generate_synthetic(spec);
  EXPECT_EQ(s.truth.weights, std::vector<double>{1.0});
  for (std::size_t g = 0; g < 2; ++g) EXPECT_EQ(s.truth.multiplier(0, g), 1.0);
  for (auto c : s.truth.window_component) EXPECT_EQ(c, 0u);
}

TEST(Synthetic, SeededDeterminism) {
  SyntheticSpec spec;
  spec.length = 60;
  EXPECT_EQ(generate_synthetic(spec).dataset.y, generate_synthetic(spec).dataset.y);
  auto other = spec;
  other.seed = 2;
  EXPECT_FALSE(generate_synthetic(other).dataset.y == generate_synthetic(spec).dataset.y);
}

TEST(Synthetic, WindowsAlignToPanelEnd) {
  SyntheticSpec spec;
  spec.length = 45;
  spec.horizon = 7;
  const auto s = generate_synthetic(spec);
  for (std::size_t t = 45 - 7; t < 45; ++t) EXPECT_EQ(s.truth.window_component[t], s.truth.window_component[44]);
  for (std::size_t t = 45 - 14; t < 45 - 7; ++t) EXPECT_EQ(s.truth.window_component[t], s.truth.window_component[38]);
}

TEST(Synthetic, EmpiricalMeanMatchesMixtureMean) {
  SyntheticSpec spec;
  spec.n_bottom = 3;
  spec.n_groups = 1;
  spec.length = 7000;
  spec.horizon = 7;
  spec.seed = 11;
  const auto s = generate_synthetic(spec);
  for (std::size_t b = 0; b < 3; ++b) {
    // expected per-step mean and variance over the weekly cycle
    double mean = 0.0, m2 = 0.0;
    for (std::size_t t = 0; t < 7; ++t) {
      const auto f = s.truth.forecast_at(t, 1);
      const auto m = bottom_marginal(f, b, 0);
      mean += m.mean() / 7.0;
      m2 += (m.variance() + m.mean() * m.mean()) / 7.0;
    }
    const double var = m2 - mean * mean;
    double emp = 0.0;
    for (std::size_t t = 0; t < 7000; ++t) emp += s.dataset.y(b, t);
    emp /= 7000.0;
    // windows (not steps) are independent: 1000 windows of 7 steps
    const double se = std::sqrt(var * 7.0 / 7000.0);
    EXPECT_NEAR(emp, mean, 4.0 * se) << "series " << b;
  }
}

TEST(Synthetic, EmpiricalCovarianceMatchesMixtureFormula) {
  SyntheticSpec spec;
  spec.n_bottom = 2;
  spec.n_groups = 1;
  spec.length = 1;
  spec.horizon = 1;
  spec.seasonal_amplitude = 0.0;
  spec.seed = 5;
  const auto truth = generate_synthetic(spec).truth;
  const auto f = truth.forecast_at(0, 1);
  const double analytic = covariance(f, 0, 0, 1, 0);
  const std::size_t n = 40000;
  // one draw per window: regenerate with one-step windows
  spec.length = n;
  const auto big = generate_synthetic(spec);
  ASSERT_EQ(big.truth.multiplier, truth.multiplier);
  double m0 = 0.0, m1 = 0.0, c = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    m0 += big.dataset.y(0, t);
    m1 += big.dataset.y(1, t);
  }
  m0 /= n;
  m1 /= n;
  double v0 = 0.0, v1 = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double a = big.dataset.y(0, t) - m0, b = big.dataset.y(1, t) - m1;
    c += a * b;
    v0 += a * a;
    v1 += b * b;
  }
  c /= n - 1;
  v0 /= n - 1;
  v1 /= n - 1;
  // standard error of a sample covariance, sqrt((var0 var1 + cov^2) / n) under near-normality
  const double se = std::sqrt((v0 * v1 + c * c) / n);
  EXPECT_NEAR(c, analytic, 3.0 * se);
}
