// One PASS/FAIL line per acceptance criterion. Exit status is nonzero when
// any criterion fails. Pass criterion numbers as arguments to run a subset.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dpmn/cli.hpp"
#include "test_support.hpp"

using namespace dpmn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

HierarchyStructure total_over(std::size_t nb) {
  std::vector<std::string> bottom;
  std::vector<Level> levels{{"total", {0}}, {"bottom", {}}};
  for (std::size_t b = 0; b < nb; ++b) {
    bottom.push_back("b" + std::to_string(b));
    levels[1].rows.push_back(1 + b);
  }
  return HierarchyStructure(bottom, {"total"}, MatrixI(1, nb, 1), levels);
}

/// Smallest count whose Poisson upper tail is below tol.
int cap_for(double lambda, double tol) {
  double p = std::exp(-lambda), c = p;
  int y = 0;
  while (1.0 - c > tol) {
    ++y;
    p *= lambda / y;
    c += p;
  }
  return y;
}

Outcome coherence() {
  const auto h = fixtures::random_three_level(8, 3, 101);
  std::mt19937_64 rng(102);
  const auto f = fixtures::random_forecast(8, 5, 4, 25.0, rng);
  const auto s = sample_coherent(f, h, 10000, 103);
  double worst = 0.0;
  for (std::size_t i = 0; i < s.n_samples; ++i) {
    // rebuild every aggregate directly from A
    for (std::size_t a = 0; a < h.n_agg(); ++a)
      for (std::size_t t = 0; t < s.horizon; ++t) {
        std::int64_t sum = 0;
        for (std::size_t b = 0; b < h.n_bottom(); ++b)
          if (h.agg_matrix()(a, b)) sum += s(i, h.n_agg() + b, t);
        worst = std::max(worst, std::abs(static_cast<double>(sum - s(i, a, t))));
      }
    worst = std::max(worst, coherence_residual(h, s.panel(i)));
  }
  return {worst == 0.0, "max residual " + num(worst) + " over 10^4 samples, N_b=8, K=5"};
}

Outcome aggregate_marginal() {
  std::mt19937_64 rng(201);
  double worst = 0.0;
  int cases = 0;
  for (std::size_t nb : {2, 3})
    for (std::size_t k : {1, 2, 3})
      for (int rep = 0; rep < 4; ++rep) {
        const auto f = fixtures::random_forecast(nb, k, 1, 5.0, rng);
        int cap = 0;
        for (std::size_t b = 0; b < nb; ++b)
          for (std::size_t c = 0; c < k; ++c) cap = std::max(cap, cap_for(f.rate(b, c, 0), 1e-12));
        std::vector<std::size_t> members(nb);
        for (std::size_t b = 0; b < nb; ++b) members[b] = b;
        const auto brute = fixtures::brute_force_sum_pmf(f, members, 0, cap);
        const auto m = bottom_marginal(aggregate_rates(f, total_over(nb)), 0, 0);
        for (int y = 0; y <= cap; ++y) worst = std::max(worst, std::abs(marginal_pmf(m, y) - brute[y]));
        ++cases;
      }
  return {worst <= 1e-9, "max |pmf - convolution| " + num(worst) + " over " + std::to_string(cases) + " mixtures"};
}

Outcome covariance_check() {
  std::mt19937_64 rng(301);
  // two series over two steps: four coordinates enumerated jointly
  const auto f = fixtures::random_forecast(2, 3, 2, 3.0, rng);
  const int cap = 30;
  double exact_worst = 0.0;
  Eigen::Matrix4d e_xy = Eigen::Matrix4d::Zero();
  Eigen::Vector4d e_x = Eigen::Vector4d::Zero();
  for (std::size_t k = 0; k < f.n_components(); ++k) {
    std::array<std::vector<double>, 4> p;
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y <= cap; ++y) p[c].push_back(fixtures::poisson_pmf_direct(y, f.rate(c / 2, k, c % 2)));
    for (int a = 0; a <= cap; ++a)
      for (int b = 0; b <= cap; ++b)
        for (int c = 0; c <= cap; ++c)
          for (int d = 0; d <= cap; ++d) {
            const double pr = f.weights()[k] * p[0][a] * p[1][b] * p[2][c] * p[3][d];
            const Eigen::Vector4d v(a, b, c, d);
            e_x += pr * v;
            e_xy += pr * v * v.transpose();
          }
  }
  const Eigen::Matrix4d cov = e_xy - e_x * e_x.transpose();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      exact_worst = std::max(exact_worst, std::abs(covariance(f, i / 2, i % 2, j / 2, j % 2) - cov(i, j)));

  const std::size_t n = 1000000;
  const auto s = sample_coherent(f, total_over(2), n, 302);
  double worst_z = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) {
      double mi = 0.0, mj = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        mi += static_cast<double>(s(r, 1 + i / 2, i % 2));
        mj += static_cast<double>(s(r, 1 + j / 2, j % 2));
      }
      mi /= n;
      mj /= n;
      double c = 0.0, c2 = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const double prod = (static_cast<double>(s(r, 1 + i / 2, i % 2)) - mi) * (static_cast<double>(s(r, 1 + j / 2, j % 2)) - mj);
        c += prod;
        c2 += prod * prod;
      }
      c /= n;
      const double se = std::sqrt((c2 / n - c * c) / n);
      worst_z = std::max(worst_z, std::abs(c - covariance(f, i / 2, i % 2, j / 2, j % 2)) / se);
    }
  return {exact_worst <= 1e-9 && worst_z <= 3.0,
          "enumeration max error " + num(exact_worst) + ", Monte Carlo n=10^6 worst |z| " + num(worst_z)};
}

Outcome rank_bound() {
  std::mt19937_64 rng(401);
  std::uniform_int_distribution<std::size_t> uk(2, 6), un(4, 12);
  int violations = 0, disagreements = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t k = uk(rng), nb = un(rng);
    const auto f = fixtures::random_forecast(nb, k, 1, 10.0, rng);
    const auto r = covariance_matrix_nondiag_rank(f, 0);
    // independent rank: SVD of the weighted centred rate matrix
    Eigen::MatrixXd c(nb, k);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t j = 0; j < k; ++j) c(b, j) = std::sqrt(f.weights()[j]) * (f.rate(b, j, 0) - f.mean(b, 0));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(c);
    svd.setThreshold(1e-6);
    if (r > k - 1) ++violations;
    if (static_cast<std::size_t>(svd.rank()) != r) ++disagreements;
  }
  return {violations == 0 && disagreements == 0,
          std::to_string(violations) + " of 100 mixtures above K-1, " + std::to_string(disagreements) + " disagree with SVD rank"};
}

Outcome gradients() {
  const auto r = verify::gradients(501);
  return {r.passed, "max relative error " + num(r.statistic) + " (" + r.detail + "), softplus activation"};
}

Outcome objective_equivalence() {
  std::mt19937_64 rng(601);
  std::uniform_int_distribution<std::size_t> uk(1, 6), un(2, 7), uh(1, 4);
  double worst = 0.0, oracle = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t nb = un(rng), k = uk(rng), hz = uh(rng);
    const auto f = fixtures::random_forecast(nb, k, hz, 9.0, rng);
    MatrixD y(nb, hz);
    std::vector<double> yv;
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t t = 0; t < hz; ++t) yv.push_back(y(b, t) = std::poisson_distribution<int>(f.mean(b, t))(rng));
    // joint and NaiveBU spelled out from the pmf
    double joint = 0.0, naive = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      double p = f.weights()[c];
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t t = 0; t < hz; ++t) p *= fixtures::poisson_pmf_direct(static_cast<int>(y(b, t)), f.rate(b, c, t));
      joint += p;
    }
    for (std::size_t b = 0; b < nb; ++b) {
      double p = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        double q = f.weights()[c];
        for (std::size_t t = 0; t < hz; ++t) q *= fixtures::poisson_pmf_direct(static_cast<int>(y(b, t)), f.rate(b, c, t));
        p += q;
      }
      naive -= std::log(p);
    }
    const double whole = nll_groupbu(f, y, GroupingScheme::whole(nb));
    const double single = nll_groupbu(f, y, GroupingScheme::singletons(nb));
    const auto rates = ag::Tensor::constant({1, nb, k, hz}, f.rates());
    const auto w = ag::Tensor::constant({1, k}, f.weights());
    const double whole_t = composite_nll(rates, w, yv, GroupingScheme::whole(nb)).item();
    const double single_t = composite_nll(rates, w, yv, GroupingScheme::singletons(nb)).item();
    worst = std::max({worst, std::abs(whole - nll_joint(f, y)), std::abs(single - nll_naivebu(f, y)),
                      std::abs(whole_t - nll_joint(f, y)), std::abs(single_t - nll_naivebu(f, y))});
    oracle = std::max({oracle, std::abs(whole + std::log(joint)) / std::abs(whole), std::abs(single - naive) / std::abs(naive)});
  }
  return {worst <= 1e-10 && oracle <= 1e-9,
          "max |difference| " + num(worst) + " over 50 random instances, relative gap to direct pmf products " + num(oracle)};
}

const fs::path kConfigs = fs::path(DPMN_SOURCE_DIR) / "configs";

Outcome recovery() {
  const auto cfg = cli::load_run_config(kConfigs / "synthetic_ablation.json");
  const auto rows = cli::run_ablation(cfg, {}, {1, 4}, {1, 2, 3, 4, 5});
  int wins = 0;
  std::ostringstream os;
  for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
    const bool win = rows[i + 1].test_scrps < rows[i].test_scrps;
    wins += win;
    os << (i ? "; " : "") << "seed " << rows[i].seed << " " << num(rows[i + 1].test_scrps) << (win ? " < " : " >= ")
       << num(rows[i].test_scrps);
  }
  return {wins >= 4, std::to_string(wins) + "/5 seeds K=4 beats K=1 (" + os.str() + ")"};
}

/// Mean over the horizon of the top-level 98% interval width on the test window.
double top_width(const Pipeline& p, const SeriesDataset& ds) {
  QuantileGrid g{{0.01, 0.99}};
  const auto rep = test_report(p, ds, g);
  double w = 0.0;
  for (std::size_t t = 0; t < ds.horizon; ++t) w += rep.quantile(0, t, 1) - rep.quantile(0, t, 0);
  return w / static_cast<double>(ds.horizon);
}

Outcome sharpness() {
  const auto cfg = cli::load_run_config(kConfigs / "synthetic_ablation.json");
  double naive = 0.0, group = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    cli::Overrides ov;
    ov.seed = seed;
    auto w = cli::load_workspace(cfg, ov, seed);
    w.config.model.n_components = 4;
    auto tc = w.train;
    tc.objective = Objective::naive_bu;
    naive += top_width(run_pipeline(w.config.model, w.data, tc), w.data) / 5.0;
    tc.objective = Objective::group_bu;
    group += top_width(run_pipeline(w.config.model, w.data, tc), w.data) / 5.0;
  }
  return {naive > group, "mean top-level 98% width NaiveBU " + num(naive) + " vs GroupBU " + num(group)};
}

Outcome metric_identities() {
  std::mt19937_64 rng(901);
  double ql_worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const auto f = fixtures::random_forecast(1, 3, 1, 40.0, rng);
    const auto m = bottom_marginal(f, 0, 0);
    const double med = static_cast<double>(marginal_quantile(m, 0.5));
    const double y = std::poisson_distribution<int>(f.mean(0, 0))(rng);
    ql_worst = std::max(ql_worst, std::abs(quantile_loss(med, y, 0.5) - 0.5 * std::abs(y - med)));
  }

  // sCRPS of scaled quantiles against scaled actuals
  const auto grid = QuantileGrid::uniform(19);
  const std::size_t n = 5, hz = 4;
  std::vector<std::vector<std::vector<double>>> q(n, std::vector<std::vector<double>>(hz)), qs = q;
  MatrixD act(n, hz), acts(n, hz);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < hz; ++t) {
      const auto f = fixtures::random_forecast(1, 2, 1, 30.0, rng);
      q[i][t] = marginal_quantiles(bottom_marginal(f, 0, 0), grid);
      for (double v : q[i][t]) qs[i][t].push_back(7.3 * v);
      act(i, t) = std::poisson_distribution<int>(15)(rng);
      acts(i, t) = 7.3 * act(i, t);
    }
  const double a = *scrps_level(q, act, grid), b = *scrps_level(qs, acts, grid);
  const double scale_err = std::abs(a - b);

  // naive1 scored against itself as the scaling forecast
  std::vector<double> history, actual;
  for (int t = 0; t < 30; ++t) history.push_back(t % 2 ? 13.0 : 10.0);
  for (int t = 0; t < 6; ++t) actual.push_back(std::poisson_distribution<int>(12)(rng));
  const auto nf = naive1(history, 6);
  const auto m = msse(actual, nf, nf);
  const bool msse_ok = m && *m == 1.0;
  return {ql_worst == 0.0 && scale_err <= 1e-12 && msse_ok,
          "QL(0.5) gap " + num(ql_worst) + ", sCRPS scale gap " + num(scale_err) + ", MSSE(naive1) " + (m ? io::fmt(*m) : "NA")};
}

Outcome determinism() {
  const fs::path base = fs::temp_directory_path() / "dpmn_acceptance_determinism";
  fs::remove_all(base);
  std::ostringstream sink;
  std::string bytes[2][2];
  for (int run = 0; run < 2; ++run) {
    cli::Overrides ov;
    ov.output_dir = base / ("run" + std::to_string(run));
    cli::cmd_train(kConfigs / "toy.json", ov, sink);
    bytes[run][0] = io::read_text_file(ov.output_dir / "checkpoint.bin");
    bytes[run][1] = io::read_text_file(ov.output_dir / "train_log.jsonl");
  }
  const bool same = bytes[0][0] == bytes[1][0] && bytes[0][1] == bytes[1][1];
  return {same && !bytes[0][0].empty(), std::string("checkpoint ") + (bytes[0][0] == bytes[1][0] ? "identical" : "differs") + " (" +
                                            std::to_string(bytes[0][0].size()) + " bytes), log " +
                                            (bytes[0][1] == bytes[1][1] ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::tuple<int, const char*, double, std::function<Outcome()>>> criteria{
      {1, "coherence by construction", 5, coherence},
      {2, "aggregate marginal matches convolution", 30, aggregate_marginal},
      {3, "covariance formula", 60, covariance_check},
      {4, "dispersion rank bound", 0, rank_bound},
      {5, "gradient correctness", 60, gradients},
      {6, "objective equivalences", 0, objective_equivalence},
      {7, "mixture recovery K=4 vs K=1", 900, recovery},
      {8, "NaiveBU wider than GroupBU at the top", 0, sharpness},
      {9, "metric identities", 0, metric_identities},
      {10, "bit-identical training runs", 0, determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& [id, name, budget, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o{false, ""};
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = num(secs) + "s";
    if (budget > 0) {
      timing += " of " + num(budget) + "s";
      if (secs >= budget) {
        o.pass = false;
        o.detail += "; over time budget";
      }
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << name << ": " << o.detail << " [" << timing << "]" << std::endl;
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
