#pragma once

// Shared fixtures and independent oracles for the test suites. Nothing here
// calls into the code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dpmn/hierarchy.hpp"
#include "dpmn/mixture.hpp"

namespace dpmn::fixtures {

inline const char* kToyHierarchySpec = R"({
  "bottom": ["b1", "b2", "b3", "b4"],
  "aggregates": [
    {"name": "total", "children": ["half1", "half2"]},
    {"name": "half1", "members": ["b1", "b2"]},
    {"name": "half2", "members": ["b3", "b4"]}
  ],
  "levels": {"total": ["total"], "half": ["half1", "half2"], "bottom": ["b1", "b2", "b3", "b4"]}
})";

inline HierarchyStructure toy_hierarchy() { return parse_hierarchy_spec(kToyHierarchySpec); }

/// Poisson pmf by the textbook product formula (no log-gamma).
inline double poisson_pmf_direct(int y, double lambda) {
  double p = std::exp(-lambda);
  for (int i = 1; i <= y; ++i) p *= lambda / i;
  return p;
}

/// Random 0/1 hierarchy: a total row plus `groups` disjoint blocks, plus
/// one random overlapping row, over n_bottom series.
inline HierarchyStructure random_three_level(std::size_t n_bottom, std::size_t groups, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> bottom, agg;
  for (std::size_t j = 0; j < n_bottom; ++j) bottom.push_back("b" + std::to_string(j));
  MatrixI a(1 + groups, n_bottom);
  agg.push_back("total");
  for (std::size_t j = 0; j < n_bottom; ++j) a(0, j) = 1;
  std::vector<std::size_t> perm(n_bottom);
  for (std::size_t j = 0; j < n_bottom; ++j) perm[j] = j;
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t g = 0; g < groups; ++g) agg.push_back("g" + std::to_string(g));
  for (std::size_t j = 0; j < n_bottom; ++j) a(1 + (j % groups), perm[j]) = 1;
  std::vector<Level> levels{{"total", {0}}, {"group", {}}, {"bottom", {}}};
  for (std::size_t g = 0; g < groups; ++g) levels[1].rows.push_back(1 + g);
  for (std::size_t j = 0; j < n_bottom; ++j) levels[2].rows.push_back(1 + groups + j);
  return HierarchyStructure(bottom, agg, a, levels);
}

inline PoissonMixtureForecast random_forecast(std::size_t n_series, std::size_t k, std::size_t horizon, double max_rate,
                                              std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> w(k);
  double s = 0.0;
  for (auto& x : w) s += (x = u(rng));
  for (auto& x : w) x /= s;
  std::uniform_real_distribution<double> r(0.0, max_rate);
  std::vector<double> rates(n_series * k * horizon);
  for (auto& x : rates) x = r(rng);
  return PoissonMixtureForecast(w, n_series, horizon, rates);
}

/// Brute-force pmf of the sum of the listed bottoms at one step: enumerate
/// every bottom outcome vector up to `cap` per coordinate under each
/// component and accumulate its probability onto the sum.
inline std::vector<double> brute_force_sum_pmf(const PoissonMixtureForecast& f, const std::vector<std::size_t>& members,
                                               std::size_t tau, int cap) {
  std::vector<double> pmf(members.size() * cap + 1, 0.0);
  for (std::size_t k = 0; k < f.n_components(); ++k) {
    std::vector<std::vector<double>> marg(members.size());
    for (std::size_t m = 0; m < members.size(); ++m)
      for (int y = 0; y <= cap; ++y) marg[m].push_back(poisson_pmf_direct(y, f.rate(members[m], k, tau)));
    std::vector<int> idx(members.size(), 0);
    while (true) {
      double p = f.weights()[k];
      int total = 0;
      for (std::size_t m = 0; m < members.size(); ++m) {
        p *= marg[m][idx[m]];
        total += idx[m];
      }
      pmf[total] += p;
      std::size_t d = 0;
      while (d < idx.size() && ++idx[d] > cap) idx[d++] = 0;
      if (d == idx.size()) break;
    }
  }
  return pmf;
}

}  // namespace dpmn::fixtures

namespace dpmn::fixtures {

/// Tourism-L shaped grouped hierarchy: 7 states > 27 zones > 76 regions,
/// crossed with 4 travel purposes. Bottoms are region x purpose.
inline std::string tourism_like_spec() {
  nlohmann::ordered_json doc;
  const int states = 7, zones = 27, regions = 76, purposes = 4;
  const char* purpose_names[] = {"hol", "vis", "bus", "oth"};
  auto zone_of = [&](int r) { return r % zones; };
  auto state_of_zone = [&](int z) { return z % states; };
  std::vector<std::string> bottom;
  for (int r = 0; r < regions; ++r)
    for (int p = 0; p < purposes; ++p) bottom.push_back("R" + std::to_string(r) + "_" + purpose_names[p]);
  doc["bottom"] = bottom;
  auto aggs = nlohmann::ordered_json::array();
  std::vector<std::string> lv_total{"total"}, lv_state, lv_zone, lv_region, lv_purpose, lv_sp, lv_zp;
  auto members_where = [&](const std::function<bool(int, int)>& pred) {
    std::vector<std::string> m;
    for (int r = 0; r < regions; ++r)
      for (int p = 0; p < purposes; ++p)
        if (pred(r, p)) m.push_back("R" + std::to_string(r) + "_" + purpose_names[p]);
    return m;
  };
  aggs.push_back({{"name", "total"}, {"members", bottom}});
  for (int s = 0; s < states; ++s) {
    lv_state.push_back("S" + std::to_string(s));
    aggs.push_back({{"name", lv_state.back()}, {"members", members_where([&](int r, int) { return state_of_zone(zone_of(r)) == s; })}});
  }
  for (int z = 0; z < zones; ++z) {
    lv_zone.push_back("Z" + std::to_string(z));
    aggs.push_back({{"name", lv_zone.back()}, {"members", members_where([&](int r, int) { return zone_of(r) == z; })}});
  }
  for (int r0 = 0; r0 < regions; ++r0) {
    lv_region.push_back("R" + std::to_string(r0));
    aggs.push_back({{"name", lv_region.back()}, {"members", members_where([&](int r, int) { return r == r0; })}});
  }
  for (int p0 = 0; p0 < purposes; ++p0) {
    lv_purpose.push_back(std::string("P_") + purpose_names[p0]);
    aggs.push_back({{"name", lv_purpose.back()}, {"members", members_where([&](int, int p) { return p == p0; })}});
  }
  for (int s = 0; s < states; ++s)
    for (int p0 = 0; p0 < purposes; ++p0) {
      lv_sp.push_back("S" + std::to_string(s) + "_" + purpose_names[p0]);
      aggs.push_back({{"name", lv_sp.back()},
                      {"members", members_where([&](int r, int p) { return p == p0 && state_of_zone(zone_of(r)) == s; })}});
    }
  for (int z = 0; z < zones; ++z)
    for (int p0 = 0; p0 < purposes; ++p0) {
      lv_zp.push_back("Z" + std::to_string(z) + "_" + purpose_names[p0]);
      aggs.push_back({{"name", lv_zp.back()}, {"members", members_where([&](int r, int p) { return p == p0 && zone_of(r) == z; })}});
    }
  doc["aggregates"] = aggs;
  doc["levels"] = {{"total", lv_total},        {"state", lv_state},   {"zone", lv_zone},
                   {"region", lv_region},      {"purpose", lv_purpose}, {"state_purpose", lv_sp},
                   {"zone_purpose", lv_zp},    {"region_purpose", bottom}};
  return doc.dump();
}

}  // namespace dpmn::fixtures
