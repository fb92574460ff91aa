#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpmn/autograd.hpp"
#include "dpmn/error.hpp"
#include "dpmn/hierarchy.hpp"
#include "dpmn/mixture.hpp"

namespace dpmn {

/// Likelihood sub-spaces over bottom series. Groups may overlap but must
/// jointly cover every bottom index.
struct GroupingScheme {
  std::vector<std::string> names;
  std::vector<std::vector<std::size_t>> groups;

  std::size_t size() const noexcept { return groups.size(); }

  void validate(std::size_t n_bottom) const {
    if (groups.empty()) throw std::invalid_argument("grouping: no groups");
    std::vector<int> covered(n_bottom, 0);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (groups[g].empty()) throw std::invalid_argument("grouping: group " + std::to_string(g) + " is empty");
      for (auto b : groups[g]) {
        if (b >= n_bottom) throw std::out_of_range("grouping: bottom index " + std::to_string(b) + " out of range");
        covered[b] = 1;
      }
    }
    for (std::size_t b = 0; b < n_bottom; ++b)
      if (!covered[b]) throw std::invalid_argument("grouping: bottom index " + std::to_string(b) + " is in no group");
  }

  /// Total series slots over all groups (overlaps counted per group).
  std::size_t slot_count() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.size();
    return n;
  }

  static GroupingScheme singletons(std::size_t n_bottom) {
    GroupingScheme s;
    for (std::size_t b = 0; b < n_bottom; ++b) {
      s.names.push_back(std::to_string(b));
      s.groups.push_back({b});
    }
    return s;
  }

  static GroupingScheme whole(std::size_t n_bottom) {
    GroupingScheme s;
    s.names.push_back("all");
    s.groups.emplace_back();
    for (std::size_t b = 0; b < n_bottom; ++b) s.groups.back().push_back(b);
    return s;
  }

  /// One group per node of a hierarchy level: the bottoms that node aggregates.
  static GroupingScheme from_level(const HierarchyStructure& h, const std::string& label) {
    GroupingScheme s;
    for (auto row : h.level(label).rows) {
      s.names.push_back(h.row_name(row));
      s.groups.push_back(h.members(row));
    }
    s.validate(h.n_bottom());
    return s;
  }
};

/// Grouping file: {"groups": {"north": ["b1", "b2"], "south": ["b3", "b4"]}}
/// or {"level": "<hierarchy level label>"}.
inline GroupingScheme parse_grouping_spec(const std::string& text, const HierarchyStructure& h) {
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("grouping spec: malformed document: ") + e.what());
  }
  if (!doc.is_object()) throw InputError("grouping spec: top level must be an object");
  detail::reject_unknown_keys(doc, {"groups", "level"}, "grouping spec");
  if (doc.contains("groups") == doc.contains("level")) throw InputError("grouping spec: give exactly one of 'groups' or 'level'");
  try {
    if (doc.contains("level")) return GroupingScheme::from_level(h, doc["level"].get<std::string>());
    if (!doc["groups"].is_object()) throw InputError("grouping spec: 'groups' must be an object");
    GroupingScheme s;
    for (auto it = doc["groups"].begin(); it != doc["groups"].end(); ++it) {
      s.names.push_back(it.key());
      s.groups.emplace_back();
      for (const auto& name : detail::string_list(it.value(), "grouping spec group '" + it.key() + "'")) {
        if (!h.contains(name) || h.row_index(name) < h.n_agg()) {
          throw InputError("grouping spec: group '" + it.key() + "' references unknown bottom series '" + name + "'");
        }
        s.groups.back().push_back(h.row_index(name) - h.n_agg());
      }
    }
    s.validate(h.n_bottom());
    return s;
  } catch (const std::logic_error& e) {
    throw InputError(std::string("grouping spec: ") + e.what());
  }
}

// ------------------------------------------------------------ plain values

/// log sum_k w_k prod_{b in members, tau} Poisson(y_{b,tau} | lambda_{b,k,tau}).
inline double group_log_likelihood(const PoissonMixtureForecast& f, const MatrixD& y,
                                   const std::vector<std::size_t>& members) {
  std::vector<double> terms(f.n_components());
  for (std::size_t k = 0; k < f.n_components(); ++k) {
    const double w = f.weights()[k];
    double s = w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
    for (auto b : members) {
      if (b >= f.n_series()) throw std::out_of_range("group index " + std::to_string(b) + " out of range");
      for (std::size_t t = 0; t < f.horizon(); ++t) s += log_poisson(y(b, t), f.rate(b, k, t));
    }
    terms[k] = s;
  }
  return logsumexp(terms);
}

inline double nll_joint(const PoissonMixtureForecast& f, const MatrixD& y) { return -log_joint_pmf(f, y); }

inline double nll_groupbu(const PoissonMixtureForecast& f, const MatrixD& y, const GroupingScheme& g) {
  detail::check_counts(y, f.n_series(), f.horizon(), "nll_groupbu");
  g.validate(f.n_series());
  double total = 0.0;
  for (const auto& members : g.groups) total -= group_log_likelihood(f, y, members);
  return total;
}

inline double nll_naivebu(const PoissonMixtureForecast& f, const MatrixD& y) {
  return nll_groupbu(f, y, GroupingScheme::singletons(f.n_series()));
}

// ------------------------------------------------------------ differentiable

/// Summed composite negative log-likelihood over a batch of forecasts.
///
/// rates   [D, N_b, K, h]   (nonnegative)
/// weights [D, K]           (simplex rows, e.g. a softmax output)
/// y       D*N_b*h counts in [D, N_b, h] order
///
/// Returns sum_d sum_g -log sum_k w_dk prod_{b in g, tau} Poisson(y | lambda).
/// A single whole group gives the joint NLL, singletons give NaiveBU.
inline ag::Tensor composite_nll(const ag::Tensor& rates, const ag::Tensor& weights, std::vector<double> y,
                                const GroupingScheme& grouping) {
  if (rates.ndim() != 4 || weights.ndim() != 2 || weights.shape()[0] != rates.shape()[0] ||
      weights.shape()[1] != rates.shape()[2]) {
    throw ag::ShapeError("composite_nll", rates.shape(), weights.shape());
  }
  const std::size_t nd = rates.shape()[0], nb = rates.shape()[1], nk = rates.shape()[2], hz = rates.shape()[3];
  if (y.size() != nd * nb * hz) throw ag::ShapeError("composite_nll", rates.shape(), ag::Shape{y.size()});
  for (double v : y)
    if (!(v >= 0.0) || v != std::floor(v)) throw std::invalid_argument("composite_nll: observations must be nonnegative integers");
  grouping.validate(nb);

  const auto& lam = rates.values();
  const auto& w = weights.values();
  auto lam_at = [nb, nk, hz](std::size_t d, std::size_t b, std::size_t k, std::size_t t) {
    return ((d * nb + b) * nk + k) * hz + t;
  };
  std::vector<double> lgy(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) lgy[i] = std::lgamma(y[i] + 1.0);

  // Per (d, group): log-likelihood per component without the weight term, and the total.
  const std::size_t ng = grouping.size();
  std::vector<double> comp_ll(nd * ng * nk);
  std::vector<double> group_ll(nd * ng);
  double total = 0.0;
  std::vector<double> terms(nk);
  for (std::size_t d = 0; d < nd; ++d) {
    for (std::size_t g = 0; g < ng; ++g) {
      for (std::size_t k = 0; k < nk; ++k) {
        double s = 0.0;
        for (auto b : grouping.groups[g]) {
          for (std::size_t t = 0; t < hz; ++t) {
            const std::size_t yi = (d * nb + b) * hz + t;
            const double l = lam[lam_at(d, b, k, t)];
            s += (y[yi] == 0.0 ? 0.0 : y[yi] * std::log(std::max(l, kRateFloor))) - l - lgy[yi];
          }
        }
        comp_ll[(d * ng + g) * nk + k] = s;
        const double wk = w[d * nk + k];
        terms[k] = wk > 0.0 ? std::log(wk) + s : -std::numeric_limits<double>::infinity();
      }
      const double ll = logsumexp(terms);
      group_ll[d * ng + g] = ll;
      total -= ll;
    }
  }

  return ag::make_op({}, {total}, {rates, weights},
                     [rates, weights, y = std::move(y), grouping, comp_ll = std::move(comp_ll),
                      group_ll = std::move(group_ll), nd, nb, nk, hz, ng, lam_at](const std::vector<double>& grad) {
                       const double go = grad[0];
                       const auto& lam = rates.values();
                       const auto& w = weights.values();
                       auto* glam = ag::grad_of(rates);
                       auto* gw = ag::grad_of(weights);
                       for (std::size_t d = 0; d < nd; ++d) {
                         for (std::size_t g = 0; g < ng; ++g) {
                           const double ll = group_ll[d * ng + g];
                           for (std::size_t k = 0; k < nk; ++k) {
                             // exp(comp_ll - ll) = posterior / w_k
                             const double ratio = std::exp(comp_ll[(d * ng + g) * nk + k] - ll);
                             if (gw) (*gw)[d * nk + k] -= go * ratio;
                             if (!glam) continue;
                             const double post = w[d * nk + k] * ratio;
                             if (post == 0.0) continue;
                             for (auto b : grouping.groups[g]) {
                               for (std::size_t t = 0; t < hz; ++t) {
                                 const std::size_t li = lam_at(d, b, k, t);
                                 const double yv = y[(d * nb + b) * hz + t];
                                 const double dlog = (yv == 0.0 || lam[li] < kRateFloor) ? 0.0 : yv / lam[li];
                                 (*glam)[li] -= go * post * (dlog - 1.0);
                               }
                             }
                           }
                         }
                       }
                     });
}

}  // namespace dpmn
