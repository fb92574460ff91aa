#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dpmn/error.hpp"
#include "dpmn/matrix.hpp"

namespace dpmn {

struct Level {
  std::string label;
  std::vector<std::size_t> rows;  // indices into the stacked [aggregates; bottoms] order
};

/// Aggregation structure of a (possibly grouped) hierarchy. Rows are
/// ordered aggregates first, then bottoms. Immutable once built.
class HierarchyStructure {
 public:
  HierarchyStructure(std::vector<std::string> bottom_names, std::vector<std::string> agg_names,
                     MatrixI agg_matrix, std::vector<Level> levels = {})
      : bottom_(std::move(bottom_names)),
        agg_(std::move(agg_names)),
        a_(std::move(agg_matrix)),
        levels_(std::move(levels)) {
    if (bottom_.empty()) throw std::invalid_argument("hierarchy: at least one bottom series is required");
    if (a_.rows() != agg_.size()) {
      throw std::invalid_argument("hierarchy: " + std::to_string(agg_.size()) + " aggregate names but A has " +
                                  std::to_string(a_.rows()) + " rows");
    }
    if (!agg_.empty() && a_.cols() != bottom_.size()) {
      throw std::invalid_argument("hierarchy: A has " + std::to_string(a_.cols()) + " columns, expected " +
                                  std::to_string(bottom_.size()));
    }
    if (agg_.empty()) a_ = MatrixI(0, bottom_.size());
    for (std::size_t i = 0; i < a_.rows(); ++i) {
      int members = 0;
      for (std::size_t j = 0; j < a_.cols(); ++j) {
        const int v = a_(i, j);
        if (v != 0 && v != 1) throw std::invalid_argument("hierarchy: A entries must be 0 or 1");
        members += v;
      }
      if (members == 0) throw std::invalid_argument("hierarchy: aggregate '" + agg_[i] + "' has no members");
    }
    for (std::size_t i = 0; i < n_rows(); ++i) {
      if (!index_.emplace(row_name(i), i).second) {
        throw std::invalid_argument("hierarchy: duplicate series name '" + row_name(i) + "'");
      }
    }
    if (levels_.empty()) {
      if (!agg_.empty()) {
        Level agg{"aggregate", {}};
        for (std::size_t i = 0; i < agg_.size(); ++i) agg.rows.push_back(i);
        levels_.push_back(std::move(agg));
      }
      Level bot{"bottom", {}};
      for (std::size_t j = 0; j < bottom_.size(); ++j) bot.rows.push_back(agg_.size() + j);
      levels_.push_back(std::move(bot));
    }
    std::vector<int> seen(n_rows(), 0);
    for (const auto& lv : levels_) {
      if (lv.rows.empty()) throw std::invalid_argument("hierarchy: level '" + lv.label + "' is empty");
      for (auto r : lv.rows) {
        if (r >= n_rows()) throw std::invalid_argument("hierarchy: level row out of range");
        ++seen[r];
      }
    }
    for (std::size_t i = 0; i < n_rows(); ++i) {
      if (seen[i] != 1) {
        throw std::invalid_argument("hierarchy: series '" + row_name(i) + "' appears in " +
                                    std::to_string(seen[i]) + " levels, expected exactly one");
      }
    }
  }

  std::size_t n_bottom() const noexcept { return bottom_.size(); }
  std::size_t n_agg() const noexcept { return agg_.size(); }
  std::size_t n_rows() const noexcept { return agg_.size() + bottom_.size(); }

  const std::vector<std::string>& bottom_names() const noexcept { return bottom_; }
  const std::vector<std::string>& agg_names() const noexcept { return agg_; }
  const MatrixI& agg_matrix() const noexcept { return a_; }
  const std::vector<Level>& levels() const noexcept { return levels_; }

  const std::string& row_name(std::size_t i) const { return i < agg_.size() ? agg_[i] : bottom_.at(i - agg_.size()); }

  std::size_t row_index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("hierarchy: unknown series '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Level& level(const std::string& label) const {
    for (const auto& lv : levels_)
      if (lv.label == label) return lv;
    throw std::out_of_range("hierarchy: unknown level '" + label + "'");
  }

  /// Bottom indices aggregated by stacked row `row` (a single index for bottom rows).
  std::vector<std::size_t> members(std::size_t row) const {
    if (row >= agg_.size()) return {row - agg_.size()};
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < a_.cols(); ++j)
      if (a_(row, j)) out.push_back(j);
    return out;
  }

  /// True when the first aggregate row sums every bottom series.
  bool has_total() const {
    if (agg_.empty()) return false;
    for (std::size_t j = 0; j < a_.cols(); ++j)
      if (!a_(0, j)) return false;
    return true;
  }

 private:
  std::vector<std::string> bottom_;
  std::vector<std::string> agg_;
  MatrixI a_;
  std::vector<Level> levels_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// S = [A; I], shape (N_a + N_b) x N_b.
inline MatrixI build_summation_matrix(const HierarchyStructure& h) {
  const std::size_t na = h.n_agg(), nb = h.n_bottom();
  if (h.agg_matrix().rows() != na) throw std::invalid_argument("summation matrix: A rows do not match aggregate names");
  MatrixI s(na + nb, nb);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) s(i, j) = h.agg_matrix()(i, j);
  for (std::size_t j = 0; j < nb; ++j) s(na + j, j) = 1;
  return s;
}

/// Stacks aggregates over the bottom panel: out = S * y_bottom.
template <typename T>
Matrix<T> aggregate_values(const HierarchyStructure& h, const Matrix<T>& y_bottom) {
  if (y_bottom.rows() != h.n_bottom()) {
    throw std::invalid_argument("aggregate_values: panel has " + std::to_string(y_bottom.rows()) +
                                " rows, hierarchy has " + std::to_string(h.n_bottom()) + " bottom series");
  }
  if (y_bottom.cols() == 0) throw std::invalid_argument("aggregate_values: empty time axis");
  const std::size_t na = h.n_agg(), nb = h.n_bottom(), t = y_bottom.cols();
  Matrix<T> out(na + nb, t);
  for (std::size_t i = 0; i < na; ++i) {
    T* o = out.row_ptr(i);
    for (std::size_t j = 0; j < nb; ++j) {
      if (!h.agg_matrix()(i, j)) continue;
      const T* y = y_bottom.row_ptr(j);
      for (std::size_t c = 0; c < t; ++c) o[c] += y[c];
    }
  }
  std::copy(y_bottom.data().begin(), y_bottom.data().end(), out.row_ptr(na));
  return out;
}

/// max |y_full - S * bottom(y_full)|; zero iff the panel is coherent.
inline double coherence_residual(const HierarchyStructure& h, const MatrixD& y_full) {
  if (y_full.rows() != h.n_rows()) throw std::invalid_argument("coherence_residual: row count mismatch");
  if (y_full.cols() == 0) return 0.0;
  MatrixD bottom(h.n_bottom(), y_full.cols());
  std::copy(y_full.row_ptr(h.n_agg()), y_full.row_ptr(h.n_agg()) + bottom.data().size(), bottom.data().begin());
  const MatrixD rebuilt = aggregate_values(h, bottom);
  double worst = 0.0;
  for (std::size_t i = 0; i < rebuilt.data().size(); ++i) {
    worst = std::max(worst, std::abs(y_full.data()[i] - rebuilt.data()[i]));
  }
  return worst;
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::ordered_json& obj, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw InputError(where + ": unknown field '" + it.key() + "'");
  }
}

inline std::vector<std::string> string_list(const nlohmann::ordered_json& j, const std::string& where) {
  if (!j.is_array()) throw InputError(where + ": expected a list of names");
  std::vector<std::string> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw InputError(where + ": names must be strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace detail

/// Parses a JSON hierarchy document:
///
///   { "bottom": ["b1", ...],
///     "aggregates": [ {"name": "total", "children": ["half1", "half2"]},
///                     {"name": "half1", "members": ["b1", "b2"]}, ... ],
///     "levels": { "total": ["total"], "half": ["half1", "half2"], "bottom": ["b1", ...] } }
///
/// `members` lists bottom series directly (grouped hierarchies); `children`
/// may name bottoms or other aggregates and is expanded recursively.
inline HierarchyStructure parse_hierarchy_spec(const std::string& text) {
  using nlohmann::ordered_json;
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("hierarchy spec: malformed document: ") + e.what());
  }
  if (!doc.is_object()) throw InputError("hierarchy spec: top level must be an object");
  detail::reject_unknown_keys(doc, {"bottom", "aggregates", "levels"}, "hierarchy spec");
  if (!doc.contains("bottom")) throw InputError("hierarchy spec: missing 'bottom'");

  const auto bottom = detail::string_list(doc["bottom"], "hierarchy spec 'bottom'");
  std::unordered_map<std::string, std::size_t> bottom_index;
  for (std::size_t j = 0; j < bottom.size(); ++j) {
    if (!bottom_index.emplace(bottom[j], j).second) throw InputError("hierarchy spec: duplicate bottom series '" + bottom[j] + "'");
  }

  struct Decl {
    std::string name;
    std::vector<std::string> refs;
    bool direct = false;  // members (bottom only) vs children
  };
  std::vector<Decl> decls;
  std::unordered_map<std::string, std::size_t> agg_index;
  if (doc.contains("aggregates")) {
    if (!doc["aggregates"].is_array()) throw InputError("hierarchy spec: 'aggregates' must be a list");
    for (const auto& a : doc["aggregates"]) {
      if (!a.is_object()) throw InputError("hierarchy spec: aggregate entries must be objects");
      detail::reject_unknown_keys(a, {"name", "members", "children"}, "hierarchy spec aggregate");
      if (!a.contains("name") || !a["name"].is_string()) throw InputError("hierarchy spec: aggregate without a name");
      Decl d;
      d.name = a["name"].get<std::string>();
      const bool has_m = a.contains("members"), has_c = a.contains("children");
      if (has_m == has_c) throw InputError("hierarchy spec: aggregate '" + d.name + "' needs exactly one of members/children");
      d.direct = has_m;
      d.refs = detail::string_list(has_m ? a["members"] : a["children"], "hierarchy spec aggregate '" + d.name + "'");
      if (bottom_index.count(d.name)) throw InputError("hierarchy spec: aggregate '" + d.name + "' clashes with a bottom name");
      if (!agg_index.emplace(d.name, decls.size()).second) throw InputError("hierarchy spec: duplicate aggregate name '" + d.name + "'");
      decls.push_back(std::move(d));
    }
  }

  const std::size_t na = decls.size(), nb = bottom.size();
  MatrixI a(na, nb);
  // 0 = unvisited, 1 = on stack, 2 = done
  std::vector<int> state(na, 0);
  std::function<void(std::size_t)> expand = [&](std::size_t i) {
    if (state[i] == 2) return;
    if (state[i] == 1) throw InputError("hierarchy spec: cycle through aggregate '" + decls[i].name + "'");
    state[i] = 1;
    for (const auto& r : decls[i].refs) {
      if (auto b = bottom_index.find(r); b != bottom_index.end()) {
        a(i, b->second) = 1;
      } else if (auto c = agg_index.find(r); !decls[i].direct && c != agg_index.end()) {
        expand(c->second);
        for (std::size_t j = 0; j < nb; ++j) a(i, j) = a(i, j) | a(c->second, j);
      } else {
        throw InputError("hierarchy spec: aggregate '" + decls[i].name + "' references unknown series '" + r + "'");
      }
    }
    state[i] = 2;
  };
  for (std::size_t i = 0; i < na; ++i) expand(i);

  std::vector<std::string> agg_names;
  for (const auto& d : decls) agg_names.push_back(d.name);

  std::vector<Level> levels;
  if (doc.contains("levels")) {
    if (!doc["levels"].is_object()) throw InputError("hierarchy spec: 'levels' must be an object");
    for (auto it = doc["levels"].begin(); it != doc["levels"].end(); ++it) {
      Level lv{it.key(), {}};
      for (const auto& name : detail::string_list(it.value(), "hierarchy spec level '" + it.key() + "'")) {
        if (auto ai = agg_index.find(name); ai != agg_index.end()) {
          lv.rows.push_back(ai->second);
        } else if (auto bi = bottom_index.find(name); bi != bottom_index.end()) {
          lv.rows.push_back(na + bi->second);
        } else {
          throw InputError("hierarchy spec: level '" + it.key() + "' references unknown series '" + name + "'");
        }
      }
      levels.push_back(std::move(lv));
    }
  }
  try {
    return HierarchyStructure(bottom, std::move(agg_names), std::move(a), std::move(levels));
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("hierarchy spec: ") + e.what());
  }
}

/// Serializes back to the document format (members form, levels kept).
inline std::string to_hierarchy_spec(const HierarchyStructure& h) {
  nlohmann::ordered_json doc;
  doc["bottom"] = h.bottom_names();
  doc["aggregates"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < h.n_agg(); ++i) {
    std::vector<std::string> m;
    for (auto j : h.members(i)) m.push_back(h.bottom_names()[j]);
    doc["aggregates"].push_back({{"name", h.agg_names()[i]}, {"members", m}});
  }
  nlohmann::ordered_json lv = nlohmann::ordered_json::object();
  for (const auto& l : h.levels()) {
    std::vector<std::string> names;
    for (auto r : l.rows) names.push_back(h.row_name(r));
    lv[l.label] = names;
  }
  doc["levels"] = lv;
  return doc.dump(2);
}

}  // namespace dpmn
