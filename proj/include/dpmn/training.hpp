#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpmn/autograd.hpp"
#include "dpmn/data.hpp"
#include "dpmn/error.hpp"
#include "dpmn/metrics.hpp"
#include "dpmn/model.hpp"
#include "dpmn/objectives.hpp"

namespace dpmn {

// ------------------------------------------------------------ optimizer

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

/// One Adam update from the parameters' gradient buffers. Returns false and
/// leaves everything untouched when any gradient is non-finite.
inline bool adam_step(const std::vector<ag::Tensor>& params, AdamState& st, double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
  for (const auto& p : params)
    for (double g : p.grad())
      if (!std::isfinite(g)) return false;
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.numel(), 0.0);
      st.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (st.m.size() != params.size()) throw std::invalid_argument("adam: optimizer state does not match parameters");
  ++st.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    const auto& g = p.grad();
    auto& x = p.mutable_values();
    auto& m = st.m[i];
    auto& v = st.v[i];
    if (m.size() != x.size()) throw std::invalid_argument("adam: parameter shape changed");
    for (std::size_t j = 0; j < x.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      x[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
  return true;
}

/// Rescales gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
inline double clip_grad_norm(const std::vector<ag::Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm && max_norm > 0.0) {
    const double s = max_norm / norm;
    for (const auto& p : params)
      if (auto* g = ag::grad_of(p))
        for (auto& x : *g) x *= s;
  }
  return norm;
}

// ------------------------------------------------------------ configuration

enum class Objective { joint, naive_bu, group_bu };

inline Objective parse_objective(const std::string& s) {
  if (s == "joint") return Objective::joint;
  if (s == "naive_bu") return Objective::naive_bu;
  if (s == "group_bu") return Objective::group_bu;
  throw InputError("train config: unknown objective '" + s + "' (expected joint, naive_bu or group_bu)");
}

inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::joint: return "joint";
    case Objective::naive_bu: return "naive_bu";
    case Objective::group_bu: return "group_bu";
  }
  return "?";
}

struct TrainConfig {
  Objective objective = Objective::group_bu;
  std::string grouping_level;              // group_bu: hierarchy level whose nodes form the groups
  std::optional<GroupingScheme> grouping;  // group_bu: explicit groups, overrides grouping_level
  double learning_rate = 3e-3;
  std::size_t max_epochs = 40;
  std::size_t batch_size = 0;       // groups per step, 0 = all
  std::size_t dates_per_step = 64;  // creation dates sampled per step, 0 = all
  std::uint64_t rng_seed = 1;
  std::size_t eval_every = 5;
  double clip_norm = 10.0;
  bool refit = true;  // retrain on train + validation for the selected epoch count
  QuantileGrid val_grid = QuantileGrid::uniform(9);

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InputError("train config: learning_rate must be > 0");
    if (max_epochs < 1) throw InputError("train config: max_epochs must be >= 1");
    if (eval_every < 1) throw InputError("train config: eval_every must be >= 1");
    val_grid.validate();
  }
};

inline TrainConfig parse_train_config(const nlohmann::ordered_json& j, const HierarchyStructure& h) {
  TrainConfig c;
  if (!j.is_object()) throw InputError("train config: expected an object");
  detail::reject_unknown_keys(j,
                              {"objective", "grouping", "learning_rate", "max_epochs", "batch_size", "dates_per_step", "seed",
                               "eval_every", "clip_norm", "refit", "val_quantiles"},
                              "train config");
  try {
    if (j.contains("objective")) c.objective = parse_objective(j.at("objective").get<std::string>());
    if (j.contains("grouping")) {
      const auto& g = j.at("grouping");
      if (g.is_string()) c.grouping_level = g.get<std::string>();
      else c.grouping = parse_grouping_spec(g.dump(), h);
    }
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<std::size_t>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("dates_per_step")) c.dates_per_step = j.at("dates_per_step").get<std::size_t>();
    if (j.contains("seed")) c.rng_seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("eval_every")) c.eval_every = j.at("eval_every").get<std::size_t>();
    if (j.contains("clip_norm")) c.clip_norm = j.at("clip_norm").get<double>();
    if (j.contains("refit")) c.refit = j.at("refit").get<bool>();
    if (j.contains("val_quantiles")) c.val_grid.levels = j.at("val_quantiles").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Likelihood groups for the configured objective. GroupBU without an
/// explicit grouping uses the named level, else the lowest level made
/// only of aggregate rows.
inline GroupingScheme resolve_grouping(const TrainConfig& cfg, const HierarchyStructure& h) {
  switch (cfg.objective) {
    case Objective::joint: return GroupingScheme::whole(h.n_bottom());
    case Objective::naive_bu: return GroupingScheme::singletons(h.n_bottom());
    case Objective::group_bu: break;
  }
  if (cfg.grouping) {
    cfg.grouping->validate(h.n_bottom());
    return *cfg.grouping;
  }
  if (!cfg.grouping_level.empty()) {
    try {
      return GroupingScheme::from_level(h, cfg.grouping_level);
    } catch (const std::logic_error& e) {
      throw InputError(std::string("train config: grouping: ") + e.what());
    }
  }
  const Level* pick = nullptr;
  for (const auto& lv : h.levels()) {
    const bool all_agg = std::all_of(lv.rows.begin(), lv.rows.end(), [&](std::size_t r) { return r < h.n_agg(); });
    if (all_agg) pick = &lv;
  }
  if (!pick) return GroupingScheme::whole(h.n_bottom());
  return GroupingScheme::from_level(h, pick->label);
}

/// Splits shuffled groups into consecutive batches of `batch_size` whole groups.
inline std::vector<GroupingScheme> group_batches(const GroupingScheme& g, std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(g.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t bs = batch_size == 0 ? g.size() : batch_size;
  std::vector<GroupingScheme> out;
  for (std::size_t i = 0; i < order.size(); i += bs) {
    GroupingScheme b;
    for (std::size_t j = i; j < std::min(order.size(), i + bs); ++j) {
      b.names.push_back(g.names[order[j]]);
      b.groups.push_back(g.groups[order[j]]);
    }
    out.push_back(std::move(b));
  }
  return out;
}

// ------------------------------------------------------------ training

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_scrps;
  std::size_t skipped_steps = 0;
};

inline std::string to_jsonl(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["val_scrps"] = r.val_scrps ? nlohmann::ordered_json(*r.val_scrps) : nlohmann::ordered_json(nullptr);
  j["skipped_steps"] = r.skipped_steps;
  return j.dump();
}

struct TrainResult {
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;
  std::optional<double> best_val_scrps;
  bool aborted = false;
  std::string abort_reason;
};

/// Scaled stacked-row normalizers and model inputs over the first `history` steps.
struct TrainingInputs {
  std::size_t history = 0;
  std::vector<double> series_scale;  // per stacked row
  FeatureBundle features;

  std::vector<double> bottom_scale(std::size_t n_agg) const {
    return {series_scale.begin() + static_cast<long>(n_agg), series_scale.end()};
  }
};

/// Inputs over the first `history` steps normalized by the given scales.
inline TrainingInputs make_inputs(const SeriesDataset& ds, std::size_t history, std::vector<double> scales) {
  TrainingInputs in;
  in.history = history;
  in.series_scale = std::move(scales);
  in.features = build_feature_bundle(ds, history, in.series_scale);
  return in;
}

inline TrainingInputs make_inputs(const SeriesDataset& ds, std::size_t history) {
  return make_inputs(ds, history, series_scales(ds, history));
}

inline std::unique_ptr<DpmnModel> make_model(const ModelConfig& mcfg, const SeriesDataset& ds, const TrainingInputs& in,
                                             std::uint64_t seed) {
  return std::make_unique<DpmnModel>(mcfg, InputDims::of(in.features), in.bottom_scale(ds.hierarchy->n_agg()), seed);
}

/// Observed counts for each creation date's window, [D, N_b, h] order.
inline std::vector<double> target_windows(const SeriesDataset& ds, const std::vector<std::size_t>& creation) {
  const std::size_t nb = ds.n_bottom(), hz = ds.horizon;
  std::vector<double> y;
  y.reserve(creation.size() * nb * hz);
  for (auto t : creation)
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t s = 1; s <= hz; ++s) y.push_back(ds.y(b, t + s));
  return y;
}

inline MatrixD panel_slice(const MatrixD& y, std::size_t begin, std::size_t end) {
  MatrixD out(y.rows(), end - begin);
  for (std::size_t r = 0; r < y.rows(); ++r) std::copy(y.row_ptr(r) + begin, y.row_ptr(r) + end, out.row_ptr(r));
  return out;
}

/// Forecast issued at the end of `in` scored against the next h observations.
inline EvaluationReport evaluate_window(const DpmnModel& model, const SeriesDataset& ds, const TrainingInputs& in,
                                        const QuantileGrid& grid) {
  const std::size_t start = in.history, hz = ds.horizon;
  if (start + hz > ds.n_time()) throw std::out_of_range("evaluate_window: window runs past the panel");
  return evaluate(model.predict(in.features), *ds.hierarchy, panel_slice(ds.y, start, start + hz), panel_slice(ds.y, 0, start),
                  grid);
}

/// Fits `model` on creation dates inside the first `in.history` steps. With
/// `validate`, the following h steps score the model every eval_every
/// epochs and the best-scoring parameters are kept (ties keep the earlier
/// epoch); otherwise the final parameters are kept.
inline TrainResult train_window(DpmnModel& model, const SeriesDataset& ds, const TrainingInputs& in, bool validate,
                                const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  const auto& h = *ds.hierarchy;
  const std::size_t hz = ds.horizon;
  if (validate && in.history + hz > ds.n_time()) throw InputError("train: no room for a validation window");
  const GroupingScheme grouping = resolve_grouping(cfg, h);
  const auto all_dates = valid_creation_indices(in.history, hz);
  const auto params = model.parameter_tensors();
  std::mt19937_64 rng(cfg.rng_seed ^ 0x9E3779B97F4A7C15ull);
  AdamState adam;
  TrainResult res;
  double best = std::numeric_limits<double>::infinity();
  auto best_params = model.snapshot();
  auto last_good = best_params;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs && !res.aborted; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    // one epoch visits every creation date once, in chunks of dates_per_step,
    // each chunk crossed with every batch of whole groups
    std::vector<std::size_t> shuffled = all_dates;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const std::size_t chunk = cfg.dates_per_step ? std::min(cfg.dates_per_step, shuffled.size()) : shuffled.size();
    std::vector<std::pair<std::vector<std::size_t>, GroupingScheme>> steps;
    for (std::size_t i = 0; i < shuffled.size(); i += chunk) {
      std::vector<std::size_t> dates(shuffled.begin() + static_cast<long>(i),
                                     shuffled.begin() + static_cast<long>(std::min(i + chunk, shuffled.size())));
      std::sort(dates.begin(), dates.end());
      for (auto& b : group_batches(grouping, cfg.batch_size, rng)) steps.emplace_back(dates, std::move(b));
    }
    double total = 0.0;
    for (const auto& [dates, batch] : steps) {
      const auto out = model.forward_forked(in.features, dates);
      const double norm = static_cast<double>(dates.size() * batch.slot_count() * hz);
      auto loss = ag::scale(composite_nll(out.rates, out.weights, target_windows(ds, dates), batch), 1.0 / norm);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        res.aborted = true;
        res.abort_reason = "non-finite training loss at epoch " + std::to_string(epoch);
        break;
      }
      for (auto p : params) p.zero_grad();
      ag::backward(loss);
      clip_grad_norm(params, cfg.clip_norm);
      if (!adam_step(params, adam, cfg.learning_rate)) ++rec.skipped_steps;
      total += lv;
    }
    if (res.aborted) {
      model.restore(last_good);
      break;
    }
    rec.train_loss = total / static_cast<double>(steps.size());
    last_good = model.snapshot();
    if (validate && (epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs)) {
      rec.val_scrps = evaluate_window(model, ds, in, cfg.val_grid).overall_scrps;
      const double score = rec.val_scrps.value_or(std::numeric_limits<double>::infinity());
      if (score < best || res.best_epoch == 0) {
        best = score;
        res.best_epoch = epoch;
        res.best_val_scrps = rec.val_scrps;
        best_params = last_good;
      }
    }
    if (!validate) res.best_epoch = epoch;
    res.curve.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (validate && res.best_epoch) model.restore(best_params);
  return res;
}

/// Trains on the partition's training window and selects the epoch by the validation window.
inline TrainResult train(DpmnModel& model, const SeriesDataset& ds, const TrainingInputs& in, const TrainConfig& cfg,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  const auto p = partition(ds, ds.horizon);
  if (in.history != p.train.end) throw std::invalid_argument("train: inputs must cover exactly the training window");
  return train_window(model, ds, in, true, cfg, on_epoch);
}

struct FittedModel {
  std::unique_ptr<DpmnModel> model;
  TrainingInputs inputs;
  TrainResult result;
};

/// Fresh model on the training window with validation-based selection.
inline FittedModel fit(const ModelConfig& mcfg, const SeriesDataset& ds, const TrainConfig& cfg,
                       const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  const auto p = partition(ds, ds.horizon);
  FittedModel f{nullptr, make_inputs(ds, p.train.end), {}};
  f.model = make_model(mcfg, ds, f.inputs, cfg.rng_seed);
  f.result = train(*f.model, ds, f.inputs, cfg, on_epoch);
  return f;
}

/// Fresh model on train + validation for `epochs` epochs, ready to forecast the test window.
inline FittedModel retrain_shift(const ModelConfig& mcfg, const SeriesDataset& ds, TrainConfig cfg, std::size_t epochs,
                                 const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  const auto p = partition(ds, ds.horizon);
  cfg.max_epochs = epochs;
  FittedModel f{nullptr, make_inputs(ds, p.val.end), {}};
  f.model = make_model(mcfg, ds, f.inputs, cfg.rng_seed);
  f.result = train_window(*f.model, ds, f.inputs, false, cfg, on_epoch);
  return f;
}

/// Epoch selection on the validation window, then (with `refit`) a fresh
/// model on train + validation for the selected number of epochs.
struct Pipeline {
  FittedModel selected;
  std::optional<FittedModel> refit;

  const FittedModel& final() const { return refit ? *refit : selected; }
};

enum class Stage { select, refit };

inline const char* to_string(Stage s) { return s == Stage::select ? "select" : "refit"; }

inline Pipeline run_pipeline(const ModelConfig& mcfg, const SeriesDataset& ds, const TrainConfig& cfg,
                             const std::function<void(Stage, const EpochRecord&)>& on_epoch = {}) {
  auto tap = [&](Stage st) {
    return on_epoch ? std::function<void(const EpochRecord&)>([&, st](const EpochRecord& r) { on_epoch(st, r); })
                    : std::function<void(const EpochRecord&)>{};
  };
  Pipeline p{fit(mcfg, ds, cfg, tap(Stage::select)), std::nullopt};
  if (cfg.refit) p.refit = retrain_shift(mcfg, ds, cfg, std::max<std::size_t>(1, p.selected.result.best_epoch), tap(Stage::refit));
  return p;
}

/// Inputs for the forecast issued at the end of the validation window.
inline TrainingInputs test_inputs(const SeriesDataset& ds, const std::vector<double>& scales) {
  return make_inputs(ds, partition(ds, ds.horizon).val.end, scales);
}

inline EvaluationReport test_report(const DpmnModel& model, const SeriesDataset& ds, const std::vector<double>& scales,
                                    const QuantileGrid& grid) {
  return evaluate_window(model, ds, test_inputs(ds, scales), grid);
}

inline EvaluationReport test_report(const Pipeline& p, const SeriesDataset& ds, const QuantileGrid& grid) {
  return test_report(*p.final().model, ds, p.final().inputs.series_scale, grid);
}

// ------------------------------------------------------------ search

struct SearchSpace {
  std::vector<double> learning_rates;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> epochs;
};

struct Trial {
  TrainConfig config;
  double score = 0.0;
};

struct SearchResult {
  TrainConfig best;
  double best_score = 0.0;
  std::vector<Trial> trials;
};

/// `budget` random draws from the space scored by `objective` (lower is
/// better); the first draw reaching the minimum wins.
inline SearchResult hyper_search(const SearchSpace& space, std::size_t budget, std::uint64_t seed, const TrainConfig& base,
                                 const std::function<double(const TrainConfig&)>& objective) {
  if (space.learning_rates.empty() || space.seeds.empty() || space.epochs.empty()) throw InputError("hyper_search: empty search space");
  if (budget == 0) throw InputError("hyper_search: budget must be >= 1");
  std::mt19937_64 rng(seed);
  auto draw = [&](const auto& v) { return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)]; };
  SearchResult res;
  for (std::size_t i = 0; i < budget; ++i) {
    TrainConfig c = base;
    c.learning_rate = draw(space.learning_rates);
    c.rng_seed = draw(space.seeds);
    c.max_epochs = draw(space.epochs);
    const double s = objective(c);
    res.trials.push_back({c, s});
    if (i == 0 || s < res.best_score) {
      res.best = c;
      res.best_score = s;
    }
  }
  return res;
}

}  // namespace dpmn
