#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpmn/checkpoint.hpp"
#include "dpmn/data.hpp"
#include "dpmn/error.hpp"
#include "dpmn/io.hpp"
#include "dpmn/metrics.hpp"
#include "dpmn/model.hpp"
#include "dpmn/training.hpp"
#include "dpmn/verify.hpp"

namespace dpmn::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ------------------------------------------------------------ logging

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

/// Verbosity from DPMN_LOG_LEVEL (error, warn, info, debug); info when unset.
inline LogLevel log_level() {
  const char* v = std::getenv("DPMN_LOG_LEVEL");
  if (!v) return LogLevel::info;
  const std::string s(v);
  if (s == "error") return LogLevel::error;
  if (s == "warn") return LogLevel::warn;
  if (s == "debug") return LogLevel::debug;
  return LogLevel::info;
}

inline void log(LogLevel lv, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (lv <= log_level()) std::cerr << "[" << names[static_cast<int>(lv)] << "] " << msg << "\n";
}

// ------------------------------------------------------------ configuration

struct DataConfig {
  fs::path csv, hierarchy, features;  // empty when unused
  Frequency frequency = Frequency::daily;
  std::size_t horizon = 7;
  std::optional<Date> window_start;
  std::optional<CountMode> preprocess;
  double preprocess_scale = 1.0;
  std::optional<SyntheticSpec> synthetic;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  json train = json::object();  // parsed once the hierarchy is known
  QuantileGrid grid = QuantileGrid::uniform();
  std::size_t samples = 100;
  std::vector<std::size_t> ablate_k{1, 4, 16};
  std::vector<std::uint64_t> ablate_seeds{1, 2, 3, 4, 5};
  fs::path output_dir = "out";
  std::uint64_t seed = 1;
};

/// Command-line overrides applied on top of the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> k;
  std::vector<std::size_t> k_list;
  fs::path checkpoint;
  fs::path output_dir;
};

namespace detail {

inline fs::path existing(const json& j, const char* key, const fs::path& base) {
  fs::path p = j.at(key).get<std::string>();
  if (p.is_relative()) p = (base / p).lexically_normal();
  if (!fs::exists(p)) throw InputError(std::string("config: data.") + key + ": file not found: " + p.string());
  return p;
}

inline SyntheticSpec parse_synthetic(const json& j) {
  dpmn::detail::reject_unknown_keys(j,
                                    {"n_bottom", "n_groups", "k_true", "horizon", "length", "weights", "base_min", "base_max",
                                     "component_spread", "component_jitter", "seasonal_amplitude", "idiosyncratic", "seed"},
                                    "config: data.synthetic");
  SyntheticSpec s;
  auto get = [&](const char* k, auto& dst) {
    if (j.contains(k)) dst = j.at(k).get<std::remove_reference_t<decltype(dst)>>();
  };
  get("n_bottom", s.n_bottom);
  get("n_groups", s.n_groups);
  get("k_true", s.k_true);
  get("horizon", s.horizon);
  get("length", s.length);
  get("weights", s.weights);
  get("base_min", s.base_min);
  get("base_max", s.base_max);
  get("component_spread", s.component_spread);
  get("component_jitter", s.component_jitter);
  get("seasonal_amplitude", s.seasonal_amplitude);
  get("idiosyncratic", s.idiosyncratic);
  get("seed", s.seed);
  return s;
}

}  // namespace detail

/// Parses a run config; relative paths resolve against `base`.
inline RunConfig parse_run_config(const std::string& text, const fs::path& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InputError("config: expected a JSON object");
  dpmn::detail::reject_unknown_keys(j, {"data", "model", "train", "metrics", "forecast", "ablate", "output_dir", "seed"}, "config");
  RunConfig c;
  try {
    if (!j.contains("data")) throw InputError("config: missing 'data' block");
    const auto& d = j.at("data");
    dpmn::detail::reject_unknown_keys(d, {"csv", "hierarchy", "features", "frequency", "horizon", "window_start", "preprocess", "synthetic"},
                                      "config: data");
    if (d.contains("synthetic")) {
      if (d.contains("csv") || d.contains("hierarchy")) throw InputError("config: data: give either synthetic or csv + hierarchy");
      c.data.synthetic = detail::parse_synthetic(d.at("synthetic"));
      c.data.horizon = c.data.synthetic->horizon;
    } else {
      if (!d.contains("csv") || !d.contains("hierarchy")) throw InputError("config: data: csv and hierarchy are required");
      c.data.csv = detail::existing(d, "csv", base);
      c.data.hierarchy = detail::existing(d, "hierarchy", base);
      if (d.contains("features")) c.data.features = detail::existing(d, "features", base);
      if (d.contains("frequency")) c.data.frequency = parse_frequency(d.at("frequency").get<std::string>());
      if (d.contains("horizon")) c.data.horizon = d.at("horizon").get<std::size_t>();
    }
    if (c.data.horizon == 0) throw InputError("config: data.horizon must be >= 1");
    if (d.contains("window_start")) c.data.window_start = parse_iso_date(d.at("window_start").get<std::string>());
    if (d.contains("preprocess")) {
      const auto& p = d.at("preprocess");
      dpmn::detail::reject_unknown_keys(p, {"mode", "scale"}, "config: data.preprocess");
      const auto mode = p.value("mode", std::string("round"));
      if (mode == "round") c.data.preprocess = CountMode::round;
      else if (mode == "scale_round") c.data.preprocess = CountMode::scale_round;
      else throw InputError("config: data.preprocess.mode must be round or scale_round");
      c.data.preprocess_scale = p.value("scale", 1.0);
    }
    if (j.contains("model")) c.model = parse_model_config(j.at("model"));
    if (j.contains("train")) c.train = j.at("train");
    if (j.contains("metrics")) {
      const auto& m = j.at("metrics");
      dpmn::detail::reject_unknown_keys(m, {"quantiles"}, "config: metrics");
      if (m.contains("quantiles")) {
        const auto& q = m.at("quantiles");
        c.grid = q.is_number_integer() ? QuantileGrid::uniform(q.get<std::size_t>()) : QuantileGrid{q.get<std::vector<double>>()};
      }
      c.grid.validate();
    }
    if (j.contains("forecast")) {
      dpmn::detail::reject_unknown_keys(j.at("forecast"), {"samples"}, "config: forecast");
      c.samples = j.at("forecast").value("samples", c.samples);
    }
    if (j.contains("ablate")) {
      const auto& a = j.at("ablate");
      dpmn::detail::reject_unknown_keys(a, {"k", "seeds"}, "config: ablate");
      if (a.contains("k")) c.ablate_k = a.at("k").get<std::vector<std::size_t>>();
      if (a.contains("seeds")) c.ablate_seeds = a.at("seeds").get<std::vector<std::uint64_t>>();
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (c.output_dir.is_relative()) c.output_dir = (base / c.output_dir).lexically_normal();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(io::read_text_file(path), fs::absolute(path).parent_path());
}

struct Workspace {
  RunConfig config;
  SeriesDataset data;
  TrainConfig train;
};

/// Loads data and resolves every setting under the overrides. For synthetic
/// data `data_seed` replaces the generator seed when given.
inline Workspace load_workspace(const RunConfig& cfg, const Overrides& ov, std::optional<std::uint64_t> data_seed = {}) {
  Workspace w{cfg, {}, {}};
  if (ov.seed) w.config.seed = *ov.seed;
  if (ov.k) w.config.model.n_components = *ov.k;
  if (!ov.output_dir.empty()) w.config.output_dir = ov.output_dir;
  w.config.model.validate();
  const auto& d = w.config.data;
  if (d.synthetic) {
    auto spec = *d.synthetic;
    if (data_seed) spec.seed = *data_seed;
    w.data = generate_synthetic(spec).dataset;
  } else {
    auto h = std::make_shared<const HierarchyStructure>(parse_hierarchy_spec(io::read_text_file(d.hierarchy)));
    w.data = load_csv(d.csv, h, d.frequency, d.horizon);
    if (!d.features.empty()) load_feature_csv_text(w.data, io::read_text_file(d.features));
  }
  if (d.window_start) {
    std::size_t i = 0;
    while (i < w.data.n_time() && w.data.date_at(i) < *d.window_start) ++i;
    if (i >= w.data.n_time()) throw InputError("config: data.window_start is after the last observation");
    w.data = w.data.window(i, w.data.n_time());
  }
  if (d.preprocess) w.data = preprocess_counts(std::move(w.data), *d.preprocess, d.preprocess_scale);
  for (double v : w.data.y.data())
    if (v != std::floor(v)) throw InputError("data: non-integer targets; set data.preprocess to round them");
  partition(w.data, w.data.horizon);  // rejects panels too short for validation + test
  w.train = parse_train_config(w.config.train, *w.data.hierarchy);
  if (!w.config.train.contains("seed") || ov.seed) w.train.rng_seed = w.config.seed;
  if (ov.epochs) w.train.max_epochs = *ov.epochs;
  w.train.validate();
  return w;
}

// ------------------------------------------------------------ checkpoints

inline std::vector<ag::NamedTensor> checkpoint_entries(const DpmnModel& model, const std::vector<double>& series_scale,
                                                      std::size_t selected_epoch) {
  auto e = model.state();
  e.push_back({"data.series_scale", {series_scale.size()}, series_scale});
  e.push_back({"data.selected_epoch", {1}, {static_cast<double>(selected_epoch)}});
  return e;
}

struct LoadedModel {
  std::unique_ptr<DpmnModel> model;
  std::vector<double> series_scale;
};

/// Rebuilds the configured model and fills it from a checkpoint file.
inline LoadedModel load_model(const Workspace& w, const fs::path& path) {
  const auto entries = ag::read_checkpoint(path);
  LoadedModel out;
  for (const auto& e : entries)
    if (e.name == "data.series_scale") out.series_scale = e.values;
  if (out.series_scale.size() != w.data.hierarchy->n_rows())
    throw InputError("checkpoint '" + path.string() + "': series scales missing or sized for another hierarchy");
  const auto in = test_inputs(w.data, out.series_scale);
  const auto na = w.data.hierarchy->n_agg();
  out.model = std::make_unique<DpmnModel>(w.config.model, InputDims::of(in.features), in.bottom_scale(na), w.config.seed);
  out.model->load_state(entries);
  return out;
}

inline fs::path checkpoint_path(const Workspace& w, const Overrides& ov) {
  return ov.checkpoint.empty() ? w.config.output_dir / "checkpoint.bin" : ov.checkpoint;
}

// ------------------------------------------------------------ commands

inline std::string level_of_row(const HierarchyStructure& h, std::size_t row) {
  for (const auto& lv : h.levels())
    if (std::find(lv.rows.begin(), lv.rows.end(), row) != lv.rows.end()) return lv.label;
  return "";
}

inline int cmd_train(const fs::path& config, const Overrides& ov, std::ostream& out) {
  const auto w = load_workspace(load_run_config(config), ov);
  const auto& ds = w.data;
  log(LogLevel::info, "train: " + std::to_string(ds.n_bottom()) + " bottom series, " + std::to_string(ds.n_time()) + " steps, K=" +
                          std::to_string(w.config.model.n_components) + ", objective " + to_string(w.train.objective));
  std::string log_lines;
  const auto p = run_pipeline(w.config.model, ds, w.train, [&](Stage st, const EpochRecord& r) {
    json j = json::parse(to_jsonl(r));
    json line = {{"stage", to_string(st)}};
    line.update(j);
    log_lines += line.dump() + "\n";
    log(LogLevel::debug, line.dump());
  });
  const auto& fin = p.final();
  const auto& sel = p.selected.result;
  const fs::path dir = w.config.output_dir;
  io::atomic_write_file(dir / "checkpoint.bin",
                        ag::encode_checkpoint(checkpoint_entries(*fin.model, fin.inputs.series_scale, sel.best_epoch)));
  io::atomic_write_file(dir / "train_log.jsonl", log_lines);
  json summary;
  summary["selected_epoch"] = sel.best_epoch;
  summary["best_val_scrps"] = sel.best_val_scrps ? json(*sel.best_val_scrps) : json(nullptr);
  summary["refit"] = w.train.refit;
  summary["aborted"] = sel.aborted || fin.result.aborted;
  summary["abort_reason"] = sel.aborted ? sel.abort_reason : fin.result.abort_reason;
  summary["parameters"] = fin.model->parameter_count();
  summary["model"] = to_json(w.config.model);
  io::atomic_write_file(dir / "train_summary.json", summary.dump(2) + "\n");
  if (summary["aborted"].get<bool>()) log(LogLevel::warn, "train: stopped early: " + summary["abort_reason"].get<std::string>());
  out << "selected epoch " << sel.best_epoch << ", validation sCRPS "
      << (sel.best_val_scrps ? io::fmt(*sel.best_val_scrps) : std::string("NA")) << "\n"
      << "wrote " << (dir / "checkpoint.bin").string() << "\n";
  return 0;
}

inline void print_report(const EvaluationReport& rep, std::ostream& out) {
  auto cell = [](const std::optional<double>& v) {
    std::ostringstream os;
    if (v) os << std::fixed << std::setprecision(4) << *v;
    else os << "NA";
    return os.str();
  };
  out << std::left << std::setw(16) << "level" << std::setw(10) << "sCRPS" << "MSSE\n";
  for (const auto& l : rep.levels) out << std::setw(16) << l.level << std::setw(10) << cell(l.scrps) << cell(l.msse) << "\n";
  out << std::setw(16) << "overall" << std::setw(10) << cell(rep.overall_scrps) << cell(rep.overall_msse) << "\n";
}

inline int cmd_evaluate(const fs::path& config, const Overrides& ov, std::ostream& out) {
  const auto w = load_workspace(load_run_config(config), ov);
  const auto lm = load_model(w, checkpoint_path(w, ov));
  const auto rep = test_report(*lm.model, w.data, lm.series_scale, w.config.grid);
  io::atomic_write_file(w.config.output_dir / "report.json", to_json(rep).dump(2) + "\n");
  io::atomic_write_file(w.config.output_dir / "report.csv", to_csv(rep));
  print_report(rep, out);
  return 0;
}

/// Forecast issued at the last observation for the next h steps.
inline int cmd_forecast(const fs::path& config, const Overrides& ov, std::ostream& out) {
  const auto w = load_workspace(load_run_config(config), ov);
  const auto lm = load_model(w, checkpoint_path(w, ov));
  const auto& ds = w.data;
  const auto& h = *ds.hierarchy;
  const auto in = make_inputs(ds, ds.n_time(), lm.series_scale);
  const auto fc = lm.model->predict(in.features);
  const auto stacked = aggregate_rates(fc, h);
  const std::size_t hz = ds.horizon, rows = h.n_rows();
  const double inv = 1.0 / ds.value_scale;
  auto date = [&](std::size_t tau) { return format_date(ds.date_at(ds.n_time() + tau)); };

  std::ostringstream q;
  q << "series,level,step,date,mean";
  for (double lv : w.config.grid.levels) q << ",q" << io::fmt(lv);
  q << "\n";
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t tau = 0; tau < hz; ++tau) {
      const auto m = bottom_marginal(stacked, r, tau);
      q << h.row_name(r) << "," << level_of_row(h, r) << "," << tau + 1 << "," << date(tau) << "," << io::fmt(m.mean() * inv);
      for (double v : marginal_quantiles(m, w.config.grid)) q << "," << io::fmt(v * inv);
      q << "\n";
    }

  const auto draws = sample_coherent(fc, h, w.config.samples, w.config.seed);
  std::ostringstream s;
  s << "sample,series,level,step,date,value\n";
  for (std::size_t i = 0; i < draws.n_samples; ++i)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t tau = 0; tau < hz; ++tau)
        s << i << "," << h.row_name(r) << "," << level_of_row(h, r) << "," << tau + 1 << "," << date(tau) << ","
          << io::fmt(static_cast<double>(draws(i, r, tau)) * inv) << "\n";

  std::ostringstream rates;
  rates << "series,component,step,date,rate\n";
  for (std::size_t b = 0; b < fc.n_series(); ++b)
    for (std::size_t k = 0; k < fc.n_components(); ++k)
      for (std::size_t tau = 0; tau < hz; ++tau)
        rates << h.bottom_names()[b] << "," << k << "," << tau + 1 << "," << date(tau) << "," << io::fmt(fc.rate(b, k, tau)) << "\n";
  std::ostringstream weights;
  weights << "component,weight\n";
  for (std::size_t k = 0; k < fc.n_components(); ++k) weights << k << "," << io::fmt(fc.weights()[k]) << "\n";

  const fs::path dir = w.config.output_dir;
  io::atomic_write_file(dir / "quantiles.csv", q.str());
  io::atomic_write_file(dir / "samples.csv", s.str());
  io::atomic_write_file(dir / "rates.csv", rates.str());
  io::atomic_write_file(dir / "weights.csv", weights.str());
  json meta{{"origin", format_date(ds.date_at(ds.n_time() - 1))},
            {"horizon", hz},
            {"value_scale", ds.value_scale},
            {"samples", w.config.samples},
            {"quantile_levels", w.config.grid.levels}};
  io::atomic_write_file(dir / "forecast.json", meta.dump(2) + "\n");
  out << "forecast from " << meta["origin"].get<std::string>() << " for " << hz << " steps, " << rows << " series\n"
      << "wrote " << (dir / "quantiles.csv").string() << "\n";
  return 0;
}

/// Runs the self-test suites; exit 2 when any check fails.
inline int cmd_verify(const fs::path& config, const Overrides& ov, std::ostream& out) {
  const auto w = load_workspace(load_run_config(config), ov);
  const auto results = verify::run_all(*w.data.hierarchy, w.config.seed);
  bool all = true;
  out << std::left << std::setw(26) << "check" << std::setw(7) << "result" << std::setw(12) << "worst" << std::setw(10) << "limit"
      << "detail\n";
  for (const auto& r : results) {
    all = all && r.passed;
    out << std::setw(26) << r.name << std::setw(7) << (r.passed ? "PASS" : "FAIL") << std::setw(12) << verify::detail::sci(r.statistic)
        << std::setw(10) << verify::detail::sci(r.threshold) << r.detail << " (" << std::fixed << std::setprecision(2) << r.seconds
        << "s)" << std::defaultfloat << "\n";
  }
  out << (all ? "all checks passed" : "some checks FAILED") << "\n";
  return all ? 0 : 2;
}

struct AblationRow {
  std::uint64_t seed;
  std::size_t k;
  double test_scrps;
  std::optional<double> val_scrps;
  std::size_t selected_epoch;
};

/// Test sCRPS per (seed, K). Synthetic data is regenerated per seed.
inline std::vector<AblationRow> run_ablation(const RunConfig& cfg, const Overrides& ov, const std::vector<std::size_t>& ks,
                                             const std::vector<std::uint64_t>& seeds) {
  std::vector<AblationRow> rows;
  for (auto seed : seeds) {
    Overrides o = ov;
    o.seed = seed;
    const auto w = load_workspace(cfg, o, cfg.data.synthetic ? std::optional<std::uint64_t>(seed) : std::nullopt);
    for (auto k : ks) {
      auto mcfg = w.config.model;
      mcfg.n_components = k;
      const auto p = run_pipeline(mcfg, w.data, w.train);
      const auto rep = test_report(p, w.data, w.config.grid);
      rows.push_back({seed, k, rep.overall_scrps.value_or(std::nan("")), p.selected.result.best_val_scrps, p.selected.result.best_epoch});
      log(LogLevel::info, "ablate: seed " + std::to_string(seed) + " K=" + std::to_string(k) + " test sCRPS " + io::fmt(rows.back().test_scrps));
    }
  }
  return rows;
}

inline int cmd_ablate(const fs::path& config, const Overrides& ov, std::ostream& out) {
  const auto cfg = load_run_config(config);
  const auto ks = ov.k_list.empty() ? cfg.ablate_k : ov.k_list;
  if (ks.empty()) throw InputError("ablate: empty K list");
  const auto rows = run_ablation(cfg, ov, ks, cfg.ablate_seeds);
  std::ostringstream csv;
  csv << "seed,k,test_scrps,val_scrps,selected_epoch\n";
  for (const auto& r : rows)
    csv << r.seed << "," << r.k << "," << io::fmt(r.test_scrps) << "," << (r.val_scrps ? io::fmt(*r.val_scrps) : "NA") << ","
        << r.selected_epoch << "\n";
  std::map<std::size_t, double> mean;
  for (const auto& r : rows) mean[r.k] += r.test_scrps / static_cast<double>(cfg.ablate_seeds.size());
  std::ostringstream summary;
  summary << "k,mean_test_scrps\n";
  out << std::left << std::setw(6) << "K" << "mean test sCRPS\n";
  for (auto k : ks) {
    summary << k << "," << io::fmt(mean[k]) << "\n";
    out << std::setw(6) << k << std::fixed << std::setprecision(5) << mean[k] << std::defaultfloat << "\n";
  }
  const fs::path dir = ov.output_dir.empty() ? cfg.output_dir : ov.output_dir;
  io::atomic_write_file(dir / "ablation.csv", csv.str());
  io::atomic_write_file(dir / "ablation_summary.csv", summary.str());
  return 0;
}

// ------------------------------------------------------------ errors

/// One-line machine-readable error record.
inline std::string error_record(const char* kind, const std::string& message) {
  return json{{"status", "error"}, {"kind", kind}, {"message", message}}.dump();
}

}  // namespace dpmn::cli
