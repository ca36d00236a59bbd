#pragma once

// Run configuration file (JSON). Every section mirrors one module's config
// type; unknown keys are rejected. The hash of the resolved configuration is
// stamped into every artifact.

#include "dramn/evaluation.hpp"
#include "dramn/features.hpp"
#include "dramn/pipeline.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace dramn {

using Json = nlohmann::json;

struct PathsConfig {
  std::string store = "out/store";
  std::string cache = "out/cache";
  std::string checkpoints = "out/checkpoints";
  std::string reports = "out/reports";
};

struct ModelConfig {
  ModelKind kind = ModelKind::Dramn;
  Index F = 64;
  Index H = 64;
};

struct EvaluationConfig {
  double threshold = 0.5;
  std::vector<double> snr_db = default_snr_list();
  std::vector<int> window_sweep_ms{100, 200, 500, 1000, 1500, 2000};
  std::vector<int> node_subsets{9, 11, 13, 15, 17, 19, 0};  // 0 = all channels
};

struct SelectionConfig {
  int k = 0;  // 0 = ceil(0.18 n)
  StrengthRange range;
  double edge_keep_fraction = 0.5;
};

struct BenchConfig {
  std::vector<Index> sizes{13, 72};
  std::size_t repetitions = 10000;
  Index F = 64;
  Index H = 64;
};

struct RunConfig {
  std::uint64_t seed = 0;
  PathsConfig paths;
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig training;
  EvaluationConfig evaluation;
  SelectionConfig selection;
  BenchConfig bench;

  void validate() const {
    dataset.validate();
    training.validate();
    if (model.F < 1 || model.H < 1) throw ConfigError("model.F and model.H must be >= 1");
    if (!(evaluation.threshold >= 0.0 && evaluation.threshold <= 1.0)) {
      throw ConfigError("evaluation.threshold must lie in [0, 1]");
    }
    if (evaluation.snr_db.empty()) throw ConfigError("evaluation.snr_db must not be empty");
    for (int t : evaluation.window_sweep_ms) {
      if (t < 2) throw ConfigError("evaluation.window_sweep_ms entries must be >= 2");
    }
    for (int k : evaluation.node_subsets) {
      if (k < 0) throw ConfigError("evaluation.node_subsets entries must be >= 0");
    }
    if (selection.k < 0) throw ConfigError("selection.k must be >= 0");
    if (selection.range.t_to < selection.range.t_from) throw ConfigError("selection range is empty");
    if (!(selection.edge_keep_fraction > 0.0 && selection.edge_keep_fraction <= 1.0)) {
      throw ConfigError("selection.edge_keep_fraction must lie in (0, 1]");
    }
    if (bench.sizes.empty() || bench.repetitions < 1) throw ConfigError("bench needs sizes and repetitions >= 1");
    for (Index n : bench.sizes) {
      if (n < 1) throw ConfigError("bench.sizes entries must be >= 1");
    }
  }
};

namespace detail {

// Reads known keys from one JSON object and rejects the rest.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  // null means +infinity (disabled)
  void get_optional_db(const char* key, double& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    if (j_.at(key).is_null()) {
      out = std::numeric_limits<double>::infinity();
      return;
    }
    get(key, out);
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section sub(const char* key) {
    seen_.insert(key);
    return Section(j_.at(key), path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + path_ + "." + k + "'");
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Json db_to_json(double v) { return std::isinf(v) ? Json(nullptr) : Json(v); }

}  // namespace detail

inline Json to_json(const RunConfig& c) {
  const auto& s = c.dataset.surrogate;
  const auto& w = c.dataset.windows;
  Json events = Json::array();
  for (auto e : c.dataset.events) events.push_back(to_string(e));
  return Json{
      {"seed", c.seed},
      {"paths",
       {{"store", c.paths.store},
        {"cache", c.paths.cache},
        {"checkpoints", c.paths.checkpoints},
        {"reports", c.paths.reports}}},
      {"surrogate",
       {{"n_gen", s.n_gen},
        {"include_power", s.include_power},
        {"inert_channels", s.inert_channels},
        {"dt_ms", std::llround(s.dt * 1000.0)},
        {"duration_ms", s.duration_ms},
        {"event_ms", s.event_ms},
        {"fault_ms", s.fault_ms},
        {"settle_guard_ms", s.settle_guard_ms},
        {"base_freq_hz", s.base_freq_hz},
        {"freq_step_hz", s.freq_step_hz},
        {"coupling", s.coupling},
        {"w_sg", s.w_sg},
        {"w_gfm", s.w_gfm},
        {"w_gfl", s.w_gfl},
        {"m_offset", s.m_offset},
        {"m_scale", s.m_scale},
        {"zeta_mid", s.zeta_mid},
        {"zeta_span", s.zeta_span},
        {"load_stress", s.load_stress},
        {"ambient_std", s.ambient_std},
        {"load_step", s.load_step},
        {"fault_pulse", s.fault_pulse},
        {"fault_voltage", s.fault_voltage},
        {"x0_std", s.x0_std},
        {"v_gain", s.v_gain},
        {"v_feedthrough", s.v_feedthrough},
        {"f_gain", s.f_gain},
        {"p_gain", s.p_gain},
        {"p_nominal", s.p_nominal},
        {"divergence_limit", s.divergence_limit},
        {"snr_db", detail::db_to_json(s.snr_db)}}},
      {"dataset",
       {{"grid_total", c.dataset.grid_total},
        {"grid_min_share", c.dataset.grid_min_share},
        {"grid_step", c.dataset.grid_step},
        {"events", events},
        {"keep_1_in", c.dataset.keep_1_in},
        {"thin_unperturbed", c.dataset.thin_unperturbed}}},
      {"windows",
       {{"window_ms", w.seq.window_ms},
        {"stride_ms", w.seq.stride_ms},
        {"l_seq", w.seq.l_seq},
        {"train_first_end", w.train_first_end},
        {"train_last_end", w.train_last_end},
        {"train_end_step", w.train_end_step},
        {"pre_event_last_end", w.pre_event_last_end},
        {"post_event_first", w.post_event_first},
        {"heldout_per_range", w.heldout_per_range},
        {"unperturbed_from", w.unperturbed_from},
        {"unperturbed_to", w.unperturbed_to},
        {"unperturbed_samples", w.unperturbed_samples}}},
      {"dmd",
       {{"rank", c.dataset.dmd.rank},
        {"svd_rel_tol", c.dataset.dmd.svd_rel_tol},
        {"delay_embedding", c.dataset.dmd.delay_embedding}}},
      {"labels",
       {{"v_lo", c.dataset.labels.v_lo},
        {"v_hi", c.dataset.labels.v_hi},
        {"f_lo", c.dataset.labels.f_lo},
        {"f_hi", c.dataset.labels.f_hi},
        {"zeta_min", c.dataset.labels.zeta_min},
        {"guard_after_ms", c.dataset.labels.guard_after_ms}}},
      {"model", {{"kind", to_string(c.model.kind)}, {"F", c.model.F}, {"H", c.model.H}}},
      {"training",
       {{"lr", c.training.lr},
        {"weight_decay", c.training.weight_decay},
        {"epochs", c.training.epochs},
        {"batch_size", c.training.batch_size},
        {"early_stop_patience", c.training.early_stop_patience},
        {"val_fraction", c.training.val_fraction},
        {"test_fraction", c.training.test_fraction}}},
      {"evaluation",
       {{"threshold", c.evaluation.threshold},
        {"snr_db", c.evaluation.snr_db},
        {"window_sweep_ms", c.evaluation.window_sweep_ms},
        {"node_subsets", c.evaluation.node_subsets}}},
      {"selection",
       {{"k", c.selection.k},
        {"t_from", c.selection.range.t_from},
        {"t_to", c.selection.range.t_to},
        {"edge_keep_fraction", c.selection.edge_keep_fraction}}},
      {"bench",
       {{"sizes", c.bench.sizes}, {"repetitions", c.bench.repetitions}, {"F", c.bench.F}, {"H", c.bench.H}}},
  };
}

inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  detail::Section root(j, "config");
  root.get("seed", c.seed);
  if (root.has("paths")) {
    auto p = root.sub("paths");
    p.get("store", c.paths.store);
    p.get("cache", c.paths.cache);
    p.get("checkpoints", c.paths.checkpoints);
    p.get("reports", c.paths.reports);
    p.finish();
  }
  if (root.has("surrogate")) {
    auto& s = c.dataset.surrogate;
    auto p = root.sub("surrogate");
    p.get("n_gen", s.n_gen);
    p.get("include_power", s.include_power);
    p.get("inert_channels", s.inert_channels);
    std::int64_t dt_ms = std::llround(s.dt * 1000.0);
    p.get("dt_ms", dt_ms);
    if (dt_ms < 1) throw ConfigError("surrogate.dt_ms must be >= 1");
    s.dt = static_cast<double>(dt_ms) / 1000.0;
    p.get("duration_ms", s.duration_ms);
    p.get("event_ms", s.event_ms);
    p.get("fault_ms", s.fault_ms);
    p.get("settle_guard_ms", s.settle_guard_ms);
    p.get("base_freq_hz", s.base_freq_hz);
    p.get("freq_step_hz", s.freq_step_hz);
    p.get("coupling", s.coupling);
    p.get("w_sg", s.w_sg);
    p.get("w_gfm", s.w_gfm);
    p.get("w_gfl", s.w_gfl);
    p.get("m_offset", s.m_offset);
    p.get("m_scale", s.m_scale);
    p.get("zeta_mid", s.zeta_mid);
    p.get("zeta_span", s.zeta_span);
    p.get("load_stress", s.load_stress);
    p.get("ambient_std", s.ambient_std);
    p.get("load_step", s.load_step);
    p.get("fault_pulse", s.fault_pulse);
    p.get("fault_voltage", s.fault_voltage);
    p.get("x0_std", s.x0_std);
    p.get("v_gain", s.v_gain);
    p.get("v_feedthrough", s.v_feedthrough);
    p.get("f_gain", s.f_gain);
    p.get("p_gain", s.p_gain);
    p.get("p_nominal", s.p_nominal);
    p.get("divergence_limit", s.divergence_limit);
    p.get_optional_db("snr_db", s.snr_db);
    p.finish();
  }
  if (root.has("dataset")) {
    auto& d = c.dataset;
    auto p = root.sub("dataset");
    p.get("grid_total", d.grid_total);
    p.get("grid_min_share", d.grid_min_share);
    p.get("grid_step", d.grid_step);
    if (p.has("events")) {
      std::vector<std::string> names;
      p.get("events", names);
      d.events.clear();
      for (const auto& n : names) d.events.push_back(event_from_string(n));
    }
    p.get("keep_1_in", d.keep_1_in);
    p.get("thin_unperturbed", d.thin_unperturbed);
    p.finish();
  }
  if (root.has("windows")) {
    auto& w = c.dataset.windows;
    auto p = root.sub("windows");
    p.get("window_ms", w.seq.window_ms);
    p.get("stride_ms", w.seq.stride_ms);
    p.get("l_seq", w.seq.l_seq);
    p.get("train_first_end", w.train_first_end);
    p.get("train_last_end", w.train_last_end);
    p.get("train_end_step", w.train_end_step);
    p.get("pre_event_last_end", w.pre_event_last_end);
    p.get("post_event_first", w.post_event_first);
    p.get("heldout_per_range", w.heldout_per_range);
    p.get("unperturbed_from", w.unperturbed_from);
    p.get("unperturbed_to", w.unperturbed_to);
    p.get("unperturbed_samples", w.unperturbed_samples);
    p.finish();
  }
  if (root.has("dmd")) {
    auto p = root.sub("dmd");
    p.get("rank", c.dataset.dmd.rank);
    p.get("svd_rel_tol", c.dataset.dmd.svd_rel_tol);
    p.get("delay_embedding", c.dataset.dmd.delay_embedding);
    p.finish();
  }
  if (root.has("labels")) {
    auto p = root.sub("labels");
    p.get("v_lo", c.dataset.labels.v_lo);
    p.get("v_hi", c.dataset.labels.v_hi);
    p.get("f_lo", c.dataset.labels.f_lo);
    p.get("f_hi", c.dataset.labels.f_hi);
    p.get("zeta_min", c.dataset.labels.zeta_min);
    p.get("guard_after_ms", c.dataset.labels.guard_after_ms);
    p.finish();
  }
  if (root.has("model")) {
    auto p = root.sub("model");
    std::string kind = to_string(c.model.kind);
    p.get("kind", kind);
    c.model.kind = model_kind_from_string(kind);
    p.get("F", c.model.F);
    p.get("H", c.model.H);
    p.finish();
  }
  if (root.has("training")) {
    auto p = root.sub("training");
    p.get("lr", c.training.lr);
    p.get("weight_decay", c.training.weight_decay);
    p.get("epochs", c.training.epochs);
    p.get("batch_size", c.training.batch_size);
    p.get("early_stop_patience", c.training.early_stop_patience);
    p.get("val_fraction", c.training.val_fraction);
    p.get("test_fraction", c.training.test_fraction);
    p.finish();
  }
  if (root.has("evaluation")) {
    auto p = root.sub("evaluation");
    p.get("threshold", c.evaluation.threshold);
    if (p.has("snr_db")) {
      std::vector<Json> raw;
      p.get("snr_db", raw);
      c.evaluation.snr_db.clear();
      for (const auto& v : raw) {
        c.evaluation.snr_db.push_back(v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>());
      }
    }
    p.get("window_sweep_ms", c.evaluation.window_sweep_ms);
    p.get("node_subsets", c.evaluation.node_subsets);
    p.finish();
  }
  if (root.has("selection")) {
    auto p = root.sub("selection");
    p.get("k", c.selection.k);
    p.get("t_from", c.selection.range.t_from);
    p.get("t_to", c.selection.range.t_to);
    p.get("edge_keep_fraction", c.selection.edge_keep_fraction);
    p.finish();
  }
  if (root.has("bench")) {
    auto p = root.sub("bench");
    p.get("sizes", c.bench.sizes);
    p.get("repetitions", c.bench.repetitions);
    p.get("F", c.bench.F);
    p.get("H", c.bench.H);
    p.finish();
  }
  root.finish();
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  Json j;
  try {
    j = Json::parse(is);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

/// Hash of the resolved configuration, excluding output paths.
inline std::uint64_t config_hash(const RunConfig& c) {
  Json j = to_json(c);
  j.erase("paths");
  return fnv1a(j.dump());
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace dramn
