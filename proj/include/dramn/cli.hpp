#pragma once

// Command implementations behind the dramn executable.

#include "dramn/cache.hpp"
#include "dramn/config.hpp"
#include "dramn/evaluation.hpp"
#include "dramn/features.hpp"
#include "dramn/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace dramn::cli {

namespace fs = std::filesystem;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  bool deterministic = false;
  bool skip_existing = false;
  // evaluate
  bool window_sweep = false;
  bool node_subsets = false;
  // select
  int k = 0;
};

struct Context {
  RunConfig cfg;
  Options opt;
  std::uint64_t hash = 0;          // whole resolved config
  std::uint64_t dataset_hash = 0;  // sections that determine the store
  std::uint64_t model_hash = 0;    // sections that determine a trained model
  int workers = 1;
  std::ostream* log = &std::cerr;

  std::vector<std::string> meta() const {
    return {"config_hash=" + hex64(hash), "seed=" + std::to_string(cfg.seed), "tool=" + std::string(kToolVersion)};
  }
  Json meta_json() const {
    return Json{{"config_hash", hex64(hash)}, {"seed", cfg.seed}, {"tool", kToolVersion}};
  }
  EvalContext eval() const {
    EvalContext e;
    e.seq = cfg.dataset.windows.seq;
    e.dmd = cfg.dataset.dmd;
    e.dt = cfg.dataset.surrogate.dt;
    e.workers = workers;
    return e;
  }
  TrainConfig train_config() const {
    TrainConfig t = cfg.training;
    t.seed = cfg.seed;
    t.workers = workers;
    return t;
  }
  TrainHooks hooks(const std::string& tag) const {
    TrainHooks h;
    h.record_wall_time = !opt.deterministic;
    std::ostream* out = log;
    h.on_epoch = [out, tag](const EpochRecord& r) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "[%s] epoch %3d  train %.5f  val %.5f\n", tag.c_str(), r.epoch, r.train_loss,
                    r.val_loss);
      *out << buf << std::flush;
    };
    return h;
  }
  fs::path store() const { return cfg.paths.store; }
  fs::path cache() const { return cfg.paths.cache; }
  fs::path checkpoints() const { return cfg.paths.checkpoints; }
  fs::path reports() const { return cfg.paths.reports; }
};

inline std::uint64_t section_hash(const RunConfig& c, const std::vector<std::string>& keys) {
  const Json all = to_json(c);
  Json j;
  for (const auto& k : keys) j[k] = all.at(k);
  return fnv1a(j.dump());
}

inline Context make_context(const Options& opt) {
  Context ctx;
  ctx.opt = opt;
  ctx.cfg = load_run_config(opt.config_path);
  if (opt.seed) ctx.cfg.seed = *opt.seed;
  if (opt.workers < 1) throw ConfigError("--workers must be >= 1");
  ctx.workers = opt.deterministic ? 1 : opt.workers;
  ctx.hash = config_hash(ctx.cfg);
  ctx.dataset_hash = section_hash(ctx.cfg, {"seed", "surrogate", "dataset", "labels"});
  ctx.model_hash = section_hash(ctx.cfg, {"seed", "surrogate", "dataset", "labels", "windows", "dmd", "model",
                                          "training"});
  return ctx;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream os(probe);
    if (!os) throw DataError("directory not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

/// Writes through a temporary file so readers never see partial output.
inline void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + tmp.string());
    os << content;
    if (!os) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void save_checkpoint_atomic(const fs::path& path, const ModelParams& p, std::uint64_t hash) {
  std::ostringstream os;
  write_checkpoint(os, p, hash);
  write_atomic(path, os.str());
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string tsv_preamble(const Context& ctx) {
  std::string s;
  for (const auto& m : ctx.meta()) s += "# " + m + "\n";
  return s;
}

inline Json to_json(const MetricsReport& r) {
  Json j{{"accuracy", r.accuracy},
         {"precision", r.precision},
         {"recall", r.recall},
         {"f1", r.f1},
         {"specificity", r.specificity},
         {"auroc", r.auroc_set ? Json(r.auroc) : Json(nullptr)},
         {"confusion", {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}, {"tn", r.confusion.tn}}},
         {"threshold", r.threshold},
         {"n_samples", r.n_samples},
         {"undefined", r.undefined}};
  return j;
}

inline constexpr const char* kMetricsColumns =
    "n_samples\taccuracy\tprecision\trecall\tf1\tspecificity\tauroc\ttp\tfp\tfn\ttn\tthreshold";

inline std::string metrics_cells(const MetricsReport& r) {
  const auto& c = r.confusion;
  return std::to_string(r.n_samples) + '\t' + fmt(r.accuracy) + '\t' + fmt(r.precision) + '\t' + fmt(r.recall) +
         '\t' + fmt(r.f1) + '\t' + fmt(r.specificity) + '\t' + (r.auroc_set ? fmt(r.auroc) : "nan") + '\t' +
         std::to_string(c.tp) + '\t' + std::to_string(c.fp) + '\t' + std::to_string(c.fn) + '\t' +
         std::to_string(c.tn) + '\t' + fmt(r.threshold);
}

inline void write_json_report(const Context& ctx, const fs::path& path, Json body) {
  body["meta"] = ctx.meta_json();
  write_atomic(path, body.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Store access
// ---------------------------------------------------------------------------

inline fs::path manifest_path(const Context& ctx) { return ctx.store() / "manifest.tsv"; }

inline std::vector<ManifestEntry> load_manifest(const Context& ctx) {
  const fs::path p = manifest_path(ctx);
  std::ifstream is(p);
  if (!is) throw DataError("missing manifest: " + p.string() + " (run generate first)");
  std::string first;
  std::getline(is, first);
  const std::string want = "# dataset_hash=" + hex64(ctx.dataset_hash);
  if (first != want) {
    throw DataError("manifest " + p.string() + " was generated with a different dataset configuration");
  }
  is.seekg(0);
  return read_manifest(is);
}

struct LoadedData {
  std::vector<ScenarioData> scenarios;
  std::size_t cache_hits = 0, cache_misses = 0, cache_rebuilt = 0;
};

/// Loads scenario records from the store and windows them, using the
/// adjacency cache for the tensors.
inline LoadedData load_dataset(const Context& ctx, const WindowConfig& wcfg, bool with_gen,
                               const std::vector<Index>& channels = {}) {
  const auto entries = load_manifest(ctx);
  ensure_dir(ctx.cache());
  LoadedData out;
  out.scenarios.resize(entries.size());
  CacheStats stats;
  parallel_for(entries.size(), ctx.workers, [&](std::size_t i) {
    const auto& e = entries[i];
    const ScenarioRecord rec = load_scenario(ctx.store() / e.file);
    if (rec.id != e.id || rec.seed != e.seed) throw DataError("scenario file " + e.file + " does not match manifest");
    const ScenarioSpec spec{e.id, e.mix, e.event, e.seed};
    out.scenarios[i] =
        collect_samples_cached(rec, spec, wcfg, ctx.cfg.dataset.dmd, with_gen, channels, ctx.cache(), &stats);
  });
  out.cache_hits = stats.hits;
  out.cache_misses = stats.misses;
  out.cache_rebuilt = stats.rebuilt;
  *ctx.log << "adjacency cache: " << out.cache_hits << " hits, " << out.cache_misses << " misses";
  if (out.cache_rebuilt) *ctx.log << ", " << out.cache_rebuilt << " rebuilt";
  *ctx.log << "\n";
  return out;
}

inline Index channel_count(const std::vector<ScenarioData>& data) {
  for (const auto& d : data) {
    if (d.offsets.size() > 0) return d.offsets.size();
  }
  throw DataError("dataset has no scenarios");
}

inline ModelDims model_dims(const Context& ctx, Index n, int window_ms, int l_seq) {
  ModelDims d;
  d.n = n;
  d.T = window_ms / std::llround(ctx.cfg.dataset.surrogate.dt * 1000.0);
  d.F = ctx.cfg.model.F;
  d.H = ctx.cfg.model.H;
  d.d = kNumLayers;
  d.l_seq = l_seq;
  return d;
}

// ---------------------------------------------------------------------------
// Standardizer file
// ---------------------------------------------------------------------------

inline void save_standardizer(const Context& ctx, const fs::path& path, const Standardizer& z) {
  Json j{{"mean", std::vector<double>(z.mean.data(), z.mean.data() + z.mean.size())},
         {"std", std::vector<double>(z.std.data(), z.std.data() + z.std.size())},
         {"model_hash", hex64(ctx.model_hash)}};
  write_json_report(ctx, path, j);
}

inline Standardizer load_standardizer(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("missing standardizer: " + path.string() + " (run train first)");
  Json j;
  try {
    j = Json::parse(is);
  } catch (const Json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto s = j.at("std").get<std::vector<double>>();
  if (m.size() != s.size() || m.empty()) throw DataError(path.string() + ": malformed standardizer");
  Standardizer z;
  z.mean = Eigen::Map<const Vector>(m.data(), static_cast<Index>(m.size()));
  z.std = Eigen::Map<const Vector>(s.data(), static_cast<Index>(s.size()));
  return z;
}

struct TrainedModel {
  ModelParams params;
  Standardizer z;
};

inline TrainedModel load_trained(const Context& ctx, const std::string& stem) {
  const fs::path ck = ctx.checkpoints() / (stem + ".ckpt");
  if (!fs::exists(ck)) throw DataError("missing checkpoint: " + ck.string() + " (run train first)");
  Checkpoint c = load_checkpoint(ck.string());
  if (c.config_hash != ctx.model_hash) {
    throw DataError("checkpoint " + ck.string() + " was trained with a different configuration");
  }
  return {std::move(c.params), load_standardizer(ctx.checkpoints() / (stem + ".standardizer.json"))};
}

inline void save_trained(const Context& ctx, const std::string& stem, const FitResult& fit) {
  ensure_dir(ctx.checkpoints());
  save_checkpoint_atomic(ctx.checkpoints() / (stem + ".ckpt"), fit.train.params, ctx.model_hash);
  save_standardizer(ctx, ctx.checkpoints() / (stem + ".standardizer.json"), fit.standardizer);
}

inline void write_history(const Context& ctx, const fs::path& path, const TrainResult& r) {
  std::string s = tsv_preamble(ctx) + "# best_epoch=" + std::to_string(r.best_epoch) + "\n";
  s += "epoch\ttrain_loss\tval_loss\twall_ms\n";
  for (const auto& e : r.history) {
    s += std::to_string(e.epoch) + '\t' + fmt(e.train_loss) + '\t' + fmt(e.val_loss) + '\t' + fmt(e.wall_ms) + '\n';
  }
  write_atomic(path, s);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_generate(const Context& ctx) {
  const auto& dcfg = ctx.cfg.dataset;
  const auto specs = plan_dataset(dcfg, ctx.cfg.seed);
  if (specs.empty()) throw ConfigError("dataset plan is empty");
  ensure_dir(ctx.store());
  ensure_dir(ctx.reports());
  std::vector<ManifestEntry> entries(specs.size());
  std::atomic<std::size_t> reused{0};
  parallel_for(specs.size(), ctx.workers, [&](std::size_t i) {
    const auto& s = specs[i];
    const fs::path path = ctx.store() / scenario_filename(s.id);
    if (ctx.opt.skip_existing && fs::exists(path)) {
      try {
        const auto rec = load_scenario(path);
        if (rec.id == s.id && rec.seed == s.seed && rec.event == s.event && rec.mix.sg == s.mix.sg &&
            rec.mix.gfm == s.mix.gfm && rec.mix.gfl == s.mix.gfl) {
          entries[i] = manifest_entry(rec);
          ++reused;
          return;
        }
      } catch (const DataError&) {
      }
    }
    const auto rec = synthesize_scenario(s.mix, s.event, s.seed, dcfg.surrogate, s.id, dcfg.labels);
    save_scenario(path, rec);
    entries[i] = manifest_entry(rec);
  });

  std::ostringstream os;
  std::vector<std::string> pre{"dataset_hash=" + hex64(ctx.dataset_hash)};
  for (const auto& m : ctx.meta()) pre.push_back(m);
  write_manifest(os, entries, pre);
  write_atomic(manifest_path(ctx), os.str());

  // class balance per event
  std::map<std::string, std::array<std::size_t, 3>> bal;  // stable, unstable, diverged
  for (const auto& e : entries) {
    auto& b = bal[to_string(e.event)];
    ++b[e.diverged ? 2 : (e.label ? 1 : 0)];
  }
  std::string tsv = tsv_preamble(ctx) + "event\ttotal\tstable\tunstable\tdiverged\tunstable_fraction\n";
  std::size_t tot[3] = {0, 0, 0};
  for (const auto& [ev, b] : bal) {
    const std::size_t n = b[0] + b[1] + b[2];
    tsv += ev + '\t' + std::to_string(n) + '\t' + std::to_string(b[0]) + '\t' + std::to_string(b[1]) + '\t' +
           std::to_string(b[2]) + '\t' + fmt(static_cast<double>(b[1]) / static_cast<double>(n)) + '\n';
    for (int k = 0; k < 3; ++k) tot[k] += b[static_cast<std::size_t>(k)];
  }
  const std::size_t n = tot[0] + tot[1] + tot[2];
  tsv += "all\t" + std::to_string(n) + '\t' + std::to_string(tot[0]) + '\t' + std::to_string(tot[1]) + '\t' +
         std::to_string(tot[2]) + '\t' + fmt(static_cast<double>(tot[1]) / static_cast<double>(n)) + '\n';
  write_atomic(ctx.reports() / "class_balance.tsv", tsv);
  std::cout << "generated " << entries.size() - reused << " scenarios, reused " << reused << "\n";
  for (const auto& line : std::vector<std::string>{tsv}) {
    std::istringstream ls(line);
    std::string l;
    while (std::getline(ls, l)) {
      if (!l.empty() && l[0] != '#') std::cout << l << "\n";
    }
  }
  return 0;
}

inline int cmd_train(const Context& ctx) {
  ensure_dir(ctx.checkpoints());
  ensure_dir(ctx.reports());
  const auto loaded = load_dataset(ctx, ctx.cfg.dataset.windows, false);
  const auto tcfg = ctx.train_config();
  const auto split = split_samples(loaded.scenarios, tcfg, ctx.cfg.seed);
  const auto& seq = ctx.cfg.dataset.windows.seq;
  const auto dims = model_dims(ctx, channel_count(loaded.scenarios), seq.window_ms, seq.l_seq);
  const auto fit = fit_model(split.train, split.val, dims, ctx.cfg.model.kind, tcfg, ctx.eval(), ctx.cfg.seed,
                             ctx.hooks("train"));
  save_trained(ctx, "model", fit);
  write_history(ctx, ctx.reports() / "train_history.tsv", fit.train);
  Json split_json{{"train", split.ids.train}, {"val", split.ids.val}, {"test", split.ids.test}};
  write_json_report(ctx, ctx.reports() / "split.json", split_json);
  std::cout << "trained " << to_string(ctx.cfg.model.kind) << ": " << split.train.size() << " train / "
            << split.val.size() << " val samples, best epoch " << fit.train.best_epoch << ", cache hits "
            << loaded.cache_hits << "\n";
  return 0;
}

struct SweepRow {
  std::string label;
  MetricsReport report;
  int best_epoch = 0;
};

inline void write_sweep(const Context& ctx, const std::string& stem, const std::string& key,
                        const std::vector<SweepRow>& rows) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].report.f1 > rows[best].report.f1) best = i;
  }
  std::string tsv = tsv_preamble(ctx) + key + '\t' + kMetricsColumns + "\tbest_epoch\tbest_f1\n";
  Json arr = Json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    tsv += rows[i].label + '\t' + metrics_cells(rows[i].report) + '\t' + std::to_string(rows[i].best_epoch) + '\t' +
           (i == best ? "1" : "0") + '\n';
    arr.push_back({{key, rows[i].label},
                   {"metrics", to_json(rows[i].report)},
                   {"best_epoch", rows[i].best_epoch},
                   {"best_f1", i == best}});
  }
  write_atomic(ctx.reports() / (stem + ".tsv"), tsv);
  write_json_report(ctx, ctx.reports() / (stem + ".json"), Json{{"rows", arr}});
  std::cout << stem << ": best " << key << " = " << rows[best].label << " (F1 " << fmt(rows[best].report.f1)
            << ")\n";
}

inline std::vector<Index> read_ranking(const Context& ctx) {
  const fs::path p = ctx.reports() / "node_strength.tsv";
  std::ifstream is(p);
  if (!is) throw DataError("missing selection report: " + p.string() + " (run select first)");
  std::string line;
  std::vector<std::pair<std::size_t, Index>> by_rank;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string c;
    while (std::getline(ls, c, '\t')) cells.push_back(c);
    if (cells.size() < 3) throw DataError("malformed selection report line: " + line);
    by_rank.emplace_back(std::stoul(cells.back()), static_cast<Index>(std::stol(cells.front())));
  }
  std::sort(by_rank.begin(), by_rank.end());
  std::vector<Index> out;
  for (const auto& [r, ch] : by_rank) out.push_back(ch);
  if (out.empty()) throw DataError("selection report " + p.string() + " has no rows");
  return out;
}

inline int cmd_evaluate(const Context& ctx) {
  ensure_dir(ctx.reports());
  const auto tcfg = ctx.train_config();
  const auto model = load_trained(ctx, "model");
  const auto loaded = load_dataset(ctx, ctx.cfg.dataset.windows, true);
  const auto split = split_samples(loaded.scenarios, tcfg, ctx.cfg.seed);
  const auto ectx = ctx.eval();
  const double th = ctx.cfg.evaluation.threshold;
  const auto test = evaluate_raw(split.test, model.params, model.z, ectx, th);
  const auto train_range = evaluate_raw(split.train, model.params, model.z, ectx, th);
  std::string tsv = tsv_preamble(ctx) + std::string("set\t") + kMetricsColumns + "\n";
  tsv += "test\t" + metrics_cells(test) + "\n";
  tsv += "train\t" + metrics_cells(train_range) + "\n";
  Json body{{"test", to_json(test)}, {"train", to_json(train_range)}};
  if (!split.gen.empty()) {
    const auto gen = generalization_eval(model.params, model.z, split.gen, ectx);
    tsv += "generalization\t" + metrics_cells(gen) + "\n";
    body["generalization"] = to_json(gen);
  }
  write_atomic(ctx.reports() / "evaluate.tsv", tsv);
  write_json_report(ctx, ctx.reports() / "evaluate.json", body);
  std::cout << "test: accuracy " << fmt(test.accuracy) << ", recall " << fmt(test.recall) << ", auroc "
            << (test.auroc_set ? fmt(test.auroc) : "nan") << "\n";

  if (ctx.opt.window_sweep) {
    std::vector<SweepRow> rows;
    for (int t : ctx.cfg.evaluation.window_sweep_ms) {
      WindowConfig w = ctx.cfg.dataset.windows;
      w.seq.window_ms = t;
      if (t % std::llround(ctx.cfg.dataset.surrogate.dt * 1000.0) != 0) {
        throw ConfigError("window " + std::to_string(t) + " ms is not a multiple of the sample period");
      }
      const auto d = load_dataset(ctx, w, false);
      const auto sp = split_samples(d.scenarios, tcfg, ctx.cfg.seed);
      EvalContext e = ectx;
      e.seq = w.seq;
      const auto dims = model_dims(ctx, channel_count(d.scenarios), t, w.seq.l_seq);
      const auto fit = fit_model(sp.train, sp.val, dims, ctx.cfg.model.kind, tcfg, e, ctx.cfg.seed,
                                 ctx.hooks("T=" + std::to_string(t)));
      rows.push_back({std::to_string(t), evaluate_raw(sp.test, fit.train.params, fit.standardizer, e, th),
                      fit.train.best_epoch});
    }
    write_sweep(ctx, "window_sweep", "window_ms", rows);
  }

  if (ctx.opt.node_subsets) {
    const auto ranking = read_ranking(ctx);
    const Index n = static_cast<Index>(ranking.size());
    std::vector<SweepRow> rows;
    std::set<Index> done;
    for (int k : ctx.cfg.evaluation.node_subsets) {
      const Index kk = (k == 0 || k >= n) ? n : k;
      if (!done.insert(kk).second) continue;
      std::vector<Index> chans(ranking.begin(), ranking.begin() + kk);
      std::sort(chans.begin(), chans.end());
      const auto d = load_dataset(ctx, ctx.cfg.dataset.windows, false, kk == n ? std::vector<Index>{} : chans);
      const auto sp = split_samples(d.scenarios, tcfg, ctx.cfg.seed);
      const auto& seq = ctx.cfg.dataset.windows.seq;
      const auto dims = model_dims(ctx, kk, seq.window_ms, seq.l_seq);
      const auto fit = fit_model(sp.train, sp.val, dims, ctx.cfg.model.kind, tcfg, ectx, ctx.cfg.seed,
                                 ctx.hooks("k=" + std::to_string(kk)));
      rows.push_back({kk == n ? "all" : std::to_string(kk),
                      evaluate_raw(sp.test, fit.train.params, fit.standardizer, ectx, th), fit.train.best_epoch});
    }
    write_sweep(ctx, "node_subsets", "nodes", rows);
  }
  return 0;
}

inline int cmd_select(const Context& ctx) {
  ensure_dir(ctx.reports());
  const auto loaded = load_dataset(ctx, ctx.cfg.dataset.windows, false);
  // training scenarios only, so test scenarios never inform the selection
  const auto split = split_samples(loaded.scenarios, ctx.train_config(), ctx.cfg.seed);
  const auto series = training_tensors(split);
  const auto& range = ctx.cfg.selection.range;
  const auto report = strength_report(series, range);
  const Index n = report.composite.size();
  int k = ctx.opt.k > 0 ? ctx.opt.k : ctx.cfg.selection.k;
  if (k == 0) k = static_cast<int>(std::ceil(0.18 * static_cast<double>(n)));
  const auto top = top_k(report, k);
  const auto& names = loaded.scenarios.front().channel_names;

  std::ostringstream os;
  os << tsv_preamble(ctx) << "# range=" << range.t_from << ".." << range.t_to << " tensors=" << report.n_tensors
     << "\n";
  write_strength_report(os, report, names);
  write_atomic(ctx.reports() / "node_strength.tsv", os.str());
  std::ostringstream es;
  es << tsv_preamble(ctx) << "# keep_fraction=" << fmt(ctx.cfg.selection.edge_keep_fraction) << "\n";
  write_edge_list(es, aggregated_edges(series, range, ctx.cfg.selection.edge_keep_fraction), names);
  write_atomic(ctx.reports() / "edges.tsv", es.str());
  Json sel = Json::array();
  for (Index c : top) sel.push_back({{"channel", c}, {"name", channel_label(names, c)}});
  write_json_report(ctx, ctx.reports() / "top_k.json", Json{{"k", k}, {"channels", sel}});
  std::cout << "top " << k << ":";
  for (Index c : top) std::cout << ' ' << channel_label(names, c) << '(' << c << ')';
  std::cout << "\n";
  return 0;
}

inline int cmd_noise(const Context& ctx) {
  ensure_dir(ctx.reports());
  const auto tcfg = ctx.train_config();
  const auto clean = load_trained(ctx, "model");
  const auto loaded = load_dataset(ctx, ctx.cfg.dataset.windows, false);
  const auto split = split_samples(loaded.scenarios, tcfg, ctx.cfg.seed);
  const auto ectx = ctx.eval();
  const auto& snrs = ctx.cfg.evaluation.snr_db;

  TrainedModel augmented;
  const fs::path ck = ctx.checkpoints() / "model_noise.ckpt";
  bool have = false;
  if (ctx.opt.skip_existing && fs::exists(ck)) {
    try {
      augmented = load_trained(ctx, "model_noise");
      have = true;
    } catch (const DataError&) {
    }
  }
  if (!have) {
    const auto& seq = ctx.cfg.dataset.windows.seq;
    const auto dims = model_dims(ctx, channel_count(loaded.scenarios), seq.window_ms, seq.l_seq);
    const auto fit =
        fit_noise_augmented(split, snrs, dims, ctx.cfg.model.kind, tcfg, ectx, ctx.cfg.seed, ctx.hooks("noise"));
    save_trained(ctx, "model_noise", fit);
    write_history(ctx, ctx.reports() / "train_history_noise.tsv", fit.train);
    augmented = {fit.train.params, fit.standardizer};
  }
  const auto seed = sweep_seed(ctx.cfg.seed);
  const auto a = noise_sweep(clean.params, clean.z, split.test, split.test_offsets, snrs, seed, ectx);
  const auto b = noise_sweep(augmented.params, augmented.z, split.test, split.test_offsets, snrs, seed, ectx);
  std::string tsv = tsv_preamble(ctx) + "snr_db\tmodel\t" + kMetricsColumns + "\n";
  Json arr = Json::array();
  for (std::size_t i = 0; i < snrs.size(); ++i) {
    const std::string snr = std::isinf(snrs[i]) ? "inf" : fmt(snrs[i]);
    tsv += snr + "\tclean\t" + metrics_cells(a[i].report) + "\n";
    tsv += snr + "\tnoise_augmented\t" + metrics_cells(b[i].report) + "\n";
    arr.push_back({{"snr_db", detail::db_to_json(snrs[i])},
                   {"clean", to_json(a[i].report)},
                   {"noise_augmented", to_json(b[i].report)}});
    std::cout << "SNR " << snr << " dB: clean auroc " << fmt(a[i].report.auroc) << ", augmented auroc "
              << fmt(b[i].report.auroc) << "\n";
  }
  write_atomic(ctx.reports() / "noise_sweep.tsv", tsv);
  write_json_report(ctx, ctx.reports() / "noise_sweep.json", Json{{"rows", arr}});
  return 0;
}

inline int cmd_ablate(const Context& ctx) {
  ensure_dir(ctx.reports());
  const auto tcfg = ctx.train_config();
  const auto loaded = load_dataset(ctx, ctx.cfg.dataset.windows, false);
  const auto split = split_samples(loaded.scenarios, tcfg, ctx.cfg.seed);
  const auto& seq = ctx.cfg.dataset.windows.seq;
  const auto dims = model_dims(ctx, channel_count(loaded.scenarios), seq.window_ms, seq.l_seq);
  const auto rows = ablation_run(split, default_ablation_variants(seq.l_seq), dims, tcfg, ctx.eval(), ctx.cfg.seed,
                                 ctx.hooks("ablate"));
  std::string tsv = tsv_preamble(ctx) + "variant\tkind\tl_seq\t" + kMetricsColumns +
                    "\tbest_epoch\tepochs_run\tnon_convergent\n";
  Json arr = Json::array();
  for (const auto& r : rows) {
    tsv += r.variant.name + '\t' + to_string(r.variant.kind) + '\t' + std::to_string(r.variant.l_seq) + '\t' +
           metrics_cells(r.report) + '\t' + std::to_string(r.best_epoch) + '\t' + std::to_string(r.epochs_run) +
           '\t' + (r.non_convergent ? "1" : "0") + '\n';
    arr.push_back({{"variant", r.variant.name},
                   {"kind", to_string(r.variant.kind)},
                   {"l_seq", r.variant.l_seq},
                   {"metrics", to_json(r.report)},
                   {"best_epoch", r.best_epoch},
                   {"epochs_run", r.epochs_run},
                   {"non_convergent", r.non_convergent}});
    std::cout << r.variant.name << ": auroc " << (r.report.auroc_set ? fmt(r.report.auroc) : "nan")
              << (r.non_convergent ? " (non-convergent)" : "") << "\n";
  }
  write_atomic(ctx.reports() / "ablation.tsv", tsv);
  write_json_report(ctx, ctx.reports() / "ablation.json", Json{{"rows", arr}});
  return 0;
}

inline int cmd_bench(const Context& ctx) {
  ensure_dir(ctx.reports());
  TimingConfig t;
  t.sizes = ctx.cfg.bench.sizes;
  t.repetitions = ctx.cfg.bench.repetitions;
  t.window_len = ctx.cfg.dataset.windows.seq.window_ms / std::llround(ctx.cfg.dataset.surrogate.dt * 1000.0);
  t.l_seq = ctx.cfg.dataset.windows.seq.l_seq;
  t.F = ctx.cfg.bench.F;
  t.H = ctx.cfg.bench.H;
  t.seed = ctx.cfg.seed;
  const auto rows = timing_benchmark(t, ctx.cfg.dataset.dmd);
  std::string tsv = tsv_preamble(ctx) + "stage\tn\trepetitions\tmean_ms\tp95_ms\n";
  Json arr = Json::array();
  for (const auto& r : rows) {
    tsv += r.stage + '\t' + std::to_string(r.n) + '\t' + std::to_string(r.repetitions) + '\t' + fmt(r.mean_ms) +
           '\t' + fmt(r.p95_ms) + '\n';
    arr.push_back({{"stage", r.stage}, {"n", r.n}, {"repetitions", r.repetitions}, {"mean_ms", r.mean_ms},
                   {"p95_ms", r.p95_ms}});
  }
  write_atomic(ctx.reports() / "bench.tsv", tsv);
  write_json_report(ctx, ctx.reports() / "bench.json", Json{{"rows", arr}});
  std::cout << tsv.substr(tsv_preamble(ctx).size());
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& err = std::cerr) {
  CLI::App app{"DMD-driven recurrent graph stability forecasting"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--workers", opt.workers, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--deterministic", opt.deterministic, "sequential execution, no wall-clock fields");
    sub->add_flag("--skip-existing", opt.skip_existing, "reuse valid artifacts already on disk");
  };
  std::map<std::string, int (*)(const Context&)> commands{
      {"generate", cmd_generate}, {"train", cmd_train}, {"evaluate", cmd_evaluate}, {"select", cmd_select},
      {"noise", cmd_noise},       {"ablate", cmd_ablate}, {"bench", cmd_bench}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, fn] : commands) subs[name] = app.add_subcommand(name);
  subs["generate"]->description("synthesize the scenario store and manifest");
  subs["train"]->description("train the configured model and write the best checkpoint");
  subs["evaluate"]->description("test and held-out metrics, optional window and node sweeps");
  subs["select"]->description("rank channels by cumulative node strength");
  subs["noise"]->description("AUROC under additive noise for clean and noise-augmented models");
  subs["ablate"]->description("train and compare the model variants");
  subs["bench"]->description("adjacency and inference timing");
  for (auto& [name, sub] : subs) add_common(sub);
  subs["evaluate"]->add_flag("--window-sweep", opt.window_sweep, "retrain and evaluate per window size");
  subs["evaluate"]->add_flag("--node-subsets", opt.node_subsets, "retrain and evaluate on top-k channel subsets");
  subs["select"]->add_option("--k", opt.k, "number of channels to select")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cout, err);
    return 2;
  }
  bool seed_given = false;
  for (auto& [name, sub] : subs) {
    if (sub->parsed() && sub->count("--seed") > 0) seed_given = true;
  }
  if (seed_given) opt.seed = seed;

  try {
    const Context ctx = make_context(opt);
    for (const auto& [name, sub] : subs) {
      if (sub->parsed()) return commands.at(name)(ctx);
    }
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace dramn::cli
