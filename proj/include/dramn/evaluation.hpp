#pragma once

// Model evaluation studies: plain test metrics, noise sweeps, ablations,
// held-out range generalization and runtime benchmarks.

#include "dramn/metrics.hpp"
#include "dramn/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace dramn {

// Shared context for turning raw samples into model inputs.
struct EvalContext {
  SequenceConfig seq;
  DmdConfig dmd;
  double dt = 1e-3;
  int workers = 1;
};

inline std::vector<double> predict_parallel(const std::vector<const SequenceSample*>& samples,
                                            const ModelParams& params, int workers) {
  std::vector<double> out(samples.size());
  parallel_for(samples.size(), workers, [&](std::size_t i) { out[i] = forward(*samples[i], params); });
  return out;
}

inline std::vector<int> labels_of(const std::vector<const RawSample*>& samples) {
  std::vector<int> y;
  y.reserve(samples.size());
  for (const auto* s : samples) y.push_back(s->spec.label);
  return y;
}

/// Standardizes, predicts and scores raw samples.
inline MetricsReport evaluate_raw(const std::vector<const RawSample*>& samples, const ModelParams& params,
                                  const Standardizer& z, const EvalContext& ctx, double threshold = 0.5) {
  if (samples.empty()) throw DataError("evaluate: empty sample set");
  const auto prepared = prepare_samples(samples, z, ctx.seq, ctx.dt);
  return evaluate_scores(predict_parallel(pointers(prepared), params, ctx.workers), labels_of(samples), threshold);
}

// ---------------------------------------------------------------------------
// Training wrapper
// ---------------------------------------------------------------------------

struct FitResult {
  TrainResult train;
  Standardizer standardizer;
  MetricsReport test;
};

/// Standardizer fit on the training samples, then training from init_seed.
inline FitResult fit_model(const std::vector<const RawSample*>& train_raw, const std::vector<const RawSample*>& val_raw,
                           const ModelDims& dims, ModelKind kind, const TrainConfig& tcfg, const EvalContext& ctx,
                           std::uint64_t init_seed, const TrainHooks& hooks = {}) {
  if (train_raw.empty() || val_raw.empty()) throw DataError("fit_model: empty train or validation set");
  FitResult out;
  out.standardizer = fit_standardizer(train_raw);
  const auto tr = prepare_samples(train_raw, out.standardizer, ctx.seq, ctx.dt);
  const auto va = prepare_samples(val_raw, out.standardizer, ctx.seq, ctx.dt);
  out.train = train(pointers(tr), pointers(va), init_params(dims, init_seed, kind), tcfg, hooks);
  return out;
}

/// Every tensor of the training split, for channel ranking.
inline std::vector<const AdjacencyTensor*> training_tensors(const SplitSamples& split) {
  std::vector<const AdjacencyTensor*> out;
  for (const auto* s : split.train) {
    for (const auto& t : s->tensors) out.push_back(&t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

inline std::vector<double> default_snr_list() { return {5, 15, 25, 35, 45, 55, 65, 75, 85}; }

/// Noisy copies of `samples` (tensors recomputed), one per sample at an SNR
/// drawn uniformly from `snrs`.
inline std::vector<RawSample> noise_augment(const std::vector<const RawSample*>& samples,
                                            const std::vector<const Vector*>& offsets,
                                            const std::vector<double>& snrs, std::uint64_t seed,
                                            const EvalContext& ctx) {
  if (samples.size() != offsets.size()) throw DataError("noise_augment: offsets length mismatch");
  if (snrs.empty()) throw ConfigError("noise_augment: empty SNR list");
  std::vector<double> pick(samples.size());
  std::mt19937_64 rng(mix_seed(seed, 0xA5));
  std::uniform_int_distribution<std::size_t> u(0, snrs.size() - 1);
  for (auto& p : pick) p = snrs[u(rng)];
  std::vector<RawSample> out(samples.size());
  parallel_for(samples.size(), ctx.workers, [&](std::size_t i) {
    out[i] = noisy_sample(*samples[i], *offsets[i], pick[i], noise_seed(seed, samples[i]->spec, pick[i]), ctx.seq,
                          ctx.dmd, ctx.dt);
  });
  return out;
}

/// Trains on the clean split plus one noisy copy of every training and
/// validation sample; the standardizer is refit on the combined set.
inline FitResult fit_noise_augmented(const SplitSamples& split, const std::vector<double>& snrs,
                                     const ModelDims& dims, ModelKind kind, const TrainConfig& tcfg,
                                     const EvalContext& ctx, std::uint64_t seed, const TrainHooks& hooks = {}) {
  const auto tr_noisy = noise_augment(split.train, split.train_offsets, snrs, mix_seed(seed, 1), ctx);
  const auto va_noisy = noise_augment(split.val, split.val_offsets, snrs, mix_seed(seed, 2), ctx);
  auto tr = split.train;
  auto va = split.val;
  for (const auto& s : tr_noisy) tr.push_back(&s);
  for (const auto& s : va_noisy) va.push_back(&s);
  return fit_model(tr, va, dims, kind, tcfg, ctx, seed, hooks);
}

/// Seed of the test-time noise draws in a sweep.
inline std::uint64_t sweep_seed(std::uint64_t seed) { return mix_seed(seed, 3); }

struct NoiseRow {
  double snr_db = 0.0;
  MetricsReport report;
};

/// Test samples corrupted at each SNR, tensors recomputed from the noisy
/// rows, standardized with the training statistics. An infinite SNR leaves
/// samples untouched.
inline std::vector<NoiseRow> noise_sweep(const ModelParams& params, const Standardizer& z,
                                         const std::vector<const RawSample*>& samples,
                                         const std::vector<const Vector*>& offsets, const std::vector<double>& snrs,
                                         std::uint64_t seed, const EvalContext& ctx) {
  if (samples.size() != offsets.size()) throw DataError("noise_sweep: offsets length mismatch");
  std::vector<NoiseRow> rows;
  for (double snr : snrs) {
    std::vector<RawSample> noisy(samples.size());
    parallel_for(samples.size(), ctx.workers, [&](std::size_t i) {
      noisy[i] = noisy_sample(*samples[i], *offsets[i], snr, noise_seed(seed, samples[i]->spec, snr), ctx.seq, ctx.dmd,
                              ctx.dt);
    });
    std::vector<const RawSample*> ptrs;
    for (const auto& s : noisy) ptrs.push_back(&s);
    rows.push_back({snr, evaluate_raw(ptrs, params, z, ctx)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct AblationVariant {
  std::string name;
  ModelKind kind = ModelKind::Dramn;
  int l_seq = 5;
};

inline std::vector<AblationVariant> default_ablation_variants(int l_seq) {
  return {{"dramn_lseq" + std::to_string(l_seq), ModelKind::Dramn, l_seq},
          {"dramn_lseq1", ModelKind::Dramn, 1},
          {"lstm_identity", ModelKind::IdentityLstm, l_seq},
          {"gcn_single_step", ModelKind::Gcn, l_seq}};
}

struct AblationRow {
  AblationVariant variant;
  MetricsReport report;
  int best_epoch = 0;
  int epochs_run = 0;
  bool non_convergent = false;
};

inline constexpr double kNonConvergentAuroc = 0.6;

/// Validation loss never improved after epoch 1 and test AUROC below 0.6.
inline bool non_convergent(int best_epoch, const MetricsReport& r) {
  return best_epoch == 1 && r.auroc_set && r.auroc < kNonConvergentAuroc;
}

/// Trains every variant on the same split and initialization seed.
/// Shorter-sequence variants use the trailing windows of each sample.
inline std::vector<AblationRow> ablation_run(const SplitSamples& split, const std::vector<AblationVariant>& variants,
                                             const ModelDims& dims, const TrainConfig& tcfg, const EvalContext& ctx,
                                             std::uint64_t init_seed, const TrainHooks& hooks = {}) {
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    const SequenceConfig seq = with_l_seq(ctx.seq, v.l_seq);
    auto cut = [&](const std::vector<const RawSample*>& src, std::vector<RawSample>& store) {
      store.reserve(src.size());
      std::vector<const RawSample*> out;
      for (const auto* s : src) store.push_back(truncate_sequence(*s, ctx.seq, v.l_seq, ctx.dt));
      for (const auto& s : store) out.push_back(&s);
      return out;
    };
    std::vector<RawSample> tr_store, va_store, te_store;
    const auto tr = cut(split.train, tr_store);
    const auto va = cut(split.val, va_store);
    const auto te = cut(split.test, te_store);
    EvalContext vctx = ctx;
    vctx.seq = seq;
    ModelDims vd = dims;
    vd.l_seq = v.l_seq;
    const FitResult fit = fit_model(tr, va, vd, v.kind, tcfg, vctx, init_seed, hooks);
    AblationRow row;
    row.variant = v;
    row.report = evaluate_raw(te, fit.train.params, fit.standardizer, vctx);
    row.best_epoch = fit.train.best_epoch;
    row.epochs_run = static_cast<int>(fit.train.history.size());
    row.non_convergent = non_convergent(row.best_epoch, row.report);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Generalization
// ---------------------------------------------------------------------------

/// Metrics on the pre-event and post-event held-out samples.
inline MetricsReport generalization_eval(const ModelParams& params, const Standardizer& z,
                                         const std::vector<const RawSample*>& heldout, const EvalContext& ctx) {
  if (heldout.empty()) throw DataError("generalization_eval: empty held-out set");
  return evaluate_raw(heldout, params, z, ctx);
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

struct TimingRow {
  std::string stage;
  Index n = 0;
  std::size_t repetitions = 0;
  double mean_ms = 0.0;
  double p95_ms = 0.0;
};

struct TimingConfig {
  std::vector<Index> sizes{13, 72};
  std::size_t repetitions = 10000;
  std::size_t warmup = 3;
  Index window_len = 1000;
  int l_seq = 5;
  Index F = 64;
  Index H = 64;
  std::uint64_t seed = 0;
};

inline TimingRow summarize_timings(std::string stage, Index n, std::vector<double> ms) {
  TimingRow r;
  r.stage = std::move(stage);
  r.n = n;
  r.repetitions = ms.size();
  if (ms.empty()) return r;
  double sum = 0.0;
  for (double v : ms) sum += v;
  r.mean_ms = sum / static_cast<double>(ms.size());
  if (ms.size() == 1) {
    r.p95_ms = r.mean_ms;
  } else {
    std::sort(ms.begin(), ms.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(ms.size())));
    r.p95_ms = ms[std::max<std::size_t>(rank, 1) - 1];
  }
  return r;
}

/// Windows of damped oscillations mixed into n channels plus small noise.
inline Matrix benchmark_window(Index n, Index len, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  const int modes = 4;
  Matrix mix(modes * 2, n);
  for (Index i = 0; i < mix.size(); ++i) mix.data()[i] = nd(rng);
  Matrix basis(len, modes * 2);
  for (int k = 0; k < modes; ++k) {
    const double w = 2.0 * std::numbers::pi * (0.5 + 0.4 * k) * 1e-3;
    const double s = -0.2e-3 * (k + 1);
    for (Index t = 0; t < len; ++t) {
      const double e = std::exp(s * static_cast<double>(t));
      basis(t, 2 * k) = e * std::cos(w * static_cast<double>(t));
      basis(t, 2 * k + 1) = e * std::sin(w * static_cast<double>(t));
    }
  }
  Matrix x = basis * mix;
  for (Index i = 0; i < x.size(); ++i) x.data()[i] += 1e-3 * nd(rng);
  return x;
}

/// Per-window adjacency construction and per-sample inference, single
/// threaded, monotonic clock, warm-up runs discarded.
inline std::vector<TimingRow> timing_benchmark(const TimingConfig& cfg, const DmdConfig& dmd_cfg = {}) {
  using clock = std::chrono::steady_clock;
  std::vector<TimingRow> rows;
  for (Index n : cfg.sizes) {
    if (n < 1) throw ConfigError("timing size must be >= 1");
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(n)));
    TimeSeriesWindow w;
    w.data = benchmark_window(n, cfg.window_len, rng);
    w.dt = 1e-3;
    std::vector<double> adj_ms;
    AdjacencyTensor tensor;
    for (std::size_t r = 0; r < cfg.warmup + cfg.repetitions; ++r) {
      const auto t0 = clock::now();
      tensor = build_adjacency(w, dmd_cfg);
      const auto t1 = clock::now();
      if (r >= cfg.warmup) adj_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    rows.push_back(summarize_timings("adjacency", n, std::move(adj_ms)));

    ModelDims dims;
    dims.n = n;
    dims.T = cfg.window_len;
    dims.F = cfg.F;
    dims.H = cfg.H;
    dims.l_seq = cfg.l_seq;
    const ModelParams params = init_params(dims, cfg.seed);
    auto record = std::make_shared<const Matrix>(benchmark_window(n, cfg.window_len * cfg.l_seq, rng));
    SequenceSample sample;
    for (int k = 0; k < cfg.l_seq; ++k) {
      sample.windows.push_back({record, static_cast<Index>(k) * cfg.window_len, cfg.window_len});
      sample.tensors.push_back(tensor);
    }
    std::vector<double> inf_ms;
    double sink = 0.0;
    for (std::size_t r = 0; r < cfg.warmup + cfg.repetitions; ++r) {
      const auto t0 = clock::now();
      sink += forward(sample, params);
      const auto t1 = clock::now();
      if (r >= cfg.warmup) inf_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    if (!std::isfinite(sink)) throw NumericalError("benchmark inference produced a non-finite output");
    rows.push_back(summarize_timings("inference", n, std::move(inf_ms)));
  }
  return rows;
}

}  // namespace dramn
