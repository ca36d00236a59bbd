#pragma once

// Dataset assembly shared by the CLI and the acceptance suite: scenario
// synthesis, per-sample raw slices with their adjacency tensors, channel
// restriction, noise, standardization, and a deterministic parallel map.

#include "dramn/adjacency.hpp"
#include "dramn/data.hpp"
#include "dramn/model.hpp"
#include "dramn/training.hpp"

#include <atomic>
#include <exception>
#include <memory>
#include <thread>
#include <vector>

namespace dramn {

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Each index is
/// handled exactly once; results written by index are order-independent.
template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), count);
  if (nw <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(nw);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < nw; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < count; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = count;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct DatasetConfig {
  SurrogateConfig surrogate;
  int grid_total = 100;
  int grid_min_share = 1;
  int grid_step = 2;
  std::vector<EventKind> events{EventKind::LoadIncrease, EventKind::ShortCircuit, EventKind::Unperturbed};
  int keep_1_in = 20;
  bool thin_unperturbed = true;
  WindowConfig windows;
  DmdConfig dmd;
  LabelThresholds labels;

  void validate() const {
    surrogate.validate();
    windows.validate();
    dmd.validate();
    if (events.empty()) throw ConfigError("dataset.events must not be empty");
    if (keep_1_in < 1) throw ConfigError("dataset.keep_1_in must be >= 1");
    if (windows.seq.window_ms % std::llround(surrogate.dt * 1000.0) != 0) {
      throw ConfigError("window_ms must be a multiple of the sample period");
    }
  }
};

inline std::vector<ScenarioSpec> plan_dataset(const DatasetConfig& cfg, std::uint64_t master_seed) {
  cfg.validate();
  const auto grid = ternary_grid(cfg.grid_total, cfg.grid_min_share, cfg.grid_step);
  return plan_scenarios(grid, cfg.events, master_seed, cfg.keep_1_in, cfg.thin_unperturbed);
}

// One sequence sample before standardization: the raw rows it spans and the
// tensors computed from them.
struct RawSample {
  std::shared_ptr<const Matrix> slice;
  std::vector<AdjacencyTensor> tensors;
  SampleSpec spec;
};

struct ScenarioData {
  ScenarioSpec spec;
  int label = 0;
  bool diverged = false;
  Vector offsets;
  std::vector<std::string> channel_names;
  std::vector<RawSample> train;           // event-to-settling sweep
  std::vector<RawSample> generalization;  // held-out ranges
};

inline RawSample make_raw_sample(Matrix slice, const Vector& offsets, const SampleSpec& spec,
                                 const SequenceConfig& seq, const DmdConfig& dmd_cfg, double dt) {
  RawSample s;
  s.tensors = slice_tensors(slice, offsets, spec.t_end, dt, seq, dmd_cfg);
  s.slice = std::make_shared<const Matrix>(std::move(slice));
  s.spec = spec;
  return s;
}

/// Slices and tensors of one record; the full trajectory is not retained.
inline ScenarioData collect_samples(const ScenarioRecord& rec, const ScenarioSpec& spec, const WindowConfig& wcfg,
                                    const DmdConfig& dmd_cfg, bool with_generalization) {
  ScenarioData out;
  out.spec = spec;
  out.label = rec.label;
  out.diverged = rec.diverged;
  out.offsets = rec.offsets;
  out.channel_names = rec.trajectory.channel_names;
  if (rec.diverged) return out;
  const WindowPlan plan = window_plan(rec, wcfg);
  for (const auto& s : plan.train) {
    out.train.push_back(make_raw_sample(sequence_slice(rec.trajectory, s.t_end, wcfg.seq), rec.offsets, s, wcfg.seq,
                                        dmd_cfg, rec.trajectory.dt));
  }
  if (with_generalization) {
    for (const auto& s : plan.generalization) {
      out.generalization.push_back(make_raw_sample(sequence_slice(rec.trajectory, s.t_end, wcfg.seq), rec.offsets, s,
                                                   wcfg.seq, dmd_cfg, rec.trajectory.dt));
    }
  }
  return out;
}

/// Synthesizes and windows every planned scenario in memory.
inline std::vector<ScenarioData> build_dataset(const std::vector<ScenarioSpec>& specs, const DatasetConfig& cfg,
                                               int workers, bool with_generalization = false) {
  cfg.validate();
  std::vector<ScenarioData> out(specs.size());
  parallel_for(specs.size(), workers, [&](std::size_t i) {
    const auto rec = synthesize_scenario(specs[i].mix, specs[i].event, specs[i].seed, cfg.surrogate, specs[i].id,
                                         cfg.labels);
    out[i] = collect_samples(rec, specs[i], cfg.windows, cfg.dmd, with_generalization);
  });
  return out;
}

/// Keeps only `channels` (in the given order) and recomputes the tensors, as
/// if only those measurements had been recorded.
inline RawSample restrict_channels(const RawSample& s, const Vector& offsets, const std::vector<Index>& channels,
                                   const SequenceConfig& seq, const DmdConfig& dmd_cfg, double dt) {
  Matrix sub(s.slice->rows(), static_cast<Index>(channels.size()));
  Vector off(static_cast<Index>(channels.size()));
  for (std::size_t k = 0; k < channels.size(); ++k) {
    if (channels[k] < 0 || channels[k] >= s.slice->cols()) throw ConfigError("channel index out of range");
    sub.col(static_cast<Index>(k)) = s.slice->col(channels[k]);
    off(static_cast<Index>(k)) = offsets(channels[k]);
  }
  return make_raw_sample(std::move(sub), off, s.spec, seq, dmd_cfg, dt);
}

inline ScenarioData restrict_channels(const ScenarioData& d, const std::vector<Index>& channels,
                                      const WindowConfig& wcfg, const DmdConfig& dmd_cfg, double dt) {
  ScenarioData out = d;
  out.offsets = Vector(static_cast<Index>(channels.size()));
  out.channel_names.clear();
  for (std::size_t k = 0; k < channels.size(); ++k) {
    out.offsets(static_cast<Index>(k)) = d.offsets(channels[k]);
    if (static_cast<std::size_t>(channels[k]) < d.channel_names.size()) {
      out.channel_names.push_back(d.channel_names[static_cast<std::size_t>(channels[k])]);
    }
  }
  out.train.clear();
  out.generalization.clear();
  for (const auto& s : d.train) out.train.push_back(restrict_channels(s, d.offsets, channels, wcfg.seq, dmd_cfg, dt));
  for (const auto& s : d.generalization) {
    out.generalization.push_back(restrict_channels(s, d.offsets, channels, wcfg.seq, dmd_cfg, dt));
  }
  return out;
}

/// Noisy copy of a sample with tensors recomputed from the noisy rows.
inline RawSample noisy_sample(const RawSample& s, const Vector& offsets, double snr_db, std::uint64_t seed,
                              const SequenceConfig& seq, const DmdConfig& dmd_cfg, double dt) {
  if (std::isinf(snr_db) && snr_db > 0.0) return s;
  return make_raw_sample(inject_noise(*s.slice, offsets, snr_db, seed), offsets, s.spec, seq, dmd_cfg, dt);
}

inline std::uint64_t noise_seed(std::uint64_t master, const SampleSpec& spec, double snr_db) {
  return mix_seed(mix_seed(master, spec.scenario * 1000003ULL + static_cast<std::uint64_t>(spec.t_end)),
                  static_cast<std::uint64_t>(std::llround(snr_db * 1000.0)));
}

inline Standardizer fit_standardizer(const std::vector<const RawSample*>& samples) {
  std::vector<const Matrix*> mats;
  mats.reserve(samples.size());
  for (const auto* s : samples) mats.push_back(s->slice.get());
  return Standardizer::fit(mats);
}

/// Model-ready sample: standardized rows, tensors unchanged.
inline SequenceSample prepare_sample(const RawSample& s, const Standardizer& z, const SequenceConfig& seq, double dt) {
  auto slice = std::make_shared<const Matrix>(z.transform(*s.slice));
  return make_sample(slice, s.tensors, s.spec, seq, dt);
}

inline std::vector<SequenceSample> prepare_samples(const std::vector<const RawSample*>& raw, const Standardizer& z,
                                                   const SequenceConfig& seq, double dt) {
  std::vector<SequenceSample> out;
  out.reserve(raw.size());
  for (const auto* s : raw) out.push_back(prepare_sample(*s, z, seq, dt));
  return out;
}

inline std::vector<const SequenceSample*> pointers(const std::vector<SequenceSample>& v) {
  std::vector<const SequenceSample*> out;
  out.reserve(v.size());
  for (const auto& s : v) out.push_back(&s);
  return out;
}

// Scenario-level partition of a dataset into raw sample lists. The offsets
// lists run parallel to the sample lists; `gen` holds the held-out range
// samples of the test scenarios.
struct SplitSamples {
  std::vector<const RawSample*> train, val, test, gen;
  std::vector<const Vector*> train_offsets, val_offsets, test_offsets, gen_offsets;
  Split ids;
};

inline SplitSamples split_samples(const std::vector<ScenarioData>& data, const TrainConfig& cfg, std::uint64_t seed) {
  std::vector<std::size_t> ids;
  for (const auto& d : data) {
    if (!d.diverged && !d.train.empty()) ids.push_back(d.spec.id);
  }
  SplitSamples out;
  out.ids = split_dataset(ids, cfg, seed);
  auto member = [](const std::vector<std::size_t>& v, std::size_t id) {
    return std::binary_search(v.begin(), v.end(), id);
  };
  for (const auto& d : data) {
    for (const auto& s : d.train) {
      if (member(out.ids.train, d.spec.id)) {
        out.train.push_back(&s);
        out.train_offsets.push_back(&d.offsets);
      } else if (member(out.ids.val, d.spec.id)) {
        out.val.push_back(&s);
        out.val_offsets.push_back(&d.offsets);
      } else if (member(out.ids.test, d.spec.id)) {
        out.test.push_back(&s);
        out.test_offsets.push_back(&d.offsets);
      }
    }
    if (member(out.ids.test, d.spec.id)) {
      for (const auto& s : d.generalization) {
        out.gen.push_back(&s);
        out.gen_offsets.push_back(&d.offsets);
      }
    }
  }
  return out;
}

/// The last `l_seq` windows of a sample built with `seq` (same end time).
inline RawSample truncate_sequence(const RawSample& s, const SequenceConfig& seq, int l_seq, double dt) {
  if (l_seq < 1 || l_seq > seq.l_seq) throw ConfigError("truncated l_seq must lie in [1, " + std::to_string(seq.l_seq) + "]");
  if (l_seq == seq.l_seq) return s;
  const std::int64_t step = std::llround(dt * 1000.0);
  const auto skip = static_cast<Index>((seq.window_start(s.spec.t_end, seq.l_seq - l_seq) -
                                        seq.window_start(s.spec.t_end, 0)) / step);
  RawSample out;
  out.slice = std::make_shared<const Matrix>(s.slice->bottomRows(s.slice->rows() - skip));
  out.tensors.assign(s.tensors.end() - l_seq, s.tensors.end());
  out.spec = s.spec;
  return out;
}

inline SequenceConfig with_l_seq(SequenceConfig seq, int l_seq) {
  seq.l_seq = l_seq;
  return seq;
}

inline ModelDims dims_for(const DatasetConfig& cfg, Index n_channels, Index F = 64, Index H = 64) {
  ModelDims d;
  d.n = n_channels;
  d.T = cfg.windows.seq.window_ms / std::llround(cfg.surrogate.dt * 1000.0);
  d.F = F;
  d.H = H;
  d.d = kNumLayers;
  d.l_seq = cfg.windows.seq.l_seq;
  return d;
}

}  // namespace dramn
