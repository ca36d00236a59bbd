#pragma once

// Adjacency tensor cache and store-backed dataset loading.
//
// One cache file per (scenario, window params, DMD config, channel subset):
//   magic "DRAMNACH" | u32 version | u64 key | u64 count |
//   count x (i64 t_end | u32 label | u32 heldout | u64 l | l x tensor) |
//   u64 FNV-1a checksum

#include "dramn/config.hpp"
#include "dramn/pipeline.hpp"
#include "dramn/serialize.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace dramn {

inline constexpr char kCacheMagic[8] = {'D', 'R', 'A', 'M', 'N', 'A', 'C', 'H'};
inline constexpr std::uint32_t kCacheVersion = 2;

struct CacheStats {
  std::atomic<std::size_t> hits{0};
  std::atomic<std::size_t> misses{0};
  std::atomic<std::size_t> rebuilt{0};  // present but corrupt or stale
};

inline std::uint64_t cache_key(const ScenarioRecord& rec, const WindowConfig& w, const DmdConfig& dmd,
                               const std::vector<Index>& channels, bool with_generalization) {
  Json j{{"id", rec.id},
         {"seed", rec.seed},
         {"event", to_string(rec.event)},
         {"mix", {rec.mix.sg, rec.mix.gfm, rec.mix.gfl}},
         {"window", {w.seq.window_ms, w.seq.stride_ms, w.seq.l_seq, w.train_first_end, w.train_last_end,
                     w.train_end_step, w.pre_event_last_end, w.post_event_first, w.heldout_per_range,
                     w.unperturbed_from, w.unperturbed_to, w.unperturbed_samples}},
         {"dmd", {dmd.rank, dmd.svd_rel_tol, dmd.delay_embedding}},
         {"channels", channels},
         {"gen", with_generalization}};
  return fnv1a(j.dump());
}

inline std::filesystem::path cache_path(const std::filesystem::path& dir, std::size_t id, std::uint64_t key) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "adj_%06zu_%016llx.bin", id, static_cast<unsigned long long>(key));
  return dir / buf;
}

struct CachedSample {
  SampleSpec spec;
  std::vector<AdjacencyTensor> tensors;
};

inline void write_cache(const std::filesystem::path& path, std::uint64_t key, const std::vector<CachedSample>& items) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write cache file " + tmp);
    BinaryWriter w(os);
    w.bytes(kCacheMagic, sizeof kCacheMagic);
    w.u32(kCacheVersion);
    w.u64(key);
    w.u64(items.size());
    for (const auto& it : items) {
      w.i64(it.spec.t_end);
      w.u32(static_cast<std::uint32_t>(it.spec.label));
      w.u32(it.spec.heldout ? 1u : 0u);
      w.u64(it.tensors.size());
      for (const auto& t : it.tensors) write_tensor(w, t);
    }
    w.footer();
    if (!os) throw DataError("failed writing cache file " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<CachedSample> read_cache(const std::filesystem::path& path, std::uint64_t key) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing cache file " + path.string());
  BinaryReader r(is);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCacheMagic, sizeof magic) != 0) throw DataError("not a cache file");
  if (r.u32() != kCacheVersion) throw DataError("unsupported cache version");
  if (r.u64() != key) throw DataError("cache key mismatch");
  const auto count = r.u64();
  if (count > 1000000) throw DataError("implausible cache sample count");
  std::vector<CachedSample> out(count);
  for (auto& it : out) {
    it.spec.t_end = r.i64();
    it.spec.label = static_cast<int>(r.u32());
    it.spec.heldout = r.u32() != 0;
    const auto l = r.u64();
    if (l > 4096) throw DataError("implausible sequence length in cache");
    for (std::uint64_t k = 0; k < l; ++k) it.tensors.push_back(read_tensor(r));
  }
  r.verify_footer();
  return out;
}

/// Copy of a record with only `channels` kept (empty = all).
inline ScenarioRecord select_channels(const ScenarioRecord& rec, const std::vector<Index>& channels) {
  if (channels.empty()) return rec;
  ScenarioRecord out = rec;
  const Index n = static_cast<Index>(channels.size());
  out.trajectory.data = Matrix(rec.trajectory.data.rows(), n);
  out.offsets = Vector(n);
  out.trajectory.channel_names.clear();
  out.channel_kinds.clear();
  for (Index k = 0; k < n; ++k) {
    const Index c = channels[static_cast<std::size_t>(k)];
    if (c < 0 || c >= rec.trajectory.data.cols()) throw ConfigError("channel index " + std::to_string(c) + " out of range");
    out.trajectory.data.col(k) = rec.trajectory.data.col(c);
    out.offsets(k) = rec.offsets(c);
    if (static_cast<std::size_t>(c) < rec.trajectory.channel_names.size()) {
      out.trajectory.channel_names.push_back(rec.trajectory.channel_names[static_cast<std::size_t>(c)]);
    }
    if (static_cast<std::size_t>(c) < rec.channel_kinds.size()) {
      out.channel_kinds.push_back(rec.channel_kinds[static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

/// Samples of one record; tensors come from the cache when a valid entry
/// exists and are computed and stored otherwise. An empty cache_dir
/// disables caching.
inline ScenarioData collect_samples_cached(const ScenarioRecord& full, const ScenarioSpec& spec,
                                           const WindowConfig& wcfg, const DmdConfig& dmd_cfg, bool with_gen,
                                           const std::vector<Index>& channels,
                                           const std::filesystem::path& cache_dir, CacheStats* stats) {
  const ScenarioRecord rec = select_channels(full, channels);
  ScenarioData out;
  out.spec = spec;
  out.label = rec.label;
  out.diverged = rec.diverged;
  out.offsets = rec.offsets;
  out.channel_names = rec.trajectory.channel_names;
  if (rec.diverged) return out;
  const WindowPlan plan = window_plan(rec, wcfg);
  std::vector<SampleSpec> specs = plan.train;
  if (with_gen) specs.insert(specs.end(), plan.generalization.begin(), plan.generalization.end());

  std::optional<std::vector<CachedSample>> cached;
  std::filesystem::path path;
  std::uint64_t key = 0;
  if (!cache_dir.empty()) {
    key = cache_key(rec, wcfg, dmd_cfg, channels, with_gen);
    path = cache_path(cache_dir, rec.id, key);
    if (std::filesystem::exists(path)) {
      try {
        auto items = read_cache(path, key);
        bool ok = items.size() == specs.size();
        for (std::size_t i = 0; ok && i < items.size(); ++i) {
          ok = items[i].spec.t_end == specs[i].t_end && items[i].spec.heldout == specs[i].heldout &&
               items[i].tensors.size() == static_cast<std::size_t>(wcfg.seq.l_seq);
        }
        if (ok) cached = std::move(items);
      } catch (const DataError&) {
      }
      if (!cached && stats) ++stats->rebuilt;
    }
  }
  if (stats) ++(cached ? stats->hits : stats->misses);

  std::vector<CachedSample> computed;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    RawSample raw;
    raw.slice = std::make_shared<const Matrix>(sequence_slice(rec.trajectory, s.t_end, wcfg.seq));
    raw.spec = s;
    if (cached) {
      raw.tensors = (*cached)[i].tensors;
    } else {
      raw.tensors = slice_tensors(*raw.slice, rec.offsets, s.t_end, rec.trajectory.dt, wcfg.seq, dmd_cfg);
      if (!cache_dir.empty()) computed.push_back({s, raw.tensors});
    }
    (s.heldout ? out.generalization : out.train).push_back(std::move(raw));
  }
  if (!cached && !cache_dir.empty()) write_cache(path, key, computed);
  return out;
}

}  // namespace dramn
