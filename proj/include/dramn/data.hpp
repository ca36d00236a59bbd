#pragma once

// Labeled synthetic scenarios: a ternary generation-mix grid, a linear
// oscillator-network surrogate whose damping depends on the mix, disturbance
// events, spectral/threshold labeling, windowing into sequence samples,
// subsampling, measurement noise, and the on-disk scenario store.

#include "dramn/adjacency.hpp"
#include "dramn/common.hpp"
#include "dramn/model.hpp"
#include "dramn/serialize.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace dramn {

struct GenerationMix {
  int sg = 0;
  int gfm = 0;
  int gfl = 0;

  bool operator==(const GenerationMix&) const = default;

  int total() const { return sg + gfm + gfl; }

  void validate() const {
    if (sg < 1 || gfm < 1 || gfl < 1 || total() != 100) {
      throw ConfigError("generation mix " + to_string() + " must have parts >= 1 summing to 100");
    }
  }

  std::string to_string() const {
    return std::to_string(sg) + "/" + std::to_string(gfm) + "/" + std::to_string(gfl);
  }
};

/// All (sg, gfm, gfl) with parts that are multiples of step, at least
/// min_share, summing to total; ordered by sg then gfm.
inline std::vector<GenerationMix> ternary_grid(int total = 100, int min_share = 1, int step = 1) {
  if (step < 1 || min_share < 1) throw ConfigError("ternary_grid: step and min_share must be >= 1");
  if (total < 3 * min_share) throw ConfigError("ternary_grid: total < 3 * min_share");
  const int lo = ((min_share + step - 1) / step) * step;
  std::vector<GenerationMix> out;
  for (int a = lo; a <= total; a += step) {
    for (int b = lo; a + b <= total; b += step) {
      const int c = total - a - b;
      if (c >= lo && c % step == 0) out.push_back({a, b, c});
    }
  }
  if (out.empty()) throw ConfigError("ternary_grid: no composition satisfies the constraints");
  return out;
}

enum class EventKind : std::uint32_t { LoadIncrease = 0, ShortCircuit = 1, Unperturbed = 2 };

inline std::string to_string(EventKind e) {
  switch (e) {
    case EventKind::LoadIncrease: return "load_increase";
    case EventKind::ShortCircuit: return "short_circuit";
    case EventKind::Unperturbed: return "unperturbed";
  }
  return "unknown";
}

inline EventKind event_from_string(const std::string& s) {
  if (s == "load_increase") return EventKind::LoadIncrease;
  if (s == "short_circuit") return EventKind::ShortCircuit;
  if (s == "unperturbed") return EventKind::Unperturbed;
  throw ConfigError("unknown event kind '" + s + "'");
}

enum class ChannelKind : std::uint32_t { Voltage = 0, Frequency = 1, Power = 2, Inert = 3 };

struct SurrogateConfig {
  int n_gen = 4;
  bool include_power = true;
  int inert_channels = 0;       // constant channels appended after the active ones
  double dt = 1e-3;
  std::int64_t duration_ms = 60000;
  std::int64_t event_ms = 20000;
  std::int64_t fault_ms = 50;
  std::int64_t settle_guard_ms = 5000;

  double base_freq_hz = 0.5;    // unit i oscillates near base + i * step
  double freq_step_hz = 0.3;
  double coupling = 0.5;        // ring stiffness between neighbouring units
  // damping margin m_i = w_sg*sg + w_gfm*gfm - w_gfl*gfl*(i+1)/n_gen + m_offset
  // (shares as fractions); zeta_i = zeta_mid + zeta_span * tanh(m_i / m_scale)
  double w_sg = 0.6;
  double w_gfm = 0.3;
  double w_gfl = 0.9;
  double m_offset = -0.05;
  double m_scale = 0.01;
  double zeta_mid = 0.03;
  double zeta_span = 0.06;
  double load_stress = 0.01;    // damping lost after a load increase, scaled by unit weight

  double ambient_std = 0.1;     // white input forcing, held over each step
  double load_step = 0.1;       // +10% load drawn from every unit
  double fault_pulse = 0.5;     // accelerating input on the faulted unit
  double fault_voltage = 0.3;   // clamped voltage of the faulted unit
  double x0_std = 0.01;         // initial-state spread for unperturbed runs

  double v_gain = 2.5;
  double v_feedthrough = 0.1;   // immediate voltage response to the load input
  double f_gain = 1.0;
  double p_gain = 1.0;
  double p_nominal = 0.5;
  double divergence_limit = 1e8;
  double snr_db = std::numeric_limits<double>::infinity();  // measurement noise, off by default

  void validate() const {
    if (n_gen < 1) throw ConfigError("surrogate.n_gen must be >= 1");
    if (inert_channels < 0) throw ConfigError("surrogate.inert_channels must be >= 0");
    if (!(dt > 0.0) || std::llround(dt * 1000.0) < 1) throw ConfigError("surrogate.dt must be >= 1 ms");
    if (duration_ms <= event_ms + fault_ms || event_ms < 1) throw ConfigError("surrogate timings inconsistent");
    if (!(base_freq_hz > 0.0) || freq_step_hz < 0.0) throw ConfigError("surrogate frequencies must be positive");
    if (!(m_scale > 0.0)) throw ConfigError("surrogate.m_scale must be positive");
    if (ambient_std < 0.0 || x0_std < 0.0) throw ConfigError("surrogate noise levels must be >= 0");
  }

  Index n_channels() const {
    return static_cast<Index>(n_gen) * (include_power ? 3 : 2) + inert_channels;
  }
};

// Continuous-time LTI surrogate: xdot = A x + B u, y = offsets + C x + D u.
struct SurrogateSystem {
  Matrix a;  // m x m
  Matrix b;  // m x n_gen
  Matrix c;  // n x m
  Matrix d;  // n x n_gen
  Vector offsets;
  std::vector<std::string> channel_names;
  std::vector<ChannelKind> channel_kinds;
  Vector zeta;  // per-unit damping ratios used to build A

  Index m() const { return a.rows(); }
  ComplexVector eigenvalues() const {
    Eigen::EigenSolver<Matrix> es(a, false);
    if (es.info() != Eigen::Success) throw NumericalError("surrogate eigenvalues did not converge");
    return es.eigenvalues();
  }
};

/// Per-unit damping ratios as a smooth function of the mix.
inline Vector damping_ratios(const GenerationMix& mix, const SurrogateConfig& cfg, bool stressed) {
  const double sg = mix.sg / 100.0;
  const double gfm = mix.gfm / 100.0;
  const double gfl = mix.gfl / 100.0;
  Vector z(cfg.n_gen);
  for (int i = 0; i < cfg.n_gen; ++i) {
    const double w = static_cast<double>(i + 1) / cfg.n_gen;
    const double margin = cfg.w_sg * sg + cfg.w_gfm * gfm - cfg.w_gfl * gfl * w + cfg.m_offset;
    z(i) = cfg.zeta_mid + cfg.zeta_span * std::tanh(margin / cfg.m_scale);
    if (stressed) z(i) -= cfg.load_stress * w;
  }
  return z;
}

/// Ring of second-order units: delta'' + 2 zeta W delta' + K delta = u.
inline SurrogateSystem build_surrogate_from_damping(const Vector& zeta, const SurrogateConfig& cfg) {
  cfg.validate();
  const Index g = cfg.n_gen;
  if (zeta.size() != g) throw ConfigError("damping vector length must equal n_gen");
  Vector omega(g);
  for (Index i = 0; i < g; ++i) {
    omega(i) = 2.0 * std::numbers::pi * (cfg.base_freq_hz + cfg.freq_step_hz * static_cast<double>(i));
  }
  Matrix k = omega.cwiseAbs2().asDiagonal();
  if (g == 2) {
    k(0, 0) += cfg.coupling;
    k(1, 1) += cfg.coupling;
    k(0, 1) -= cfg.coupling;
    k(1, 0) -= cfg.coupling;
  } else if (g > 2) {
    for (Index i = 0; i < g; ++i) {
      const Index j = (i + 1) % g;
      k(i, i) += cfg.coupling;
      k(j, j) += cfg.coupling;
      k(i, j) -= cfg.coupling;
      k(j, i) -= cfg.coupling;
    }
  }
  SurrogateSystem s;
  s.zeta = zeta;
  const Index m = 2 * g;
  s.a = Matrix::Zero(m, m);
  s.a.topRightCorner(g, g) = Matrix::Identity(g, g);
  s.a.bottomLeftCorner(g, g) = -k;
  s.a.bottomRightCorner(g, g) = (-2.0 * zeta.cwiseProduct(omega)).asDiagonal();
  s.b = Matrix::Zero(m, g);
  s.b.bottomRows(g) = Matrix::Identity(g, g);

  const Index n = cfg.n_channels();
  s.c = Matrix::Zero(n, m);
  s.d = Matrix::Zero(n, g);
  s.offsets = Vector::Zero(n);
  Index row = 0;
  for (Index i = 0; i < g; ++i, ++row) {
    s.c(row, i) = cfg.v_gain;
    s.d(row, i) = cfg.v_feedthrough;
    s.offsets(row) = 1.0;
    s.channel_names.push_back("V" + std::to_string(i + 1));
    s.channel_kinds.push_back(ChannelKind::Voltage);
  }
  for (Index i = 0; i < g; ++i, ++row) {
    s.c(row, g + i) = cfg.f_gain;
    s.offsets(row) = 60.0;
    s.channel_names.push_back("f" + std::to_string(i + 1));
    s.channel_kinds.push_back(ChannelKind::Frequency);
  }
  if (cfg.include_power) {
    for (Index i = 0; i < g; ++i, ++row) {
      s.c.block(row, 0, 1, g) = cfg.p_gain * k.row(i);
      s.offsets(row) = cfg.p_nominal;
      s.channel_names.push_back("P" + std::to_string(i + 1));
      s.channel_kinds.push_back(ChannelKind::Power);
    }
  }
  for (int i = 0; i < cfg.inert_channels; ++i, ++row) {
    s.offsets(row) = 1.0;
    s.channel_names.push_back("X" + std::to_string(i + 1));
    s.channel_kinds.push_back(ChannelKind::Inert);
  }
  return s;
}

inline SurrogateSystem build_surrogate(const GenerationMix& mix, bool stressed, const SurrogateConfig& cfg) {
  mix.validate();
  return build_surrogate_from_damping(damping_ratios(mix, cfg, stressed), cfg);
}

// Zero-order-hold discretization: x+ = phi x + gamma u.
struct Discretized {
  Matrix phi;
  Matrix gamma;
};

inline Discretized discretize(const SurrogateSystem& s, double dt) {
  const Index m = s.m();
  const Index g = s.b.cols();
  Matrix aug = Matrix::Zero(m + g, m + g);
  aug.topLeftCorner(m, m) = s.a * dt;
  aug.topRightCorner(m, g) = s.b * dt;
  const Matrix e = aug.exp();
  return {e.topLeftCorner(m, m), e.topRightCorner(m, g)};
}

struct ScenarioRecord {
  std::size_t id = 0;
  GenerationMix mix;
  EventKind event = EventKind::Unperturbed;
  std::uint64_t seed = 0;
  Trajectory trajectory;
  Vector offsets;
  std::vector<ChannelKind> channel_kinds;
  ComplexVector spectrum;  // continuous eigenvalues of the post-event system
  int faulted_unit = -1;
  bool diverged = false;
  int label = 0;
};

/// Adds zero-mean Gaussian noise per channel at the requested SNR, where
/// signal power is measured on the deviation from offsets. Channels with no
/// deviation use unit power. An infinite SNR leaves the data unchanged.
inline Matrix inject_noise(const Matrix& data, const Vector& offsets, double snr_db, std::uint64_t seed) {
  if (offsets.size() != data.cols()) throw ShapeError("inject_noise: offsets length mismatch");
  if (std::isinf(snr_db) && snr_db > 0.0) return data;
  if (std::isnan(snr_db)) throw ConfigError("inject_noise: snr_db is NaN");
  if (!data.allFinite()) throw DataError("inject_noise: non-finite signal");
  Matrix out = data;
  std::mt19937_64 rng(seed);
  const double ratio = std::pow(10.0, snr_db / 10.0);
  for (Index j = 0; j < data.cols(); ++j) {
    double power = (data.col(j).array() - offsets(j)).square().mean();
    if (!(power > 0.0)) power = 1.0;
    std::normal_distribution<double> nd(0.0, std::sqrt(power / ratio));
    for (Index i = 0; i < data.rows(); ++i) out(i, j) += nd(rng);
  }
  return out;
}

inline void inject_noise(ScenarioRecord& rec, double snr_db, std::uint64_t seed) {
  rec.trajectory.data = inject_noise(rec.trajectory.data, rec.offsets, snr_db, seed);
}

namespace detail {

inline bool is_oscillatory(const Complex& l) {
  return std::abs(l.imag()) > 1e-9 * std::max(1.0, std::abs(l));
}

}  // namespace detail

struct LabelBreakdown {
  bool positive_real = false;  // criterion 1
  bool voltage = false;        // criterion 2
  bool frequency = false;      // criterion 3
  bool low_damping = false;    // criterion 4
  int label() const { return (positive_real || voltage || frequency || low_damping) ? 1 : 0; }
};

struct LabelThresholds {
  double v_lo = 0.95, v_hi = 1.05;
  double f_lo = 59.80, f_hi = 60.20;
  double zeta_min = 0.03;
  std::int64_t guard_after_ms = 25000;  // thresholds are checked for t > this
};

inline LabelBreakdown label_breakdown(const ScenarioRecord& rec, const LabelThresholds& th = {}) {
  if (rec.spectrum.size() == 0) throw DataError("label_scenario: record has no spectrum");
  LabelBreakdown out;
  for (Index k = 0; k < rec.spectrum.size(); ++k) {
    const Complex l = rec.spectrum(k);
    if (l.real() > 0.0) out.positive_real = true;
    if (detail::is_oscillatory(l) && -l.real() / std::abs(l) < th.zeta_min) out.low_damping = true;
  }
  const auto& tr = rec.trajectory;
  if (tr.data.rows() > 0) {
    const std::int64_t step = tr.dt_ms();
    const std::int64_t first_t = th.guard_after_ms + 1;
    Index r0 = first_t <= tr.t_first_ms ? 0 : static_cast<Index>((first_t - tr.t_first_ms + step - 1) / step);
    for (Index j = 0; j < tr.data.cols(); ++j) {
      const auto kind = static_cast<std::size_t>(j) < rec.channel_kinds.size()
                            ? rec.channel_kinds[static_cast<std::size_t>(j)]
                            : ChannelKind::Inert;
      if (kind != ChannelKind::Voltage && kind != ChannelKind::Frequency) continue;
      const double lo = kind == ChannelKind::Voltage ? th.v_lo : th.f_lo;
      const double hi = kind == ChannelKind::Voltage ? th.v_hi : th.f_hi;
      bool& flag = kind == ChannelKind::Voltage ? out.voltage : out.frequency;
      for (Index i = r0; i < tr.data.rows() && !flag; ++i) {
        const double v = tr.data(i, j);
        // non-finite samples only appear after divergence
        if (!std::isfinite(v) || v < lo || v > hi) flag = true;
      }
    }
  }
  return out;
}

inline int label_scenario(const ScenarioRecord& rec, const LabelThresholds& th = {}) {
  return label_breakdown(rec, th).label();
}

/// Integrates the surrogate for one (mix, event) at 1 ms and labels it.
inline ScenarioRecord synthesize_scenario(const GenerationMix& mix, EventKind event, std::uint64_t seed,
                                          const SurrogateConfig& cfg, std::size_t id = 0,
                                          const LabelThresholds& thresholds = {}) {
  cfg.validate();
  mix.validate();
  const SurrogateSystem pre = build_surrogate(mix, false, cfg);
  const SurrogateSystem post = event == EventKind::LoadIncrease ? build_surrogate(mix, true, cfg) : pre;
  const Discretized dpre = discretize(pre, cfg.dt);
  const Discretized dpost = event == EventKind::LoadIncrease ? discretize(post, cfg.dt) : dpre;

  ScenarioRecord rec;
  rec.id = id;
  rec.mix = mix;
  rec.event = event;
  rec.seed = seed;
  rec.offsets = pre.offsets;
  rec.channel_kinds = pre.channel_kinds;
  rec.spectrum = post.eigenvalues();

  const std::int64_t step = std::llround(cfg.dt * 1000.0);
  const Index rows = static_cast<Index>(cfg.duration_ms / step);
  const Index n = cfg.n_channels();
  const Index g = cfg.n_gen;
  rec.trajectory.dt = cfg.dt;
  rec.trajectory.t_first_ms = step;
  rec.trajectory.channel_names = pre.channel_names;
  rec.trajectory.data = Matrix::Constant(rows, n, std::numeric_limits<double>::quiet_NaN());

  std::mt19937_64 rng(mix_seed(seed, 0xda7a));
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector x = Vector::Zero(pre.m());
  if (event == EventKind::Unperturbed) {
    for (Index i = 0; i < x.size(); ++i) x(i) = cfg.x0_std * nd(rng);
  }
  if (event == EventKind::ShortCircuit) {
    rec.faulted_unit = static_cast<int>(std::uniform_int_distribution<int>(0, cfg.n_gen - 1)(rng));
  }

  Vector u(g);
  Vector load = Vector::Zero(g);
  for (Index r = 0; r < rows; ++r) {
    const std::int64_t t = rec.trajectory.t_first_ms + static_cast<std::int64_t>(r) * step;
    const bool after = event != EventKind::Unperturbed && t >= cfg.event_ms;
    const bool in_fault = event == EventKind::ShortCircuit && after && t < cfg.event_ms + cfg.fault_ms;
    const SurrogateSystem& sys = after ? post : pre;
    load.setZero();
    if (event == EventKind::LoadIncrease && after) load.setConstant(-cfg.load_step);
    // output at time t from the state reached at t
    Vector y = sys.offsets + sys.c * x + sys.d * load;
    if (in_fault) y(rec.faulted_unit) = cfg.fault_voltage;
    rec.trajectory.data.row(r) = y.transpose();

    for (Index i = 0; i < g; ++i) u(i) = cfg.ambient_std * nd(rng);
    u += load;
    if (in_fault) u(rec.faulted_unit) += cfg.fault_pulse;
    const Discretized& dd = after ? dpost : dpre;
    x = dd.phi * x + dd.gamma * u;
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > cfg.divergence_limit) {
      rec.diverged = true;
      if (r + 1 < rows) rec.trajectory.data.row(r + 1).setConstant(std::numeric_limits<double>::infinity());
      break;
    }
  }
  if (!rec.diverged && std::isfinite(cfg.snr_db)) inject_noise(rec, cfg.snr_db, mix_seed(seed, 0x0153));
  rec.label = label_scenario(rec, thresholds);
  return rec;
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

struct WindowConfig {
  SequenceConfig seq;
  std::int64_t train_first_end = 20000;
  std::int64_t train_last_end = 30000;
  std::int64_t train_end_step = 1000;
  std::int64_t pre_event_last_end = 19000;   // held-out [0, 19000]
  std::int64_t post_event_first = 30001;     // held-out [30001, end]
  int heldout_per_range = 11;
  std::int64_t unperturbed_from = 10000;
  std::int64_t unperturbed_to = 60000;
  int unperturbed_samples = 11;

  void validate() const {
    seq.validate();
    if (train_end_step < 1 || train_last_end < train_first_end) throw ConfigError("window train range invalid");
    if (heldout_per_range < 0 || unperturbed_samples < 1) throw ConfigError("window sample counts invalid");
    if (unperturbed_to < unperturbed_from) throw ConfigError("unperturbed range invalid");
  }
};

struct SampleSpec {
  std::size_t scenario = 0;
  std::int64_t t_end = 0;
  int label = 0;
  bool heldout = false;
};

struct WindowPlan {
  std::vector<SampleSpec> train;
  std::vector<SampleSpec> generalization;
};

namespace detail {

inline std::vector<std::int64_t> spaced(std::int64_t lo, std::int64_t hi, int count) {
  std::vector<std::int64_t> out;
  if (count <= 0 || hi < lo) return out;
  if (count == 1) return {hi};
  for (int k = 0; k < count; ++k) {
    out.push_back(lo + static_cast<std::int64_t>(std::llround(static_cast<double>(hi - lo) * k / (count - 1))));
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace detail

/// Sequence end-times for one record. Event scenarios train on the
/// event-to-settling sweep; held-out ranges go to the generalization set.
inline WindowPlan window_plan(const ScenarioRecord& rec, const WindowConfig& cfg) {
  cfg.validate();
  WindowPlan plan;
  if (rec.diverged) return plan;
  const auto& tr = rec.trajectory;
  const std::int64_t span = cfg.seq.span_ms();
  const std::int64_t earliest_end = tr.t_first_ms + span - 1;
  const std::int64_t last = tr.t_last_ms();
  auto push = [&](std::vector<SampleSpec>& dst, std::int64_t t_end, bool held) {
    if (t_end < earliest_end || t_end > last) {
      throw DataError("insufficient history: sequence ending at " + std::to_string(t_end) +
                      " does not fit the record");
    }
    dst.push_back({rec.id, t_end, rec.label, held});
  };
  if (rec.event == EventKind::Unperturbed) {
    std::mt19937_64 rng(mix_seed(rec.seed, 0x3e9d));
    const std::int64_t lo = std::max(cfg.unperturbed_from, earliest_end);
    const std::int64_t hi = std::min(cfg.unperturbed_to, last);
    if (hi - lo + 1 < cfg.unperturbed_samples) throw DataError("unperturbed range too short");
    std::uniform_int_distribution<std::int64_t> u(lo, hi);
    std::vector<std::int64_t> ends;
    while (static_cast<int>(ends.size()) < cfg.unperturbed_samples) {
      const auto t = u(rng);
      if (std::find(ends.begin(), ends.end(), t) == ends.end()) ends.push_back(t);
    }
    std::sort(ends.begin(), ends.end());
    for (auto t : ends) push(plan.train, t, false);
    return plan;
  }
  for (std::int64_t t = cfg.train_first_end; t <= cfg.train_last_end; t += cfg.train_end_step) {
    push(plan.train, t, false);
  }
  // held-out sequences lie entirely inside their range
  for (auto t : detail::spaced(earliest_end, cfg.pre_event_last_end, cfg.heldout_per_range)) {
    push(plan.generalization, t, true);
  }
  for (auto t : detail::spaced(cfg.post_event_first + span - 1, last, cfg.heldout_per_range)) {
    push(plan.generalization, t, true);
  }
  return plan;
}

/// Raw rows of the sequence ending at t_end (span_ms rows, oldest first).
inline Matrix sequence_slice(const Trajectory& tr, std::int64_t t_end, const SequenceConfig& seq) {
  const std::int64_t first = seq.window_start(t_end, 0);
  return tr.window(first, t_end).data;
}

/// Builds the tensors of a sequence from a raw slice that starts at the
/// sequence's first window. DMD sees the deviation from the nominal
/// operating point `offsets` (empty = use the rows as they are).
inline std::vector<AdjacencyTensor> slice_tensors(const Matrix& slice, const Vector& offsets, std::int64_t t_end,
                                                  double dt, const SequenceConfig& seq, const DmdConfig& dmd_cfg) {
  const std::int64_t first = seq.window_start(t_end, 0);
  const std::int64_t step = std::llround(dt * 1000.0);
  if (offsets.size() != 0 && offsets.size() != slice.cols()) throw ShapeError("slice_tensors: offsets length mismatch");
  Matrix dev = slice;
  if (offsets.size() != 0) dev.rowwise() -= offsets.transpose();
  std::vector<AdjacencyTensor> out;
  for (int k = 0; k < seq.l_seq; ++k) {
    const std::int64_t s = seq.window_start(t_end, k);
    TimeSeriesWindow w;
    w.data = dev.middleRows(static_cast<Index>((s - first) / step), static_cast<Index>(seq.window_ms / step));
    w.dt = dt;
    w.t_start = s;
    out.push_back(build_adjacency(w, dmd_cfg));
  }
  return out;
}

/// Sequence samples over a shared slice: window k views rows of `slice`.
inline SequenceSample make_sample(std::shared_ptr<const Matrix> slice, std::vector<AdjacencyTensor> tensors,
                                  const SampleSpec& spec, const SequenceConfig& seq, double dt) {
  const std::int64_t step = std::llround(dt * 1000.0);
  const std::int64_t first = seq.window_start(spec.t_end, 0);
  SequenceSample s;
  for (int k = 0; k < seq.l_seq; ++k) {
    const std::int64_t start = seq.window_start(spec.t_end, k);
    s.windows.push_back({slice, static_cast<Index>((start - first) / step), static_cast<Index>(seq.window_ms / step)});
  }
  s.tensors = std::move(tensors);
  s.label = spec.label;
  s.scenario = spec.scenario;
  s.t_end = spec.t_end;
  return s;
}

struct WindowedScenario {
  std::vector<SequenceSample> train;
  std::vector<SequenceSample> generalization;
};

/// Materialized samples (raw windows plus tensors) for one record.
inline WindowedScenario window_dataset(const ScenarioRecord& rec, const WindowConfig& cfg,
                                       const DmdConfig& dmd_cfg = {}) {
  const WindowPlan plan = window_plan(rec, cfg);
  WindowedScenario out;
  auto build = [&](const std::vector<SampleSpec>& specs, std::vector<SequenceSample>& dst) {
    for (const auto& spec : specs) {
      auto slice = std::make_shared<const Matrix>(sequence_slice(rec.trajectory, spec.t_end, cfg.seq));
      auto tensors = slice_tensors(*slice, rec.offsets, spec.t_end, rec.trajectory.dt, cfg.seq, dmd_cfg);
      dst.push_back(make_sample(slice, std::move(tensors), spec, cfg.seq, rec.trajectory.dt));
    }
  };
  build(plan.train, out.train);
  build(plan.generalization, out.generalization);
  return out;
}

// ---------------------------------------------------------------------------
// Scenario planning and subsampling
// ---------------------------------------------------------------------------

struct ScenarioSpec {
  std::size_t id = 0;
  GenerationMix mix;
  EventKind event = EventKind::Unperturbed;
  std::uint64_t seed = 0;
};

inline std::uint64_t scenario_seed(std::uint64_t master, const GenerationMix& mix, EventKind event) {
  const std::uint64_t key = (static_cast<std::uint64_t>(mix.sg) << 32) |
                            (static_cast<std::uint64_t>(mix.gfm) << 16) |
                            static_cast<std::uint64_t>(mix.gfl);
  return mix_seed(mix_seed(master, key), static_cast<std::uint64_t>(event));
}

/// Keeps about 1 in keep_1_in items of each event kind, chosen by a seeded
/// shuffle; unperturbed items are thinned only when requested. Order is kept.
template <typename T>
std::vector<T> subsample_scenarios(const std::vector<T>& items, int keep_1_in, std::uint64_t seed,
                                   bool thin_unperturbed = true) {
  if (keep_1_in < 1) throw ConfigError("keep_1_in must be >= 1");
  if (keep_1_in == 1) return items;
  std::vector<char> keep(items.size(), 0);
  for (auto kind : {EventKind::LoadIncrease, EventKind::ShortCircuit, EventKind::Unperturbed}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (items[i].event == kind) idx.push_back(i);
    }
    if (kind == EventKind::Unperturbed && !thin_unperturbed) {
      for (auto i : idx) keep[i] = 1;
      continue;
    }
    std::mt19937_64 rng(mix_seed(seed, 0x5ab5 + static_cast<std::uint64_t>(kind)));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_keep = static_cast<std::size_t>(
        std::llround(static_cast<double>(idx.size()) / static_cast<double>(keep_1_in)));
    for (std::size_t k = 0; k < n_keep && k < idx.size(); ++k) keep[idx[k]] = 1;
  }
  std::vector<T> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (keep[i]) out.push_back(items[i]);
  }
  return out;
}

/// Grid x events, seeded per scenario, then subsampled; ids are positions in
/// the returned list.
inline std::vector<ScenarioSpec> plan_scenarios(const std::vector<GenerationMix>& grid,
                                                const std::vector<EventKind>& events, std::uint64_t master_seed,
                                                int keep_1_in, bool thin_unperturbed = true) {
  std::vector<ScenarioSpec> all;
  for (auto ev : events) {
    for (const auto& mix : grid) all.push_back({0, mix, ev, scenario_seed(master_seed, mix, ev)});
  }
  auto kept = subsample_scenarios(all, keep_1_in, master_seed, thin_unperturbed);
  for (std::size_t i = 0; i < kept.size(); ++i) kept[i].id = i;
  return kept;
}

// ---------------------------------------------------------------------------
// Scenario store: one binary file per scenario plus a TSV manifest.
//   magic "DRAMNSCN" | u32 version | u64 id | u32 sg, gfm, gfl | u32 event |
//   u64 seed | u32 label | u32 diverged | i32 faulted_unit (as u32) |
//   f64 dt | i64 t_first_ms | u64 n | n x (str name, u32 kind, f64 offset) |
//   u64 r, r x (f64 re, f64 im) | matrix trajectory (rows, cols, row-major) |
//   u64 FNV-1a checksum
// ---------------------------------------------------------------------------

inline constexpr char kScenarioMagic[8] = {'D', 'R', 'A', 'M', 'N', 'S', 'C', 'N'};
inline constexpr std::uint32_t kScenarioVersion = 1;

inline void write_scenario(std::ostream& os, const ScenarioRecord& rec) {
  BinaryWriter w(os);
  w.bytes(kScenarioMagic, sizeof kScenarioMagic);
  w.u32(kScenarioVersion);
  w.u64(rec.id);
  w.u32(static_cast<std::uint32_t>(rec.mix.sg));
  w.u32(static_cast<std::uint32_t>(rec.mix.gfm));
  w.u32(static_cast<std::uint32_t>(rec.mix.gfl));
  w.u32(static_cast<std::uint32_t>(rec.event));
  w.u64(rec.seed);
  w.u32(static_cast<std::uint32_t>(rec.label));
  w.u32(rec.diverged ? 1u : 0u);
  w.u32(static_cast<std::uint32_t>(rec.faulted_unit));
  w.f64(rec.trajectory.dt);
  w.i64(rec.trajectory.t_first_ms);
  const auto n = static_cast<std::size_t>(rec.trajectory.data.cols());
  w.u64(n);
  for (std::size_t j = 0; j < n; ++j) {
    w.str(j < rec.trajectory.channel_names.size() ? rec.trajectory.channel_names[j] : "");
    w.u32(static_cast<std::uint32_t>(j < rec.channel_kinds.size() ? rec.channel_kinds[j] : ChannelKind::Inert));
    w.f64(rec.offsets(static_cast<Index>(j)));
  }
  w.u64(static_cast<std::uint64_t>(rec.spectrum.size()));
  for (Index k = 0; k < rec.spectrum.size(); ++k) {
    w.f64(rec.spectrum(k).real());
    w.f64(rec.spectrum(k).imag());
  }
  w.matrix(rec.trajectory.data);
  w.footer();
}

inline ScenarioRecord read_scenario(std::istream& is) {
  BinaryReader r(is);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kScenarioMagic, sizeof magic) != 0) throw DataError("not a scenario file");
  if (r.u32() != kScenarioVersion) throw DataError("unsupported scenario file version");
  ScenarioRecord rec;
  rec.id = r.u64();
  rec.mix.sg = static_cast<int>(r.u32());
  rec.mix.gfm = static_cast<int>(r.u32());
  rec.mix.gfl = static_cast<int>(r.u32());
  const auto ev = r.u32();
  if (ev > 2) throw DataError("scenario file has an unknown event kind");
  rec.event = static_cast<EventKind>(ev);
  rec.seed = r.u64();
  rec.label = static_cast<int>(r.u32());
  rec.diverged = r.u32() != 0;
  rec.faulted_unit = static_cast<int>(static_cast<std::int32_t>(r.u32()));
  rec.trajectory.dt = r.f64();
  rec.trajectory.t_first_ms = r.i64();
  const auto n = r.u64();
  if (n > 100000) throw DataError("scenario file has an implausible channel count");
  rec.offsets = Vector(static_cast<Index>(n));
  for (std::uint64_t j = 0; j < n; ++j) {
    rec.trajectory.channel_names.push_back(r.str(4096));
    const auto kind = r.u32();
    if (kind > 3) throw DataError("scenario file has an unknown channel kind");
    rec.channel_kinds.push_back(static_cast<ChannelKind>(kind));
    rec.offsets(static_cast<Index>(j)) = r.f64();
  }
  const auto nr = r.u64();
  if (nr > 100000) throw DataError("scenario file has an implausible spectrum length");
  rec.spectrum = ComplexVector(static_cast<Index>(nr));
  for (std::uint64_t k = 0; k < nr; ++k) {
    const double re = r.f64();
    const double im = r.f64();
    rec.spectrum(static_cast<Index>(k)) = Complex(re, im);
  }
  rec.trajectory.data = r.matrix();
  if (rec.trajectory.data.cols() != static_cast<Index>(n)) throw DataError("scenario trajectory width mismatch");
  r.verify_footer();
  return rec;
}

inline std::string scenario_filename(std::size_t id) {
  std::ostringstream os;
  os << "scenario_";
  os.width(6);
  os.fill('0');
  os << id << ".bin";
  return os.str();
}

inline void save_scenario(const std::filesystem::path& path, const ScenarioRecord& rec) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write scenario file " + tmp);
    write_scenario(os, rec);
    if (!os) throw DataError("failed writing scenario file " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline ScenarioRecord load_scenario(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing scenario file " + path.string());
  try {
    return read_scenario(is);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

struct ManifestEntry {
  std::size_t id = 0;
  std::string file;
  GenerationMix mix;
  EventKind event = EventKind::Unperturbed;
  std::uint64_t seed = 0;
  int label = 0;
  bool diverged = false;
};

inline ManifestEntry manifest_entry(const ScenarioRecord& rec) {
  return {rec.id, scenario_filename(rec.id), rec.mix, rec.event, rec.seed, rec.label, rec.diverged};
}

inline constexpr const char* kManifestHeader = "id\tfile\tsg\tgfm\tgfl\tevent\tseed\tlabel\tdiverged";

/// Manifest TSV; `preamble` lines are written as '#' comments first.
inline void write_manifest(std::ostream& os, const std::vector<ManifestEntry>& entries,
                           const std::vector<std::string>& preamble = {}) {
  for (const auto& line : preamble) os << "# " << line << "\n";
  os << kManifestHeader << "\n";
  for (const auto& e : entries) {
    os << e.id << '\t' << e.file << '\t' << e.mix.sg << '\t' << e.mix.gfm << '\t' << e.mix.gfl << '\t'
       << to_string(e.event) << '\t' << e.seed << '\t' << e.label << '\t' << (e.diverged ? 1 : 0) << "\n";
  }
}

inline std::vector<ManifestEntry> read_manifest(std::istream& is) {
  std::vector<ManifestEntry> out;
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != kManifestHeader) throw DataError("manifest header mismatch");
      header = true;
      continue;
    }
    std::istringstream ls(line);
    ManifestEntry e;
    std::string event;
    int diverged = 0;
    if (!(ls >> e.id >> e.file >> e.mix.sg >> e.mix.gfm >> e.mix.gfl >> event >> e.seed >> e.label >> diverged)) {
      throw DataError("malformed manifest line: " + line);
    }
    try {
      e.event = event_from_string(event);
    } catch (const ConfigError&) {
      throw DataError("manifest has unknown event '" + event + "'");
    }
    e.diverged = diverged != 0;
    out.push_back(e);
  }
  if (!header) throw DataError("manifest is empty");
  return out;
}

}  // namespace dramn
