#pragma once

// Forward computation of the dynamic recurrent adjacency memory network:
// per-window temporal compression, trainable mixing of the spectral layers,
// an LSTM cell whose inputs and hidden state are graph-convolved, and a
// node-pooled sigmoid readout.

#include "dramn/adjacency.hpp"
#include "dramn/common.hpp"
#include "dramn/serialize.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace dramn {

enum class ModelKind : std::uint32_t {
  Dramn = 0,         // learned layer mixing, recurrent
  IdentityLstm = 1,  // G_eff = I, alpha frozen
  Gcn = 2,           // one graph convolution on the last window, no recurrence
};

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Dramn: return "dramn";
    case ModelKind::IdentityLstm: return "identity_lstm";
    case ModelKind::Gcn: return "gcn";
  }
  return "unknown";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "dramn") return ModelKind::Dramn;
  if (s == "identity_lstm") return ModelKind::IdentityLstm;
  if (s == "gcn") return ModelKind::Gcn;
  throw ConfigError("unknown model kind '" + s + "'");
}

struct ModelDims {
  Index n = 1;     // channels / graph nodes
  Index T = 1000;  // samples per window
  Index F = 64;    // embedding width
  Index H = 64;    // hidden width
  int d = kNumLayers;
  int l_seq = 5;

  bool operator==(const ModelDims&) const = default;

  void validate() const {
    if (n < 1 || T < 1 || F < 1 || H < 1 || d < 1 || l_seq < 1) {
      throw ConfigError("model dims must all be positive");
    }
  }
};

enum Gate : int { kInput = 0, kForget = 1, kOutput = 2, kCell = 3 };
inline constexpr int kNumGates = 4;

struct ModelParams {
  ModelDims dims;
  ModelKind kind = ModelKind::Dramn;
  std::uint64_t seed = 0;

  Matrix comp_scale;  // n x 1, pointwise scale per channel
  Matrix comp_bias;   // n x 1
  Matrix proj;        // 1 x F
  Matrix proj_bias;   // 1 x F
  Matrix alpha;       // d x 1
  std::array<Matrix, kNumGates> wx;  // F x H
  std::array<Matrix, kNumGates> wh;  // H x H
  std::array<Matrix, kNumGates> b;   // 1 x H
  Matrix w_out;       // H x 1
  Matrix b_out;       // 1 x 1

  /// Zero-valued parameters with the declared shapes.
  static ModelParams zeros(const ModelDims& dims, ModelKind kind = ModelKind::Dramn) {
    dims.validate();
    ModelParams p;
    p.dims = dims;
    p.kind = kind;
    p.comp_scale = Matrix::Zero(dims.n, 1);
    p.comp_bias = Matrix::Zero(dims.n, 1);
    p.proj = Matrix::Zero(1, dims.F);
    p.proj_bias = Matrix::Zero(1, dims.F);
    p.alpha = Matrix::Zero(dims.d, 1);
    for (int g = 0; g < kNumGates; ++g) {
      p.wx[g] = Matrix::Zero(dims.F, dims.H);
      p.wh[g] = Matrix::Zero(dims.H, dims.H);
      p.b[g] = Matrix::Zero(1, dims.H);
    }
    p.w_out = Matrix::Zero(dims.H, 1);
    p.b_out = Matrix::Zero(1, 1);
    return p;
  }

  std::size_t count() const {
    std::size_t total = 0;
    for_each_group([&](const char*, const Matrix& m) { total += static_cast<std::size_t>(m.size()); });
    return total;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_group([&](const char*, const Matrix& m) { ok = ok && m.allFinite(); });
    return ok;
  }

  // Fixed group order; checkpoints and the optimizer both rely on it.
  template <typename Fn>
  void for_each_group(Fn&& fn) {
    visit_groups(*this, fn);
  }
  template <typename Fn>
  void for_each_group(Fn&& fn) const {
    visit_groups(*this, fn);
  }

 private:
  template <typename Self, typename Fn>
  static void visit_groups(Self& self, Fn& fn) {
    static constexpr const char* gate_names[kNumGates] = {"i", "f", "o", "g"};
    fn("comp_scale", self.comp_scale);
    fn("comp_bias", self.comp_bias);
    fn("proj", self.proj);
    fn("proj_bias", self.proj_bias);
    fn("alpha", self.alpha);
    for (int g = 0; g < kNumGates; ++g) {
      fn((std::string("wx_") + gate_names[g]).c_str(), self.wx[g]);
      fn((std::string("wh_") + gate_names[g]).c_str(), self.wh[g]);
      fn((std::string("b_") + gate_names[g]).c_str(), self.b[g]);
    }
    fn("w_out", self.w_out);
    fn("b_out", self.b_out);
  }
};

// Same shape tree as the parameters.
using Gradients = ModelParams;

/// Pointers to every parameter group, in for_each_group order.
inline std::vector<Matrix*> groups(ModelParams& p) {
  std::vector<Matrix*> out;
  p.for_each_group([&](const char*, Matrix& m) { out.push_back(&m); });
  return out;
}

inline std::vector<const Matrix*> groups(const ModelParams& p) {
  std::vector<const Matrix*> out;
  p.for_each_group([&](const char*, const Matrix& m) { out.push_back(&m); });
  return out;
}

inline std::vector<std::string> group_names(const ModelParams& p) {
  std::vector<std::string> out;
  p.for_each_group([&](const char* name, const Matrix&) { out.emplace_back(name); });
  return out;
}

// A view of rows [row0, row0 + rows) of a shared sample matrix.
struct WindowRef {
  std::shared_ptr<const Matrix> source;
  Index row0 = 0;
  Index rows = 0;

  auto view() const { return source->middleRows(row0, rows); }
};

struct SequenceSample {
  std::vector<WindowRef> windows;          // l_seq windows, T x n each
  std::vector<AdjacencyTensor> tensors;    // l_seq tensors
  int label = 0;
  std::size_t scenario = 0;
  std::int64_t t_end = 0;

  int l_seq() const { return static_cast<int>(windows.size()); }
};

struct CellState {
  Matrix h;  // n x H
  Matrix c;  // n x H

  static CellState zeros(Index n, Index hidden) {
    return {Matrix::Zero(n, hidden), Matrix::Zero(n, hidden)};
  }
};

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename Derived>
Matrix sigmoid(const Eigen::MatrixBase<Derived>& x) {
  Matrix out(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = 0; i < x.rows(); ++i) out(i, j) = sigmoid(x(i, j));
  }
  return out;
}

/// Per-channel time means of a T x n window.
template <typename Derived>
Vector channel_means(const Eigen::MatrixBase<Derived>& x) {
  return x.colwise().mean().transpose();
}

/// Pointwise per-channel scale and bias, average over time, affine map to F.
template <typename Derived>
Matrix temporal_compress(const Eigen::MatrixBase<Derived>& x, const ModelParams& params) {
  if (x.cols() != params.dims.n) {
    throw ShapeError("temporal_compress: window has " + std::to_string(x.cols()) +
                     " channels, model expects " + std::to_string(params.dims.n));
  }
  // mean_t(a x_t + b) == a mean_t(x_t) + b
  const Vector z = params.comp_scale.col(0).cwiseProduct(channel_means(x)) + params.comp_bias.col(0);
  Matrix out = z * params.proj;
  out.rowwise() += params.proj_bias.row(0);
  return out;
}

inline Matrix mix_layers(const AdjacencyTensor& g, const Matrix& alpha) {
  if (alpha.size() != g.d()) throw ShapeError("mix_layers: alpha length does not match layer count");
  Matrix out = Matrix::Zero(g.n(), g.n());
  for (int k = 0; k < g.d(); ++k) out += alpha(k) * g.layers[static_cast<std::size_t>(k)];
  return out;
}

inline Matrix effective_graph(const AdjacencyTensor& g, const ModelParams& params) {
  if (params.kind == ModelKind::IdentityLstm) return Matrix::Identity(params.dims.n, params.dims.n);
  return mix_layers(g, params.alpha);
}

// Intermediates of one cell step, retained for the backward pass.
struct StepCache {
  Vector means;   // channel means of the raw window
  Vector z;       // pooled scalar per channel
  Matrix x_hat;   // n x F
  Matrix g_eff;   // n x n
  Matrix x_conv;  // n x F
  Matrix h_conv;  // n x H
  std::array<Matrix, kNumGates> act;
  Matrix c_prev, h_prev, c, tanh_c, h;
};

inline CellState cell_step(const Matrix& x_hat, const CellState& state, const Matrix& g_eff,
                           const ModelParams& params, StepCache* cache = nullptr) {
  const Index n = params.dims.n;
  if (x_hat.rows() != n || x_hat.cols() != params.dims.F || g_eff.rows() != n ||
      g_eff.cols() != n || state.h.rows() != n || state.h.cols() != params.dims.H) {
    throw ShapeError("cell_step: non-conformable shapes");
  }
  const Matrix x_conv = g_eff * x_hat;
  const Matrix h_conv = g_eff * state.h;
  std::array<Matrix, kNumGates> act;
  for (int g = 0; g < kNumGates; ++g) {
    Matrix pre = x_conv * params.wx[g] + h_conv * params.wh[g];
    pre.rowwise() += params.b[g].row(0);
    act[g] = g == kCell ? Matrix(pre.array().tanh()) : sigmoid(pre);
  }
  CellState next;
  next.c = act[kForget].cwiseProduct(state.c) + act[kInput].cwiseProduct(act[kCell]);
  const Matrix tanh_c = next.c.array().tanh();
  next.h = act[kOutput].cwiseProduct(tanh_c);
  if (!next.c.allFinite() || !next.h.allFinite()) {
    throw NumericalError("cell_step: non-finite state");
  }
  if (cache) {
    cache->g_eff = g_eff;
    cache->x_conv = x_conv;
    cache->h_conv = h_conv;
    cache->act = std::move(act);
    cache->c_prev = state.c;
    cache->h_prev = state.h;
    cache->c = next.c;
    cache->tanh_c = tanh_c;
    cache->h = next.h;
  }
  return next;
}

struct ForwardCache {
  std::vector<StepCache> steps;
  Matrix h_final;  // n x H (gcn: tanh activation of the graph convolution)
  double logit = 0.0;
  double p = 0.5;
};

inline void check_sample(const SequenceSample& sample, const ModelParams& params) {
  const auto& d = params.dims;
  if (sample.windows.size() != sample.tensors.size() || sample.windows.empty()) {
    throw ShapeError("sample needs matching, non-empty window and tensor lists");
  }
  if (sample.l_seq() != d.l_seq) {
    throw ShapeError("sample has " + std::to_string(sample.l_seq()) +
                     " steps, model expects " + std::to_string(d.l_seq));
  }
  for (std::size_t t = 0; t < sample.windows.size(); ++t) {
    const auto& w = sample.windows[t];
    if (!w.source || w.rows != d.T || w.source->cols() != d.n ||
        w.row0 + w.rows > w.source->rows()) {
      throw ShapeError("sample window " + std::to_string(t) + " does not match model dims");
    }
    if (sample.tensors[t].n() != d.n || sample.tensors[t].d() != d.d) {
      throw ShapeError("sample tensor " + std::to_string(t) + " does not match model dims");
    }
  }
}

inline double forward(const SequenceSample& sample, const ModelParams& params,
                      ForwardCache* cache = nullptr) {
  check_sample(sample, params);
  const auto& d = params.dims;
  Matrix h_final;
  std::vector<StepCache> steps;

  if (params.kind == ModelKind::Gcn) {
    const int last = d.l_seq - 1;
    StepCache sc;
    const auto x = sample.windows[static_cast<std::size_t>(last)].view();
    sc.means = channel_means(x);
    sc.z = params.comp_scale.col(0).cwiseProduct(sc.means) + params.comp_bias.col(0);
    sc.x_hat = temporal_compress(x, params);
    sc.g_eff = effective_graph(sample.tensors[static_cast<std::size_t>(last)], params);
    sc.x_conv = sc.g_eff * sc.x_hat;
    Matrix pre = sc.x_conv * params.wx[kCell];
    pre.rowwise() += params.b[kCell].row(0);
    h_final = pre.array().tanh();
    if (!h_final.allFinite()) throw NumericalError("gcn: non-finite activation");
    sc.h = h_final;
    steps.push_back(std::move(sc));
  } else {
    CellState state = CellState::zeros(d.n, d.H);
    for (int t = 0; t < d.l_seq; ++t) {
      StepCache sc;
      const auto x = sample.windows[static_cast<std::size_t>(t)].view();
      sc.means = channel_means(x);
      sc.z = params.comp_scale.col(0).cwiseProduct(sc.means) + params.comp_bias.col(0);
      sc.x_hat = temporal_compress(x, params);
      const Matrix g_eff = effective_graph(sample.tensors[static_cast<std::size_t>(t)], params);
      state = cell_step(sc.x_hat, state, g_eff, params, cache ? &sc : nullptr);
      if (cache) steps.push_back(std::move(sc));
    }
    h_final = std::move(state.h);
  }

  const double logit = (h_final * params.w_out).mean() + params.b_out(0, 0);
  const double p = sigmoid(logit);
  if (!std::isfinite(p)) throw NumericalError("forward: non-finite output");
  if (cache) {
    cache->steps = std::move(steps);
    cache->h_final = std::move(h_final);
    cache->logit = logit;
    cache->p = p;
  }
  return p;
}

inline ModelParams init_params(const ModelDims& dims, std::uint64_t seed,
                               ModelKind kind = ModelKind::Dramn) {
  ModelParams p = ModelParams::zeros(dims, kind);
  p.seed = seed;
  std::mt19937_64 rng(seed);
  auto fill = [&](Matrix& m, Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index j = 0; j < m.cols(); ++j) {
      for (Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
    }
  };
  fill(p.comp_scale, 1);
  fill(p.proj, 1);
  for (int g = 0; g < kNumGates; ++g) {
    fill(p.wx[g], dims.F);
    fill(p.wh[g], dims.H);
  }
  p.b[kForget].setConstant(1.0);
  fill(p.w_out, dims.H);
  p.alpha.setConstant(1.0 / static_cast<double>(dims.d));
  return p;
}

// ---------------------------------------------------------------------------
// Checkpoint format (version 1), all integers little-endian:
//   magic "DRAMNCKP" | u32 version | u32 kind | u64 n, T, F, H, d, l_seq |
//   u64 seed | u64 config_hash | str tool_version |
//   for each group in for_each_group order: u64 rows, u64 cols, row-major f64 |
//   u64 FNV-1a checksum of everything before it
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'D', 'R', 'A', 'M', 'N', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const ModelParams& p, std::uint64_t config_hash = 0) {
  BinaryWriter w(os);
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(p.kind));
  w.u64(static_cast<std::uint64_t>(p.dims.n));
  w.u64(static_cast<std::uint64_t>(p.dims.T));
  w.u64(static_cast<std::uint64_t>(p.dims.F));
  w.u64(static_cast<std::uint64_t>(p.dims.H));
  w.u64(static_cast<std::uint64_t>(p.dims.d));
  w.u64(static_cast<std::uint64_t>(p.dims.l_seq));
  w.u64(p.seed);
  w.u64(config_hash);
  w.str(kToolVersion);
  p.for_each_group([&](const char*, const Matrix& m) { w.matrix(m); });
  w.footer();
}

struct Checkpoint {
  ModelParams params;
  std::uint64_t config_hash = 0;
  std::string tool_version;
};

inline Checkpoint read_checkpoint(std::istream& is) {
  BinaryReader r(is);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw DataError("not a checkpoint file");
  if (r.u32() != kCheckpointVersion) throw DataError("unsupported checkpoint version");
  const auto kind = r.u32();
  if (kind > 2) throw DataError("unknown model kind in checkpoint");
  ModelDims dims;
  dims.n = static_cast<Index>(r.u64());
  dims.T = static_cast<Index>(r.u64());
  dims.F = static_cast<Index>(r.u64());
  dims.H = static_cast<Index>(r.u64());
  dims.d = static_cast<int>(r.u64());
  dims.l_seq = static_cast<int>(r.u64());
  Checkpoint ck;
  ck.params = ModelParams::zeros(dims, static_cast<ModelKind>(kind));
  ck.params.seed = r.u64();
  ck.config_hash = r.u64();
  ck.tool_version = r.str(256);
  ck.params.for_each_group([&](const char* name, Matrix& m) {
    Matrix v = r.matrix();
    if (v.rows() != m.rows() || v.cols() != m.cols()) {
      throw DataError(std::string("checkpoint group ") + name + " has the wrong shape");
    }
    m = std::move(v);
  });
  r.verify_footer();
  return ck;
}

inline void save_checkpoint(const std::string& path, const ModelParams& p, std::uint64_t config_hash = 0) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  write_checkpoint(os, p, config_hash);
  if (!os) throw DataError("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing checkpoint: " + path);
  return read_checkpoint(is);
}

}  // namespace dramn
