#pragma once

// Five-layer spectral adjacency tensors built from DMD modes, and the
// sliding-window sequences fed to the recurrent model.

#include "dramn/common.hpp"
#include "dramn/dmd.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace dramn {

inline constexpr int kNumLayers = 5;

enum class Layer : int { Participation = 0, Coupling = 1, Phase = 2, Growth = 3, Energy = 4 };

struct AdjacencyTensor {
  std::vector<Matrix> layers;  // d matrices, n x n
  std::int64_t source_window = 0;

  Index n() const { return layers.empty() ? 0 : layers.front().rows(); }
  int d() const { return static_cast<int>(layers.size()); }
  const Matrix& layer(Layer l) const { return layers[static_cast<std::size_t>(l)]; }
};

/// M[i,j] = sum_k |phi_ik| |phi_jk|
inline Matrix layer_participation(const ComplexMatrix& phi) {
  const Matrix mag = phi.cwiseAbs();
  return mag * mag.transpose();
}

/// Cosine similarity of zero-mean per-node magnitude vectors.
inline Matrix layer_coupling(const ComplexMatrix& phi, double eps = 1e-8) {
  const Index n = phi.rows();
  const Index r = phi.cols();
  Matrix centered = phi.cwiseAbs();
  if (r > 0) {
    const Vector mean = centered.rowwise().mean();
    centered.colwise() -= mean;
  }
  const Vector norms = centered.rowwise().norm();
  Matrix out(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j <= i; ++j) {
      const double v = centered.row(i).dot(centered.row(j)) / ((norms(i) + eps) * (norms(j) + eps));
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

namespace detail {

// Angle of a mode entry; exact zeros map to 0 regardless of signed zeros.
inline double entry_angle(const Complex& z) {
  if (z.real() == 0.0 && z.imag() == 0.0) return 0.0;
  return std::arg(z);
}

}  // namespace detail

/// kappa_i kappa_j cos(theta_i - theta_j) from circular means of mode angles.
inline Matrix layer_phase(const ComplexMatrix& phi) {
  const Index n = phi.rows();
  const Index r = phi.cols();
  Vector kappa = Vector::Zero(n);
  Vector theta = Vector::Zero(n);
  for (Index i = 0; i < n; ++i) {
    double c = 0.0;
    double s = 0.0;
    for (Index k = 0; k < r; ++k) {
      const double a = detail::entry_angle(phi(i, k));
      c += std::cos(a);
      s += std::sin(a);
    }
    if (r > 0) {
      c /= static_cast<double>(r);
      s /= static_cast<double>(r);
    }
    theta(i) = (c == 0.0 && s == 0.0) ? 0.0 : std::atan2(s, c);
    kappa(i) = std::sqrt(c * c + s * s);
  }
  Matrix out(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j <= i; ++j) {
      const double v = kappa(i) * kappa(j) * std::cos(theta(i) - theta(j));
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

namespace detail {

// Re(Phi diag(w) Phi^H), symmetrized exactly.
inline Matrix weighted_projection(const ComplexMatrix& phi, const Vector& w) {
  const ComplexMatrix p = phi * w.cast<Complex>().asDiagonal() * phi.adjoint();
  const Matrix re = p.real();
  return 0.5 * (re + re.transpose());
}

}  // namespace detail

// Per-step growth rates this small are eigensolver roundoff on unit-circle
// modes; they are zeroed so max-normalization cannot inflate them.
inline constexpr double kGrowthSnap = 1e-13;

/// Growth-weighted co-activation Re(Phi diag(log max(|lambda|, floor)) Phi^H).
inline Matrix layer_growth(const ComplexMatrix& phi, const ComplexVector& lambda,
                           double rho_floor = 1e-12) {
  if (lambda.size() != phi.cols()) throw ShapeError("layer_growth: eigenvalue count mismatch");
  Vector g(lambda.size());
  for (Index k = 0; k < lambda.size(); ++k) {
    g(k) = std::log(std::max(std::abs(lambda(k)), rho_floor));
    if (std::abs(g(k)) <= kGrowthSnap) g(k) = 0.0;
  }
  return detail::weighted_projection(phi, g);
}

/// Sum_{l=0}^{L-1} rho^{2l}, via the expm1 ratio for rho != 1.
inline double energy_factor(double rho, long long L) {
  if (!(rho >= 0.0)) throw DataError("energy_factor: rho must be >= 0");
  if (L < 1) throw DataError("energy_factor: L must be >= 1");
  if (rho == 1.0) return static_cast<double>(L);
  if (rho == 0.0) return 1.0;
  const double lr = std::log(rho);
  return std::expm1(2.0 * static_cast<double>(L) * lr) / std::expm1(2.0 * lr);
}

/// Natural log of energy_factor, finite even where the factor overflows.
inline double log_energy_factor(double rho, long long L) {
  if (!(rho >= 0.0)) throw DataError("log_energy_factor: rho must be >= 0");
  if (L < 1) throw DataError("log_energy_factor: L must be >= 1");
  if (rho == 1.0) return std::log(static_cast<double>(L));
  if (rho == 0.0) return 0.0;
  const double lr = std::log(rho);
  const double twoL = 2.0 * static_cast<double>(L);
  if (lr > 0.0) {
    // e = (exp(2L lr) - 1) / (exp(2 lr) - 1)
    return twoL * lr + std::log(-std::expm1(-twoL * lr)) - std::log(std::expm1(2.0 * lr));
  }
  return std::log(std::expm1(twoL * lr) / std::expm1(2.0 * lr));
}

/// Windowed spectral energy Re(Phi diag(e_k(L)) Phi^H).
inline Matrix layer_energy(const ComplexMatrix& phi, const ComplexVector& lambda, long long L) {
  if (lambda.size() != phi.cols()) throw ShapeError("layer_energy: eigenvalue count mismatch");
  Vector e(lambda.size());
  for (Index k = 0; k < lambda.size(); ++k) e(k) = energy_factor(std::abs(lambda(k)), L);
  return detail::weighted_projection(phi, e);
}

namespace detail {

// layer_energy up to a positive scale: weights exp(log e_k - max log e).
// Identical after max-normalization, and finite when some e_k overflows.
inline Matrix layer_energy_rescaled(const ComplexMatrix& phi, const ComplexVector& lambda,
                                    long long L) {
  Vector loge(lambda.size());
  for (Index k = 0; k < lambda.size(); ++k) loge(k) = log_energy_factor(std::abs(lambda(k)), L);
  if (loge.size() == 0) return Matrix::Zero(phi.rows(), phi.rows());
  const double top = loge.maxCoeff();
  if (top < 600.0) {
    Vector e(lambda.size());
    for (Index k = 0; k < lambda.size(); ++k) e(k) = energy_factor(std::abs(lambda(k)), L);
    return weighted_projection(phi, e);
  }
  return weighted_projection(phi, (loge.array() - top).exp().matrix());
}

}  // namespace detail

/// Divides each layer by its largest absolute entry; all-zero layers stay as-is.
inline AdjacencyTensor normalize_layers(std::vector<Matrix> raw, std::int64_t source_window = 0) {
  AdjacencyTensor out;
  out.source_window = source_window;
  for (auto& layer : raw) {
    if (!layer.allFinite()) throw NumericalError("normalize_layers: non-finite layer");
    const double m = layer.size() ? layer.cwiseAbs().maxCoeff() : 0.0;
    if (m > 0.0) layer /= m;
  }
  out.layers = std::move(raw);
  return out;
}

inline std::vector<Matrix> raw_layers(const DmdResult& res) {
  std::vector<Matrix> raw;
  raw.reserve(kNumLayers);
  raw.push_back(layer_participation(res.modes));
  raw.push_back(layer_coupling(res.modes));
  raw.push_back(layer_phase(res.modes));
  raw.push_back(layer_growth(res.modes, res.eigenvalues));
  raw.push_back(detail::layer_energy_rescaled(res.modes, res.eigenvalues,
                                              static_cast<long long>(res.window_len)));
  return raw;
}

inline AdjacencyTensor build_adjacency(const DmdResult& res, std::int64_t source_window = 0) {
  return normalize_layers(raw_layers(res), source_window);
}

inline AdjacencyTensor build_adjacency(const TimeSeriesWindow& window, const DmdConfig& cfg) {
  return build_adjacency(dmd(window, cfg), window.t_start);
}

// A sampled multichannel record; row k is the sample at t_first_ms + k * dt_ms.
struct Trajectory {
  Matrix data;
  double dt = 1e-3;
  std::int64_t t_first_ms = 1;
  std::vector<std::string> channel_names;

  std::int64_t dt_ms() const { return std::llround(dt * 1000.0); }
  std::int64_t t_last_ms() const { return t_first_ms + (data.rows() - 1) * dt_ms(); }

  /// Samples with time in [t_from, t_to] (inclusive, ms).
  TimeSeriesWindow window(std::int64_t t_from, std::int64_t t_to) const {
    const std::int64_t step = dt_ms();
    if (t_from < t_first_ms || t_to > t_last_ms() || t_to < t_from) {
      throw DataError("trajectory window [" + std::to_string(t_from) + ", " +
                      std::to_string(t_to) + "] outside record [" + std::to_string(t_first_ms) +
                      ", " + std::to_string(t_last_ms()) + "]");
    }
    const Index r0 = static_cast<Index>((t_from - t_first_ms) / step);
    const Index r1 = static_cast<Index>((t_to - t_first_ms) / step);
    TimeSeriesWindow w;
    w.data = data.middleRows(r0, r1 - r0 + 1);
    w.dt = dt;
    w.channel_names = channel_names;
    w.t_start = t_from;
    return w;
  }
};

struct SequenceConfig {
  int window_ms = 1000;
  int stride_ms = 100;
  int l_seq = 5;

  void validate() const {
    if (window_ms < 2) throw ConfigError("window_ms must be >= 2");
    if (stride_ms < 0) throw ConfigError("stride_ms must be >= 0");
    if (l_seq < 1) throw ConfigError("l_seq must be >= 1");
  }

  // Total history a sequence ending at t_end needs.
  std::int64_t span_ms() const {
    return static_cast<std::int64_t>(window_ms) + static_cast<std::int64_t>(l_seq - 1) * stride_ms;
  }

  /// First ms of window k (0-based, oldest first) for a sequence ending at t_end.
  std::int64_t window_start(std::int64_t t_end, int k) const {
    return t_end - window_ms + 1 - static_cast<std::int64_t>(l_seq - 1 - k) * stride_ms;
  }
};

struct AdjacencySequence {
  std::vector<AdjacencyTensor> tensors;
  std::vector<TimeSeriesWindow> windows;
};

inline AdjacencySequence build_sequence(const Trajectory& traj, std::int64_t t_end,
                                        const SequenceConfig& seq, const DmdConfig& dmd_cfg) {
  seq.validate();
  const std::int64_t first = seq.window_start(t_end, 0);
  if (first < traj.t_first_ms || t_end > traj.t_last_ms()) {
    throw DataError("insufficient history: sequence ending at " + std::to_string(t_end) +
                    " needs [" + std::to_string(first) + ", " + std::to_string(t_end) +
                    "], record covers [" + std::to_string(traj.t_first_ms) + ", " +
                    std::to_string(traj.t_last_ms()) + "]");
  }
  AdjacencySequence out;
  for (int k = 0; k < seq.l_seq; ++k) {
    const std::int64_t s = seq.window_start(t_end, k);
    out.windows.push_back(traj.window(s, s + seq.window_ms - 1));
    out.tensors.push_back(build_adjacency(out.windows.back(), dmd_cfg));
  }
  return out;
}

}  // namespace dramn
