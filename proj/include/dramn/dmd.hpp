#pragma once

// Rank-truncated dynamic mode decomposition of one measurement window.

#include "dramn/common.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace dramn {

// T samples x n channels, dt seconds per sample.
struct TimeSeriesWindow {
  Matrix data;
  double dt = 1e-3;
  std::vector<std::string> channel_names;
  std::int64_t t_start = 0;  // ms offset in the source scenario

  Index samples() const { return data.rows(); }
  Index channels() const { return data.cols(); }

  void validate() const {
    if (data.rows() < 2) {
      throw DegenerateWindowError("window needs at least 2 samples, got " +
                                  std::to_string(data.rows()));
    }
    if (data.cols() < 1) throw DegenerateWindowError("window has no channels");
    if (!(dt > 0.0)) throw DataError("window dt must be positive");
    if (!data.allFinite()) throw DataError("window contains non-finite samples");
  }
};

struct DmdConfig {
  int rank = 5;
  double svd_rel_tol = 1e-10;
  int delay_embedding = 0;

  void validate() const {
    if (rank < 1) throw ConfigError("dmd rank must be >= 1");
    if (!(svd_rel_tol > 0.0 && svd_rel_tol < 1.0)) {
      throw ConfigError("dmd svd_rel_tol must lie in (0, 1)");
    }
    if (delay_embedding < 0) throw ConfigError("dmd delay_embedding must be >= 0");
  }
};

struct DmdResult {
  ComplexMatrix modes;        // n x r_eff
  ComplexVector eigenvalues;  // r_eff
  int r_eff = 0;
  Index window_len = 0;
};

struct Snapshots {
  Matrix x1;
  Matrix x2;
};

struct TruncatedSvd {
  Matrix u;  // n x r
  Vector s;  // r, descending
  Matrix v;  // m x r
};

struct EigenPairs {
  ComplexMatrix vectors;  // columns, unit 2-norm
  ComplexVector values;
};

/// Time-shifted snapshot matrices: column k of x1 is sample k, column k of x2
/// is sample k+1.
inline Snapshots build_snapshots(const TimeSeriesWindow& window) {
  const Index t = window.samples();
  if (t < 2) {
    throw DegenerateWindowError("snapshot construction needs T >= 2, got " +
                                std::to_string(t));
  }
  Snapshots out;
  out.x1 = window.data.topRows(t - 1).transpose();
  out.x2 = window.data.bottomRows(t - 1).transpose();
  return out;
}

/// Thin SVD keeping min(rank, #{sigma_i > rel_tol * sigma_max}) components.
inline TruncatedSvd truncated_svd(const Matrix& x1, int rank, double rel_tol) {
  if (!x1.allFinite()) throw NumericalError("truncated_svd: non-finite input");
  if (rank < 1) throw ConfigError("truncated_svd: rank must be >= 1");
  if (x1.size() == 0 || x1.cwiseAbs().maxCoeff() == 0.0) {
    throw ZeroMatrixError("truncated_svd: snapshot matrix is identically zero");
  }
  Eigen::JacobiSVD<Matrix> svd(x1, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double smax = sv(0);
  if (!(smax > 0.0)) {
    throw ZeroMatrixError("truncated_svd: snapshot matrix has no nonzero singular value");
  }
  Index keep = 0;
  while (keep < sv.size() && keep < rank && sv(keep) > rel_tol * smax) ++keep;
  TruncatedSvd out;
  out.u = svd.matrixU().leftCols(keep);
  out.s = sv.head(keep);
  out.v = svd.matrixV().leftCols(keep);
  return out;
}

/// Projected operator U^T X2 V S^-1.
inline Matrix reduced_operator(const Matrix& u, const Vector& s, const Matrix& v,
                               const Matrix& x2) {
  if (u.cols() != s.size() || v.cols() != s.size() || u.rows() != x2.rows() ||
      v.rows() != x2.cols()) {
    throw ShapeError("reduced_operator: non-conformable shapes");
  }
  return u.transpose() * x2 * v * s.cwiseInverse().asDiagonal();
}

namespace detail {

inline bool eig_before(const Complex& a, const Complex& b) {
  const double ma = std::abs(a);
  const double mb = std::abs(b);
  const double tol = 1e-12 * std::max(1.0, std::max(ma, mb));
  if (std::abs(ma - mb) > tol) return ma > mb;
  if (std::abs(a.real() - b.real()) > tol) return a.real() > b.real();
  return a.imag() > b.imag();
}

}  // namespace detail

/// Eigendecomposition of a small dense operator, sorted by descending
/// modulus (ties: descending real part, then descending imaginary part).
inline EigenPairs eig_small(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("eig_small: operator must be square");
  if (a.rows() > 32) throw ShapeError("eig_small: operator larger than 32x32");
  if (!a.allFinite()) throw NumericalError("eig_small: non-finite operator");
  const Index r = a.rows();
  EigenPairs out;
  if (r == 0) return out;

  Eigen::EigenSolver<Matrix> solver(a, true);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("eig_small: eigen iteration did not converge");
  }
  ComplexVector vals = solver.eigenvalues();
  ComplexMatrix vecs = solver.eigenvectors();

  const double anorm = std::max(a.norm(), std::numeric_limits<double>::min());
  double worst = 0.0;
  for (Index k = 0; k < r; ++k) {
    const double nk = vecs.col(k).norm();
    if (nk > 0.0) vecs.col(k) /= nk;
    const double res = (a.cast<Complex>() * vecs.col(k) - vals(k) * vecs.col(k)).norm();
    worst = std::max(worst, res);
  }
  if (!(worst <= 1e-8 * anorm) || !vals.allFinite()) {
    std::ostringstream msg;
    msg << "eig_small: eigenpair residual " << worst << " exceeds 1e-8*||A|| = "
        << 1e-8 * anorm;
    throw NumericalError(msg.str());
  }

  // Insertion sort keeps the tolerance-based comparator well defined.
  std::vector<Index> order(static_cast<std::size_t>(r));
  for (Index k = 0; k < r; ++k) order[static_cast<std::size_t>(k)] = k;
  for (std::size_t i = 1; i < order.size(); ++i) {
    for (std::size_t j = i; j > 0 && detail::eig_before(vals(order[j]), vals(order[j - 1])); --j) {
      std::swap(order[j], order[j - 1]);
    }
  }
  out.values.resize(r);
  out.vectors.resize(r, r);
  for (Index k = 0; k < r; ++k) {
    out.values(k) = vals(order[static_cast<std::size_t>(k)]);
    out.vectors.col(k) = vecs.col(order[static_cast<std::size_t>(k)]);
  }
  return out;
}

/// Full-state modes X2 V S^-1 W.
inline ComplexMatrix dmd_modes(const Matrix& x2, const Matrix& v, const Vector& s,
                               const ComplexMatrix& w) {
  if (v.rows() != x2.cols() || v.cols() != s.size() || w.rows() != s.size()) {
    throw ShapeError("dmd_modes: non-conformable shapes");
  }
  const Matrix proj = x2 * v * s.cwiseInverse().asDiagonal();
  return proj.cast<Complex>() * w;
}

/// Stacks `delays` shifted copies: column block j at output sample k holds
/// input sample k + delays - j.
inline TimeSeriesWindow delay_embed(const TimeSeriesWindow& window, int delays) {
  if (delays < 0) throw ConfigError("delay_embed: delays must be >= 0");
  if (delays == 0) return window;
  const Index t = window.samples();
  const Index n = window.channels();
  if (delays >= t) {
    throw DegenerateWindowError("delay_embed: delays (" + std::to_string(delays) +
                                ") must be smaller than T (" + std::to_string(t) + ")");
  }
  const Index rows = t - delays;
  TimeSeriesWindow out;
  out.dt = window.dt;
  out.t_start = window.t_start + delays;
  out.data.resize(rows, n * (delays + 1));
  for (int j = 0; j <= delays; ++j) {
    out.data.middleCols(j * n, n) = window.data.middleRows(delays - j, rows);
    for (Index c = 0; c < n; ++c) {
      const std::string base = c < static_cast<Index>(window.channel_names.size())
                                   ? window.channel_names[static_cast<std::size_t>(c)]
                                   : "ch" + std::to_string(c);
      out.channel_names.push_back(j == 0 ? base : base + "@-" + std::to_string(j));
    }
  }
  return out;
}

namespace detail {

// Folds delay-embedded mode rows back to n channels: mean magnitude with the
// circular-mean phase of the stacked copies.
inline ComplexMatrix fold_delay_modes(const ComplexMatrix& modes, Index n, int delays) {
  const Index r = modes.cols();
  ComplexMatrix out(n, r);
  for (Index k = 0; k < r; ++k) {
    for (Index c = 0; c < n; ++c) {
      double mag = 0.0;
      Complex phasor(0.0, 0.0);
      for (int j = 0; j <= delays; ++j) {
        const Complex z = modes(j * n + c, k);
        const double a = std::abs(z);
        mag += a;
        if (a > 0.0) phasor += z / a;
      }
      mag /= static_cast<double>(delays + 1);
      const double phase = std::abs(phasor) > 0.0 ? std::arg(phasor) : 0.0;
      out(c, k) = std::polar(mag, phase);
    }
  }
  return out;
}

}  // namespace detail

inline DmdResult dmd(const TimeSeriesWindow& window, const DmdConfig& cfg) {
  cfg.validate();
  window.validate();
  const Index n = window.channels();
  const TimeSeriesWindow embedded =
      cfg.delay_embedding > 0 ? delay_embed(window, cfg.delay_embedding) : window;
  const Snapshots snaps = build_snapshots(embedded);
  const TruncatedSvd svd = truncated_svd(snaps.x1, cfg.rank, cfg.svd_rel_tol);
  const Matrix a_tilde = reduced_operator(svd.u, svd.s, svd.v, snaps.x2);
  const EigenPairs eig = eig_small(a_tilde);

  DmdResult out;
  out.modes = dmd_modes(snaps.x2, svd.v, svd.s, eig.vectors);
  if (cfg.delay_embedding > 0) {
    out.modes = detail::fold_delay_modes(out.modes, n, cfg.delay_embedding);
  }
  out.eigenvalues = eig.values;
  out.r_eff = static_cast<int>(svd.s.size());
  out.window_len = window.samples();
  if (!out.modes.allFinite() || !out.eigenvalues.allFinite()) {
    throw NumericalError("dmd: non-finite modes or eigenvalues");
  }
  return out;
}

}  // namespace dramn
