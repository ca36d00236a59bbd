#pragma once

// Channel ranking by cumulative multi-layer node strength.

#include "dramn/adjacency.hpp"
#include "dramn/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace dramn {

struct StrengthRange {
  std::int64_t t_from = 19000;
  std::int64_t t_to = 30000;

  bool contains(std::int64_t t) const { return t >= t_from && t <= t_to; }
};

struct NodeStrengthReport {
  Matrix per_layer;       // d x n raw strengths
  Matrix per_layer_norm;  // d x n, min-max per layer
  Vector composite;       // n
  std::vector<Index> ranking;
  StrengthRange range;
  std::size_t n_tensors = 0;
};

/// Sum over in-range tensors (by window start) of the absolute row sums of
/// each layer. Rows are layers, columns are nodes.
inline Matrix node_strength(const std::vector<const AdjacencyTensor*>& series, const StrengthRange& range,
                            std::size_t* used = nullptr) {
  Matrix w;
  std::size_t count = 0;
  for (const auto* t : series) {
    if (!range.contains(t->source_window)) continue;
    if (count == 0) {
      w = Matrix::Zero(t->d(), t->n());
    } else if (t->d() != w.rows() || t->n() != w.cols()) {
      throw ShapeError("node_strength: tensors differ in shape");
    }
    for (int l = 0; l < t->d(); ++l) {
      w.row(l) += t->layers[static_cast<std::size_t>(l)].cwiseAbs().rowwise().sum().transpose();
    }
    ++count;
  }
  if (count == 0) {
    throw DataError("node_strength: no tensors in [" + std::to_string(range.t_from) + ", " +
                    std::to_string(range.t_to) + "]");
  }
  if (used) *used = count;
  return w;
}

inline Matrix node_strength(const std::vector<AdjacencyTensor>& series, const StrengthRange& range) {
  std::vector<const AdjacencyTensor*> ptrs;
  for (const auto& t : series) ptrs.push_back(&t);
  return node_strength(ptrs, range);
}

/// Per-row (W - min) / (max - min); constant rows map to zero.
inline Matrix minmax_normalize(const Matrix& raw) {
  Matrix out = Matrix::Zero(raw.rows(), raw.cols());
  for (Index l = 0; l < raw.rows(); ++l) {
    if (raw.cols() == 0) break;
    const double lo = raw.row(l).minCoeff();
    const double hi = raw.row(l).maxCoeff();
    if (hi > lo) out.row(l) = (raw.row(l).array() - lo) / (hi - lo);
  }
  return out;
}

inline Vector composite_strength(const Matrix& norm) { return norm.colwise().sum().transpose(); }

/// Indices sorted by descending value, ties by ascending index.
inline std::vector<Index> rank_descending(const Vector& v) {
  std::vector<Index> order(static_cast<std::size_t>(v.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return v(a) > v(b); });
  return order;
}

inline NodeStrengthReport strength_report(const std::vector<const AdjacencyTensor*>& series,
                                          const StrengthRange& range = {}) {
  NodeStrengthReport r;
  r.range = range;
  r.per_layer = node_strength(series, range, &r.n_tensors);
  r.per_layer_norm = minmax_normalize(r.per_layer);
  r.composite = composite_strength(r.per_layer_norm);
  r.ranking = rank_descending(r.composite);
  return r;
}

inline std::vector<Index> top_k(const NodeStrengthReport& report, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > report.ranking.size()) {
    throw ConfigError("top_k: k=" + std::to_string(k) + " outside [1, " + std::to_string(report.ranking.size()) +
                      "]");
  }
  return {report.ranking.begin(), report.ranking.begin() + k};
}

struct Overlap {
  std::size_t count = 0;
  double jaccard = 0.0;
};

inline Overlap overlap(const std::vector<Index>& a, const std::vector<Index>& b) {
  const std::set<Index> sa(a.begin(), a.end());
  const std::set<Index> sb(b.begin(), b.end());
  Overlap o;
  for (Index x : sa) o.count += sb.count(x);
  const std::size_t uni = sa.size() + sb.size() - o.count;
  o.jaccard = uni == 0 ? 0.0 : static_cast<double>(o.count) / static_cast<double>(uni);
  return o;
}

struct Edge {
  Index i = 0, j = 0;
  double weight = 0.0;
};

/// Aggregated graph: per layer the in-range sum of |A|, min-max normalized
/// over off-diagonal entries, then summed over layers. Keeps the top
/// `keep_fraction` of edges (i < j) by weight; ties by (i, j).
inline std::vector<Edge> aggregated_edges(const std::vector<const AdjacencyTensor*>& series,
                                          const StrengthRange& range, double keep_fraction = 0.5) {
  if (!(keep_fraction > 0.0) || keep_fraction > 1.0) throw ConfigError("edge keep fraction must be in (0, 1]");
  std::vector<Matrix> sums;
  for (const auto* t : series) {
    if (!range.contains(t->source_window)) continue;
    if (sums.empty()) {
      for (const auto& l : t->layers) sums.push_back(Matrix::Zero(l.rows(), l.cols()));
    }
    for (std::size_t l = 0; l < sums.size(); ++l) sums[l] += t->layers[l].cwiseAbs();
  }
  if (sums.empty()) throw DataError("aggregated_edges: no tensors in range");
  const Index n = sums.front().rows();
  Matrix agg = Matrix::Zero(n, n);
  for (const auto& s : sums) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (Index i = 0; i < n; ++i) {
      for (Index j = i + 1; j < n; ++j) {
        lo = std::min(lo, s(i, j));
        hi = std::max(hi, s(i, j));
      }
    }
    if (!(hi > lo)) continue;
    for (Index i = 0; i < n; ++i) {
      for (Index j = i + 1; j < n; ++j) agg(i, j) += (s(i, j) - lo) / (hi - lo);
    }
  }
  std::vector<Edge> edges;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) edges.push_back({i, j, agg(i, j)});
  }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.weight > b.weight; });
  const auto keep = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(edges.size())));
  edges.resize(std::min(keep, edges.size()));
  return edges;
}

inline std::string channel_label(const std::vector<std::string>& names, Index i) {
  return static_cast<std::size_t>(i) < names.size() ? names[static_cast<std::size_t>(i)] : "ch" + std::to_string(i);
}

/// Tab-separated: channel, name, raw and normalized strength per layer,
/// composite, rank (1-based).
inline void write_strength_report(std::ostream& os, const NodeStrengthReport& r,
                                  const std::vector<std::string>& names) {
  os << "channel\tname";
  for (Index l = 0; l < r.per_layer.rows(); ++l) os << "\tW" << l + 1;
  for (Index l = 0; l < r.per_layer.rows(); ++l) os << "\tW" << l + 1 << "_norm";
  os << "\tcomposite\trank\n";
  std::vector<std::size_t> rank_of(r.ranking.size());
  for (std::size_t k = 0; k < r.ranking.size(); ++k) rank_of[static_cast<std::size_t>(r.ranking[k])] = k + 1;
  char buf[64];
  for (Index i = 0; i < r.per_layer.cols(); ++i) {
    os << i << '\t' << channel_label(names, i);
    for (Index l = 0; l < r.per_layer.rows(); ++l) {
      std::snprintf(buf, sizeof buf, "\t%.10g", r.per_layer(l, i));
      os << buf;
    }
    for (Index l = 0; l < r.per_layer.rows(); ++l) {
      std::snprintf(buf, sizeof buf, "\t%.10g", r.per_layer_norm(l, i));
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "\t%.10g", r.composite(i));
    os << buf << '\t' << rank_of[static_cast<std::size_t>(i)] << '\n';
  }
}

inline void write_edge_list(std::ostream& os, const std::vector<Edge>& edges, const std::vector<std::string>& names) {
  os << "source\ttarget\tweight\n";
  char buf[64];
  for (const auto& e : edges) {
    std::snprintf(buf, sizeof buf, "\t%.10g\n", e.weight);
    os << channel_label(names, e.i) << '\t' << channel_label(names, e.j) << buf;
  }
}

}  // namespace dramn
