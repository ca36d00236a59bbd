#pragma once

// Random model inputs shared by the model and training tests.

#include "dramn/model.hpp"

#include <memory>
#include <random>

namespace fixture {

using dramn::Index;
using dramn::Matrix;

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
  }
  return m;
}

/// Random symmetric tensor with entries in [-1, 1].
inline dramn::AdjacencyTensor random_tensor(Index n, int d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  dramn::AdjacencyTensor t;
  for (int k = 0; k < d; ++k) {
    Matrix m(n, n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j <= i; ++j) m(i, j) = m(j, i) = u(rng);
    }
    t.layers.push_back(m);
  }
  return t;
}

/// A sample whose windows are consecutive slices of one shared record.
inline dramn::SequenceSample random_sample(const dramn::ModelDims& dims, std::mt19937_64& rng,
                                           int label = 1, double scale = 1.0) {
  auto record = std::make_shared<const Matrix>(random_matrix(dims.T * dims.l_seq, dims.n, rng, scale));
  dramn::SequenceSample s;
  for (int t = 0; t < dims.l_seq; ++t) {
    s.windows.push_back({record, static_cast<Index>(t) * dims.T, dims.T});
    s.tensors.push_back(random_tensor(dims.n, dims.d, rng));
  }
  s.label = label;
  return s;
}

/// Same sample with channels permuted by perm (new channel i = old perm[i]).
inline dramn::SequenceSample permute_sample(const dramn::SequenceSample& s,
                                            const std::vector<Index>& perm) {
  const Index n = static_cast<Index>(perm.size());
  const Matrix& src = *s.windows.front().source;
  Matrix permuted(src.rows(), n);
  for (Index i = 0; i < n; ++i) permuted.col(i) = src.col(perm[static_cast<std::size_t>(i)]);
  auto record = std::make_shared<const Matrix>(std::move(permuted));
  dramn::SequenceSample out = s;
  for (auto& w : out.windows) w.source = record;
  for (auto& t : out.tensors) {
    for (auto& layer : t.layers) {
      Matrix m(n, n);
      for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
          m(i, j) = layer(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
        }
      }
      layer = m;
    }
  }
  return out;
}

}  // namespace fixture
