#pragma once

// Supervised training: MAE loss on the output probability, exact reverse-mode
// gradients through the recurrent graph cell, AdamW, early stopping.

#include "dramn/common.hpp"
#include "dramn/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <thread>
#include <vector>

namespace dramn {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  int epochs = 100;
  int batch_size = 32;
  int early_stop_patience = 10;
  double val_fraction = 0.1;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be positive");
    if (early_stop_patience < 0) throw ConfigError("early_stop_patience must be >= 0");
    if (!(val_fraction > 0.0 && val_fraction < 1.0) || !(test_fraction > 0.0 && test_fraction < 1.0)) {
      throw ConfigError("val_fraction and test_fraction must lie in (0, 1)");
    }
    if (workers < 1) throw ConfigError("workers must be >= 1");
  }
};

inline double mae_loss(double p, int y) { return std::abs(p - static_cast<double>(y)); }

inline double mae_loss(const std::vector<double>& p, const std::vector<int>& y) {
  if (p.size() != y.size() || p.empty()) throw DataError("mae_loss: need equal, non-empty batches");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += mae_loss(p[i], y[i]);
  return s / static_cast<double>(p.size());
}

struct LossAndGrad {
  double loss = 0.0;
  double p = 0.0;
  Gradients grads;
};

namespace detail {

inline void accumulate_compressor(Gradients& g, const StepCache& sc, const Matrix& dx_hat,
                                  const ModelParams& params) {
  g.proj += sc.z.transpose() * dx_hat;
  g.proj_bias += dx_hat.colwise().sum();
  const Vector dz = dx_hat * params.proj.row(0).transpose();
  g.comp_scale.col(0) += dz.cwiseProduct(sc.means);
  g.comp_bias.col(0) += dz;
}

inline void accumulate_alpha(Gradients& g, const Matrix& d_geff, const AdjacencyTensor& tensor,
                             const ModelParams& params) {
  if (params.kind == ModelKind::IdentityLstm) return;
  for (int k = 0; k < tensor.d(); ++k) {
    g.alpha(k, 0) += d_geff.cwiseProduct(tensor.layers[static_cast<std::size_t>(k)]).sum();
  }
}

}  // namespace detail

/// MAE loss and its exact gradient with respect to every parameter group.
inline LossAndGrad backward(const SequenceSample& sample, const ModelParams& params, int y) {
  ForwardCache cache;
  const double p = forward(sample, params, &cache);
  const auto& dims = params.dims;
  const double n = static_cast<double>(dims.n);

  LossAndGrad out;
  out.p = p;
  out.loss = mae_loss(p, y);
  out.grads = ModelParams::zeros(dims, params.kind);
  out.grads.seed = params.seed;
  Gradients& g = out.grads;

  const double diff = p - static_cast<double>(y);
  const double dp = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
  const double dlogit = dp * p * (1.0 - p);

  g.b_out(0, 0) = dlogit;
  g.w_out = dlogit * cache.h_final.colwise().mean().transpose();
  Matrix dh = Matrix::Constant(dims.n, 1, dlogit / n) * params.w_out.transpose();

  if (params.kind == ModelKind::Gcn) {
    const StepCache& sc = cache.steps.front();
    const Matrix dpre = dh.cwiseProduct((1.0 - sc.h.array().square()).matrix());
    g.wx[kCell] += sc.x_conv.transpose() * dpre;
    g.b[kCell] += dpre.colwise().sum();
    const Matrix dx_conv = dpre * params.wx[kCell].transpose();
    const Matrix d_geff = dx_conv * sc.x_hat.transpose();
    detail::accumulate_alpha(g, d_geff, sample.tensors.back(), params);
    detail::accumulate_compressor(g, sc, sc.g_eff.transpose() * dx_conv, params);
  } else {
    Matrix dc = Matrix::Zero(dims.n, dims.H);
    for (int t = dims.l_seq - 1; t >= 0; --t) {
      const StepCache& sc = cache.steps[static_cast<std::size_t>(t)];
      const Matrix& gi = sc.act[kInput];
      const Matrix& gf = sc.act[kForget];
      const Matrix& go = sc.act[kOutput];
      const Matrix& gg = sc.act[kCell];

      const Matrix dc_total =
          dc + dh.cwiseProduct(go).cwiseProduct((1.0 - sc.tanh_c.array().square()).matrix());
      std::array<Matrix, kNumGates> da;
      da[kOutput] = dh.cwiseProduct(sc.tanh_c).cwiseProduct(go.cwiseProduct((1.0 - go.array()).matrix()));
      da[kInput] = dc_total.cwiseProduct(gg).cwiseProduct(gi.cwiseProduct((1.0 - gi.array()).matrix()));
      da[kForget] = dc_total.cwiseProduct(sc.c_prev).cwiseProduct(gf.cwiseProduct((1.0 - gf.array()).matrix()));
      da[kCell] = dc_total.cwiseProduct(gi).cwiseProduct((1.0 - gg.array().square()).matrix());

      Matrix dx_conv = Matrix::Zero(dims.n, dims.F);
      Matrix dh_conv = Matrix::Zero(dims.n, dims.H);
      for (int k = 0; k < kNumGates; ++k) {
        g.wx[k].noalias() += sc.x_conv.transpose() * da[k];
        g.wh[k].noalias() += sc.h_conv.transpose() * da[k];
        g.b[k] += da[k].colwise().sum();
        dx_conv.noalias() += da[k] * params.wx[k].transpose();
        dh_conv.noalias() += da[k] * params.wh[k].transpose();
      }
      const Matrix d_geff = dx_conv * sc.x_hat.transpose() + dh_conv * sc.h_prev.transpose();
      detail::accumulate_alpha(g, d_geff, sample.tensors[static_cast<std::size_t>(t)], params);
      detail::accumulate_compressor(g, sc, sc.g_eff.transpose() * dx_conv, params);

      dh = sc.g_eff.transpose() * dh_conv;
      dc = dc_total.cwiseProduct(gf);
    }
  }

  if (!g.all_finite()) throw NumericalError("backward: non-finite gradient");
  return out;
}

struct AdamState {
  Gradients m;
  Gradients v;
  long long t = 0;

  static AdamState for_params(const ModelParams& p) {
    return {ModelParams::zeros(p.dims, p.kind), ModelParams::zeros(p.dims, p.kind), 0};
  }
};

struct AdamWHyper {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One AdamW update with decoupled decay and bias-corrected moments. Alpha is
/// left untouched for the identity-graph variant, where it is frozen.
inline void adamw_step(ModelParams& params, const Gradients& grads, AdamState& state,
                       const AdamWHyper& h) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  auto pg = groups(params);
  const auto gg = groups(grads);
  auto mg = groups(state.m);
  auto vg = groups(state.v);
  if (pg.size() != gg.size()) throw ShapeError("adamw_step: gradient tree mismatch");
  for (std::size_t k = 0; k < pg.size(); ++k) {
    if (pg[k] == &params.alpha && params.kind == ModelKind::IdentityLstm) continue;
    Matrix& w = *pg[k];
    const Matrix& g = *gg[k];
    if (g.rows() != w.rows() || g.cols() != w.cols()) throw ShapeError("adamw_step: gradient shape mismatch");
    Matrix& m = *mg[k];
    Matrix& v = *vg[k];
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g.cwiseAbs2();
    w *= (1.0 - h.lr * h.weight_decay);
    w.array() -= h.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + h.eps);
  }
}

// Per-channel z-score statistics, fit on training data only.
struct Standardizer {
  Vector mean;
  Vector std;

  static constexpr double kStdFloor = 1e-9;

  template <typename Range>
  static Standardizer fit(const Range& matrices) {
    Index n = -1;
    double count = 0.0;
    Vector sum, sumsq;
    for (const Matrix* m : matrices) {
      if (n < 0) {
        n = m->cols();
        sum = Vector::Zero(n);
        sumsq = Vector::Zero(n);
      }
      if (m->cols() != n) throw ShapeError("Standardizer::fit: channel count mismatch");
      count += static_cast<double>(m->rows());
      sum += m->colwise().sum().transpose();
    }
    if (n < 0 || count == 0.0) throw DataError("Standardizer::fit: no data");
    Standardizer s;
    s.mean = sum / count;
    // second pass about the mean for accuracy
    for (const Matrix* m : matrices) {
      sumsq += (m->rowwise() - s.mean.transpose()).colwise().squaredNorm().transpose();
    }
    s.std = (sumsq / count).cwiseSqrt().cwiseMax(kStdFloor);
    return s;
  }

  Matrix transform(const Matrix& x) const {
    return ((x.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array()).matrix();
  }

  Matrix inverse(const Matrix& z) const {
    return ((z.array().rowwise() * std.transpose().array()).matrix().rowwise() + mean.transpose());
  }
};

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Scenario-level split: test first, then validation out of the remainder.
inline Split split_dataset(const std::vector<std::size_t>& scenario_ids, const TrainConfig& cfg,
                           std::uint64_t seed) {
  cfg.validate();
  if (scenario_ids.empty()) throw DataError("split_dataset: empty dataset");
  std::vector<std::size_t> ids = scenario_ids;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::mt19937_64 rng(mix_seed(seed, 0x5917));
  std::shuffle(ids.begin(), ids.end(), rng);

  const auto total = static_cast<double>(ids.size());
  const auto n_test = static_cast<std::size_t>(std::llround(total * cfg.test_fraction));
  const auto rest = ids.size() - std::min(n_test, ids.size());
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(rest) * cfg.val_fraction));
  if (n_test == 0 || n_val == 0 || rest <= n_val) {
    throw DataError("split_dataset: " + std::to_string(ids.size()) +
                    " scenarios are too few for non-empty train/val/test splits");
  }
  Split s;
  s.test.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test),
               ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  s.train.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), ids.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  ModelParams params;  // best-validation parameters
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

inline std::vector<double> predict(const std::vector<const SequenceSample*>& samples,
                                   const ModelParams& params) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto* s : samples) out.push_back(forward(*s, params));
  return out;
}

inline double mean_loss(const std::vector<const SequenceSample*>& samples, const ModelParams& params) {
  if (samples.empty()) throw DataError("mean_loss: empty sample set");
  double s = 0.0;
  for (const auto* x : samples) s += mae_loss(forward(*x, params), x->label);
  return s / static_cast<double>(samples.size());
}

namespace detail {

// Mean gradient over a batch. Per-sample gradients land in fixed slots and
// are summed in index order, so the result is independent of worker count.
inline double batch_gradient(const std::vector<const SequenceSample*>& batch, const ModelParams& params,
                             int workers, Gradients& out) {
  std::vector<LossAndGrad> slots(batch.size());
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) slots[i] = backward(*batch[i], params, batch[i]->label);
  };
  const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(workers), batch.size());
  if (nw <= 1) {
    run(0, batch.size());
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(nw);
    const std::size_t chunk = (batch.size() + nw - 1) / nw;
    for (std::size_t w = 0; w < nw; ++w) {
      pool.emplace_back([&, w] {
        try {
          run(w * chunk, std::min(batch.size(), (w + 1) * chunk));
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  out = ModelParams::zeros(params.dims, params.kind);
  auto og = groups(out);
  double loss = 0.0;
  for (auto& s : slots) {
    loss += s.loss;
    const auto sg = groups(s.grads);
    for (std::size_t k = 0; k < og.size(); ++k) *og[k] += *sg[k];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto* m : og) *m *= inv;
  return loss * inv;
}

}  // namespace detail

struct TrainHooks {
  bool record_wall_time = true;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Mini-batch AdamW with early stopping on validation MAE; returns the
/// best-validation parameters.
inline TrainResult train(const std::vector<const SequenceSample*>& train_set,
                         const std::vector<const SequenceSample*>& val_set, ModelParams init,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw DataError("train: empty train or validation set");

  TrainResult result;
  ModelParams params = std::move(init);
  AdamState adam = AdamState::for_params(params);
  const AdamWHyper hyper{cfg.lr, cfg.weight_decay};
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const SequenceSample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
      Gradients grads;
      double loss = 0.0;
      try {
        loss = detail::batch_gradient(batch, params, cfg.workers, grads);
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(start / static_cast<std::size_t>(cfg.batch_size)) + ": " + e.what());
      }
      epoch_loss += loss * static_cast<double>(batch.size());
      seen += batch.size();
      adamw_step(params, grads, adam, hyper);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(seen);
    rec.val_loss = mean_loss(val_set, params);
    if (hooks.record_wall_time) {
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (rec.val_loss < best) {
      best = rec.val_loss;
      result.params = params;
      result.best_epoch = epoch;
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.early_stop_patience) {
      break;
    }
  }
  return result;
}

}  // namespace dramn
