#pragma once

// Classification metrics with "unstable" (label 1) as the positive class.

#include "dramn/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace dramn {

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
};

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double specificity = 0.0;
  double auroc = 0.0;
  bool auroc_set = false;
  Confusion confusion;
  double threshold = 0.5;
  std::size_t n_samples = 0;
  // ratios whose denominator was zero (reported as 0)
  std::vector<std::string> undefined;
};

namespace detail {

inline double safe_ratio(std::size_t num, std::size_t den, const char* name, std::vector<std::string>& undefined) {
  if (den == 0) {
    undefined.emplace_back(name);
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace detail

inline MetricsReport metrics_from_confusion(const Confusion& c, double threshold = 0.5) {
  MetricsReport r;
  r.confusion = c;
  r.threshold = threshold;
  r.n_samples = c.total();
  r.accuracy = detail::safe_ratio(c.tp + c.tn, c.total(), "accuracy", r.undefined);
  r.precision = detail::safe_ratio(c.tp, c.tp + c.fp, "precision", r.undefined);
  r.recall = detail::safe_ratio(c.tp, c.tp + c.fn, "recall", r.undefined);
  r.specificity = detail::safe_ratio(c.tn, c.tn + c.fp, "specificity", r.undefined);
  if (r.precision + r.recall > 0.0) {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  } else {
    r.undefined.emplace_back("f1");
  }
  return r;
}

/// Predictions p >= threshold count as unstable.
inline MetricsReport confusion_metrics(const std::vector<double>& probs, const std::vector<int>& labels,
                                       double threshold = 0.5) {
  if (probs.size() != labels.size()) throw DataError("confusion_metrics: length mismatch");
  if (probs.empty()) throw DataError("confusion_metrics: no samples");
  Confusion c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    const bool pos = labels[i] == 1;
    if (pred && pos) ++c.tp;
    else if (pred) ++c.fp;
    else if (pos) ++c.fn;
    else ++c.tn;
  }
  return metrics_from_confusion(c, threshold);
}

inline constexpr std::size_t kAurocPairwiseLimit = 10000;

/// Exact Mann-Whitney count over all positive/negative pairs.
inline double auroc_pairwise(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  std::size_t np = 0, nn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    ++np;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] == 1) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  nn = scores.size() - np;
  return wins / (static_cast<double>(np) * static_cast<double>(nn));
}

/// Rank-sum form with midranks for ties.
inline double auroc_ranks(const std::vector<double>& scores, const std::vector<int>& labels) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t np = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += mid;
        ++np;
      }
    }
    i = j + 1;
  }
  const double p = static_cast<double>(np);
  const double q = static_cast<double>(n - np);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw DataError("auroc: length mismatch");
  std::size_t np = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("auroc: labels must be 0 or 1");
    np += static_cast<std::size_t>(y == 1);
  }
  if (np == 0 || np == labels.size()) throw DataError("auroc: undefined for single-class input");
  for (double s : scores) {
    if (std::isnan(s)) throw DataError("auroc: NaN score");
  }
  return scores.size() <= kAurocPairwiseLimit ? auroc_pairwise(scores, labels) : auroc_ranks(scores, labels);
}

/// Confusion metrics plus AUROC when both classes are present.
inline MetricsReport evaluate_scores(const std::vector<double>& probs, const std::vector<int>& labels,
                                     double threshold = 0.5) {
  MetricsReport r = confusion_metrics(probs, labels, threshold);
  const auto np = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (np > 0 && np < labels.size()) {
    r.auroc = auroc(probs, labels);
    r.auroc_set = true;
  } else {
    r.undefined.emplace_back("auroc");
  }
  return r;
}

}  // namespace dramn
