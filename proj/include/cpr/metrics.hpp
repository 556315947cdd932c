#pragma once

// Action-matching and recovery metrics: AUROC (ties count 1/2), AUPRC via
// average precision, Brier score, Pearson correlation, and the pooled
// recovery report comparing estimated vs true action probabilities and
// coefficients on simulated holdouts.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpr/tensor.hpp"
#include "cpr/trajectory.hpp"

namespace cpr {

namespace metrics_detail {

inline void check_scored_set(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument(detail::str("scored set: ", scores.size(), " scores vs ",
                                            labels.size(), " labels"));
  if (scores.empty()) throw std::invalid_argument("scored set: empty");
  for (int y : labels)
    if (y != 0 && y != 1) throw std::invalid_argument("scored set: labels must be 0/1");
}

}  // namespace metrics_detail

// probability that a random positive outranks a random negative, ties 1/2
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  metrics_detail::check_scored_set(scores, labels);
  const size_t n = scores.size();
  size_t n_pos = 0;
  for (int y : labels) n_pos += y;
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auroc: both classes must be present");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // rank-sum with average ranks over tied groups
  double pos_rank_sum = 0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (size_t k = i; k < j; ++k)
      if (labels[order[k]]) pos_rank_sum += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1) / 2.0) / (np * nn);
}

// average precision: sum (R_i - R_{i-1}) * P_i over descending unique scores
inline double auprc(std::span<const double> scores, std::span<const int> labels) {
  metrics_detail::check_scored_set(scores, labels);
  const size_t n = scores.size();
  size_t n_pos = 0;
  for (int y : labels) n_pos += y;
  if (n_pos == 0) throw std::invalid_argument("auprc: at least one positive required");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  double ap = 0;
  double tp = 0, fp = 0, prev_recall = 0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    for (size_t k = i; k < j; ++k) (labels[order[k]] ? tp : fp) += 1;
    const double recall = tp / static_cast<double>(n_pos);
    const double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

// mean squared error between probabilistic scores and labels
inline double brier(std::span<const double> scores, std::span<const int> labels) {
  metrics_detail::check_scored_set(scores, labels);
  double s = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!(scores[i] >= 0.0 && scores[i] <= 1.0))
      throw std::invalid_argument(detail::str("brier: score ", scores[i], " outside [0,1]"));
    const double e = scores[i] - labels[i];
    s += e * e;
  }
  return s / static_cast<double>(scores.size());
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument(detail::str("pearson: ", a.size(), " vs ", b.size(), " values"));
  if (a.size() < 2) throw std::invalid_argument("pearson: need at least 2 pairs");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0 || vb == 0) throw std::invalid_argument("pearson: zero variance input");
  return cov / std::sqrt(va * vb);
}

// mean clamped binary cross-entropy of probabilistic scores
inline double cross_entropy(std::span<const double> scores, std::span<const int> labels) {
  metrics_detail::check_scored_set(scores, labels);
  constexpr double eps = 1e-7;
  double s = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    const double p = std::min(1.0 - eps, std::max(eps, scores[i]));
    s += labels[i] ? -std::log(p) : -std::log(1.0 - p);
  }
  return s / static_cast<double>(scores.size());
}

struct MetricValue {
  double mean = 0;
  double stderr_ = 0;
  int n_runs = 1;
  bool defined = true;

  static MetricValue undefined() {
    MetricValue v;
    v.defined = false;
    return v;
  }
};

using EvalReport = std::map<std::string, MetricValue>;

// Pooled per-step estimates paired with simulation truth.
struct RecoveryInputs {
  std::vector<double> est_prob, true_prob;
  std::vector<double> est_coef, true_coef;
};

// Pearson correlations over all (trajectory, step) pairs. Degenerate
// estimates (zero variance) are reported as undefined rather than failing.
inline EvalReport recovery_report(const RecoveryInputs& in) {
  if (in.est_prob.empty() || in.est_coef.empty())
    throw std::invalid_argument("recovery_report: missing truth or estimates");
  EvalReport rep;
  auto corr = [](const std::vector<double>& est, const std::vector<double>& tru) {
    try {
      MetricValue v;
      v.mean = pearson(est, tru);
      return v;
    } catch (const std::invalid_argument&) {
      return MetricValue::undefined();
    }
  };
  rep["prob_pearson"] = corr(in.est_prob, in.true_prob);
  rep["coef_pearson"] = corr(in.est_coef, in.true_coef);
  return rep;
}

// Collects pooled (estimate, truth) pairs from any per-step estimator.
// estimator(tr) must return per-step {prob, coef-vector} entries.
template <class Estimator>
RecoveryInputs collect_recovery(std::span<const Trajectory* const> holdout, Estimator&& est) {
  RecoveryInputs in;
  for (const Trajectory* tr : holdout) {
    if (!tr->has_truth())
      throw std::invalid_argument(
          detail::str("trajectory '", tr->id, "' carries no simulation truth"));
    auto steps = est(*tr);
    for (int t = 0; t < tr->length(); ++t) {
      const StepTruth& truth = tr->truth[t];
      in.est_prob.push_back(steps[t].prob);
      in.true_prob.push_back(truth.p);
      // compare the first d coefficients; simulation truth may append an
      // intercept after them
      const size_t d = steps[t].coef.size();
      for (size_t j = 0; j < std::min(d, truth.theta.size()); ++j) {
        in.est_coef.push_back(steps[t].coef[j]);
        in.true_coef.push_back(truth.theta[j]);
      }
    }
  }
  return in;
}

struct StepEstimate {
  double prob = 0;
  std::vector<double> coef;
};

}  // namespace cpr
