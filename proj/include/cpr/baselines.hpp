#pragma once

// Comparator models: a black-box recurrent classifier over [x_t, a_{t-1}]
// inputs, post-hoc linear coefficients extracted from it as input gradients,
// a pooled logistic regression, and a condition-specific logistic regression
// keyed by (timestep, discretized context).

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "cpr/autodiff.hpp"
#include "cpr/encoder.hpp"
#include "cpr/policy.hpp"
#include "cpr/trajectory.hpp"

namespace cpr {

// --------------------------------------------------------------------------
// Black-box recurrent policy: p_t = sigma(head(h_t)), h_t consumed [x_t, a_{t-1}]
// --------------------------------------------------------------------------

class BlackboxModel {
 public:
  BlackboxModel(Cell cell, int hidden_dim, int obs_dim, int static_dim, uint64_t init_seed)
      : enc_(EncoderConfig{cell, hidden_dim, obs_dim, static_dim, 1}, init_seed) {}

  const Encoder& encoder() const { return enc_; }
  int obs_dim() const { return enc_.config().obs_dim; }

  std::vector<Tensor*> param_tensors() {
    std::vector<Tensor*> out;
    for (size_t i = 0; i < enc_.params().size(); ++i) out.push_back(&enc_.params().tensor(i));
    return out;
  }

  std::vector<std::pair<std::string, Tensor*>> named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t i = 0; i < enc_.params().size(); ++i)
      out.emplace_back(enc_.params().name(i), &enc_.params().tensor(i));
    return out;
  }

  struct TapedStep {
    ad::Value logit;
    ad::Value prob;
  };

  class Bound {
   public:
    Bound(const BlackboxModel& m, ad::Tape& tape) : enc_(m.enc_.bind(tape)), tape_(&tape) {}

    const std::vector<ad::Value>& leaves() const { return enc_.leaves(); }

    // x_override, when valid, replaces the observation leaf at 0-based step
    // `override_t` so its gradient can be read back after backward()
    std::vector<TapedStep> forward(const Trajectory& tr, int override_t = -1,
                                   ad::Value x_override = {}) const {
      model_detail::check_nonempty(tr);
      const int d = enc_.config().obs_dim;
      validate_trajectory(tr, d);
      const int T = tr.length();
      std::vector<TapedStep> steps;
      steps.reserve(T);
      Encoder::State state = enc_.init_state(tr.static_ctx);
      for (int t = 0; t < T; ++t) {
        ad::Value x = (t == override_t && x_override.valid())
                          ? x_override
                          : tape_->leaf(Tensor::column(tr.obs[t]));
        const int a_prev = t == 0 ? 0 : tr.actions[t - 1];
        ad::Value input = ad::concat(x, tape_->leaf(static_cast<double>(a_prev)));
        state = enc_.step(state, input);
        TapedStep s;
        s.logit = enc_.emit(state);
        s.prob = ad::sigmoid(s.logit);
        steps.push_back(s);
      }
      return steps;
    }

    ad::Value batch_loss(std::span<const Trajectory* const> batch, double /*lambda*/) const {
      if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
      ad::Value acc;
      for (size_t i = 0; i < batch.size(); ++i) {
        const Trajectory& tr = *batch[i];
        auto steps = forward(tr);
        std::vector<ad::Value> probs;
        for (auto& s : steps) probs.push_back(s.prob);
        ad::Value traj = model_detail::trajectory_bce(probs, tr.actions);
        acc = i == 0 ? traj : ad::add(acc, traj);
      }
      return ad::scale(acc, 1.0 / static_cast<double>(batch.size()));
    }

   private:
    Encoder::Bound enc_;
    ad::Tape* tape_;
  };

  Bound bind(ad::Tape& tape) const { return Bound(*this, tape); }

  std::vector<double> forward(const Trajectory& tr) const {
    ad::Tape tape;
    auto steps = bind(tape).forward(tr);
    std::vector<double> probs;
    probs.reserve(steps.size());
    for (auto& s : steps) probs.push_back(s.prob.val().scalar_value());
    return probs;
  }

 private:
  Encoder enc_;
};

enum class GradientTarget { logit, probability };

// Gradient of the step-t output w.r.t. the observation x_t, i.e. the linear
// coefficients of a first-order expansion of the policy at the current input.
// Works for any model whose Bound::forward supports an observation override.
// t is 1-based.
template <class Model>
std::vector<double> extract_coeffs(const Model& model, const Trajectory& tr, int t,
                                   GradientTarget target = GradientTarget::logit) {
  if (t < 1 || t > tr.length())
    throw std::invalid_argument(
        detail::str("extract_coeffs: step ", t, " outside 1..", tr.length()));
  ad::Tape tape;
  auto bound = model.bind(tape);
  ad::Value x = tape.leaf(Tensor::column(tr.obs[t - 1]));
  auto steps = bound.forward(tr, t - 1, x);
  ad::Value out =
      target == GradientTarget::logit ? steps[t - 1].logit : steps[t - 1].prob;
  tape.backward(out);
  return x.grad().data();
}

// --------------------------------------------------------------------------
// Pooled logistic regression on (x_t -> a_t) over all patients and steps
// --------------------------------------------------------------------------

struct LogRegOptions {
  double learning_rate = 0.1;
  int max_iters = 20000;
  double grad_tol = 1e-10;
};

namespace logreg_detail {

struct Problem {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
};

inline Problem pool_steps(std::span<const Trajectory* const> trajectories) {
  Problem pr;
  for (const Trajectory* tr : trajectories)
    for (int t = 0; t < tr->length(); ++t) {
      pr.x.push_back(tr->obs[t]);
      pr.y.push_back(tr->actions[t]);
    }
  return pr;
}

// full-batch Adam on the closed-form BCE gradient
inline PolicyParams fit(const Problem& pr, const LogRegOptions& opt) {
  if (pr.x.empty()) throw std::invalid_argument("logistic regression: no observations");
  const size_t n = pr.x.size();
  const int d = static_cast<int>(pr.x.front().size());
  bool has_pos = false, has_neg = false;
  for (int yi : pr.y) (yi ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw std::invalid_argument("logistic regression: data contains a single class");

  std::vector<double> w(d + 1, 0.0);  // coef then intercept
  std::vector<double> m(d + 1, 0.0), v(d + 1, 0.0), g(d + 1, 0.0);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int it = 1; it <= opt.max_iters; ++it) {
    std::fill(g.begin(), g.end(), 0.0);
    for (size_t i = 0; i < n; ++i) {
      double z = w[d];
      for (int j = 0; j < d; ++j) z += w[j] * pr.x[i][j];
      const double r = 1.0 / (1.0 + std::exp(-z)) - pr.y[i];
      for (int j = 0; j < d; ++j) g[j] += r * pr.x[i][j];
      g[d] += r;
    }
    double gmax = 0;
    for (double& gj : g) {
      gj /= static_cast<double>(n);
      gmax = std::max(gmax, std::abs(gj));
    }
    if (gmax < opt.grad_tol) break;
    for (int j = 0; j <= d; ++j) {
      m[j] = b1 * m[j] + (1 - b1) * g[j];
      v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
      const double mh = m[j] / (1 - std::pow(b1, it));
      const double vh = v[j] / (1 - std::pow(b2, it));
      w[j] -= opt.learning_rate * mh / (std::sqrt(vh) + eps);
    }
  }
  PolicyParams p;
  p.coef.assign(w.begin(), w.begin() + d);
  p.intercept = w[d];
  return p;
}

// single-class pools get a Laplace-smoothed intercept-only model
inline PolicyParams intercept_only(const Problem& pr) {
  double pos = 0;
  for (int yi : pr.y) pos += yi;
  const double p = (pos + 0.5) / (static_cast<double>(pr.y.size()) + 1.0);
  PolicyParams out;
  out.coef.assign(pr.x.front().size(), 0.0);
  out.intercept = std::log(p / (1.0 - p));
  return out;
}

}  // namespace logreg_detail

inline PolicyParams fit_pooled_logreg(std::span<const Trajectory* const> trajectories,
                                      const LogRegOptions& opt = {}) {
  return logreg_detail::fit(logreg_detail::pool_steps(trajectories), opt);
}

inline PolicyParams fit_pooled_logreg(const Dataset& ds, const LogRegOptions& opt = {}) {
  auto ptrs = pointers_to(ds);
  return fit_pooled_logreg(std::span<const Trajectory* const>(ptrs), opt);
}

// --------------------------------------------------------------------------
// Condition-specific logistic regression: one model per
// (timestep, discretized context) key, pooled fallback for unseen keys
// --------------------------------------------------------------------------

struct ConditionKey {
  int t = 0;  // 1-based timestep
  std::vector<int> bins;
  bool operator==(const ConditionKey&) const = default;
};

struct ConditionKeyHash {
  size_t operator()(const ConditionKey& k) const {
    uint64_t h = 0xcbf29ce484222325ULL ^ static_cast<uint64_t>(k.t);
    for (int b : k.bins) {
      h ^= static_cast<uint64_t>(b) + 0x9e3779b9ULL;
      h *= 0x100000001b3ULL;
    }
    return static_cast<size_t>(h);
  }
};

// maps (1-based timestep, observation) -> discretized context tuple
using Discretizer = std::function<std::vector<int>(int t, std::span<const double> x)>;

// equal-width per-feature bins over the training range; out-of-range values
// clamp to the boundary bins
struct BinningSpec {
  std::vector<double> lo, hi;
  int bins = 4;

  static BinningSpec from_data(std::span<const Trajectory* const> trajectories, int bins) {
    if (bins < 1) throw std::invalid_argument("discretizer: bins must be >= 1");
    if (trajectories.empty()) throw std::invalid_argument("discretizer: no data");
    const int d = static_cast<int>(trajectories.front()->obs.front().size());
    BinningSpec s;
    s.bins = bins;
    s.lo.assign(d, 1e300);
    s.hi.assign(d, -1e300);
    for (const Trajectory* tr : trajectories)
      for (const auto& row : tr->obs)
        for (int j = 0; j < d; ++j) {
          s.lo[j] = std::min(s.lo[j], row[j]);
          s.hi[j] = std::max(s.hi[j], row[j]);
        }
    return s;
  }

  std::vector<int> operator()(std::span<const double> x) const {
    std::vector<int> out(x.size());
    for (size_t j = 0; j < x.size(); ++j) {
      const double range = hi[j] - lo[j];
      int b = range > 0 ? static_cast<int>((x[j] - lo[j]) / range * bins) : 0;
      out[j] = std::min(std::max(b, 0), bins - 1);
    }
    return out;
  }

  Discretizer to_discretizer() const {
    return [spec = *this](int, std::span<const double> x) { return spec(x); };
  }
};

inline Discretizer make_binning_discretizer(std::span<const Trajectory* const> trajectories,
                                            int bins) {
  return BinningSpec::from_data(trajectories, bins).to_discretizer();
}

class ConditionSpecificModel {
 public:
  std::unordered_map<ConditionKey, PolicyParams, ConditionKeyHash> per_key;
  PolicyParams pooled;
  Discretizer discretizer;

  const PolicyParams& params_for(int t, std::span<const double> x) const {
    ConditionKey key{t, discretizer(t, x)};
    auto it = per_key.find(key);
    return it == per_key.end() ? pooled : it->second;
  }

  double predict_prob(int t, std::span<const double> x) const {
    return predict(params_for(t, x), x);
  }
};

inline ConditionSpecificModel fit_condition_specific(
    std::span<const Trajectory* const> trajectories, Discretizer discretizer,
    const LogRegOptions& opt = {}) {
  ConditionSpecificModel model;
  model.discretizer = std::move(discretizer);
  model.pooled = fit_pooled_logreg(trajectories, opt);

  std::unordered_map<ConditionKey, logreg_detail::Problem, ConditionKeyHash> groups;
  for (const Trajectory* tr : trajectories)
    for (int t = 0; t < tr->length(); ++t) {
      ConditionKey key{t + 1, model.discretizer(t + 1, tr->obs[t])};
      auto& pr = groups[key];
      pr.x.push_back(tr->obs[t]);
      pr.y.push_back(tr->actions[t]);
    }
  for (auto& [key, pr] : groups) {
    bool has_pos = false, has_neg = false;
    for (int yi : pr.y) (yi ? has_pos : has_neg) = true;
    model.per_key[key] =
        (has_pos && has_neg) ? logreg_detail::fit(pr, opt) : logreg_detail::intercept_only(pr);
  }
  return model;
}

}  // namespace cpr
