#pragma once

// Interpretable observation-to-action maps. CprModel emits a fresh linear
// logistic policy (coefficients + intercept) at every timestep from the
// encoded history. CprGlobalModel adds a running bias that is updated from
// the previous step through a second encoder head, which telescopes into an
// exact linear attribution over the whole observed history.

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpr/autodiff.hpp"
#include "cpr/encoder.hpp"
#include "cpr/trajectory.hpp"

namespace cpr {

struct PolicyParams {
  std::vector<double> coef;
  double intercept = 0;
};

inline double predict_logit(const PolicyParams& p, std::span<const double> x) {
  if (x.size() != p.coef.size())
    throw std::invalid_argument(detail::str("predict: observation dim ", x.size(),
                                            " does not match coefficient dim ", p.coef.size()));
  double z = p.intercept;
  for (size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw std::invalid_argument("predict: non-finite observation");
    z += p.coef[i] * x[i];
  }
  return z;
}

inline double predict(const PolicyParams& p, std::span<const double> x) {
  return 1.0 / (1.0 + std::exp(-predict_logit(p, x)));
}

inline std::string feature_name(int j, int obs_dim) {
  if (j < obs_dim) return detail::str("x", j);
  return j == obs_dim ? "intercept" : "action";
}

namespace model_detail {

inline std::vector<double> column_of(const ad::Value& v) { return v.val().data(); }

inline void check_nonempty(const Trajectory& tr) {
  if (tr.obs.empty())
    throw std::invalid_argument(detail::str("trajectory '", tr.id, "' is empty"));
}

// per-trajectory mean BCE as a taped scalar
inline ad::Value trajectory_bce(const std::vector<ad::Value>& probs,
                                const std::vector<int>& actions) {
  ad::Value acc;
  for (size_t t = 0; t < probs.size(); ++t) {
    ad::Value term = ad::bce(probs[t], Tensor::scalar(actions[t]));
    acc = t == 0 ? term : ad::add(acc, term);
  }
  return ad::scale(acc, 1.0 / static_cast<double>(probs.size()));
}

}  // namespace model_detail

// --------------------------------------------------------------------------
// CPR: theta_t = g(x_1, a_1, ..., x_{t-1}, a_{t-1}),  p_t = sigma(<coef, x_t> + b)
// --------------------------------------------------------------------------

class CprModel {
 public:
  CprModel(Cell cell, int hidden_dim, int obs_dim, int static_dim, uint64_t init_seed)
      : enc_(EncoderConfig{cell, hidden_dim, obs_dim, static_dim, obs_dim + 1}, init_seed) {}

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
    ad::Value theta;  // (d+1) x 1: coefficients then intercept
    ad::Value prob;
  };

  class Bound {
   public:
    Bound(const CprModel& m, ad::Tape& tape) : enc_(m.enc_.bind(tape)), tape_(&tape) {}

    const std::vector<ad::Value>& leaves() const { return enc_.leaves(); }

    std::vector<TapedStep> forward(const Trajectory& tr) const {
      model_detail::check_nonempty(tr);
      const int d = enc_.config().obs_dim;
      validate_trajectory(tr, d);
      std::vector<TapedStep> steps;
      steps.reserve(tr.obs.size());
      Encoder::State state = enc_.init_state(tr.static_ctx);
      const int T = tr.length();
      for (int t = 0; t < T; ++t) {
        ad::Value theta = enc_.emit(state);
        ad::Value coef = ad::slice_rows(theta, 0, d);
        ad::Value intercept = ad::slice_rows(theta, d, d + 1);
        ad::Value x = tape_->leaf(Tensor::column(tr.obs[t]));
        ad::Value prob = ad::sigmoid(ad::add(ad::dot(coef, x), intercept));
        steps.push_back({theta, prob});
        if (t + 1 < T) state = enc_.step(state, enc_.step_input(tr.obs[t], tr.actions[t]));
      }
      return steps;
    }

    // mean over trajectories of per-trajectory mean BCE, plus
    // lambda * mean over all (trajectory, step) pairs of |coef|_1
    ad::Value batch_loss(std::span<const Trajectory* const> batch, double lambda) const {
      if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
      if (lambda < 0) throw std::invalid_argument("batch_loss: lambda must be >= 0");
      const int d = enc_.config().obs_dim;
      ad::Value bce_acc, lasso_acc;
      long total_steps = 0;
      for (size_t i = 0; i < batch.size(); ++i) {
        const Trajectory& tr = *batch[i];
        auto steps = forward(tr);
        std::vector<ad::Value> probs;
        probs.reserve(steps.size());
        for (auto& s : steps) probs.push_back(s.prob);
        ad::Value traj_bce = model_detail::trajectory_bce(probs, tr.actions);
        bce_acc = i == 0 ? traj_bce : ad::add(bce_acc, traj_bce);
        if (lambda > 0) {
          for (auto& s : steps) {
            ad::Value pen = ad::l1(ad::slice_rows(s.theta, 0, d));
            lasso_acc = total_steps == 0 ? pen : ad::add(lasso_acc, pen);
            ++total_steps;
          }
        }
      }
      ad::Value loss = ad::scale(bce_acc, 1.0 / static_cast<double>(batch.size()));
      if (lambda > 0)
        loss = ad::add(loss, ad::scale(lasso_acc, lambda / static_cast<double>(total_steps)));
      return loss;
    }

   private:
    Encoder::Bound enc_;
    ad::Tape* tape_;
  };

  Bound bind(ad::Tape& tape) const { return Bound(*this, tape); }

  struct StepPolicy {
    PolicyParams params;
    double prob = 0;
  };

  // inference: same taped code path, values extracted
  std::vector<StepPolicy> forward(const Trajectory& tr) const {
    ad::Tape tape;
    auto steps = bind(tape).forward(tr);
    std::vector<StepPolicy> out;
    out.reserve(steps.size());
    const int d = obs_dim();
    for (auto& s : steps) {
      StepPolicy sp;
      const Tensor& th = s.theta.val();
      sp.params.coef.assign(th.data().begin(), th.data().begin() + d);
      sp.params.intercept = th[d];
      sp.prob = s.prob.val().scalar_value();
      out.push_back(std::move(sp));
    }
    return out;
  }

 private:
  Encoder enc_;
};

// loss of a model over a set of trajectories, without touching gradients
template <class Model>
double dataset_loss(const Model& model, std::span<const Trajectory* const> batch,
                    double lambda) {
  ad::Tape tape;
  return model.bind(tape).batch_loss(batch, lambda).val().scalar_value();
}

inline std::vector<const Trajectory*> pointers_to(const Dataset& ds) {
  std::vector<const Trajectory*> out;
  out.reserve(ds.size());
  for (const auto& tr : ds) out.push_back(&tr);
  return out;
}

template <class Model>
double cpr_loss(const Model& model, const Dataset& batch, double lambda) {
  auto ptrs = pointers_to(batch);
  return dataset_loss(model, ptrs, lambda);
}

// --------------------------------------------------------------------------
// CPR-global: logodds_t = <theta_t, x_t> + intercept_t + mu_t with
//   mu_1 = 0
//   mu_t = alpha * <beta_{t-1}, [x_{t-1}, a_{t-1}]> + (1 - alpha) * mu_{t-1}
//   beta_{t-1} emitted by a second encoder from history through step t-2
// --------------------------------------------------------------------------

struct GlobalStepTrace {
  PolicyParams theta;
  double mu = 0;
  double logodds = 0;
  double prob = 0;
};

struct GlobalTrace {
  double alpha = 0;
  std::vector<GlobalStepTrace> steps;
  // betas[j] is the emission after j consumed steps, i.e. beta_{j+1};
  // mu at 0-based step i >= 1 uses betas[i-1] with [x_{i-1}, a_{i-1}]
  std::vector<std::vector<double>> betas;
};

class CprGlobalModel {
 public:
  CprGlobalModel(Cell cell, int hidden_dim, int obs_dim, int static_dim, double alpha,
                 uint64_t init_seed)
      : alpha_(alpha),
        theta_enc_(EncoderConfig{cell, hidden_dim, obs_dim, static_dim, obs_dim + 1},
                   derive_seed(init_seed, "theta-encoder")),
        beta_enc_(EncoderConfig{cell, hidden_dim, obs_dim, static_dim, obs_dim + 1},
                  derive_seed(init_seed, "beta-encoder")) {
    if (!(alpha > 0.0 && alpha <= 1.0))
      throw std::invalid_argument(detail::str("alpha must lie in (0, 1], got ", alpha));
  }

  double alpha() const { return alpha_; }
  int obs_dim() const { return theta_enc_.config().obs_dim; }
  const Encoder& theta_encoder() const { return theta_enc_; }
  const Encoder& beta_encoder() const { return beta_enc_; }

  std::vector<Tensor*> param_tensors() {
    std::vector<Tensor*> out;
    for (size_t i = 0; i < theta_enc_.params().size(); ++i)
      out.push_back(&theta_enc_.params().tensor(i));
    for (size_t i = 0; i < beta_enc_.params().size(); ++i)
      out.push_back(&beta_enc_.params().tensor(i));
    return out;
  }

  std::vector<std::pair<std::string, Tensor*>> named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t i = 0; i < theta_enc_.params().size(); ++i)
      out.emplace_back("theta." + theta_enc_.params().name(i), &theta_enc_.params().tensor(i));
    for (size_t i = 0; i < beta_enc_.params().size(); ++i)
      out.emplace_back("beta." + beta_enc_.params().name(i), &beta_enc_.params().tensor(i));
    return out;
  }

  struct TapedStep {
    ad::Value theta;
    ad::Value mu;
    ad::Value logodds;
    ad::Value prob;
    ad::Value beta_emitted;  // emission after this step's history (beta_{t})
  };

  class Bound {
   public:
    Bound(const CprGlobalModel& m, ad::Tape& tape)
        : alpha_(m.alpha_), theta_(m.theta_enc_.bind(tape)), beta_(m.beta_enc_.bind(tape)),
          tape_(&tape) {
      leaves_ = theta_.leaves();
      leaves_.insert(leaves_.end(), beta_.leaves().begin(), beta_.leaves().end());
    }

    const std::vector<ad::Value>& leaves() const { return leaves_; }

    std::vector<TapedStep> forward(const Trajectory& tr) const {
      model_detail::check_nonempty(tr);
      const int d = theta_.config().obs_dim;
      validate_trajectory(tr, d);
      const int T = tr.length();
      std::vector<TapedStep> steps;
      steps.reserve(T);
      Encoder::State ts = theta_.init_state(tr.static_ctx);
      Encoder::State bs = beta_.init_state(tr.static_ctx);
      ad::Value mu = tape_->leaf(0.0);  // mu_1 = 0
      ad::Value prev_beta;
      for (int t = 0; t < T; ++t) {
        TapedStep out;
        out.theta = theta_.emit(ts);
        if (t > 0) {
          std::vector<double> prev(tr.obs[t - 1]);
          prev.push_back(static_cast<double>(tr.actions[t - 1]));
          ad::Value prev_step = tape_->leaf(Tensor::column(prev));
          mu = ad::add(ad::scale(ad::dot(prev_beta, prev_step), alpha_),
                       ad::scale(mu, 1.0 - alpha_));
        }
        out.mu = mu;
        ad::Value coef = ad::slice_rows(out.theta, 0, d);
        ad::Value intercept = ad::slice_rows(out.theta, d, d + 1);
        ad::Value x = tape_->leaf(Tensor::column(tr.obs[t]));
        out.logodds = ad::add(ad::add(ad::dot(coef, x), intercept), mu);
        out.prob = ad::sigmoid(out.logodds);
        prev_beta = beta_.emit(bs);
        out.beta_emitted = prev_beta;
        steps.push_back(out);
        if (t + 1 < T) {
          ad::Value input = theta_.step_input(tr.obs[t], tr.actions[t]);
          ts = theta_.step(ts, input);
          bs = beta_.step(bs, input);
        }
      }
      return steps;
    }

    ad::Value batch_loss(std::span<const Trajectory* const> batch, double lambda) const {
      if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
      if (lambda < 0) throw std::invalid_argument("batch_loss: lambda must be >= 0");
      const int d = theta_.config().obs_dim;
      ad::Value bce_acc, lasso_acc;
      long total_steps = 0;
      for (size_t i = 0; i < batch.size(); ++i) {
        const Trajectory& tr = *batch[i];
        auto steps = forward(tr);
        std::vector<ad::Value> probs;
        for (auto& s : steps) probs.push_back(s.prob);
        ad::Value traj_bce = model_detail::trajectory_bce(probs, tr.actions);
        bce_acc = i == 0 ? traj_bce : ad::add(bce_acc, traj_bce);
        if (lambda > 0) {
          for (auto& s : steps) {
            ad::Value pen = ad::l1(ad::slice_rows(s.theta, 0, d));
            lasso_acc = total_steps == 0 ? pen : ad::add(lasso_acc, pen);
            ++total_steps;
          }
        }
      }
      ad::Value loss = ad::scale(bce_acc, 1.0 / static_cast<double>(batch.size()));
      if (lambda > 0)
        loss = ad::add(loss, ad::scale(lasso_acc, lambda / static_cast<double>(total_steps)));
      return loss;
    }

   private:
    double alpha_;
    Encoder::Bound theta_;
    Encoder::Bound beta_;
    ad::Tape* tape_;
    std::vector<ad::Value> leaves_;
  };

  Bound bind(ad::Tape& tape) const { return Bound(*this, tape); }

  GlobalTrace forward(const Trajectory& tr) const {
    ad::Tape tape;
    auto steps = bind(tape).forward(tr);
    GlobalTrace trace;
    trace.alpha = alpha_;
    const int d = obs_dim();
    for (auto& s : steps) {
      GlobalStepTrace g;
      const Tensor& th = s.theta.val();
      g.theta.coef.assign(th.data().begin(), th.data().begin() + d);
      g.theta.intercept = th[d];
      g.mu = s.mu.val().scalar_value();
      g.logodds = s.logodds.val().scalar_value();
      g.prob = s.prob.val().scalar_value();
      trace.steps.push_back(std::move(g));
      trace.betas.push_back(s.beta_emitted.val().data());
    }
    return trace;
  }

 private:
  double alpha_;
  Encoder theta_enc_;
  Encoder beta_enc_;
};

// --------------------------------------------------------------------------
// Telescoped attribution: the recursive bias expands into terms weighted
// alpha * (1 - alpha)^(m-1) over past steps, so every observed feature and
// action has an exact linear effect on each step's log-odds.
// --------------------------------------------------------------------------

struct Contribution {
  int source_step = 0;  // 1-based step the feature was observed at
  std::string feature;
  double value = 0;
};

struct Explanation {
  // explained 1-based step t -> contributions summing to logodds_t
  std::vector<std::vector<Contribution>> per_step;
};

inline Explanation explain_global(const GlobalTrace& trace, const Trajectory& tr) {
  if (trace.steps.size() != tr.obs.size())
    throw std::invalid_argument("explain_global: trace does not match trajectory");
  const int d = static_cast<int>(tr.obs.front().size());
  const double alpha = trace.alpha;
  Explanation ex;
  ex.per_step.resize(trace.steps.size());
  for (size_t i = 0; i < trace.steps.size(); ++i) {
    auto& entries = ex.per_step[i];
    const GlobalStepTrace& st = trace.steps[i];
    for (int j = 0; j < d; ++j)
      entries.push_back({static_cast<int>(i) + 1, feature_name(j, d),
                         st.theta.coef[j] * tr.obs[i][j]});
    entries.push_back({static_cast<int>(i) + 1, "intercept", st.theta.intercept});
    double w = alpha;
    for (size_t m = 1; m <= i; ++m) {
      const size_t s = i - m;  // 0-based source step
      const std::vector<double>& beta = trace.betas[s];
      for (int j = 0; j < d; ++j)
        entries.push_back({static_cast<int>(s) + 1, feature_name(j, d), w * beta[j] * tr.obs[s][j]});
      entries.push_back(
          {static_cast<int>(s) + 1, "action", w * beta[d] * tr.actions[s]});
      w *= (1.0 - alpha);
    }
  }
  return ex;
}

inline double explanation_total(const std::vector<Contribution>& entries) {
  double s = 0;
  for (const auto& e : entries) s += e.value;
  return s;
}

}  // namespace cpr
