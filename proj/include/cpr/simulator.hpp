#pragma once

// Synthetic decision processes with known context-specific policies, used
// for parameter-recovery evaluation. Trajectory generation is deterministic
// per (seed, index): each trajectory draws from its own derived stream and
// results are merged in index order.

#include <cmath>
#include <stdexcept>
#include <string>

#include "cpr/rng.hpp"
#include "cpr/trajectory.hpp"

namespace cpr {

enum class SimFamily { heterogeneous, homogeneous, threshold };

inline std::string family_name(SimFamily f) {
  switch (f) {
    case SimFamily::heterogeneous: return "heterogeneous";
    case SimFamily::homogeneous: return "homogeneous";
    case SimFamily::threshold: return "threshold";
  }
  return "?";
}

inline SimFamily family_from_name(std::string_view s) {
  if (s == "heterogeneous") return SimFamily::heterogeneous;
  if (s == "homogeneous") return SimFamily::homogeneous;
  if (s == "threshold") return SimFamily::threshold;
  throw std::invalid_argument(detail::str("unknown simulation family '", s, "'"));
}

struct SimSpec {
  SimFamily family = SimFamily::heterogeneous;
  int n = 200;   // trajectory count
  int t = 15;    // length
  int tau = 4;   // lag (heterogeneous only)
  double sigma_a = 0;
  double sigma_theta = 0;
  uint64_t seed = 0;
  double holdout_frac = 0.15;

  static SimSpec defaults(SimFamily f) {
    SimSpec s;
    s.family = f;
    switch (f) {
      case SimFamily::heterogeneous:
        s.n = 200; s.t = 15; s.tau = 4;
        break;
      case SimFamily::homogeneous:
        s.n = 2000; s.t = 9;
        break;
      case SimFamily::threshold:
        s.n = 500; s.t = 10;
        break;
    }
    return s;
  }

  void validate() const {
    if (n <= 0 || t <= 0) throw std::invalid_argument("simulation: n and t must be positive");
    if (sigma_a < 0 || sigma_theta < 0)
      throw std::invalid_argument("simulation: noise scales must be >= 0");
    if (!(holdout_frac >= 0 && holdout_frac < 1))
      throw std::invalid_argument("simulation: holdout_frac must lie in [0, 1)");
    if (family == SimFamily::heterogeneous && t <= tau)
      throw std::invalid_argument(
          detail::str("simulation: T=", t, " must exceed the lag tau=", tau));
  }
};

namespace sim_detail {

inline std::string traj_id(const SimSpec& spec, int i) {
  return detail::str(family_name(spec.family).substr(0, 3), "-", i);
}

// theta_t = x_{t-tau} (2 a_{t-tau} - 1) + t/T + eps_theta,  t = 1..T;
// lag terms contribute zero while t <= tau. P(a=1) = 1/(1+exp(-theta x + eps_a)).
inline Trajectory heterogeneous_one(const SimSpec& spec, int i) {
  Rng rng = derive_stream(spec.seed, "sim", static_cast<uint64_t>(i));
  Trajectory tr;
  tr.id = traj_id(spec, i);
  const int T = spec.t;
  for (int t = 1; t <= T; ++t) {
    const double x = rng.uniform(-2, 2);
    const double eps_theta = rng.normal() * spec.sigma_theta;
    double theta = static_cast<double>(t) / T + eps_theta;
    if (t > spec.tau) {
      const double x_lag = tr.obs[t - spec.tau - 1][0];
      const int a_lag = tr.actions[t - spec.tau - 1];
      theta += x_lag * (2.0 * a_lag - 1.0);
    }
    const double eps_a = rng.normal() * spec.sigma_a;
    const double p = 1.0 / (1.0 + std::exp(-theta * x + eps_a));
    const int a = rng.bernoulli(p) ? 1 : 0;
    tr.obs.push_back({x});
    tr.actions.push_back(a);
    tr.truth.push_back({{theta}, p});
    tr.action_noise.push_back(eps_a);
  }
  return tr;
}

// P(a_t | x_t, x_{t-1}) = sigma(w x_t + b), w = 4 x_{t-1}, b = (t-5)/4,
// t = 0..T-1, x_{-1} := 0. Truth records [w, b] per step.
inline Trajectory homogeneous_one(const SimSpec& spec, int i) {
  Rng rng = derive_stream(spec.seed, "sim", static_cast<uint64_t>(i));
  Trajectory tr;
  tr.id = traj_id(spec, i);
  double x_prev = 0;
  for (int t = 0; t < spec.t; ++t) {
    const double x = rng.uniform(-1, 1);
    const double w = 4.0 * x_prev;
    const double b = (t - 5) / 4.0;
    const double p = 1.0 / (1.0 + std::exp(-(w * x + b)));
    const int a = rng.bernoulli(p) ? 1 : 0;
    tr.obs.push_back({x});
    tr.actions.push_back(a);
    tr.truth.push_back({{w, b}, p});
    x_prev = x;
  }
  return tr;
}

// deterministic rule: a = [x_t < 0.5], reversed when x_{t-1} >= 0.5
// (x_{-1} := 0, so the first step uses the base rule)
inline Trajectory threshold_one(const SimSpec& spec, int i) {
  Rng rng = derive_stream(spec.seed, "sim", static_cast<uint64_t>(i));
  Trajectory tr;
  tr.id = traj_id(spec, i);
  double x_prev = 0;
  for (int t = 0; t < spec.t; ++t) {
    const double x = rng.uniform(0, 1);
    const bool base = x < 0.5;
    const int a = (x_prev >= 0.5 ? !base : base) ? 1 : 0;
    tr.obs.push_back({x});
    tr.actions.push_back(a);
    tr.truth.push_back({{}, static_cast<double>(a)});
    x_prev = x;
  }
  return tr;
}

}  // namespace sim_detail

inline Dataset simulate(const SimSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.reserve(spec.n);
  for (int i = 0; i < spec.n; ++i) {
    switch (spec.family) {
      case SimFamily::heterogeneous:
        ds.push_back(sim_detail::heterogeneous_one(spec, i));
        break;
      case SimFamily::homogeneous:
        ds.push_back(sim_detail::homogeneous_one(spec, i));
        break;
      case SimFamily::threshold:
        ds.push_back(sim_detail::threshold_one(spec, i));
        break;
    }
  }
  return ds;
}

inline Dataset simulate_heterogeneous(const SimSpec& spec) {
  if (spec.family != SimFamily::heterogeneous)
    throw std::invalid_argument("simulate_heterogeneous: wrong family");
  return simulate(spec);
}

inline Dataset simulate_homogeneous(const SimSpec& spec) {
  if (spec.family != SimFamily::homogeneous)
    throw std::invalid_argument("simulate_homogeneous: wrong family");
  return simulate(spec);
}

inline Dataset simulate_threshold(const SimSpec& spec) {
  if (spec.family != SimFamily::threshold)
    throw std::invalid_argument("simulate_threshold: wrong family");
  return simulate(spec);
}

}  // namespace cpr
