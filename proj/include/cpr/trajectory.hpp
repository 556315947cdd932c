#pragma once

// One agent's observation/action sequence, optionally with simulation truth.

#include <stdexcept>
#include <string>
#include <vector>

#include "cpr/tensor.hpp"

namespace cpr {

struct StepTruth {
  std::vector<double> theta;  // true per-step coefficients (layout per family)
  double p = 0;               // true action probability
};

struct Trajectory {
  std::string id;
  std::vector<double> static_ctx;          // empty when no static context
  std::vector<std::vector<double>> obs;    // T rows of length d
  std::vector<int> actions;                // T entries in {0,1}
  std::vector<StepTruth> truth;            // empty, or one entry per step
  std::vector<double> action_noise;        // simulator-only, not serialized

  int length() const { return static_cast<int>(obs.size()); }
  bool has_truth() const { return !truth.empty(); }
};

using Dataset = std::vector<Trajectory>;

inline void validate_trajectory(const Trajectory& tr, int expect_obs_dim = -1) {
  if (tr.obs.empty())
    throw std::invalid_argument(detail::str("trajectory '", tr.id, "': no steps"));
  if (tr.actions.size() != tr.obs.size())
    throw std::invalid_argument(detail::str("trajectory '", tr.id, "': ", tr.actions.size(),
                                            " actions vs ", tr.obs.size(), " observations"));
  const size_t d = tr.obs.front().size();
  for (const auto& row : tr.obs)
    if (row.size() != d)
      throw std::invalid_argument(
          detail::str("trajectory '", tr.id, "': ragged observation rows (", row.size(),
                      " vs ", d, ")"));
  if (expect_obs_dim >= 0 && d != static_cast<size_t>(expect_obs_dim))
    throw std::invalid_argument(detail::str("trajectory '", tr.id, "': observation dim ", d,
                                            " does not match dataset dim ", expect_obs_dim));
  for (int a : tr.actions)
    if (a != 0 && a != 1)
      throw std::invalid_argument(
          detail::str("trajectory '", tr.id, "': action ", a, " is not 0/1"));
  if (!tr.truth.empty() && tr.truth.size() != tr.obs.size())
    throw std::invalid_argument(
        detail::str("trajectory '", tr.id, "': truth entries (", tr.truth.size(),
                    ") do not match steps (", tr.obs.size(), ")"));
}

inline int dataset_obs_dim(const Dataset& ds) {
  if (ds.empty()) throw std::invalid_argument("dataset: no trajectories");
  const int d = static_cast<int>(ds.front().obs.front().size());
  for (const auto& tr : ds) validate_trajectory(tr, d);
  return d;
}

inline int dataset_static_dim(const Dataset& ds) {
  if (ds.empty()) throw std::invalid_argument("dataset: no trajectories");
  const size_t s = ds.front().static_ctx.size();
  for (const auto& tr : ds)
    if (tr.static_ctx.size() != s)
      throw std::invalid_argument(detail::str("trajectory '", tr.id, "': static context dim ",
                                              tr.static_ctx.size(), " vs ", s));
  return static_cast<int>(s);
}

}  // namespace cpr
