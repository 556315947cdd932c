#pragma once

// Optimization and experiment protocol: patient-level splits, Adam,
// minibatch training with early stopping on validation loss, exhaustive
// hyperparameter grids, and bootstrap repetitions. Every source of
// randomness derives from the config seed through named streams, so a fixed
// seed reproduces splits, initialization, batch order, and metrics bitwise.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpr/autodiff.hpp"
#include "cpr/encoder.hpp"
#include "cpr/metrics.hpp"
#include "cpr/policy.hpp"
#include "cpr/rng.hpp"
#include "cpr/trajectory.hpp"

namespace cpr {

struct TrainConfig {
  double learning_rate = 5e-4;  // 1e-4 is the black-box default
  int batch_size = 64;
  int max_epochs = 500;
  int patience = 10;
  double lambda = 1e-4;
  int hidden_dim = 32;
  uint64_t seed = 0;
  std::array<double, 3> split{0.70, 0.15, 0.15};

  void validate() const {
    if (learning_rate <= 0) throw std::invalid_argument("config: learning_rate must be > 0");
    if (batch_size <= 0 || max_epochs <= 0 || patience <= 0)
      throw std::invalid_argument("config: batch_size, max_epochs, patience must be positive");
    if (lambda < 0) throw std::invalid_argument("config: lambda must be >= 0");
    if (hidden_dim <= 0) throw std::invalid_argument("config: hidden_dim must be positive");
    const double s = split[0] + split[1] + split[2];
    if (std::abs(s - 1.0) > 1e-9)
      throw std::invalid_argument(detail::str("config: split fractions sum to ", s, ", not 1"));
  }
};

// --------------------------------------------------------------------------
// Patient-level splits
// --------------------------------------------------------------------------

struct SplitIndices {
  std::vector<size_t> train, val, test;
};

// Counts are assigned by largest remainder so exact fractions (e.g. 70/15/15
// of 100) come out exact. A positive fraction that would receive zero
// patients is an error.
inline SplitIndices split_patients(size_t n_patients, std::array<double, 3> fractions,
                                   uint64_t seed) {
  double fsum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(fsum - 1.0) > 1e-9)
    throw std::invalid_argument(detail::str("split fractions sum to ", fsum, ", not 1"));
  if (n_patients == 0) throw std::invalid_argument("split: empty dataset");

  std::array<size_t, 3> counts{};
  std::array<double, 3> remainders{};
  size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = fractions[i] * static_cast<double>(n_patients);
    counts[i] = static_cast<size_t>(std::floor(exact + 1e-9));
    remainders[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  while (assigned < n_patients) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (remainders[i] > remainders[best]) best = i;
    ++counts[best];
    remainders[best] = -1;
    ++assigned;
  }
  for (int i = 0; i < 3; ++i)
    if (fractions[i] > 0 && counts[i] == 0)
      throw std::invalid_argument(detail::str("split: ", n_patients,
                                              " patients leave an empty split for fraction ",
                                              fractions[i]));

  Rng rng = derive_stream(seed, "split");
  std::vector<size_t> order = rng.permutation(n_patients);
  SplitIndices out;
  size_t pos = 0;
  out.train.assign(order.begin(), order.begin() + counts[0]);
  pos += counts[0];
  out.val.assign(order.begin() + pos, order.begin() + pos + counts[1]);
  pos += counts[1];
  out.test.assign(order.begin() + pos, order.begin() + pos + counts[2]);
  return out;
}

inline std::vector<const Trajectory*> select(const Dataset& ds,
                                             std::span<const size_t> indices) {
  std::vector<const Trajectory*> out;
  out.reserve(indices.size());
  for (size_t i : indices) out.push_back(&ds[i]);
  return out;
}

// --------------------------------------------------------------------------
// Adam
// --------------------------------------------------------------------------

struct AdamState {
  std::vector<Tensor> m, v;
  long step = 0;

  explicit AdamState(std::span<Tensor* const> params) {
    for (const Tensor* t : params) {
      m.emplace_back(t->rows(), t->cols());
      v.emplace_back(t->rows(), t->cols());
    }
  }
};

inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                      AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t j = 0; j < params.size(); ++j) {
    Tensor& p = *params[j];
    const Tensor& g = grads[j];
    if (!p.same_shape(g))
      throw std::invalid_argument(detail::str("adam_step: shape mismatch ", p.shape_str(),
                                              " vs ", g.shape_str()));
    if (!g.all_finite()) throw std::invalid_argument("adam_step: non-finite gradient");
    Tensor& m = state.m[j];
    Tensor& v = state.v[j];
    for (int i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
}

// --------------------------------------------------------------------------
// fit: minibatch Adam with early stopping, best-epoch weight restore
// --------------------------------------------------------------------------

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
};

struct FitResult {
  std::vector<EpochStats> curve;
  int epochs_run = 0;
  int best_epoch = 0;
  double best_val_loss = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int last_finite_epoch, const std::string& what)
      : std::runtime_error(what), last_finite_epoch(last_finite_epoch) {}
  int last_finite_epoch;
};

inline std::vector<Tensor> snapshot(std::span<Tensor* const> params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Tensor* t : params) out.push_back(*t);
  return out;
}

inline void restore(std::span<Tensor* const> params, const std::vector<Tensor>& snap) {
  if (snap.size() != params.size())
    throw std::invalid_argument("restore: snapshot size mismatch");
  for (size_t i = 0; i < snap.size(); ++i) *params[i] = snap[i];
}

// Model must provide param_tensors() and bind(tape) -> Bound with leaves()
// and batch_loss(span, lambda). Validation loss is the unregularized BCE;
// the lasso term is a training-objective device, not a selection signal.
template <class Model>
FitResult fit(Model& model, const Dataset& ds, const SplitIndices& split,
              const TrainConfig& cfg) {
  cfg.validate();
  if (split.train.empty() || split.val.empty())
    throw std::invalid_argument("fit: train and validation splits must be non-empty");
  auto train_ptrs = select(ds, split.train);
  auto val_ptrs = select(ds, split.val);

  auto params = model.param_tensors();
  AdamState adam(params);
  FitResult res;
  std::vector<Tensor> best = snapshot(params);
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int stale = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng order_rng = derive_stream(cfg.seed, "batch", static_cast<uint64_t>(epoch));
    std::vector<size_t> order = order_rng.permutation(train_ptrs.size());

    double train_sum = 0;
    size_t train_count = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Trajectory*> batch;
      batch.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) batch.push_back(train_ptrs[order[i]]);

      ad::Tape tape;
      auto bound = model.bind(tape);
      ad::Value loss = bound.batch_loss(batch, cfg.lambda);
      const double lv = loss.val().scalar_value();
      if (!std::isfinite(lv))
        throw TrainingDiverged(epoch - 1,
                               detail::str("training diverged in epoch ", epoch,
                                           "; last finite epoch was ", epoch - 1));
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(bound.leaves().size());
      for (const ad::Value& leaf : bound.leaves()) grads.push_back(leaf.grad());
      adam_step(params, grads, adam, cfg.learning_rate);

      train_sum += lv * static_cast<double>(batch.size());
      train_count += batch.size();
    }

    double val_loss;
    {
      ad::Tape tape;
      val_loss = model.bind(tape).batch_loss(val_ptrs, 0.0).val().scalar_value();
    }
    if (!std::isfinite(val_loss))
      throw TrainingDiverged(epoch - 1,
                             detail::str("validation loss diverged in epoch ", epoch));

    res.curve.push_back({epoch, train_sum / static_cast<double>(train_count), val_loss});
    res.epochs_run = epoch;

    if (val_loss < best_val) {
      best_val = val_loss;
      best_epoch = epoch;
      best = snapshot(params);
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }

  restore(params, best);
  res.best_epoch = best_epoch;
  res.best_val_loss = best_val;
  return res;
}

// Fits `restarts` independently initialized models and keeps the one with
// the lowest validation loss. Restart seeds derive from cfg.seed, so the
// whole procedure is reproducible. factory(seed) -> model.
template <class ModelFactory>
auto fit_best_restart(const Dataset& ds, const SplitIndices& split, const TrainConfig& cfg,
                      int restarts, ModelFactory&& factory) {
  if (restarts < 1) throw std::invalid_argument("fit_best_restart: restarts must be >= 1");
  using Model = std::decay_t<decltype(factory(uint64_t{0}))>;
  struct Outcome {
    Model model;
    FitResult result;
  };
  std::optional<Outcome> best;
  for (int r = 0; r < restarts; ++r) {
    TrainConfig c = cfg;
    c.seed = restarts == 1 ? cfg.seed : derive_seed(cfg.seed, "restart", r);
    Model m = factory(c.seed);
    FitResult fr = fit(m, ds, split, c);
    if (!best || fr.best_val_loss < best->result.best_val_loss)
      best = Outcome{std::move(m), std::move(fr)};
  }
  return std::move(*best);
}

// --------------------------------------------------------------------------
// grid search: exhaustive, selected on validation loss,
// ties broken by smaller hidden dim then smaller lambda
// --------------------------------------------------------------------------

struct GridSpec {
  std::vector<int> hidden_dims{16, 32, 64};
  std::vector<double> lambdas{1e-4, 1e-3, 1e-2, 1e-1};
};

struct GridCell {
  int hidden_dim = 0;
  double lambda = 0;
  double mean_val_loss = 0;
  std::vector<double> per_seed_val_loss;
};

struct GridResult {
  TrainConfig best;
  std::vector<GridCell> cells;
};

inline const GridCell& select_best_cell(const std::vector<GridCell>& cells) {
  if (cells.empty()) throw std::invalid_argument("grid search: no cells");
  const GridCell* best = &cells.front();
  for (const GridCell& c : cells) {
    if (c.mean_val_loss < best->mean_val_loss ||
        (c.mean_val_loss == best->mean_val_loss &&
         (c.hidden_dim < best->hidden_dim ||
          (c.hidden_dim == best->hidden_dim && c.lambda < best->lambda))))
      best = &c;
  }
  return *best;
}

// factory(hidden_dim, seed) -> trainable model
template <class ModelFactory>
GridResult grid_search(const Dataset& ds, const SplitIndices& split, const TrainConfig& base,
                       const GridSpec& grid, std::span<const uint64_t> seeds,
                       ModelFactory&& factory) {
  if (grid.hidden_dims.empty() || grid.lambdas.empty())
    throw std::invalid_argument("grid search: empty grid");
  if (seeds.empty()) throw std::invalid_argument("grid search: no seeds");
  GridResult out;
  for (int k : grid.hidden_dims) {
    for (double lambda : grid.lambdas) {
      GridCell cell;
      cell.hidden_dim = k;
      cell.lambda = lambda;
      for (uint64_t seed : seeds) {
        TrainConfig cfg = base;
        cfg.hidden_dim = k;
        cfg.lambda = lambda;
        cfg.seed = seed;
        auto model = factory(k, seed);
        FitResult fr = fit(model, ds, split, cfg);
        cell.per_seed_val_loss.push_back(fr.best_val_loss);
        cell.mean_val_loss += fr.best_val_loss;
      }
      cell.mean_val_loss /= static_cast<double>(seeds.size());
      out.cells.push_back(std::move(cell));
    }
  }
  const GridCell& best = select_best_cell(out.cells);
  out.best = base;
  out.best.hidden_dim = best.hidden_dim;
  out.best.lambda = best.lambda;
  return out;
}

// --------------------------------------------------------------------------
// bootstrap: re-split with a fresh seed per run, train, evaluate on the
// run's test split; report mean and standard error per metric
// --------------------------------------------------------------------------

// run_fn(run_seed) -> per-metric values for one full train/eval cycle
inline EvalReport bootstrap_eval(std::span<const uint64_t> run_seeds,
                                 const std::function<std::map<std::string, double>(uint64_t)>&
                                     run_fn) {
  if (run_seeds.size() < 2)
    throw std::invalid_argument("bootstrap: at least 2 runs required");
  std::map<std::string, std::vector<double>> samples;
  for (uint64_t seed : run_seeds)
    for (const auto& [name, value] : run_fn(seed)) samples[name].push_back(value);

  EvalReport rep;
  for (const auto& [name, xs] : samples) {
    MetricValue mv;
    mv.n_runs = static_cast<int>(xs.size());
    double sum = 0;
    for (double x : xs) sum += x;
    mv.mean = sum / static_cast<double>(xs.size());
    double ss = 0;
    for (double x : xs) ss += (x - mv.mean) * (x - mv.mean);
    mv.stderr_ = std::sqrt(ss / static_cast<double>(xs.size() - 1)) /
                 std::sqrt(static_cast<double>(xs.size()));
    rep[name] = mv;
  }
  return rep;
}

inline std::vector<uint64_t> bootstrap_seeds(uint64_t master, int runs) {
  if (runs < 2) throw std::invalid_argument("bootstrap: runs must be >= 2");
  std::vector<uint64_t> out;
  out.reserve(runs);
  for (int r = 0; r < runs; ++r) out.push_back(derive_seed(master, "bootstrap", r));
  return out;
}

}  // namespace cpr
