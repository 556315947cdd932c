// Acceptance suite: end-to-end checks of recovery quality, identities,
// gradient correctness, metric oracles, protocol fidelity, and the CLI
// pipeline. Prints one PASS/FAIL line per criterion; exits non-zero if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpr/baselines.hpp"
#include "cpr/checkpoint.hpp"
#include "cpr/io.hpp"
#include "cpr/metrics.hpp"
#include "cpr/policy.hpp"
#include "cpr/simulator.hpp"
#include "cpr/training.hpp"

using namespace cpr;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] C%-2d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void run_criterion(int id, const std::string& name,
                   const std::function<std::pair<bool, std::string>()>& fn) {
  try {
    auto [pass, detail] = fn();
    report(id, name, pass, detail);
  } catch (const std::exception& e) {
    report(id, name, false, detail::str("exception: ", e.what()));
  }
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", x);
  return buf;
}

// ---------------------------------------------------------------------------
// shared heterogeneous-MDP runs (criteria 1, 2, 5)
// ---------------------------------------------------------------------------

struct HetRun {
  uint64_t seed;
  Dataset ds;
  SplitIndices split;
  std::optional<CprModel> cpr;
  std::optional<BlackboxModel> bb;
  double cpr_coef = 0, cpr_prob = 0, bb_coef = 0, bb_prob = 0;
  double seconds = 0;
};

// Training protocol for the recovery experiments: paper learning rates and
// batch size, generous early stopping (an epoch here is only ~3 minibatches),
// random restarts selected by validation loss.
TrainConfig recovery_config(uint64_t seed, bool blackbox) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.learning_rate = blackbox ? 1e-4 : 5e-4;
  cfg.patience = 300;
  cfg.max_epochs = 4000;
  cfg.lambda = blackbox ? 0.0 : 1e-4;
  cfg.hidden_dim = 32;
  return cfg;
}

RecoveryInputs collect_cpr(const CprModel& model, std::span<const Trajectory* const> holdout) {
  return collect_recovery(holdout, [&](const Trajectory& tr) {
    auto steps = model.forward(tr);
    std::vector<StepEstimate> out;
    for (auto& s : steps) out.push_back({s.prob, s.params.coef});
    return out;
  });
}

RecoveryInputs collect_bb(const BlackboxModel& model,
                          std::span<const Trajectory* const> holdout) {
  return collect_recovery(holdout, [&](const Trajectory& tr) {
    auto probs = model.forward(tr);
    std::vector<StepEstimate> out;
    for (int t = 1; t <= tr.length(); ++t)
      out.push_back({probs[t - 1], extract_coeffs(model, tr, t)});
    return out;
  });
}

std::vector<HetRun> g_het_runs;

void run_heterogeneous_experiments() {
  for (uint64_t seed : {1, 2, 3}) {
    HetRun run;
    run.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    SimSpec spec = SimSpec::defaults(SimFamily::heterogeneous);
    spec.seed = seed;
    run.ds = simulate(spec);
    run.split = split_patients(run.ds.size(), {0.70, 0.15, 0.15}, seed);
    auto test_ptrs = select(run.ds, run.split.test);

    auto cpr_best = fit_best_restart(run.ds, run.split, recovery_config(seed, false), 16,
                                     [&](uint64_t s) { return CprModel(Cell::rnn, 32, 1, 0, s); });
    run.cpr = std::move(cpr_best.model);
    auto bb_best =
        fit_best_restart(run.ds, run.split, recovery_config(seed, true), 4,
                         [&](uint64_t s) { return BlackboxModel(Cell::rnn, 32, 1, 0, s); });
    run.bb = std::move(bb_best.model);

    auto rep_c = recovery_report(collect_cpr(*run.cpr, test_ptrs));
    auto rep_b = recovery_report(collect_bb(*run.bb, test_ptrs));
    run.cpr_coef = rep_c.at("coef_pearson").mean;
    run.cpr_prob = rep_c.at("prob_pearson").mean;
    run.bb_coef = rep_b.at("coef_pearson").mean;
    run.bb_prob = rep_b.at("prob_pearson").mean;
    run.seconds = elapsed_s(t0);
    std::printf("       het seed %llu: cpr coef=%s prob=%s | blackbox coef=%s prob=%s (%.0fs)\n",
                (unsigned long long)seed, fmt(run.cpr_coef).c_str(), fmt(run.cpr_prob).c_str(),
                fmt(run.bb_coef).c_str(), fmt(run.bb_prob).c_str(), run.seconds);
    std::fflush(stdout);
    g_het_runs.push_back(std::move(run));
  }
}

std::pair<bool, std::string> criterion_1() {
  if (g_het_runs.empty()) return {false, "heterogeneous runs unavailable"};
  double cpr_mean = 0, bb_mean = 0, worst_time = 0;
  for (const auto& r : g_het_runs) {
    cpr_mean += r.cpr_coef;
    bb_mean += r.bb_coef;
    worst_time = std::max(worst_time, r.seconds);
  }
  cpr_mean /= g_het_runs.size();
  bb_mean /= g_het_runs.size();
  const bool pass = cpr_mean > bb_mean && cpr_mean >= 0.8 && worst_time <= 600.0;
  return {pass, detail::str("cpr mean coef r=", fmt(cpr_mean), " vs blackbox ", fmt(bb_mean),
                            " (need > blackbox and >= 0.8); slowest seed ",
                            fmt(worst_time), "s <= 600s")};
}

std::pair<bool, std::string> criterion_2() {
  if (g_het_runs.empty()) return {false, "heterogeneous runs unavailable"};
  double cpr_mean = 0, bb_mean = 0;
  for (const auto& r : g_het_runs) {
    cpr_mean += r.cpr_prob;
    bb_mean += r.bb_prob;
  }
  cpr_mean /= g_het_runs.size();
  bb_mean /= g_het_runs.size();
  const bool pass = cpr_mean >= bb_mean - 0.02;
  return {pass, detail::str("cpr mean prob r=", fmt(cpr_mean), " vs blackbox ", fmt(bb_mean),
                            " (need >= blackbox - 0.02)")};
}

// ---------------------------------------------------------------------------
// criterion 3: homogeneous-MDP parameter recovery
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion_3() {
  const uint64_t seed = 1;
  SimSpec spec = SimSpec::defaults(SimFamily::homogeneous);
  spec.seed = seed;
  Dataset ds = simulate(spec);
  SplitIndices split = split_patients(ds.size(), {0.70, 0.15, 0.15}, seed);
  TrainConfig cfg = recovery_config(seed, false);
  cfg.patience = 30;
  cfg.max_epochs = 500;
  auto best = fit_best_restart(ds, split, cfg, 2,
                               [&](uint64_t s) { return CprModel(Cell::rnn, 32, 1, 0, s); });
  auto test_ptrs = select(ds, split.test);

  double mae = 0;
  long n_mae = 0, n5 = 0;
  double b5 = 0;
  for (const Trajectory* tr : test_ptrs) {
    auto steps = best.model.forward(*tr);
    for (int t = 0; t < tr->length(); ++t) {
      const double w_true = tr->truth[t].theta[0];
      if (std::abs(w_true) <= 2.0) {
        mae += std::abs(steps[t].params.coef[0] - w_true);
        ++n_mae;
      }
      if (t == 5) {  // b(t) = (t-5)/4 = 0 here
        b5 += steps[t].params.intercept;
        ++n5;
      }
    }
  }
  mae /= static_cast<double>(n_mae);
  b5 /= static_cast<double>(n5);
  const bool pass = mae <= 0.5 && std::abs(b5) <= 0.25;
  return {pass, detail::str("central-range MAE(w)=", fmt(mae), " <= 0.5; mean b at t=5 is ",
                            fmt(b5), " within +-0.25")};
}

// ---------------------------------------------------------------------------
// criterion 4: threshold-boundary recovery
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion_4() {
  const uint64_t seed = 1;
  SimSpec spec = SimSpec::defaults(SimFamily::threshold);
  spec.seed = seed;
  Dataset ds = simulate(spec);
  SplitIndices split = split_patients(ds.size(), {0.70, 0.15, 0.15}, seed);
  TrainConfig cfg = recovery_config(seed, false);
  cfg.patience = 20;
  cfg.max_epochs = 150;
  CprModel model(Cell::rnn, 32, 1, 0, cfg.seed);
  fit(model, ds, split, cfg);

  // average fitted probability over holdout policies, conditioned on branch
  const int G = 201;
  std::vector<double> lo_curve(G, 0), hi_curve(G, 0);
  long n_lo = 0, n_hi = 0;
  for (const Trajectory* tr : select(ds, split.test)) {
    auto steps = model.forward(*tr);
    double x_prev = 0;
    for (int t = 0; t < tr->length(); ++t) {
      auto& curve = x_prev < 0.5 ? lo_curve : hi_curve;
      (x_prev < 0.5 ? n_lo : n_hi)++;
      for (int g = 0; g < G; ++g) {
        const double x = g / static_cast<double>(G - 1);
        curve[g] +=
            1.0 / (1.0 + std::exp(-(steps[t].params.coef[0] * x + steps[t].params.intercept)));
      }
      x_prev = tr->obs[t][0];
    }
  }
  struct Crossing {
    bool found = false;
    double x = 0;
    bool increasing = false;
  };
  auto find_crossing = [&](std::vector<double>& c, long n) {
    Crossing out;
    for (double& v : c) v /= static_cast<double>(n);
    for (int g = 0; g + 1 < G; ++g) {
      const double a = c[g] - 0.5, b = c[g + 1] - 0.5;
      if (a == 0 || a * b < 0) {
        const double x0 = g / static_cast<double>(G - 1);
        out.found = true;
        out.x = x0 + (1.0 / (G - 1)) * (0 - a) / (b - a);
        out.increasing = b > a;
        return out;
      }
    }
    return out;
  };
  const Crossing lo = find_crossing(lo_curve, n_lo);
  const Crossing hi = find_crossing(hi_curve, n_hi);
  const bool pass = lo.found && hi.found && std::abs(lo.x - 0.5) <= 0.05 &&
                    std::abs(hi.x - 0.5) <= 0.05 && !lo.increasing && hi.increasing;
  return {pass, detail::str("x_prev<0.5 crossing at ", fmt(lo.x), " (falling), x_prev>=0.5 at ",
                            fmt(hi.x), " (rising); need 0.5 +- 0.05 with reversed direction")};
}

// ---------------------------------------------------------------------------
// criterion 5: initial-policy homogeneity
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion_5() {
  if (g_het_runs.empty()) return {false, "heterogeneous runs unavailable"};
  const HetRun& run = g_het_runs.front();

  // trained model, no static context: theta at t=1 bitwise identical
  std::optional<std::vector<double>> first;
  std::optional<double> first_b;
  bool identical = true;
  for (const Trajectory* tr : select(run.ds, run.split.test)) {
    auto steps = run.cpr->forward(*tr);
    if (!first) {
      first = steps[0].params.coef;
      first_b = steps[0].params.intercept;
    } else {
      identical = identical && steps[0].params.coef == *first &&
                  steps[0].params.intercept == *first_b;
    }
  }

  // static contexts: distinct inputs produce distinct initial policies
  CprModel static_model(Cell::rnn, 16, 1, 2, 99);
  Trajectory a;
  a.id = "a";
  a.obs = {{0.5}};
  a.actions = {1};
  a.static_ctx = {65.0, 0.0};
  Trajectory b = a;
  b.id = "b";
  b.static_ctx = {30.0, 1.0};
  auto pa = static_model.forward(a);
  auto pb = static_model.forward(b);
  const bool distinct =
      pa[0].params.coef != pb[0].params.coef || pa[0].params.intercept != pb[0].params.intercept;

  return {identical && distinct,
          detail::str("t=1 policy bitwise identical across ", run.split.test.size(),
                      " held-out trajectories: ", identical ? "yes" : "no",
                      "; distinct static contexts yield distinct t=1 policies: ",
                      distinct ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// criterion 6: telescoping identity
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion_6() {
  Rng rng(606);
  double worst = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const double alpha = 0.1 * (1 + static_cast<int>(rng.below(10)));
    const int T = 1 + static_cast<int>(rng.below(10));
    const int d = 1 + static_cast<int>(rng.below(3));
    CprGlobalModel model(Cell::rnn, 4 + static_cast<int>(rng.below(5)), d, 0,
                         std::min(alpha, 1.0), rng.next_u64());
    Trajectory tr;
    tr.id = "t";
    for (int t = 0; t < T; ++t) {
      std::vector<double> row(d);
      for (double& v : row) v = rng.uniform(-2, 2);
      tr.obs.push_back(row);
      tr.actions.push_back(rng.bernoulli(0.5) ? 1 : 0);
    }
    GlobalTrace trace = model.forward(tr);
    Explanation ex = explain_global(trace, tr);
    for (int t = 0; t < T; ++t)
      worst = std::max(worst,
                       std::abs(explanation_total(ex.per_step[t]) - trace.steps[t].logodds));
  }
  return {worst < 1e-9, detail::str("max |recursive - expanded| log-odds over 100 random "
                                    "configurations: ",
                                    worst, " (need < 1e-9)")};
}

// ---------------------------------------------------------------------------
// criterion 7: gradient correctness of the full losses
// ---------------------------------------------------------------------------

template <class Model>
double loss_grad_error(Model& model, const Dataset& data, double lambda) {
  auto ptrs = pointers_to(data);
  ad::Tape tape;
  auto bound = model.bind(tape);
  ad::Value loss = bound.batch_loss(ptrs, lambda);
  tape.backward(loss);

  auto eval = [&](Model& m) {
    ad::Tape t;
    return m.bind(t).batch_loss(ptrs, lambda).val().scalar_value();
  };
  const double h = 1e-6;
  double worst = 0;
  auto tensors = model.param_tensors();
  for (size_t pi = 0; pi < tensors.size(); ++pi)
    for (int i = 0; i < tensors[pi]->size(); ++i) {
      Model plus = model, minus = model;
      (*plus.param_tensors()[pi])[i] += h;
      (*minus.param_tensors()[pi])[i] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2 * h);
      const double ag = bound.leaves()[pi].grad()[i];
      worst = std::max(worst, std::abs(ag - fd) / std::max(1.0, std::abs(fd)));
    }
  return worst;
}

std::pair<bool, std::string> criterion_7() {
  Rng rng(707);
  double worst_cpr = 0, worst_bb = 0;
  for (int draw = 0; draw < 20; ++draw) {
    const int d = 2, T = 5 + static_cast<int>(rng.below(3));
    Dataset data;
    Trajectory tr;
    tr.id = "g";
    for (int t = 0; t < T; ++t) {
      tr.obs.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2)});
      tr.actions.push_back(rng.bernoulli(0.5) ? 1 : 0);
    }
    data.push_back(tr);
    const Cell cell = draw % 2 ? Cell::lstm : Cell::rnn;
    CprModel cpr_model(cell, 5, d, 0, rng.next_u64());
    BlackboxModel bb_model(cell, 5, d, 0, rng.next_u64());
    worst_cpr = std::max(worst_cpr, loss_grad_error(cpr_model, data, 1e-3));
    worst_bb = std::max(worst_bb, loss_grad_error(bb_model, data, 0.0));
  }
  const bool pass = worst_cpr < 1e-4 && worst_bb < 1e-4;
  return {pass, detail::str("max grad_check error over 20 draws: cpr ", worst_cpr, ", blackbox ",
                            worst_bb, " (need < 1e-4)")};
}

// ---------------------------------------------------------------------------
// criterion 8: metric oracle equivalence
// ---------------------------------------------------------------------------

double auroc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, pairs = 0;
  for (size_t i = 0; i < s.size(); ++i)
    for (size_t j = 0; j < s.size(); ++j) {
      if (!(y[i] == 1 && y[j] == 0)) continue;
      pairs += 1;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return num / pairs;
}

double auprc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<double> thresholds = s;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double n_pos = 0;
  for (int v : y) n_pos += v;
  double ap = 0, prev_recall = 0;
  for (double thr : thresholds) {
    double tp = 0, fp = 0;
    for (size_t i = 0; i < s.size(); ++i)
      if (s[i] >= thr) (y[i] ? tp : fp) += 1;
    ap += (tp / n_pos - prev_recall) * (tp / (tp + fp));
    prev_recall = tp / n_pos;
  }
  return ap;
}

double pearson_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (size_t i = a.size(); i-- > 0;) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  double cov = 0, va = 0, vb = 0;
  for (size_t i = a.size(); i-- > 0;) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / (std::sqrt(va) * std::sqrt(vb));
}

std::pair<bool, std::string> criterion_8() {
  Rng rng(808);
  double worst = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 2 + static_cast<int>(rng.below(29));
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      scores[i] = std::round(rng.uniform01() * 8) / 8.0;  // coarse grid so ties occur
      labels[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    labels[0] = 1;
    if (n > 1) labels[1] = 0;

    worst = std::max(worst, std::abs(auroc(scores, labels) - auroc_oracle(scores, labels)));
    worst = std::max(worst, std::abs(auprc(scores, labels) - auprc_oracle(scores, labels)));

    double mse = 0;
    for (int i = 0; i < n; ++i) mse += (scores[i] - labels[i]) * (scores[i] - labels[i]);
    worst = std::max(worst, std::abs(brier(scores, labels) - mse / n));

    std::vector<double> va(n), vb(n);
    for (int i = 0; i < n; ++i) {
      va[i] = rng.uniform(-2, 2);
      vb[i] = 0.3 * va[i] + rng.uniform(-1, 1);
    }
    worst = std::max(worst, std::abs(pearson(va, vb) - pearson_oracle(va, vb)));

    // monotone transform invariance of AUROC
    std::vector<double> warped(n);
    for (int i = 0; i < n; ++i) warped[i] = std::exp(2.0 * scores[i]) + 3.0 * scores[i];
    worst = std::max(worst, std::abs(auroc(scores, labels) - auroc(warped, labels)));
  }
  return {worst < 1e-12,
          detail::str("max |metric - oracle| over 100 instances: ", worst, " (need < 1e-12)")};
}

// ---------------------------------------------------------------------------
// criterion 9: protocol fidelity
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion_9() {
  SplitIndices s = split_patients(100, {0.70, 0.15, 0.15}, 42);
  const bool counts_ok = s.train.size() == 70 && s.val.size() == 15 && s.test.size() == 15;

  // 10-run bootstrap on a small heterogeneous task; every metric must carry
  // a mean and a standard error, and a fixed seed must reproduce exactly
  SimSpec spec = SimSpec::defaults(SimFamily::heterogeneous);
  spec.n = 60;
  spec.t = 8;
  spec.tau = 2;
  spec.seed = 11;
  Dataset ds = simulate(spec);

  auto one_bootstrap = [&]() {
    auto run_fn = [&](uint64_t run_seed) {
      TrainConfig cfg;
      cfg.seed = run_seed;
      cfg.hidden_dim = 8;
      cfg.max_epochs = 30;
      cfg.patience = 8;
      cfg.learning_rate = 5e-3;
      SplitIndices split = split_patients(ds.size(), cfg.split, run_seed);
      CprModel model(Cell::rnn, cfg.hidden_dim, 1, 0, run_seed);
      fit(model, ds, split, cfg);
      auto test_ptrs = select(ds, split.test);
      std::vector<double> probs;
      std::vector<int> labels;
      RecoveryInputs rec;
      for (const Trajectory* tr : test_ptrs) {
        auto steps = model.forward(*tr);
        for (int t = 0; t < tr->length(); ++t) {
          probs.push_back(steps[t].prob);
          labels.push_back(tr->actions[t]);
          rec.est_prob.push_back(steps[t].prob);
          rec.true_prob.push_back(tr->truth[t].p);
          rec.est_coef.push_back(steps[t].params.coef[0]);
          rec.true_coef.push_back(tr->truth[t].theta[0]);
        }
      }
      std::map<std::string, double> metrics;
      metrics["auroc"] = auroc(probs, labels);
      metrics["auprc"] = auprc(probs, labels);
      metrics["brier"] = brier(probs, labels);
      metrics["cross_entropy"] = cross_entropy(probs, labels);
      for (const auto& [name, v] : recovery_report(rec))
        if (v.defined) metrics[name] = v.mean;
      return metrics;
    };
    return bootstrap_eval(bootstrap_seeds(900, 10), run_fn);
  };

  EvalReport rep1 = one_bootstrap();
  EvalReport rep2 = one_bootstrap();

  bool all_metrics = true;
  for (const char* m : {"auroc", "auprc", "brier", "cross_entropy", "prob_pearson",
                        "coef_pearson"})
    all_metrics = all_metrics && rep1.count(m) == 1 && rep1.at(m).n_runs == 10;
  bool stderr_present = true;
  for (const auto& [name, v] : rep1) stderr_present = stderr_present && v.stderr_ >= 0;

  bool bitwise = rep1.size() == rep2.size();
  for (const auto& [name, v] : rep1)
    bitwise = bitwise && rep2.count(name) == 1 && rep2.at(name).mean == v.mean &&
              rep2.at(name).stderr_ == v.stderr_;

  const bool stable = rep1.at("auroc").stderr_ < 0.05;
  const bool pass = counts_ok && all_metrics && stderr_present && bitwise && stable;
  return {pass, detail::str("split 100 -> 70/15/15: ", counts_ok ? "yes" : "no",
                            "; 10-run bootstrap emits mean+stderr for all ", rep1.size(),
                            " metrics: ", all_metrics && stderr_present ? "yes" : "no",
                            "; auroc stderr ", fmt(rep1.at("auroc").stderr_),
                            " < 0.05: ", stable ? "yes" : "no",
                            "; fixed seed reproduces bitwise: ", bitwise ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// criterion 10: end-to-end CLI smoke
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion_10() {
  const char* cli = std::getenv("CPR_CLI");
  if (cli == nullptr) return {false, "CPR_CLI is not set"};
  const fs::path dir =
      fs::temp_directory_path() / ("cpr-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto sh = [&](const std::string& args) {
    const std::string cmd = std::string(cli) + " " + args + " >/dev/null 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };

  const auto t0 = std::chrono::steady_clock::now();
  const std::string data = (dir / "sim" / "trajectories.jsonl").string();
  int rc = sh("simulate --family heterogeneous --seed 1 --out-dir " + (dir / "sim").string());
  if (rc == 0)
    rc = sh("train --data " + data +
            " --model cpr-rnn --restarts 2 --patience 150 --max-epochs 2000 --seed 1 "
            "--out-dir " +
            (dir / "fit").string());
  if (rc == 0)
    rc = sh("evaluate --checkpoint " + (dir / "fit" / "checkpoint.json").string() + " --data " +
            data + " --subset test --out-dir " + (dir / "eval").string());
  if (rc == 0)
    rc = sh("explain --checkpoint " + (dir / "fit" / "checkpoint.json").string() + " --data " +
            data + " --subset test --out-dir " + (dir / "explain").string());
  const double secs = elapsed_s(t0);
  if (rc != 0) return {false, detail::str("pipeline exited with code ", rc)};

  // the explain CSV must equal the in-memory forward pass exactly
  LoadedCheckpoint ckpt = load_checkpoint(dir / "fit" / "checkpoint.json");
  const auto& model = std::get<CprModel>(ckpt.model);
  Dataset ds = load_dataset(data);
  std::map<std::string, const Trajectory*> by_id;
  for (const auto& tr : ds) by_id[tr.id] = &tr;

  std::ifstream csv(dir / "explain" / "coefficients.csv");
  std::string line;
  std::getline(csv, line);
  long rows = 0, exact = 0;
  std::map<std::string, std::vector<CprModel::StepPolicy>> cache;
  while (std::getline(csv, line)) {
    const size_t c1 = line.find(','), c2 = line.find(',', c1 + 1), c3 = line.find(',', c2 + 1);
    const std::string id = line.substr(0, c1);
    const int t = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
    const std::string feature = line.substr(c2 + 1, c3 - c2 - 1);
    const double value = std::strtod(line.c_str() + c3 + 1, nullptr);
    if (!cache.count(id)) cache[id] = model.forward(*by_id.at(id));
    const auto& step = cache[id][t - 1];
    const double expect = feature == "intercept" ? step.params.intercept : step.params.coef[0];
    ++rows;
    if (value == expect) ++exact;
  }
  fs::remove_all(dir);
  const bool pass = rows > 0 && exact == rows && secs <= 900;
  return {pass, detail::str("simulate->train->evaluate->explain in ", fmt(secs),
                            "s (need <= 900); ", exact, "/", rows,
                            " exported coefficients equal the in-memory forward pass exactly")};
}

}  // namespace

int main() {
  std::printf("acceptance suite (heterogeneous recovery runs train 16+4 restarts per seed; "
              "expect ~25 minutes)\n");
  try {
    run_heterogeneous_experiments();
  } catch (const std::exception& e) {
    std::printf("heterogeneous experiments failed: %s\n", e.what());
  }

  run_criterion(1, "heterogeneous coefficient recovery", criterion_1);
  run_criterion(2, "heterogeneous probability recovery", criterion_2);
  run_criterion(3, "homogeneous parameter recovery", criterion_3);
  run_criterion(4, "threshold boundary recovery", criterion_4);
  run_criterion(5, "initial-policy homogeneity", criterion_5);
  run_criterion(6, "telescoping identity", criterion_6);
  run_criterion(7, "full-loss gradient correctness", criterion_7);
  run_criterion(8, "metric oracle equivalence", criterion_8);
  run_criterion(9, "protocol fidelity", criterion_9);
  run_criterion(10, "end-to-end CLI pipeline", criterion_10);

  if (failures > 0) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
