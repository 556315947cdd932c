// cpr: simulate / train / evaluate / explain / grid-search / bootstrap.
//
// Exit codes: 0 success, 1 validated failure (bad data, degenerate metric,
// divergence), 2 usage error (bad flags or config keys).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpr/baselines.hpp"
#include "cpr/checkpoint.hpp"
#include "cpr/io.hpp"
#include "cpr/metrics.hpp"
#include "cpr/policy.hpp"
#include "cpr/simulator.hpp"
#include "cpr/training.hpp"

namespace fs = std::filesystem;
using namespace cpr;

namespace {

// ---------------------------------------------------------------------------
// option plumbing
// ---------------------------------------------------------------------------

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "cpr-out";
  uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->option_defaults()->always_capture_default(true);
  cmd->add_option("--config", o.config_path, "key=value config file");
  cmd->add_option("--out-dir", o.out_dir, "output directory");
  cmd->add_option("--seed", o.seed, "master seed; all randomness derives from it");
}

// Applies a key=value config file: flags given on the command line win,
// unknown keys are rejected, and defaulted keys are listed once on stderr.
void apply_config_file(CLI::App* cmd, const CommonOpts& o) {
  if (o.config_path.empty()) return;
  RunConfig cfg = parse_run_config(o.config_path);
  std::vector<CLI::Option*> injected;
  for (const auto& [key, value] : cfg) {
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (opt == nullptr)
      throw CLI::ValidationError("--config",
                                 detail::str("unknown config key '", key, "'"));
    if (opt->count() > 0) continue;  // explicit flag overrides the file
    if (opt->get_expected_min() == 0) {
      // boolean flag
      if (value == "1" || value == "true" || value == "yes") {
        opt->add_result("true");
        injected.push_back(opt);
      } else if (value == "0" || value == "false" || value == "no") {
        continue;
      } else {
        throw CLI::ValidationError("--config", detail::str("flag key '", key,
                                                           "' expects a boolean, got '", value,
                                                           "'"));
      }
    } else {
      opt->add_result(value);
      injected.push_back(opt);
    }
  }
  std::vector<std::string> defaulted;
  for (const CLI::Option* opt : cmd->get_options())
    if (opt->count() == 0 && !opt->get_lnames().empty() && opt->get_expected_min() > 0 &&
        opt->get_lnames().front() != "config")
      defaulted.push_back(opt->get_lnames().front());
  if (!defaulted.empty()) {
    std::cerr << "note: using defaults for:";
    for (const auto& n : defaulted) std::cerr << ' ' << n;
    std::cerr << '\n';
  }
  // config-sourced results only land in the bound variables via the callback
  for (CLI::Option* opt : injected) opt->run_callback();
}

std::array<double, 3> parse_split(const std::string& s) {
  std::array<double, 3> out{};
  if (std::sscanf(s.c_str(), "%lf,%lf,%lf", &out[0], &out[1], &out[2]) != 3)
    throw std::invalid_argument(detail::str("split must be three comma-separated fractions, got '",
                                            s, "'"));
  return out;
}

std::vector<uint64_t> parse_seed_list(const std::string& s) {
  std::vector<uint64_t> out;
  size_t pos = 0;
  while (pos < s.size()) {
    size_t next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    out.push_back(std::stoull(s.substr(pos, next - pos)));
    pos = next + 1;
  }
  if (out.empty()) throw std::invalid_argument("empty seed list");
  return out;
}

// ---------------------------------------------------------------------------
// model kinds
// ---------------------------------------------------------------------------

const std::vector<std::string> kTrainableKinds{"cpr-rnn",      "cpr-lstm",
                                               "cpr-global-rnn", "cpr-global-lstm",
                                               "blackbox-rnn", "blackbox-lstm"};

bool is_trainable(const std::string& kind) {
  for (const auto& k : kTrainableKinds)
    if (k == kind) return true;
  return false;
}

bool is_global_kind(const std::string& kind) { return kind.rfind("cpr-global-", 0) == 0; }
bool is_blackbox_kind(const std::string& kind) { return kind.rfind("blackbox-", 0) == 0; }

void check_model_kind(const std::string& kind) {
  if (is_trainable(kind) || kind == "logreg" || kind == "condition-logreg") return;
  throw CLI::ValidationError("--model", detail::str("unknown model '", kind, "'"));
}

struct TrainOpts {
  std::string data_path;
  std::string model = "cpr-rnn";
  int hidden_dim = 32;
  double lambda = 1e-4;
  double learning_rate = -1;  // default depends on the model kind
  int batch_size = 64;
  int max_epochs = 500;
  int patience = 10;
  double alpha = 0.5;
  int restarts = 1;
  int bins = 4;
  std::string split = "0.70,0.15,0.15";
  std::string gradient_target = "logit";
};

void add_train_opts(CLI::App* cmd, TrainOpts& o, bool with_model_grid = true) {
  cmd->add_option("--data", o.data_path, "trajectory JSONL file")->required();
  if (with_model_grid) cmd->add_option("--model", o.model, "model kind");
  cmd->add_option("--k", o.hidden_dim, "encoder hidden dimension");
  cmd->add_option("--lambda", o.lambda, "lasso strength on emitted coefficients");
  cmd->add_option("--lr", o.learning_rate, "Adam learning rate (default 5e-4, black-box 1e-4)");
  cmd->add_option("--batch-size", o.batch_size, "minibatch size");
  cmd->add_option("--max-epochs", o.max_epochs, "epoch cap");
  cmd->add_option("--patience", o.patience, "early-stopping patience in epochs");
  cmd->add_option("--alpha", o.alpha, "bias update weight for cpr-global models");
  cmd->add_option("--restarts", o.restarts, "random restarts, best kept by validation loss");
  cmd->add_option("--bins", o.bins, "per-feature bins for condition-logreg");
  cmd->add_option("--split", o.split, "train,val,test fractions");
}

TrainConfig to_train_config(const TrainOpts& o, uint64_t seed) {
  TrainConfig cfg;
  cfg.learning_rate =
      o.learning_rate > 0 ? o.learning_rate : (is_blackbox_kind(o.model) ? 1e-4 : 5e-4);
  cfg.batch_size = o.batch_size;
  cfg.max_epochs = o.max_epochs;
  cfg.patience = o.patience;
  cfg.lambda = o.lambda;
  cfg.hidden_dim = o.hidden_dim;
  cfg.seed = seed;
  cfg.split = parse_split(o.split);
  return cfg;
}

GradientTarget to_gradient_target(const std::string& s) {
  if (s == "logit") return GradientTarget::logit;
  if (s == "probability") return GradientTarget::probability;
  throw CLI::ValidationError("--gradient-target",
                             detail::str("expected logit|probability, got '", s, "'"));
}

// ---------------------------------------------------------------------------
// per-step estimates for evaluation and explanation
// ---------------------------------------------------------------------------

std::vector<StepEstimate> step_estimates(const AnyModel& model, const Trajectory& tr,
                                         GradientTarget target, bool with_coefs) {
  std::vector<StepEstimate> out;
  if (const auto* m = std::get_if<CprModel>(&model)) {
    for (const auto& s : m->forward(tr)) out.push_back({s.prob, s.params.coef});
  } else if (const auto* m = std::get_if<CprGlobalModel>(&model)) {
    GlobalTrace trace = m->forward(tr);
    for (const auto& s : trace.steps) out.push_back({s.prob, s.theta.coef});
  } else if (const auto* m = std::get_if<BlackboxModel>(&model)) {
    auto probs = m->forward(tr);
    for (int t = 1; t <= tr.length(); ++t) {
      StepEstimate e;
      e.prob = probs[t - 1];
      if (with_coefs) e.coef = extract_coeffs(*m, tr, t, target);
      out.push_back(std::move(e));
    }
  } else if (const auto* m = std::get_if<PolicyParams>(&model)) {
    for (int t = 0; t < tr.length(); ++t) out.push_back({predict(*m, tr.obs[t]), m->coef});
  } else {
    const auto& cs = std::get<ConditionSpecificModel>(model);
    for (int t = 0; t < tr.length(); ++t) {
      const PolicyParams& p = cs.params_for(t + 1, tr.obs[t]);
      out.push_back({predict(p, tr.obs[t]), p.coef});
    }
  }
  return out;
}

EvalReport evaluate_model(const AnyModel& model, std::span<const Trajectory* const> subset,
                          GradientTarget target) {
  if (subset.empty()) throw std::invalid_argument("evaluate: empty subset");
  bool all_truth = true;
  for (const Trajectory* tr : subset) all_truth = all_truth && tr->has_truth();

  std::vector<double> probs;
  std::vector<int> labels;
  RecoveryInputs rec;
  for (const Trajectory* tr : subset) {
    auto est = step_estimates(model, *tr, target, all_truth);
    for (int t = 0; t < tr->length(); ++t) {
      probs.push_back(est[t].prob);
      labels.push_back(tr->actions[t]);
      if (all_truth) {
        rec.est_prob.push_back(est[t].prob);
        rec.true_prob.push_back(tr->truth[t].p);
        const size_t d = est[t].coef.size();
        for (size_t j = 0; j < std::min(d, tr->truth[t].theta.size()); ++j) {
          rec.est_coef.push_back(est[t].coef[j]);
          rec.true_coef.push_back(tr->truth[t].theta[j]);
        }
      }
    }
  }
  EvalReport rep;
  rep["auroc"] = {auroc(probs, labels), 0, 1, true};
  rep["auprc"] = {auprc(probs, labels), 0, 1, true};
  rep["brier"] = {brier(probs, labels), 0, 1, true};
  rep["cross_entropy"] = {cross_entropy(probs, labels), 0, 1, true};
  if (all_truth && !rec.est_coef.empty())
    for (const auto& [name, v] : recovery_report(rec)) rep[name] = v;
  return rep;
}

std::map<std::string, double> defined_metrics(const EvalReport& rep) {
  std::map<std::string, double> out;
  for (const auto& [name, v] : rep)
    if (v.defined) out[name] = v.mean;
  return out;
}

// ---------------------------------------------------------------------------
// dataset subsetting against a stored or given split
// ---------------------------------------------------------------------------

std::vector<const Trajectory*> subset_of(const Dataset& ds, const std::string& subset,
                                         const std::array<double, 3>& split, uint64_t seed) {
  if (subset == "all") return pointers_to(ds);
  SplitIndices idx = split_patients(ds.size(), split, seed);
  if (subset == "train") return select(ds, idx.train);
  if (subset == "val") return select(ds, idx.val);
  if (subset == "test") return select(ds, idx.test);
  throw CLI::ValidationError("--subset",
                             detail::str("expected train|val|test|all, got '", subset, "'"));
}

// ---------------------------------------------------------------------------
// training per model kind
// ---------------------------------------------------------------------------

struct TrainedArtifacts {
  AnyModel model;
  CheckpointMeta meta;
  std::vector<CurvePoint> curve;
  nlohmann::json fit_meta;
};

nlohmann::json base_config_json(const TrainOpts& o, const TrainConfig& cfg, int obs_dim,
                                int static_dim) {
  nlohmann::json j;
  j["model"] = o.model;
  j["cell"] = is_trainable(o.model) ? cell_name(kind_cell(o.model)) : "";
  j["hidden_dim"] = cfg.hidden_dim;
  j["obs_dim"] = obs_dim;
  j["static_dim"] = static_dim;
  j["lambda"] = cfg.lambda;
  j["learning_rate"] = cfg.learning_rate;
  j["batch_size"] = cfg.batch_size;
  j["max_epochs"] = cfg.max_epochs;
  j["patience"] = cfg.patience;
  j["restarts"] = o.restarts;
  j["seed"] = cfg.seed;
  j["split"] = std::vector<double>{cfg.split[0], cfg.split[1], cfg.split[2]};
  if (is_global_kind(o.model)) j["alpha"] = o.alpha;
  return j;
}

TrainedArtifacts train_any(const Dataset& ds, const TrainOpts& o, uint64_t seed) {
  check_model_kind(o.model);
  const int d = dataset_obs_dim(ds);
  const int s = dataset_static_dim(ds);
  TrainConfig cfg = to_train_config(o, seed);
  SplitIndices split = split_patients(ds.size(), cfg.split, cfg.seed);

  TrainedArtifacts out;
  out.meta.model = o.model;
  out.meta.config = base_config_json(o, cfg, d, s);

  if (is_trainable(o.model)) {
    const Cell cell = kind_cell(o.model);
    auto record = [&](const FitResult& fr) {
      for (const auto& e : fr.curve) out.curve.push_back({e.epoch, e.train_loss, e.val_loss});
      out.fit_meta["epochs_run"] = fr.epochs_run;
      out.fit_meta["best_epoch"] = fr.best_epoch;
      out.fit_meta["best_val_loss"] = fr.best_val_loss;
    };
    if (is_global_kind(o.model)) {
      auto best = fit_best_restart(ds, split, cfg, o.restarts, [&](uint64_t sd) {
        return CprGlobalModel(cell, cfg.hidden_dim, d, s, o.alpha, sd);
      });
      record(best.result);
      out.model = std::move(best.model);
    } else if (is_blackbox_kind(o.model)) {
      auto best = fit_best_restart(ds, split, cfg, o.restarts, [&](uint64_t sd) {
        return BlackboxModel(cell, cfg.hidden_dim, d, s, sd);
      });
      record(best.result);
      out.model = std::move(best.model);
    } else {
      auto best = fit_best_restart(ds, split, cfg, o.restarts, [&](uint64_t sd) {
        return CprModel(cell, cfg.hidden_dim, d, s, sd);
      });
      record(best.result);
      out.model = std::move(best.model);
    }
  } else {
    auto train_ptrs = select(ds, split.train);
    auto val_ptrs = select(ds, split.val);
    if (o.model == "logreg") {
      out.model = fit_pooled_logreg(std::span<const Trajectory* const>(train_ptrs));
    } else {
      BinningSpec bins = BinningSpec::from_data(train_ptrs, o.bins);
      out.model =
          fit_condition_specific(train_ptrs, bins.to_discretizer());
      out.meta.config["bins"] = bins.bins;
      out.meta.config["bin_lo"] = bins.lo;
      out.meta.config["bin_hi"] = bins.hi;
    }
    // single-point curve: final unpenalized loss on train and val
    auto bce_of = [&](std::span<const Trajectory* const> part) {
      std::vector<double> p;
      std::vector<int> y;
      for (const Trajectory* tr : part) {
        auto est = step_estimates(out.model, *tr, GradientTarget::logit, false);
        for (int t = 0; t < tr->length(); ++t) {
          p.push_back(est[t].prob);
          y.push_back(tr->actions[t]);
        }
      }
      return cross_entropy(p, y);
    };
    const double tl = bce_of(train_ptrs);
    const double vl = val_ptrs.empty() ? tl : bce_of(val_ptrs);
    out.curve.push_back({1, tl, vl});
    out.fit_meta["epochs_run"] = 1;
    out.fit_meta["best_epoch"] = 1;
    out.fit_meta["best_val_loss"] = vl;
  }
  out.fit_meta["model"] = o.model;
  out.fit_meta["seed"] = cfg.seed;
  out.fit_meta["config"] = out.meta.config;
  return out;
}

// ---------------------------------------------------------------------------
// explanation exports
// ---------------------------------------------------------------------------

std::vector<CoefficientRow> coefficient_rows(const AnyModel& model,
                                             std::span<const Trajectory* const> subset,
                                             GradientTarget target) {
  std::vector<CoefficientRow> rows;
  for (const Trajectory* tr : subset) {
    if (const auto* m = std::get_if<CprModel>(&model)) {
      const int d = m->obs_dim();
      auto steps = m->forward(*tr);
      for (int t = 0; t < tr->length(); ++t) {
        for (int j = 0; j < d; ++j)
          rows.push_back({tr->id, t + 1, feature_name(j, d), steps[t].params.coef[j]});
        rows.push_back({tr->id, t + 1, "intercept", steps[t].params.intercept});
      }
    } else if (const auto* m = std::get_if<CprGlobalModel>(&model)) {
      const int d = m->obs_dim();
      GlobalTrace trace = m->forward(*tr);
      for (int t = 0; t < tr->length(); ++t) {
        for (int j = 0; j < d; ++j)
          rows.push_back({tr->id, t + 1, feature_name(j, d), trace.steps[t].theta.coef[j]});
        rows.push_back({tr->id, t + 1, "intercept", trace.steps[t].theta.intercept});
      }
    } else {
      auto est = step_estimates(model, *tr, target, true);
      const int d = static_cast<int>(tr->obs.front().size());
      const bool has_intercept = !std::holds_alternative<BlackboxModel>(model);
      for (int t = 0; t < tr->length(); ++t) {
        for (int j = 0; j < d && j < static_cast<int>(est[t].coef.size()); ++j)
          rows.push_back({tr->id, t + 1, feature_name(j, d), est[t].coef[j]});
        if (has_intercept) {
          double b = 0;
          if (const auto* lr = std::get_if<PolicyParams>(&model)) b = lr->intercept;
          else
            b = std::get<ConditionSpecificModel>(model).params_for(t + 1, tr->obs[t]).intercept;
          rows.push_back({tr->id, t + 1, "intercept", b});
        }
      }
    }
  }
  return rows;
}

std::vector<ContributionRow> contribution_rows(const CprGlobalModel& model,
                                               std::span<const Trajectory* const> subset) {
  std::vector<ContributionRow> rows;
  for (const Trajectory* tr : subset) {
    GlobalTrace trace = model.forward(*tr);
    Explanation ex = explain_global(trace, *tr);
    for (int t = 0; t < tr->length(); ++t) {
      for (const Contribution& c : ex.per_step[t])
        rows.push_back({tr->id, t + 1, c.source_step, c.feature, c.value});
      rows.push_back({tr->id, t + 1, t + 1, "logodds", trace.steps[t].logodds});
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_simulate(const CommonOpts& common, const SimSpec& spec, const RunConfig& resolved) {
  Dataset ds = simulate(spec);
  const fs::path out = fs::path(common.out_dir);
  save_dataset(out / "trajectories.jsonl", ds);
  save_run_manifest(out, "simulate", spec.seed, resolved, {"trajectories.jsonl"});
  std::cout << "wrote " << (out / "trajectories.jsonl").string() << " (" << ds.size()
            << " trajectories)\n";
  return 0;
}

int cmd_train(const CommonOpts& common, const TrainOpts& opts, const RunConfig& resolved) {
  Dataset ds = load_dataset(opts.data_path);
  TrainedArtifacts art = train_any(ds, opts, common.seed);
  const fs::path out = fs::path(common.out_dir);
  save_checkpoint(out / "checkpoint.json", art.meta, art.model);
  save_curves_csv(out / "curves.csv", art.curve);
  {
    std::ofstream meta = io_detail::open_out(out / "fit_meta.json");
    meta << art.fit_meta.dump(2) << '\n';
  }
  save_run_manifest(out, "train", common.seed, resolved,
                    {"checkpoint.json", "curves.csv", "fit_meta.json"});
  std::cout << "wrote " << (out / "checkpoint.json").string() << '\n';
  return 0;
}

struct EvalOpts {
  std::string checkpoint_path;
  std::string data_path;
  std::string subset = "test";
  std::string split;  // defaults to the checkpoint's stored split
  std::string gradient_target = "logit";
  bool seed_given = false;
};

int cmd_evaluate(const CommonOpts& common, const EvalOpts& opts, const RunConfig& resolved) {
  LoadedCheckpoint ckpt = load_checkpoint(opts.checkpoint_path);
  Dataset ds = load_dataset(opts.data_path);
  const uint64_t split_seed =
      opts.seed_given ? common.seed : ckpt.meta.config.value("seed", common.seed);
  const std::array<double, 3> split =
      !opts.split.empty()
          ? parse_split(opts.split)
          : (ckpt.meta.config.contains("split")
                 ? std::array<double, 3>{ckpt.meta.config["split"][0].get<double>(),
                                         ckpt.meta.config["split"][1].get<double>(),
                                         ckpt.meta.config["split"][2].get<double>()}
                 : std::array<double, 3>{0.70, 0.15, 0.15});
  auto subset = subset_of(ds, opts.subset, split, split_seed);
  EvalReport rep = evaluate_model(ckpt.model, subset, to_gradient_target(opts.gradient_target));
  const fs::path out = fs::path(common.out_dir);
  save_eval_report(out / "eval_report.json", rep);
  save_run_manifest(out, "evaluate", split_seed, resolved, {"eval_report.json"});
  std::cout << eval_report_to_json(rep).dump(2) << '\n';
  return 0;
}

struct ExplainOpts {
  std::string checkpoint_path;
  std::string data_path;
  std::string subset = "all";
  std::string split;
  std::string gradient_target = "logit";
  bool global_contributions = false;
  bool seed_given = false;
};

int cmd_explain(const CommonOpts& common, const ExplainOpts& opts, const RunConfig& resolved) {
  LoadedCheckpoint ckpt = load_checkpoint(opts.checkpoint_path);
  Dataset ds = load_dataset(opts.data_path);
  const uint64_t split_seed =
      opts.seed_given ? common.seed : ckpt.meta.config.value("seed", common.seed);
  const std::array<double, 3> split =
      !opts.split.empty()
          ? parse_split(opts.split)
          : (ckpt.meta.config.contains("split")
                 ? std::array<double, 3>{ckpt.meta.config["split"][0].get<double>(),
                                         ckpt.meta.config["split"][1].get<double>(),
                                         ckpt.meta.config["split"][2].get<double>()}
                 : std::array<double, 3>{0.70, 0.15, 0.15});
  auto subset = subset_of(ds, opts.subset, split, split_seed);

  const fs::path out = fs::path(common.out_dir);
  std::vector<std::string> outputs{"coefficients.csv"};
  save_coefficients_csv(out / "coefficients.csv",
                        coefficient_rows(ckpt.model, subset,
                                         to_gradient_target(opts.gradient_target)));
  if (opts.global_contributions) {
    const auto* m = std::get_if<CprGlobalModel>(&ckpt.model);
    if (m == nullptr)
      throw CLI::ValidationError("--global", "checkpoint does not hold a cpr-global model");
    save_contributions_csv(out / "contributions.csv", contribution_rows(*m, subset));
    outputs.push_back("contributions.csv");
  }
  save_run_manifest(out, "explain", split_seed, resolved, outputs);
  std::cout << "wrote " << (out / "coefficients.csv").string() << '\n';
  return 0;
}

struct GridOpts {
  TrainOpts train;
  std::string grid_k = "16,32,64";
  std::string grid_lambda = "0.0001,0.001,0.01,0.1";
  std::string seeds = "0";
};

int cmd_grid_search(const CommonOpts& common, const GridOpts& opts, const RunConfig& resolved) {
  if (!is_trainable(opts.train.model))
    throw CLI::ValidationError("--model", "grid-search requires a trainable model kind");
  Dataset ds = load_dataset(opts.train.data_path);
  const int d = dataset_obs_dim(ds);
  const int s = dataset_static_dim(ds);
  TrainConfig base = to_train_config(opts.train, common.seed);
  SplitIndices split = split_patients(ds.size(), base.split, base.seed);

  GridSpec grid;
  grid.hidden_dims.clear();
  for (uint64_t k : parse_seed_list(opts.grid_k)) grid.hidden_dims.push_back(static_cast<int>(k));
  grid.lambdas.clear();
  {
    size_t pos = 0;
    const std::string& sl = opts.grid_lambda;
    while (pos < sl.size()) {
      size_t next = sl.find(',', pos);
      if (next == std::string::npos) next = sl.size();
      grid.lambdas.push_back(std::stod(sl.substr(pos, next - pos)));
      pos = next + 1;
    }
  }
  std::vector<uint64_t> seeds = parse_seed_list(opts.seeds);

  const Cell cell = kind_cell(opts.train.model);
  GridResult gr;
  if (is_global_kind(opts.train.model)) {
    gr = grid_search(ds, split, base, grid, seeds, [&](int k, uint64_t sd) {
      return CprGlobalModel(cell, k, d, s, opts.train.alpha, sd);
    });
  } else if (is_blackbox_kind(opts.train.model)) {
    gr = grid_search(ds, split, base, grid, seeds, [&](int k, uint64_t sd) {
      return BlackboxModel(cell, k, d, s, sd);
    });
  } else {
    gr = grid_search(ds, split, base, grid, seeds, [&](int k, uint64_t sd) {
      return CprModel(cell, k, d, s, sd);
    });
  }

  // retrain the winning cell with the base seed and evaluate its test split
  TrainOpts best_opts = opts.train;
  best_opts.hidden_dim = gr.best.hidden_dim;
  best_opts.lambda = gr.best.lambda;
  TrainedArtifacts art = train_any(ds, best_opts, common.seed);
  EvalReport rep =
      evaluate_model(art.model, select(ds, split.test), GradientTarget::logit);

  nlohmann::json j;
  j["best"] = {{"hidden_dim", gr.best.hidden_dim}, {"lambda", gr.best.lambda}};
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : gr.cells)
    cells.push_back({{"hidden_dim", c.hidden_dim},
                     {"lambda", c.lambda},
                     {"mean_val_loss", c.mean_val_loss},
                     {"per_seed_val_loss", c.per_seed_val_loss}});
  j["cells"] = cells;
  j["test_report"] = eval_report_to_json(rep);

  const fs::path out = fs::path(common.out_dir);
  {
    std::ofstream f = io_detail::open_out(out / "grid_report.json");
    f << j.dump(2) << '\n';
  }
  RunConfig best_cfg = resolved;
  best_cfg["k"] = std::to_string(gr.best.hidden_dim);
  best_cfg["lambda"] = io_detail::fmt_double(gr.best.lambda);
  save_run_config(out / "best_config.cfg", best_cfg);
  save_checkpoint(out / "checkpoint.json", art.meta, art.model);
  save_run_manifest(out, "grid-search", common.seed, resolved,
                    {"grid_report.json", "best_config.cfg", "checkpoint.json"});
  std::cout << j["best"].dump() << '\n';
  return 0;
}

struct BootstrapOpts {
  TrainOpts train;
  int runs = 10;
};

int cmd_bootstrap(const CommonOpts& common, const BootstrapOpts& opts,
                  const RunConfig& resolved) {
  Dataset ds = load_dataset(opts.train.data_path);
  std::vector<uint64_t> run_seeds = bootstrap_seeds(common.seed, opts.runs);

  auto run_fn = [&](uint64_t run_seed) {
    TrainedArtifacts art = train_any(ds, opts.train, run_seed);
    TrainConfig cfg = to_train_config(opts.train, run_seed);
    SplitIndices split = split_patients(ds.size(), cfg.split, run_seed);
    EvalReport rep = evaluate_model(art.model, select(ds, split.test), GradientTarget::logit);
    return defined_metrics(rep);
  };
  EvalReport rep = bootstrap_eval(run_seeds, run_fn);

  const fs::path out = fs::path(common.out_dir);
  save_eval_report(out / "bootstrap_report.json", rep);
  save_run_manifest(out, "bootstrap", common.seed, resolved, {"bootstrap_report.json"});
  std::cout << eval_report_to_json(rep).dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contextualized policy recovery: per-timestep linear decision policies "
               "generated from observation/action histories"};
  app.require_subcommand(1);

  // simulate
  CommonOpts sim_common;
  std::string family = "heterogeneous";
  SimSpec sim_spec;
  bool n_given = false, t_given = false;
  CLI::App* sim = app.add_subcommand("simulate", "generate a synthetic decision process");
  add_common(sim, sim_common);
  sim->add_option("--family", family, "heterogeneous|homogeneous|threshold");
  auto* opt_n = sim->add_option("--n", sim_spec.n, "trajectory count");
  auto* opt_t = sim->add_option("--t", sim_spec.t, "trajectory length");
  sim->add_option("--tau", sim_spec.tau, "lag (heterogeneous)");
  sim->add_option("--sigma-a", sim_spec.sigma_a, "decision noise std");
  sim->add_option("--sigma-theta", sim_spec.sigma_theta, "policy noise std");
  sim->add_option("--holdout-frac", sim_spec.holdout_frac, "evaluation holdout fraction");

  // train
  CommonOpts train_common;
  TrainOpts train_opts;
  CLI::App* train = app.add_subcommand("train", "fit a model by imitation");
  add_common(train, train_common);
  add_train_opts(train, train_opts);

  // evaluate
  CommonOpts eval_common;
  EvalOpts eval_opts;
  CLI::App* eval = app.add_subcommand("evaluate", "score a checkpoint on a dataset");
  add_common(eval, eval_common);
  eval->add_option("--checkpoint", eval_opts.checkpoint_path, "checkpoint file")->required();
  eval->add_option("--data", eval_opts.data_path, "trajectory JSONL file")->required();
  eval->add_option("--subset", eval_opts.subset, "train|val|test|all");
  eval->add_option("--split", eval_opts.split, "override split fractions");
  eval->add_option("--gradient-target", eval_opts.gradient_target,
                   "black-box coefficient extraction target: logit|probability");

  // explain
  CommonOpts explain_common;
  ExplainOpts explain_opts;
  CLI::App* explain = app.add_subcommand("explain", "export per-step coefficients");
  add_common(explain, explain_common);
  explain->add_option("--checkpoint", explain_opts.checkpoint_path, "checkpoint file")
      ->required();
  explain->add_option("--data", explain_opts.data_path, "trajectory JSONL file")->required();
  explain->add_option("--subset", explain_opts.subset, "train|val|test|all");
  explain->add_option("--split", explain_opts.split, "override split fractions");
  explain->add_option("--gradient-target", explain_opts.gradient_target,
                      "black-box coefficient extraction target");
  explain->add_flag("--global", explain_opts.global_contributions,
                    "also export telescoped per-step contributions");

  // grid-search
  CommonOpts grid_common;
  GridOpts grid_opts;
  CLI::App* grid = app.add_subcommand("grid-search", "exhaustive hyperparameter search");
  add_common(grid, grid_common);
  add_train_opts(grid, grid_opts.train);
  grid->add_option("--grid-k", grid_opts.grid_k, "hidden dims to try");
  grid->add_option("--grid-lambda", grid_opts.grid_lambda, "lasso strengths to try");
  grid->add_option("--seeds", grid_opts.seeds, "training seeds per cell");

  // bootstrap
  CommonOpts boot_common;
  BootstrapOpts boot_opts;
  CLI::App* boot = app.add_subcommand("bootstrap", "repeated re-split/train/evaluate runs");
  add_common(boot, boot_common);
  add_train_opts(boot, boot_opts.train);
  boot->add_option("--runs", boot_opts.runs, "bootstrap repetitions");

  try {
    app.parse(argc, argv);

    CLI::App* active = app.get_subcommands().front();
    CommonOpts* common = nullptr;
    if (active == sim) common = &sim_common;
    else if (active == train) common = &train_common;
    else if (active == eval) common = &eval_common;
    else if (active == explain) common = &explain_common;
    else if (active == grid) common = &grid_common;
    else common = &boot_common;
    apply_config_file(active, *common);

    // resolved config for the manifest: every long option with a value;
    // feeding resolved_config.cfg back through --config reproduces the run
    RunConfig resolved;
    for (const CLI::Option* opt : active->get_options()) {
      if (opt->get_lnames().empty()) continue;
      const std::string& name = opt->get_lnames().front();
      if (name == "config" || name == "help") continue;
      if (opt->get_expected_min() == 0) {
        resolved[name] = opt->count() > 0 ? "true" : "false";
      } else if (opt->count() > 0) {
        resolved[name] = opt->results().back();
      } else if (!opt->get_default_str().empty()) {
        resolved[name] = opt->get_default_str();
      }
    }

    if (active == sim) {
      sim_spec.family = family_from_name(family);
      sim_spec.seed = sim_common.seed;
      // family defaults apply to whatever the user did not set
      SimSpec def = SimSpec::defaults(sim_spec.family);
      if (opt_n->count() == 0) sim_spec.n = def.n;
      if (opt_t->count() == 0) sim_spec.t = def.t;
      (void)n_given;
      (void)t_given;
      resolved["family"] = family;
      resolved["n"] = std::to_string(sim_spec.n);
      resolved["t"] = std::to_string(sim_spec.t);
      return cmd_simulate(sim_common, sim_spec, resolved);
    }
    if (active == train) return cmd_train(train_common, train_opts, resolved);
    if (active == eval) {
      eval_opts.seed_given = eval->get_option("--seed")->count() > 0;
      return cmd_evaluate(eval_common, eval_opts, resolved);
    }
    if (active == explain) {
      explain_opts.seed_given = explain->get_option("--seed")->count() > 0;
      return cmd_explain(explain_common, explain_opts, resolved);
    }
    if (active == grid) return cmd_grid_search(grid_common, grid_opts, resolved);
    return cmd_bootstrap(boot_common, boot_opts, resolved);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
