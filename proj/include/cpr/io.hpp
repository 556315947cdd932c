#pragma once

// File formats: trajectory JSONL, CSV exports, key=value run configs, and
// run manifests. JSON serialization uses shortest-round-trip doubles and CSV
// uses 17 significant digits, so numbers survive save/load bit-exactly.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpr/metrics.hpp"
#include "cpr/rng.hpp"
#include "cpr/tensor.hpp"
#include "cpr/trajectory.hpp"

namespace cpr {

inline constexpr const char* kArtifactVersion = "0.1.0";

namespace io_detail {

inline std::string fmt_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error(detail::str("cannot open '", path.string(), "' for writing"));
  return out;
}

inline std::vector<double> as_doubles(const nlohmann::json& arr, const char* what,
                                      const std::string& id) {
  if (!arr.is_array())
    throw std::invalid_argument(detail::str("record '", id, "': ", what, " must be an array"));
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number())
      throw std::invalid_argument(detail::str("record '", id, "': ", what, " holds a non-number"));
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace io_detail

// --------------------------------------------------------------------------
// Trajectory JSONL
// --------------------------------------------------------------------------

inline nlohmann::json trajectory_to_json(const Trajectory& tr) {
  nlohmann::json j;
  j["id"] = tr.id;
  if (!tr.static_ctx.empty()) j["static"] = tr.static_ctx;
  j["obs"] = tr.obs;
  j["actions"] = tr.actions;
  if (!tr.truth.empty()) {
    nlohmann::json truth = nlohmann::json::array();
    for (const StepTruth& st : tr.truth) truth.push_back({{"theta", st.theta}, {"p", st.p}});
    j["truth"] = truth;
  }
  return j;
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory tr;
  if (!j.contains("id") || !j.at("id").is_string())
    throw std::invalid_argument("record without a string 'id'");
  tr.id = j.at("id").get<std::string>();
  if (j.contains("static")) tr.static_ctx = io_detail::as_doubles(j.at("static"), "static", tr.id);
  if (!j.contains("obs") || !j.at("obs").is_array())
    throw std::invalid_argument(detail::str("record '", tr.id, "': missing obs array"));
  for (const auto& row : j.at("obs"))
    tr.obs.push_back(io_detail::as_doubles(row, "obs row", tr.id));
  if (!j.contains("actions") || !j.at("actions").is_array())
    throw std::invalid_argument(detail::str("record '", tr.id, "': missing actions array"));
  for (const auto& a : j.at("actions")) {
    if (!a.is_number_integer())
      throw std::invalid_argument(detail::str("record '", tr.id, "': non-integer action"));
    tr.actions.push_back(a.get<int>());
  }
  if (j.contains("truth")) {
    for (const auto& st : j.at("truth")) {
      StepTruth t;
      t.theta = io_detail::as_doubles(st.at("theta"), "truth theta", tr.id);
      t.p = st.at("p").get<double>();
      tr.truth.push_back(std::move(t));
    }
  }
  validate_trajectory(tr);
  return tr;
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out = io_detail::open_out(path);
  for (const Trajectory& tr : ds) out << trajectory_to_json(tr).dump() << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(detail::str("cannot open '", path.string(), "'"));
  Dataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw std::invalid_argument(
          detail::str(path.string(), ":", line_no, ": malformed JSON line"));
    try {
      ds.push_back(trajectory_from_json(j));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(detail::str(path.string(), ":", line_no, ": ", e.what()));
    }
  }
  if (ds.empty()) throw std::invalid_argument(detail::str(path.string(), ": no trajectories"));
  dataset_obs_dim(ds);    // enforces a consistent observation dim
  dataset_static_dim(ds); // and a consistent static dim
  return ds;
}

// --------------------------------------------------------------------------
// CSV exports
// --------------------------------------------------------------------------

struct CoefficientRow {
  std::string trajectory_id;
  int t = 0;  // 1-based step
  std::string feature;
  double value = 0;
};

inline void save_coefficients_csv(const std::filesystem::path& path,
                                  const std::vector<CoefficientRow>& rows) {
  std::ofstream out = io_detail::open_out(path);
  out << "trajectory_id,t,feature,value\n";
  for (const auto& r : rows)
    out << r.trajectory_id << ',' << r.t << ',' << r.feature << ','
        << io_detail::fmt_double(r.value) << '\n';
}

struct ContributionRow {
  std::string trajectory_id;
  int t = 0;          // explained step
  int source_t = 0;   // step the feature was observed at
  std::string feature;
  double value = 0;
};

inline void save_contributions_csv(const std::filesystem::path& path,
                                   const std::vector<ContributionRow>& rows) {
  std::ofstream out = io_detail::open_out(path);
  out << "trajectory_id,t,source_t,feature,contribution\n";
  for (const auto& r : rows)
    out << r.trajectory_id << ',' << r.t << ',' << r.source_t << ',' << r.feature << ','
        << io_detail::fmt_double(r.value) << '\n';
}

struct CurvePoint {
  int epoch;
  double train_loss;
  double val_loss;
};

inline void save_curves_csv(const std::filesystem::path& path,
                            const std::vector<CurvePoint>& curve) {
  std::ofstream out = io_detail::open_out(path);
  out << "epoch,train_loss,val_loss\n";
  for (const auto& p : curve)
    out << p.epoch << ',' << io_detail::fmt_double(p.train_loss) << ','
        << io_detail::fmt_double(p.val_loss) << '\n';
}

// --------------------------------------------------------------------------
// EvalReport JSON: {metric: {mean, stderr, n_runs}}, undefined -> null mean
// --------------------------------------------------------------------------

inline nlohmann::json eval_report_to_json(const EvalReport& rep) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, v] : rep) {
    nlohmann::json m;
    if (v.defined) m["mean"] = v.mean;
    else m["mean"] = nullptr;
    m["stderr"] = v.stderr_;
    m["n_runs"] = v.n_runs;
    j[name] = m;
  }
  return j;
}

inline void save_eval_report(const std::filesystem::path& path, const EvalReport& rep) {
  std::ofstream out = io_detail::open_out(path);
  out << eval_report_to_json(rep).dump(2) << '\n';
}

// --------------------------------------------------------------------------
// RunConfig: plain key=value lines; '#' starts a comment
// --------------------------------------------------------------------------

using RunConfig = std::map<std::string, std::string>;

inline RunConfig parse_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(detail::str("cannot open config '", path.string(), "'"));
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(
          detail::str(path.string(), ":", line_no, ": expected key=value"));
    auto trim = [](std::string s) {
      const size_t b = s.find_first_not_of(" \t\r");
      const size_t e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument(detail::str(path.string(), ":", line_no, ": empty key"));
    cfg[key] = value;
  }
  return cfg;
}

inline void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out = io_detail::open_out(path);
  for (const auto& [k, v] : cfg) out << k << "=" << v << '\n';
}

inline uint64_t config_hash(const RunConfig& cfg) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : cfg) {  // std::map iterates in key order
    h = h * 0x100000001b3ULL ^ fnv1a64(k);
    h = h * 0x100000001b3ULL ^ fnv1a64(v);
  }
  return h;
}

// --------------------------------------------------------------------------
// Run manifest: seed, config hash, artifact version, outputs
// --------------------------------------------------------------------------

inline void save_run_manifest(const std::filesystem::path& dir, const std::string& command,
                              uint64_t seed, const RunConfig& resolved,
                              const std::vector<std::string>& outputs) {
  nlohmann::json j;
  j["tool"] = "cpr";
  j["version"] = kArtifactVersion;
  j["command"] = command;
  j["seed"] = seed;
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)config_hash(resolved));
  j["config_hash"] = hex;
  j["config"] = resolved;
  j["outputs"] = outputs;
  std::ofstream out = io_detail::open_out(dir / "run_manifest.json");
  out << j.dump(2) << '\n';
  save_run_config(dir / "resolved_config.cfg", resolved);
}

}  // namespace cpr
