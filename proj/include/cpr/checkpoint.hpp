#pragma once

// Versioned JSON weight checkpoints: every named tensor with its shape and
// row-major values, plus enough model config to reconstruct the model.
// Doubles are serialized shortest-round-trip, so load(save(m)) == m bitwise.

#include <filesystem>
#include <fstream>
#include <variant>

#include <json.hpp>

#include "cpr/baselines.hpp"
#include "cpr/io.hpp"
#include "cpr/policy.hpp"

namespace cpr {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string model;  // cpr-rnn, cpr-lstm, cpr-global-rnn, cpr-global-lstm,
                      // blackbox-rnn, blackbox-lstm, logreg, condition-logreg
  nlohmann::json config = nlohmann::json::object();
};

namespace ckpt_detail {

inline nlohmann::json tensor_to_json(const std::string& name, const Tensor& t) {
  if (!t.all_finite())
    throw std::invalid_argument(detail::str("checkpoint: tensor '", name, "' is not finite"));
  return {{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"data", t.data()}};
}

inline void tensors_to_json(nlohmann::json& j,
                            const std::vector<std::pair<std::string, Tensor*>>& named) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [name, t] : named) arr.push_back(tensor_to_json(name, *t));
  j["tensors"] = arr;
}

inline void tensors_from_json(const nlohmann::json& j,
                              const std::vector<std::pair<std::string, Tensor*>>& named) {
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& t : j.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
  if (by_name.size() != named.size())
    throw std::invalid_argument(detail::str("checkpoint holds ", by_name.size(),
                                            " tensors, model expects ", named.size()));
  for (const auto& [name, dst] : named) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::invalid_argument(detail::str("checkpoint is missing tensor '", name, "'"));
    const nlohmann::json& t = *it->second;
    const int rows = t.at("rows").get<int>();
    const int cols = t.at("cols").get<int>();
    if (rows != dst->rows() || cols != dst->cols())
      throw std::invalid_argument(detail::str("checkpoint tensor '", name, "' is ", rows, "x",
                                              cols, ", model expects ", dst->shape_str()));
    std::vector<double> data = t.at("data").get<std::vector<double>>();
    *dst = Tensor::from_rows(rows, cols, std::move(data));
  }
}

}  // namespace ckpt_detail

// Any trained model the CLI can carry around. PolicyParams comes first so
// the variant is default-constructible.
using AnyModel =
    std::variant<PolicyParams, CprModel, CprGlobalModel, BlackboxModel, ConditionSpecificModel>;

inline bool is_cpr_kind(const std::string& kind) { return kind.rfind("cpr-", 0) == 0; }

inline Cell kind_cell(const std::string& kind) {
  if (kind.size() >= 4 && kind.substr(kind.size() - 4) == "lstm") return Cell::lstm;
  return Cell::rnn;
}

inline void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta,
                            AnyModel& model) {
  nlohmann::json j;
  j["format"] = "cpr-checkpoint";
  j["version"] = kCheckpointVersion;
  j["model"] = meta.model;
  j["config"] = meta.config;
  std::visit(
      [&](auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, CprModel> || std::is_same_v<T, CprGlobalModel> ||
                      std::is_same_v<T, BlackboxModel>) {
          ckpt_detail::tensors_to_json(j, m.named_params());
        } else if constexpr (std::is_same_v<T, PolicyParams>) {
          j["coef"] = m.coef;
          j["intercept"] = m.intercept;
        } else {  // ConditionSpecificModel
          j["pooled"] = {{"coef", m.pooled.coef}, {"intercept", m.pooled.intercept}};
          nlohmann::json entries = nlohmann::json::array();
          for (const auto& [key, params] : m.per_key)
            entries.push_back({{"t", key.t},
                               {"bins", key.bins},
                               {"coef", params.coef},
                               {"intercept", params.intercept}});
          j["entries"] = entries;
        }
      },
      model);
  std::ofstream out = io_detail::open_out(path);
  out << j.dump() << '\n';
}

struct LoadedCheckpoint {
  CheckpointMeta meta;
  AnyModel model;
};

// Rebuilds the model skeleton from the stored config, then overwrites its
// tensors. The discretizer of a condition-logreg checkpoint is restored from
// the stored bin edges.
inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(detail::str("cannot open checkpoint '", path.string(), "'"));
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded())
    throw std::invalid_argument(detail::str(path.string(), ": malformed checkpoint JSON"));
  if (j.value("format", "") != "cpr-checkpoint")
    throw std::invalid_argument(detail::str(path.string(), ": not a cpr checkpoint"));
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw std::invalid_argument(detail::str(path.string(), ": unsupported checkpoint version ",
                                            j.at("version").get<int>()));

  LoadedCheckpoint out;
  out.meta.model = j.at("model").get<std::string>();
  out.meta.config = j.at("config");
  const nlohmann::json& cfg = out.meta.config;
  const std::string& kind = out.meta.model;

  auto geti = [&](const char* key) { return cfg.at(key).get<int>(); };

  if (kind == "cpr-rnn" || kind == "cpr-lstm") {
    CprModel m(kind_cell(kind), geti("hidden_dim"), geti("obs_dim"), geti("static_dim"), 0);
    ckpt_detail::tensors_from_json(j, m.named_params());
    out.model = std::move(m);
  } else if (kind == "cpr-global-rnn" || kind == "cpr-global-lstm") {
    CprGlobalModel m(kind_cell(kind), geti("hidden_dim"), geti("obs_dim"), geti("static_dim"),
                     cfg.at("alpha").get<double>(), 0);
    ckpt_detail::tensors_from_json(j, m.named_params());
    out.model = std::move(m);
  } else if (kind == "blackbox-rnn" || kind == "blackbox-lstm") {
    BlackboxModel m(kind_cell(kind), geti("hidden_dim"), geti("obs_dim"), geti("static_dim"), 0);
    ckpt_detail::tensors_from_json(j, m.named_params());
    out.model = std::move(m);
  } else if (kind == "logreg") {
    PolicyParams p;
    p.coef = j.at("coef").get<std::vector<double>>();
    p.intercept = j.at("intercept").get<double>();
    out.model = std::move(p);
  } else if (kind == "condition-logreg") {
    ConditionSpecificModel m;
    m.pooled.coef = j.at("pooled").at("coef").get<std::vector<double>>();
    m.pooled.intercept = j.at("pooled").at("intercept").get<double>();
    for (const auto& e : j.at("entries")) {
      ConditionKey key{e.at("t").get<int>(), e.at("bins").get<std::vector<int>>()};
      PolicyParams p;
      p.coef = e.at("coef").get<std::vector<double>>();
      p.intercept = e.at("intercept").get<double>();
      m.per_key[key] = std::move(p);
    }
    BinningSpec spec;
    spec.lo = cfg.at("bin_lo").get<std::vector<double>>();
    spec.hi = cfg.at("bin_hi").get<std::vector<double>>();
    spec.bins = cfg.at("bins").get<int>();
    m.discretizer = spec.to_discretizer();
    out.model = std::move(m);
  } else {
    throw std::invalid_argument(detail::str(path.string(), ": unknown model kind '", kind, "'"));
  }
  return out;
}

}  // namespace cpr
