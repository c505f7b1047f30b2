#pragma once

// One JSON document configures every command:
//   {
//     "jobs": 1,
//     "sim":   {"seed": 0, "n_scenes": 100, "max_agents": 8, "vru_fraction": 0.4,
//               "traffic_light_prob": 0.5, "maneuver_mix": {"cruise": 1.0, ...}},
//     "label": {"tau_lat": 2.0, "dv_acc": 1.0, "dv_dec": -1.0, "v_stop": 0.5},
//     "model": {"m_img": 8, "channels": 64, "heads": 4, ...},
//     "train": {"seed": 0, "stages": [{"stage": "planning_finetune", "epochs": 4}, ...],
//               "e2e": {"epochs": 8}},
//     "eval":  {"l2_cumulative": false}
//   }
// Every key is optional. Command-line flags override file values.

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "structplan/autolabel.hpp"
#include "structplan/checkpoint.hpp"
#include "structplan/simworld.hpp"
#include "structplan/train.hpp"

namespace structplan {

struct CliConfig {
  std::size_t jobs = 1;
  SimConfig sim;
  LabelThresholds label;
  ModelConfig model;
  std::uint64_t train_seed = 0;
  std::array<StageConfig, 3> stages = {default_stage_config(StageKind::kMixPretrain),
                                       default_stage_config(StageKind::kDrivingFinetune),
                                       default_stage_config(StageKind::kPlanningFinetune)};
  E2ETrainConfig e2e;
  bool l2_cumulative = false;
};

namespace config_detail {
template <class T>
void read(const nlohmann::json& obj, const char* key, T& dst, const std::string& section) {
  if (!obj.contains(key)) return;
  try {
    dst = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(section + "." + key + " has the wrong type");
  }
}

inline const nlohmann::json& section(const nlohmann::json& doc, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!doc.contains(key)) return empty;
  if (!doc[key].is_object()) throw ConfigError(std::string("config section '") + key + "' must be an object");
  return doc[key];
}
}  // namespace config_detail

inline CliConfig config_from_json_doc(const nlohmann::json& doc) {
  using config_detail::read;
  using config_detail::section;
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  CliConfig c;
  read(doc, "jobs", c.jobs, "config");

  const auto& sim = section(doc, "sim");
  read(sim, "seed", c.sim.seed, "sim");
  read(sim, "n_scenes", c.sim.n_scenes, "sim");
  read(sim, "max_agents", c.sim.max_agents, "sim");
  read(sim, "vru_fraction", c.sim.vru_fraction, "sim");
  read(sim, "traffic_light_prob", c.sim.traffic_light_prob, "sim");
  read(sim, "maneuver_mix", c.sim.maneuver_mix, "sim");

  const auto& label = section(doc, "label");
  read(label, "tau_lat", c.label.tau_lat, "label");
  read(label, "dv_acc", c.label.dv_acc, "label");
  read(label, "dv_dec", c.label.dv_dec, "label");
  read(label, "v_stop", c.label.v_stop, "label");

  if (doc.contains("model")) {
    try {
      c.model = config_from_json(section(doc, "model"));
    } catch (const SchemaError& e) {
      throw ConfigError(e.what());
    }
  }

  const auto& train = section(doc, "train");
  read(train, "seed", c.train_seed, "train");
  for (auto& s : c.stages) s.seed = c.train_seed;
  c.e2e.seed = c.train_seed;
  if (train.contains("stages")) {
    if (!train["stages"].is_array()) throw ConfigError("train.stages must be an array");
    for (const auto& entry : train["stages"]) {
      StageConfig s = stage_config_from_json(entry, c.train_seed);
      c.stages[static_cast<std::size_t>(s.stage)] = s;
    }
  }
  if (train.contains("e2e")) c.e2e = e2e_config_from_json(train["e2e"], c.e2e);

  read(section(doc, "eval"), "l2_cumulative", c.l2_cumulative, "eval");
  return c;
}

inline CliConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return config_from_json_doc(nlohmann::json::parse(ss.str()));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace structplan
