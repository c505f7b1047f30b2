#pragma once

// Checkpoint file: one JSON document
//   {"format_version": 1, "config": {...},
//    "params": {"<name>": {"shape": [rows, cols], "data": [...]}, ...}}
// Doubles are written in shortest round-trip form, so save/load is exact.

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "structplan/errors.hpp"
#include "structplan/planner.hpp"

namespace structplan {

inline constexpr int kCheckpointFormatVersion = 1;

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"channels", c.adapter.channels},       {"heads", c.adapter.heads},
          {"m_img", c.adapter.m_img},             {"trunk_layers", c.trunk_layers},
          {"ffn_hidden", c.ffn_hidden},           {"planning_tokens", c.planning_tokens},
          {"decoder_layers", c.decoder_layers},   {"waypoint_scale", c.waypoint_scale}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      dst = j.at(key).get<std::remove_reference_t<decltype(dst)>>();
    } catch (const nlohmann::json::exception&) {
      throw SchemaError(key, std::string("model config field '") + key + "' has the wrong type");
    }
  };
  get("channels", c.adapter.channels);
  get("heads", c.adapter.heads);
  get("m_img", c.adapter.m_img);
  get("trunk_layers", c.trunk_layers);
  get("ffn_hidden", c.ffn_hidden);
  get("planning_tokens", c.planning_tokens);
  get("decoder_layers", c.decoder_layers);
  get("waypoint_scale", c.waypoint_scale);
  validate_model_config(c);
  return c;
}

inline std::string checkpoint_to_string(const Model& m) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, t] : m.params) {
    if (!t.all_finite()) throw SerializationError("parameter '" + name + "' is not finite");
    params[name] = {{"shape", {t.rows, t.cols}}, {"data", t.data}};
  }
  nlohmann::json doc = {
      {"format_version", kCheckpointFormatVersion}, {"config", config_to_json(m.config)}, {"params", params}};
  return doc.dump() + "\n";
}

inline Model checkpoint_from_string(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("format_version") || !doc["format_version"].is_number_integer()) {
    throw SchemaError("format_version", "checkpoint lacks an integer format_version");
  }
  if (doc["format_version"].get<int>() != kCheckpointFormatVersion) {
    throw SchemaError("format_version", "unsupported checkpoint format_version " + doc["format_version"].dump());
  }
  if (!doc.contains("params") || !doc["params"].is_object()) {
    throw SchemaError("params", "checkpoint lacks a params object");
  }
  Model m;
  m.config = config_from_json(doc.value("config", nlohmann::json::object()));
  for (const auto& [name, entry] : doc["params"].items()) {
    try {
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      auto data = entry.at("data").get<std::vector<double>>();
      if (shape.size() != 2 || shape[0] * shape[1] != data.size()) {
        throw SchemaError(name, "parameter '" + name + "' shape does not match its data");
      }
      m.params.emplace(name, Tensor(shape[0], shape[1], std::move(data)));
    } catch (const nlohmann::json::exception&) {
      throw SchemaError(name, "parameter '" + name + "' is malformed");
    }
  }
  return m;
}

inline void save_checkpoint(const Model& m, const std::string& path) {
  const std::string text = checkpoint_to_string(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace structplan
