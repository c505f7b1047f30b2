#pragma once

// The two-model planning stack.
//
// VLM-lite reads the six rasterized views through its own adapter, appends a
// navigation text token, runs a small pre-LN transformer trunk and classifies
// the mean-pooled state into lateral and longitudinal meta-actions (plus
// auxiliary and probe heads used while pre-training).
//
// E2E-lite encodes the scene with an independent adapter and lets K learned
// planning tokens cross-attend over [scene tokens; e_nav; e_act], where e_act
// is a row of the meta-action embedding table. A linear head turns the
// planning tokens into T x 2 waypoints.

#include <algorithm>
#include <array>
#include <atomic>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "structplan/domain.hpp"
#include "structplan/nn.hpp"
#include "structplan/raster.hpp"
#include "structplan/vision_adapter.hpp"

namespace structplan {

struct ModelConfig {
  AdapterConfig adapter;
  std::size_t trunk_layers = 2;
  std::size_t ffn_hidden = 128;
  std::size_t planning_tokens = 4;
  std::size_t decoder_layers = 2;
  double waypoint_scale = 5.0;

  std::size_t width() const { return adapter.channels; }
  std::size_t sequence_length() const { return kNumViews * (1 + adapter.m_img) + 1; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void validate_model_config(const ModelConfig& c) {
  validate_adapter_config(c.adapter);
  if (c.trunk_layers == 0 || c.decoder_layers == 0) throw ConfigError("model needs at least one trunk and decoder layer");
  if (c.ffn_hidden == 0 || c.planning_tokens == 0) throw ConfigError("ffn_hidden and planning_tokens must be positive");
  if (!(c.waypoint_scale > 0.0)) throw ConfigError("waypoint_scale must be positive");
}

/// Parameter set for both models and the meta-action embedding table, keyed
/// "vlm.*", "e2e.*" and "emb.e_act".
struct Model {
  ModelConfig config;
  ParamStore params;
};

inline constexpr std::size_t kDensityClasses = 3;
inline constexpr std::size_t kLightClasses = 4;

inline std::string trunk_prefix(std::size_t l) { return "vlm.trunk." + std::to_string(l); }
inline std::string decoder_prefix(std::size_t l) { return "e2e.decoder." + std::to_string(l); }

inline Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate_model_config(cfg);
  Model m;
  m.config = cfg;
  auto& ps = m.params;
  const std::size_t C = cfg.width();
  Rng rng(seed, 0x5EED);

  init_adapter(ps, "vlm.adapter", cfg.adapter, rng);
  ps["vlm.nav_embed"] = normal_tensor(3, C, 1.0, rng);
  ps["vlm.trunk.pos"] = normal_tensor(cfg.sequence_length(), C, 0.1, rng);
  for (std::size_t l = 0; l < cfg.trunk_layers; ++l) {
    const std::string p = trunk_prefix(l);
    init_layer_norm(ps, p + ".ln1", C);
    init_attention(ps, p + ".attn", C, rng);
    init_layer_norm(ps, p + ".ln2", C);
    init_feed_forward(ps, p + ".ffn", C, cfg.ffn_hidden, rng);
  }
  init_layer_norm(ps, "vlm.trunk.ln_f", C);
  // Meta-action heads start at zero: an untrained model is indifferent
  // between actions instead of carrying an arbitrary random preference.
  ps["vlm.head.lateral.W"] = Tensor(C, kNumLaterals);
  ps["vlm.head.lateral.b"] = Tensor(1, kNumLaterals);
  ps["vlm.head.longitudinal.W"] = Tensor(C, kNumLongitudinals);
  ps["vlm.head.longitudinal.b"] = Tensor(1, kNumLongitudinals);
  init_dense(ps, "vlm.aux.light", C, kLightClasses, rng);
  init_dense(ps, "vlm.aux.vru", C, 1, rng);
  init_dense(ps, "vlm.aux.motion", C, kNumMetaActions, rng);
  init_dense(ps, "vlm.probe.density", C, kDensityClasses, rng);
  init_dense(ps, "vlm.probe.light", C, kLightClasses, rng);
  init_dense(ps, "vlm.probe.recon", C, kVisChannels, rng);

  init_adapter(ps, "e2e.adapter", cfg.adapter, rng);
  ps["e2e.nav_embed"] = normal_tensor(3, C, 1.0, rng);
  ps["e2e.plan_queries"] = normal_tensor(cfg.planning_tokens, C, 1.0, rng);
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    const std::string p = decoder_prefix(l);
    init_layer_norm(ps, p + ".ln_q", C);
    init_layer_norm(ps, p + ".ln_m", C);
    init_attention(ps, p + ".attn", C, rng);
    init_layer_norm(ps, p + ".ln2", C);
    init_feed_forward(ps, p + ".ffn", C, cfg.ffn_hidden, rng);
  }
  init_dense(ps, "e2e.head", cfg.planning_tokens * C, 2 * kHorizon, rng, 0.5);
  ps["emb.e_act"] = normal_tensor(kNumMetaActions, C, 1.0, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Inputs

/// Everything a forward pass reads from a scene. Deliberately excludes the
/// ego future and agent futures.
struct SceneInputs {
  std::array<Tensor, kNumViews> grids;
  NavCommand nav = NavCommand::kStraight;
};

inline SceneInputs prepare_inputs(const Scene& scene) {
  SceneInputs in;
  const auto grids = rasterize_views(scene);
  for (std::size_t v = 0; v < kNumViews; ++v) in.grids[v] = grid_tensor(grids[v]);
  in.nav = scene.nav_command;
  return in;
}

// ---------------------------------------------------------------------------
// VLM-lite graph

/// Image tokens plus view tags plus the nav token, with positions added.
inline ad::Var vlm_sequence(Binder& b, const ModelConfig& cfg, const SceneInputs& in) {
  auto& t = b.tape();
  std::array<ad::Var, kNumViews> views;
  for (std::size_t v = 0; v < kNumViews; ++v) {
    views[v] = adapter_encode_view(b, "vlm.adapter", cfg.adapter, v, in.grids[v]).tokens;
  }
  const auto nav = static_cast<std::size_t>(in.nav);
  const ad::Var text = ad::slice_rows(t, b("vlm.nav_embed"), nav, nav + 1);
  const ad::Var seq = adapter_assemble(b, "vlm.adapter", views, text);
  const ad::Var pos = ad::slice_rows(t, b("vlm.trunk.pos"), 0, t.value(seq).rows);
  return ad::add(t, seq, pos);
}

/// Trunk over the sequence, final norm, mean pool: 1 x C.
inline ad::Var vlm_pooled(Binder& b, const ModelConfig& cfg, const SceneInputs& in) {
  auto& t = b.tape();
  ad::Var x = vlm_sequence(b, cfg, in);
  for (std::size_t l = 0; l < cfg.trunk_layers; ++l) {
    const std::string p = trunk_prefix(l);
    const ad::Var h = layer_norm(b, p + ".ln1", x);
    x = ad::add(t, x, attention(b, p + ".attn", h, h, cfg.adapter.heads));
    x = ad::add(t, x, feed_forward(b, p + ".ffn", layer_norm(b, p + ".ln2", x)));
  }
  return ad::mean_rows(t, layer_norm(b, "vlm.trunk.ln_f", x));
}

struct VlmLogits {
  std::vector<double> lateral;       // 3
  std::vector<double> longitudinal;  // 4
  std::vector<double> light;         // 4
  double vru_count = 0.0;
  std::vector<double> motion;   // 12
  std::vector<double> density;  // 3, from the pre-training probe

  friend bool operator==(const VlmLogits&, const VlmLogits&) = default;
};

inline void require_finite(const ParamStore& ps, std::string_view prefix) {
  for (const auto& [name, t] : ps) {
    if (name.starts_with(prefix) && !t.all_finite()) throw NumericError("parameter '" + name + "' is not finite");
  }
}

inline VlmLogits vlm_forward_inputs(const SceneInputs& in, const Model& m) {
  ad::Tape tape;
  Binder b(tape, m.params);
  const ad::Var pooled = vlm_pooled(b, m.config, in);
  auto head = [&](const char* name) { return tape.value(dense(b, name, pooled)).data; };
  VlmLogits out;
  out.lateral = head("vlm.head.lateral");
  out.longitudinal = head("vlm.head.longitudinal");
  out.light = head("vlm.aux.light");
  out.vru_count = head("vlm.aux.vru").at(0);
  out.motion = head("vlm.aux.motion");
  out.density = head("vlm.probe.density");
  return out;
}

inline VlmLogits vlm_forward(const Scene& scene, const Model& m) {
  require_finite(m.params, "vlm.");
  return vlm_forward_inputs(prepare_inputs(scene), m);
}

/// Index of the largest value; ties go to the lower index.
inline std::size_t argmax_lower(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline MetaAction meta_action_from_logits(std::span<const double> lateral, std::span<const double> longitudinal) {
  if (lateral.size() != kNumLaterals || longitudinal.size() != kNumLongitudinals) {
    throw ArityError("meta-action logits must have 3 lateral and 4 longitudinal entries");
  }
  return {kAllLaterals[argmax_lower(lateral)], kAllLongitudinals[argmax_lower(longitudinal)]};
}

namespace instrumentation {
/// Number of predict_meta_action invocations since process start.
inline std::atomic<long long> predict_meta_action_calls{0};
}  // namespace instrumentation

inline MetaAction predict_meta_action_inputs(const SceneInputs& in, const Model& m) {
  ++instrumentation::predict_meta_action_calls;
  const VlmLogits l = vlm_forward_inputs(in, m);
  return meta_action_from_logits(l.lateral, l.longitudinal);
}

inline MetaAction predict_meta_action(const Scene& scene, const Model& m) {
  return predict_meta_action_inputs(prepare_inputs(scene), m);
}

// ---------------------------------------------------------------------------
// Meta-action encoder and E2E-lite graph

inline Tensor encode_meta_action(MetaAction a, const Model& m) {
  const Tensor& e = m.params.at("emb.e_act");
  const std::size_t r = meta_action_index(a);
  return Tensor(1, e.cols, std::vector<double>(e.data.begin() + static_cast<std::ptrdiff_t>(r * e.cols),
                                               e.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * e.cols)));
}

/// Returns the T x 2 waypoint block. A missing action conditions on a zero
/// e_act vector.
inline ad::Var e2e_graph(Binder& b, const ModelConfig& cfg, const SceneInputs& in, std::optional<MetaAction> action) {
  auto& t = b.tape();
  const std::size_t C = cfg.width();
  std::array<ad::Var, kNumViews> views;
  for (std::size_t v = 0; v < kNumViews; ++v) {
    views[v] = adapter_encode_view(b, "e2e.adapter", cfg.adapter, v, in.grids[v]).tokens;
  }
  const auto nav = static_cast<std::size_t>(in.nav);
  const ad::Var e_nav = ad::slice_rows(t, b("e2e.nav_embed"), nav, nav + 1);
  ad::Var e_act;
  if (action) {
    const std::size_t r = meta_action_index(*action);
    e_act = ad::slice_rows(t, b("emb.e_act"), r, r + 1);
  } else {
    e_act = t.constant(Tensor(1, C));
  }
  const std::array<ad::Var, 2> cond = {e_nav, e_act};
  const ad::Var memory = adapter_assemble(b, "e2e.adapter", views, ad::concat_rows(t, cond));

  ad::Var q = b("e2e.plan_queries");
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    const std::string p = decoder_prefix(l);
    const ad::Var mem = layer_norm(b, p + ".ln_m", memory);
    q = ad::add(t, q, attention(b, p + ".attn", layer_norm(b, p + ".ln_q", q), mem, cfg.adapter.heads));
    q = ad::add(t, q, feed_forward(b, p + ".ffn", layer_norm(b, p + ".ln2", q)));
  }
  const ad::Var flat = ad::reshape(t, q, 1, cfg.planning_tokens * C);
  const ad::Var out = ad::scale(t, dense(b, "e2e.head", flat), cfg.waypoint_scale);
  return ad::reshape(t, out, kHorizon, 2);
}

inline Trajectory waypoints_from_tensor(const Tensor& w) {
  Trajectory traj;
  for (std::size_t k = 0; k < w.rows; ++k) traj.waypoints.push_back({w.at(k, 0), w.at(k, 1)});
  return traj;
}

inline Tensor tensor_from_waypoints(const Trajectory& traj) {
  Tensor w(traj.waypoints.size(), 2);
  for (std::size_t k = 0; k < traj.waypoints.size(); ++k) {
    w.at(k, 0) = traj.waypoints[k].x;
    w.at(k, 1) = traj.waypoints[k].y;
  }
  return w;
}

inline Trajectory e2e_plan_inputs(const SceneInputs& in, std::optional<MetaAction> action, const Model& m) {
  ad::Tape tape;
  Binder b(tape, m.params);
  return waypoints_from_tensor(tape.value(e2e_graph(b, m.config, in, action)));
}

inline Trajectory e2e_plan(const Scene& scene, std::optional<MetaAction> action, const Model& m) {
  return e2e_plan_inputs(prepare_inputs(scene), action, m);
}

struct InferResult {
  MetaAction action;
  Trajectory trajectory;
};

/// Full pipeline on a copy of the scene whose ego future (and every agent
/// future) has been erased.
/// `vlm` supplies vlm.* parameters and `e2e` supplies e2e.* and emb.*.
inline InferResult infer(const Scene& scene, const Model& vlm, const Model& e2e) {
  Scene blind = scene;
  blind.ego_future.waypoints.clear();
  for (auto& a : blind.agents) a.future.clear();
  const SceneInputs in = prepare_inputs(blind);
  InferResult r;
  r.action = predict_meta_action_inputs(in, vlm);
  r.trajectory = e2e_plan_inputs(in, r.action, e2e);
  return r;
}

}  // namespace structplan
