#pragma once

// Three-stage VLM-lite training (mix pre-training, driving fine-tuning,
// planning fine-tuning) and teacher-forced E2E-lite training.
//
// Every stage runs minibatch Adam over per-sample tapes. Gradients of a
// batch are summed in sample order and then averaged, so the result is the
// same for any --jobs value. Parameters outside a stage's trainable set are
// bound as constants and never written.

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "structplan/autolabel.hpp"
#include "structplan/nn.hpp"
#include "structplan/parallel.hpp"
#include "structplan/planner.hpp"

namespace structplan {

enum class StageKind { kMixPretrain, kDrivingFinetune, kPlanningFinetune };

inline constexpr std::array kAllStages = {StageKind::kMixPretrain, StageKind::kDrivingFinetune,
                                          StageKind::kPlanningFinetune};

inline std::string_view to_string(StageKind s) {
  switch (s) {
    case StageKind::kMixPretrain: return "mix_pretrain";
    case StageKind::kDrivingFinetune: return "driving_finetune";
    case StageKind::kPlanningFinetune: return "planning_finetune";
  }
  return "mix_pretrain";
}

struct LossTerm {
  std::string name;
  double weight = 1.0;
  friend bool operator==(const LossTerm&, const LossTerm&) = default;
};

struct StageConfig {
  StageKind stage = StageKind::kMixPretrain;
  std::vector<std::string> trainable;  // parameter-name prefixes
  std::vector<LossTerm> losses;
  int epochs = 1;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

/// Loss names each stage understands.
inline std::vector<std::string> stage_loss_names(StageKind s) {
  switch (s) {
    case StageKind::kMixPretrain: return {"density_ce", "light_probe_ce", "recon_mse"};
    case StageKind::kDrivingFinetune: return {"light_ce", "vru_mse", "motion_ce"};
    case StageKind::kPlanningFinetune: return {"lateral_ce", "longitudinal_ce"};
  }
  return {};
}

inline StageConfig default_stage_config(StageKind s, std::uint64_t seed = 0) {
  StageConfig c;
  c.stage = s;
  c.seed = seed;
  switch (s) {
    case StageKind::kMixPretrain:
      c.trainable = {"vlm.adapter.", "vlm.probe."};
      c.losses = {{"density_ce", 1.0}, {"light_probe_ce", 1.0}, {"recon_mse", 1.0}};
      c.epochs = 10;
      break;
    case StageKind::kDrivingFinetune:
      c.trainable = {"vlm."};
      c.losses = {{"light_ce", 1.0}, {"vru_mse", 0.1}, {"motion_ce", 1.0}};
      c.epochs = 10;
      break;
    case StageKind::kPlanningFinetune:
      c.trainable = {"vlm."};
      c.losses = {{"lateral_ce", 1.0}, {"longitudinal_ce", 1.0}};
      c.epochs = 20;
      break;
  }
  return c;
}

inline void validate_stage_config(const StageConfig& c) {
  const std::string stage(to_string(c.stage));
  if (c.trainable.empty()) throw ConfigError(stage + ": trainable set is empty");
  for (const auto& p : c.trainable) {
    if (!p.starts_with("vlm.")) throw ConfigError(stage + ": trainable prefix '" + p + "' is outside vlm.*");
  }
  if (c.losses.empty()) throw ConfigError(stage + ": no loss terms");
  const auto known = stage_loss_names(c.stage);
  for (const auto& l : c.losses) {
    if (std::find(known.begin(), known.end(), l.name) == known.end()) {
      throw ConfigError(stage + ": unknown loss term '" + l.name + "'");
    }
    if (!(l.weight > 0.0) || !std::isfinite(l.weight)) {
      throw ConfigError(stage + ": loss weight for '" + l.name + "' must be > 0");
    }
  }
  if (c.epochs < 0) throw ConfigError(stage + ": epochs must be >= 0");
  if (c.batch_size == 0) throw ConfigError(stage + ": batch_size must be >= 1");
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw ConfigError(stage + ": lr must be > 0");
}

/// name -> frozen flag, covering every parameter in the store.
using FreezeMask = std::map<std::string, bool>;

inline FreezeMask make_freeze_mask(const ParamStore& ps, const std::vector<std::string>& trainable) {
  const auto is_trainable = prefix_predicate(trainable);
  FreezeMask mask;
  for (const auto& [name, t] : ps) mask[name] = !is_trainable(name);
  return mask;
}

// ---------------------------------------------------------------------------
// Training data

/// Per-scene supervision recovered from the QA records.
struct Targets {
  std::optional<MetaAction> plan;
  std::optional<std::size_t> light;
  std::optional<double> vru_count;
  std::optional<std::size_t> motion;  // nearest vehicle's meta-action index
  std::optional<std::size_t> density;
  Tensor recon;                       // 1 x C_vis mean patch features
};

struct TrainingSet {
  std::vector<SceneInputs> inputs;
  std::vector<Targets> targets;
};

inline Targets targets_from_qas(const std::vector<const QaRecord*>& qas) {
  Targets t;
  for (const QaRecord* q : qas) {
    const std::string_view a = q->answer;
    switch (q->qa_type) {
      case QaType::kDescription:
        if (auto at = parse_description(a)) t.density = static_cast<std::size_t>(at->density);
        break;
      case QaType::kTrafficLight:
        if (auto l = parse_enum(a, kAllTrafficLights)) t.light = static_cast<std::size_t>(*l);
        break;
      case QaType::kVru:
        t.vru_count = a == "none" ? 0.0 : 1.0 + static_cast<double>(std::count(a.begin(), a.end(), ';'));
        break;
      case QaType::kMotion:
        if (a != "none") {
          const auto colon = a.find(": ");
          const auto end = a.find(';');
          if (colon != std::string_view::npos) {
            const auto first = a.substr(colon + 2, end == std::string_view::npos ? a.npos : end - colon - 2);
            if (auto act = parse_meta_action(first)) t.motion = meta_action_index(*act);
          }
        }
        break;
      case QaType::kPlan:
        t.plan = parse_meta_action(a);
        break;
      case QaType::kExplanation:
        break;
    }
  }
  return t;
}

inline Tensor mean_patch_features(const SceneInputs& in) {
  Tensor out(1, kVisChannels);
  for (const auto& g : in.grids) {
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c) out.data[c] += g.at(r, c);
  }
  for (auto& v : out.data) v /= static_cast<double>(kNumViews * kPatches);
  return out;
}

/// Rasterizes every scene once and joins QA records by scene_id.
inline TrainingSet build_training_set(const std::vector<Scene>& scenes, const std::vector<QaRecord>& qas,
                                      std::size_t jobs = 1) {
  std::unordered_map<std::string, std::vector<const QaRecord*>> by_scene;
  for (const auto& q : qas) by_scene[q.scene_id].push_back(&q);
  TrainingSet ts;
  ts.inputs.resize(scenes.size());
  ts.targets.resize(scenes.size());
  parallel_for(scenes.size(), jobs, [&](std::size_t i) {
    ts.inputs[i] = prepare_inputs(scenes[i]);
    auto it = by_scene.find(scenes[i].scene_id);
    ts.targets[i] = it == by_scene.end() ? Targets{} : targets_from_qas(it->second);
    ts.targets[i].recon = mean_patch_features(ts.inputs[i]);
  });
  return ts;
}

// ---------------------------------------------------------------------------
// Losses

namespace train_detail {

inline double weight_of(const StageConfig& c, std::string_view name) {
  for (const auto& l : c.losses) {
    if (l.name == name) return l.weight;
  }
  return 0.0;
}

/// Whether the example carries any supervision the stage can use.
inline bool usable(const StageConfig& c, const Targets& t) {
  switch (c.stage) {
    case StageKind::kMixPretrain: return t.density.has_value() || t.light.has_value();
    case StageKind::kDrivingFinetune: return t.light.has_value() || t.vru_count.has_value() || t.motion.has_value();
    case StageKind::kPlanningFinetune: return t.plan.has_value();
  }
  return false;
}

inline void add_term(ad::Tape& t, std::optional<ad::Var>& total, ad::Var term, double w) {
  if (w <= 0.0) return;
  const ad::Var s = w == 1.0 ? term : ad::scale(t, term, w);
  total = total ? ad::add(t, *total, s) : s;
}

}  // namespace train_detail

/// Weighted per-sample loss for a stage. Stage 1 alternates by sample index
/// between attribute probes (even) and the feature-reconstruction pretext
/// (odd), a 1:1 mix.
inline std::optional<ad::Var> stage_sample_loss(Binder& b, const ModelConfig& mc, const StageConfig& c,
                                                const SceneInputs& in, const Targets& tg, std::size_t index) {
  using train_detail::add_term;
  using train_detail::weight_of;
  auto& t = b.tape();
  std::optional<ad::Var> total;
  const ad::Var pooled = vlm_pooled(b, mc, in);
  switch (c.stage) {
    case StageKind::kMixPretrain:
      if (index % 2 == 0) {
        if (tg.density) {
          add_term(t, total, ad::cross_entropy(t, dense(b, "vlm.probe.density", pooled), *tg.density),
                   weight_of(c, "density_ce"));
        }
        if (tg.light) {
          add_term(t, total, ad::cross_entropy(t, dense(b, "vlm.probe.light", pooled), *tg.light),
                   weight_of(c, "light_probe_ce"));
        }
      } else {
        add_term(t, total, ad::mse(t, dense(b, "vlm.probe.recon", pooled), tg.recon), weight_of(c, "recon_mse"));
      }
      break;
    case StageKind::kDrivingFinetune:
      if (tg.light) {
        add_term(t, total, ad::cross_entropy(t, dense(b, "vlm.aux.light", pooled), *tg.light),
                 weight_of(c, "light_ce"));
      }
      if (tg.vru_count) {
        add_term(t, total, ad::mse(t, dense(b, "vlm.aux.vru", pooled), Tensor(1, 1, *tg.vru_count)),
                 weight_of(c, "vru_mse"));
      }
      if (tg.motion) {
        add_term(t, total, ad::cross_entropy(t, dense(b, "vlm.aux.motion", pooled), *tg.motion),
                 weight_of(c, "motion_ce"));
      }
      break;
    case StageKind::kPlanningFinetune:
      if (tg.plan) {
        add_term(t, total,
                 ad::cross_entropy(t, dense(b, "vlm.head.lateral", pooled),
                                   static_cast<std::size_t>(tg.plan->lateral)),
                 weight_of(c, "lateral_ce"));
        add_term(t, total,
                 ad::cross_entropy(t, dense(b, "vlm.head.longitudinal", pooled),
                                   static_cast<std::size_t>(tg.plan->longitudinal)),
                 weight_of(c, "longitudinal_ce"));
      }
      break;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Generic minibatch loop

struct LossPoint {
  int epoch = 0;
  std::string stage;
  double loss = 0.0;
  friend bool operator==(const LossPoint&, const LossPoint&) = default;
};

struct StageResult {
  Model model;
  std::vector<LossPoint> curve;
};

namespace train_detail {

/// Seeded Fisher-Yates permutation of `items` for one epoch.
inline std::vector<std::size_t> epoch_order(std::vector<std::size_t> items, std::uint64_t seed, int epoch) {
  Rng rng(seed, 0xE90C000ULL + static_cast<std::uint64_t>(epoch));
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(i - 1)));
    std::swap(items[i - 1], items[j]);
  }
  return items;
}

using SampleLoss = std::function<std::optional<ad::Var>(Binder&, std::size_t example)>;

/// Runs `epochs` of minibatch Adam over `examples`; returns the mean sample
/// loss of each epoch.
inline std::vector<double> fit(ParamStore& params, const TrainablePredicate& trainable,
                               const std::vector<std::size_t>& examples, int epochs, std::size_t batch_size,
                               double lr, std::uint64_t seed, std::size_t jobs, const SampleLoss& loss) {
  AdamState adam;
  AdamConfig acfg;
  acfg.lr = lr;
  std::vector<double> curve;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const auto order = epoch_order(examples, seed, epoch);
    double epoch_loss = 0.0;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t n = std::min(batch_size, order.size() - start);
      std::vector<GradMap> grads(n);
      std::vector<double> losses(n, 0.0);
      std::vector<char> used(n, 0);
      parallel_for(n, jobs, [&](std::size_t k) {
        ad::Tape tape;
        Binder b(tape, params, trainable);
        const auto l = loss(b, order[start + k]);
        if (!l) return;
        const double v = tape.value(*l).data[0];
        if (!std::isfinite(v)) throw NumericError("training loss became non-finite");
        tape.backward(*l);
        b.accumulate_gradients(grads[k]);
        losses[k] = v;
        used[k] = 1;
      });
      GradMap total;
      std::size_t batch_used = 0;
      for (std::size_t k = 0; k < n; ++k) {
        if (!used[k]) continue;
        ++batch_used;
        epoch_loss += losses[k];
        ++counted;
        for (auto& [name, g] : grads[k]) {
          auto [it, inserted] = total.try_emplace(name, std::move(g));
          if (!inserted) {
            for (std::size_t i = 0; i < g.size(); ++i) it->second.data[i] += g.data[i];
          }
        }
      }
      if (batch_used == 0) continue;
      const double inv = 1.0 / static_cast<double>(batch_used);
      for (auto& [name, g] : total) {
        for (auto& v : g.data) v *= inv;
      }
      adam_step(params, total, adam, acfg);
    }
    curve.push_back(counted ? epoch_loss / static_cast<double>(counted) : 0.0);
  }
  return curve;
}

}  // namespace train_detail

/// One training stage over a prepared dataset.
inline StageResult run_stage(const StageConfig& cfg, const Model& checkpoint, const TrainingSet& data,
                             std::size_t jobs = 1) {
  validate_stage_config(cfg);
  const std::string stage(to_string(cfg.stage));
  if (data.inputs.empty()) throw ConfigError(stage + ": dataset is empty");
  for (const auto& [name, frozen] : make_freeze_mask(checkpoint.params, cfg.trainable)) {
    (void)frozen;
    if (!name.starts_with("vlm.") && !name.starts_with("e2e.") && !name.starts_with("emb.")) {
      throw ConfigError("checkpoint parameter '" + name + "' is outside the known namespaces");
    }
  }
  std::vector<std::size_t> examples;
  for (std::size_t i = 0; i < data.targets.size(); ++i) {
    if (train_detail::usable(cfg, data.targets[i])) examples.push_back(i);
  }
  if (examples.empty()) {
    throw ConfigError(stage + ": dataset has no QA records usable by this stage" +
                      (cfg.stage == StageKind::kPlanningFinetune ? " (no plan QAs)" : ""));
  }
  StageResult res;
  res.model = checkpoint;
  const auto trainable = prefix_predicate(cfg.trainable);
  const auto curve = train_detail::fit(
      res.model.params, trainable, examples, cfg.epochs, cfg.batch_size, cfg.lr, cfg.seed, jobs,
      [&](Binder& b, std::size_t i) {
        return stage_sample_loss(b, res.model.config, cfg, data.inputs[i], data.targets[i], i);
      });
  for (std::size_t e = 0; e < curve.size(); ++e) res.curve.push_back({static_cast<int>(e + 1), stage, curve[e]});
  return res;
}

inline StageResult run_stage(const StageConfig& cfg, const Model& checkpoint, const std::vector<Scene>& scenes,
                             const std::vector<QaRecord>& qas, std::size_t jobs = 1) {
  return run_stage(cfg, checkpoint, build_training_set(scenes, qas, jobs), jobs);
}

/// Runs the given stages in order. Element i of the result is the state after
/// stage i (its checkpoint plus the cumulative loss curve).
inline std::vector<StageResult> run_three_stage(const std::vector<StageConfig>& stages, const Model& init,
                                                const TrainingSet& data, std::size_t jobs = 1) {
  if (stages.empty()) throw ConfigError("no training stages selected");
  for (std::size_t i = 1; i < stages.size(); ++i) {
    if (static_cast<int>(stages[i].stage) <= static_cast<int>(stages[i - 1].stage)) {
      throw ConfigError("training stages must be distinct and in order");
    }
  }
  std::vector<StageResult> out;
  const Model* current = &init;
  std::vector<LossPoint> curve;
  for (const auto& cfg : stages) {
    StageResult r = run_stage(cfg, *current, data, jobs);
    curve.insert(curve.end(), r.curve.begin(), r.curve.end());
    r.curve = curve;
    out.push_back(std::move(r));
    current = &out.back().model;
  }
  return out;
}

// ---------------------------------------------------------------------------
// E2E-lite teacher forcing

struct E2ETrainConfig {
  int epochs = 20;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  LabelThresholds thresholds;
};

inline void validate_e2e_config(const E2ETrainConfig& c) {
  if (c.epochs < 0) throw ConfigError("e2e: epochs must be >= 0");
  if (c.batch_size == 0) throw ConfigError("e2e: batch_size must be >= 1");
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw ConfigError("e2e: lr must be > 0");
  validate_thresholds(c.thresholds);
}

/// Minimizes MSE(e2e_plan(scene, GT action), ego_future) over e2e.* and emb.*.
/// GT actions come from the auto-labeler; the VLM is never consulted.
inline StageResult train_e2e(const Model& checkpoint, const std::vector<Scene>& scenes, const E2ETrainConfig& cfg,
                             std::size_t jobs = 1, const std::vector<SceneInputs>* cached_inputs = nullptr) {
  validate_e2e_config(cfg);
  if (scenes.empty()) throw ConfigError("e2e: dataset is empty");
  std::vector<MetaAction> actions(scenes.size());
  std::vector<Tensor> futures(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (scenes[i].ego_future.waypoints.size() != kHorizon) {
      throw ConfigError("e2e: scene " + scenes[i].scene_id + " lacks a " + std::to_string(kHorizon) +
                        "-waypoint ego_future");
    }
    actions[i] = derive_meta_action(scenes[i].ego_future, cfg.thresholds);
    futures[i] = tensor_from_waypoints(scenes[i].ego_future);
  }
  std::vector<SceneInputs> local;
  if (!cached_inputs) {
    local.resize(scenes.size());
    parallel_for(scenes.size(), jobs, [&](std::size_t i) { local[i] = prepare_inputs(scenes[i]); });
    cached_inputs = &local;
  } else if (cached_inputs->size() != scenes.size()) {
    throw ArityError("e2e: cached inputs do not match the scene list");
  }
  std::vector<std::size_t> examples(scenes.size());
  std::iota(examples.begin(), examples.end(), std::size_t{0});

  StageResult res;
  res.model = checkpoint;
  const auto curve = train_detail::fit(
      res.model.params, prefix_predicate({"e2e.", "emb."}), examples, cfg.epochs, cfg.batch_size, cfg.lr,
      cfg.seed, jobs, [&](Binder& b, std::size_t i) -> std::optional<ad::Var> {
        const ad::Var w = e2e_graph(b, res.model.config, (*cached_inputs)[i], actions[i]);
        return ad::mse(b.tape(), w, futures[i]);
      });
  for (std::size_t e = 0; e < curve.size(); ++e) res.curve.push_back({static_cast<int>(e + 1), "e2e", curve[e]});
  return res;
}

// ---------------------------------------------------------------------------
// Config file and loss CSV

/// One stage entry, e.g. {"stage": "mix_pretrain", "epochs": 2, "lr": 0.001}.
/// Keys present override the defaults of the named stage.
inline StageConfig stage_config_from_json(const nlohmann::json& j, std::uint64_t default_seed = 0) {
  if (!j.is_object() || !j.contains("stage") || !j["stage"].is_string()) {
    throw ConfigError("stage entry needs a \"stage\" name");
  }
  const std::string name = j["stage"].get<std::string>();
  std::optional<StageKind> kind;
  for (StageKind s : kAllStages) {
    if (to_string(s) == name) kind = s;
  }
  if (!kind) throw ConfigError("unknown stage '" + name + "'");
  StageConfig c = default_stage_config(*kind, default_seed);
  try {
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("trainable")) c.trainable = j["trainable"].get<std::vector<std::string>>();
    if (j.contains("losses")) {
      c.losses.clear();
      for (const auto& l : j["losses"]) c.losses.push_back({l.at("name").get<std::string>(), l.value("weight", 1.0)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("stage '" + name + "': " + e.what());
  }
  validate_stage_config(c);
  return c;
}

inline E2ETrainConfig e2e_config_from_json(const nlohmann::json& j, E2ETrainConfig c = {}) {
  try {
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("e2e config: ") + e.what());
  }
  validate_e2e_config(c);
  return c;
}

inline std::string loss_csv(const std::vector<LossPoint>& curve) {
  std::string out = "epoch,stage,loss\n";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%.10g", p.loss);
    out += std::to_string(p.epoch) + "," + p.stage + "," + buf + "\n";
  }
  return out;
}

inline void write_loss_csv(const std::string& path, const std::vector<LossPoint>& curve) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write loss CSV '" + path + "'");
  out << loss_csv(curve);
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace structplan
