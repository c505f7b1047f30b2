#pragma once

// Dataset-level evaluation: runs the planning stack on every scene and
// assembles a MetricsReport.

#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "structplan/autolabel.hpp"
#include "structplan/checkpoint.hpp"
#include "structplan/metrics.hpp"
#include "structplan/parallel.hpp"
#include "structplan/planner.hpp"

namespace structplan {

/// Source of the e_act vector fed to E2E-lite.
enum class Conditioning { kNone, kPredicted, kGroundTruth };

inline constexpr std::array kAllConditionings = {Conditioning::kNone, Conditioning::kPredicted,
                                                 Conditioning::kGroundTruth};

inline std::string_view to_string(Conditioning c) {
  switch (c) {
    case Conditioning::kNone: return "none";
    case Conditioning::kPredicted: return "predicted";
    case Conditioning::kGroundTruth: return "gt";
  }
  return "predicted";
}

struct EvalOptions {
  Conditioning conditioning = Conditioning::kPredicted;
  bool l2_cumulative = false;
  std::size_t jobs = 1;
};

/// Caption rendered from the VLM's own scene-attribute predictions.
inline std::string predicted_description(const VlmLogits& l) {
  SceneAttributes at;
  at.density = static_cast<Density>(argmax_lower(l.density));
  at.light = kAllTrafficLights[argmax_lower(l.light)];
  at.vru_count = static_cast<std::size_t>(std::max(0.0, std::round(l.vru_count)));
  return render_description(at, 0);
}

struct SceneEvaluation {
  MetaAction predicted;
  MetaAction ground_truth;
  Trajectory plan;
  std::string caption;
  std::vector<std::string> references;
};

/// Scores every scene. Ground-truth meta-actions and caption references are
/// taken from the plan and description QA records.
inline MetricsReport evaluate(const Model& vlm, const Model& e2e, const std::vector<Scene>& scenes,
                              const std::vector<QaRecord>& qas, const EvalOptions& opt = {}) {
  if (scenes.empty()) throw ConfigError("evaluation set is empty");
  require_finite(vlm.params, "vlm.");
  require_finite(e2e.params, "e2e.");
  std::unordered_map<std::string, std::pair<const QaRecord*, const QaRecord*>> labels;  // plan, description
  for (const auto& q : qas) {
    if (q.qa_type == QaType::kPlan) labels[q.scene_id].first = &q;
    if (q.qa_type == QaType::kDescription) labels[q.scene_id].second = &q;
  }
  std::vector<SceneEvaluation> rows(scenes.size());
  for (const auto& s : scenes) {
    auto it = labels.find(s.scene_id);
    if (it == labels.end() || !it->second.first || !it->second.second) {
      throw ConfigError("scene " + s.scene_id + " lacks plan or description QA records");
    }
  }
  parallel_for(scenes.size(), opt.jobs, [&](std::size_t i) {
    const Scene& s = scenes[i];
    const auto& [plan_qa, desc_qa] = labels.at(s.scene_id);
    SceneEvaluation& row = rows[i];
    auto gt = parse_meta_action(plan_qa->answer);
    auto attrs = parse_description(desc_qa->answer);
    if (!gt || !attrs) throw SchemaError("answer", "scene " + s.scene_id + " has an unparseable QA answer");
    row.ground_truth = *gt;
    row.references = {render_description(*attrs, 1), render_description(*attrs, 2)};

    Scene blind = s;
    blind.ego_future.waypoints.clear();
    for (auto& a : blind.agents) a.future.clear();
    const SceneInputs in = prepare_inputs(blind);
    const VlmLogits logits = vlm_forward_inputs(in, vlm);
    row.predicted = meta_action_from_logits(logits.lateral, logits.longitudinal);
    row.caption = predicted_description(logits);
    std::optional<MetaAction> cond;
    if (opt.conditioning == Conditioning::kPredicted) cond = row.predicted;
    if (opt.conditioning == Conditioning::kGroundTruth) cond = row.ground_truth;
    row.plan = e2e_plan_inputs(in, cond, e2e);
  });

  MetricsReport r;
  r.mode = std::string(to_string(opt.conditioning));
  r.n_samples = scenes.size();
  r.l2_cumulative = opt.l2_cumulative;
  std::vector<MetaAction> preds, gts;
  std::vector<Trajectory> plans;
  std::vector<std::string> captions;
  std::vector<std::vector<std::string>> refs;
  double bleu_sum = 0.0, meteor_sum = 0.0;
  Horizons l2_sum;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    preds.push_back(row.predicted);
    gts.push_back(row.ground_truth);
    plans.push_back(row.plan);
    captions.push_back(row.caption);
    refs.push_back(row.references);
    bleu_sum += bleu4(row.caption, row.references);
    meteor_sum += meteor_lite(row.caption, row.references);
    const Horizons h = l2_horizons(row.plan, scenes[i].ego_future, opt.l2_cumulative);
    l2_sum.h1 += h.h1;
    l2_sum.h2 += h.h2;
    l2_sum.h3 += h.h3;
  }
  const auto n = static_cast<double>(rows.size());
  r.joint_accuracy = joint_accuracy(preds, gts);
  r.lateral_accuracy = marginal_accuracy(preds, gts, Axis::kLateral);
  r.longitudinal_accuracy = marginal_accuracy(preds, gts, Axis::kLongitudinal);
  for (Lateral c : kAllLaterals) r.path_f1[std::string(to_lower(to_string(c)))] = per_class_f1(preds, gts, c);
  for (Longitudinal c : kAllLongitudinals) r.speed_f1[std::string(to_lower(to_string(c)))] = per_class_f1(preds, gts, c);
  r.bleu4 = bleu_sum / n;
  r.meteor_lite = meteor_sum / n;
  r.cider = cider(captions, refs);
  r.l2 = {l2_sum.h1 / n, l2_sum.h2 / n, l2_sum.h3 / n, 0.0};
  r.l2.avg = (r.l2.h1 + r.l2.h2 + r.l2.h3) / 3.0;
  r.collision = collision_rate(plans, scenes);
  return r;
}

inline std::string report_to_string(const MetricsReport& r) { return report_to_json(r).dump(2) + "\n"; }

inline void write_report(const MetricsReport& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write report '" + path + "'");
  out << report_to_string(r);
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace structplan
