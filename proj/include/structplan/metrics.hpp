#pragma once

// Evaluation metrics: meta-action accuracy and per-class F1, caption metrics
// (BLEU-4, CIDEr, an exact-match METEOR variant), L2 displacement at 1/2/3 s
// and collision rate, plus the report structure and its JSON form.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "structplan/domain.hpp"
#include "structplan/errors.hpp"
#include "structplan/geometry.hpp"
#include "structplan/simworld.hpp"

namespace structplan {

// ---------------------------------------------------------------------------
// Meta-action metrics

enum class Axis { kLateral, kLongitudinal };

namespace metric_detail {
inline void require_pairs(std::size_t a, std::size_t b) {
  if (a != b) throw ArityError("prediction/ground-truth length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  if (a == 0) throw ArityError("no samples to score");
}
inline std::size_t class_of(const MetaAction& m, Axis axis) {
  return axis == Axis::kLateral ? static_cast<std::size_t>(m.lateral) : static_cast<std::size_t>(m.longitudinal);
}
}  // namespace metric_detail

inline double joint_accuracy(std::span<const MetaAction> preds, std::span<const MetaAction> gts) {
  metric_detail::require_pairs(preds.size(), gts.size());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == gts[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

inline double marginal_accuracy(std::span<const MetaAction> preds, std::span<const MetaAction> gts, Axis axis) {
  metric_detail::require_pairs(preds.size(), gts.size());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    hit += metric_detail::class_of(preds[i], axis) == metric_detail::class_of(gts[i], axis);
  }
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

/// One-vs-rest F1 for class index `cls` on the given axis. A class that is
/// neither predicted nor present scores 1.
inline double per_class_f1(std::span<const MetaAction> preds, std::span<const MetaAction> gts, std::size_t cls,
                           Axis axis) {
  metric_detail::require_pairs(preds.size(), gts.size());
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = metric_detail::class_of(preds[i], axis) == cls;
    const bool g = metric_detail::class_of(gts[i], axis) == cls;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  if (tp == 0) return (fp == 0 && fn == 0) ? 1.0 : 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

inline double per_class_f1(std::span<const MetaAction> preds, std::span<const MetaAction> gts, Lateral cls) {
  return per_class_f1(preds, gts, static_cast<std::size_t>(cls), Axis::kLateral);
}
inline double per_class_f1(std::span<const MetaAction> preds, std::span<const MetaAction> gts, Longitudinal cls) {
  return per_class_f1(preds, gts, static_cast<std::size_t>(cls), Axis::kLongitudinal);
}

// ---------------------------------------------------------------------------
// Caption metrics

/// Lowercase, drop punctuation, split on whitespace.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

using NgramCounts = std::map<std::vector<std::string>, double>;

inline NgramCounts ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                 toks.begin() + static_cast<std::ptrdiff_t>(i + n))] += 1.0;
  }
  return out;
}

inline constexpr double kBleuFloor = 1e-9;

/// Sentence BLEU-4 with clipped counts, uniform weights, precisions floored
/// at 1e-9 (including orders where the candidate has no n-grams), and the
/// brevity penalty against the closest reference length (shorter on ties).
inline double bleu4(std::string_view candidate, std::span<const std::string> references) {
  const auto cand = tokenize(candidate);
  if (cand.empty()) return 0.0;
  if (references.empty()) throw ArityError("bleu4 needs at least one reference");
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : references) refs.push_back(tokenize(r));

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const NgramCounts c = ngram_counts(cand, n);
    NgramCounts max_ref;
    for (const auto& r : refs) {
      for (const auto& [g, k] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], k);
    }
    double clipped = 0.0, total = 0.0;
    for (const auto& [g, k] : c) {
      total += k;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(k, it->second);
    }
    const double p = total > 0.0 ? clipped / total : 0.0;
    log_sum += 0.25 * std::log(std::max(p, kBleuFloor));
  }
  const auto c_len = static_cast<double>(cand.size());
  double r_len = static_cast<double>(refs[0].size());
  for (const auto& r : refs) {
    const auto len = static_cast<double>(r.size());
    const double d = std::abs(len - c_len), best = std::abs(r_len - c_len);
    if (d < best || (d == best && len < r_len)) r_len = len;
  }
  const double bp = std::min(1.0, std::exp(1.0 - r_len / c_len));
  return bp * std::exp(log_sum);
}

/// Corpus CIDEr: per n = 1..4, TF-IDF vectors with document frequency over
/// reference sets, cosine against each reference averaged, times 10, then
/// averaged over n. Returns one score per candidate.
inline std::vector<double> cider_scores(std::span<const std::string> candidates,
                                        std::span<const std::vector<std::string>> references) {
  if (candidates.size() != references.size()) {
    throw ArityError("cider: " + std::to_string(candidates.size()) + " candidates but " +
                     std::to_string(references.size()) + " reference sets");
  }
  if (candidates.empty()) throw ConfigError("cider: empty corpus");
  const std::size_t N = references.size();

  std::vector<std::array<NgramCounts, 4>> cand_counts(N);
  std::vector<std::vector<std::array<NgramCounts, 4>>> ref_counts(N);
  std::array<std::map<std::vector<std::string>, double>, 4> df;
  for (std::size_t i = 0; i < N; ++i) {
    const auto ct = tokenize(candidates[i]);
    for (std::size_t n = 0; n < 4; ++n) cand_counts[i][n] = ngram_counts(ct, n + 1);
    std::array<std::map<std::vector<std::string>, bool>, 4> seen;
    for (const auto& r : references[i]) {
      const auto rt = tokenize(r);
      auto& rc = ref_counts[i].emplace_back();
      for (std::size_t n = 0; n < 4; ++n) {
        rc[n] = ngram_counts(rt, n + 1);
        for (const auto& [g, k] : rc[n]) seen[n][g] = true;
      }
    }
    for (std::size_t n = 0; n < 4; ++n)
      for (const auto& [g, b] : seen[n]) df[n][g] += 1.0;
  }
  const double log_n = std::log(static_cast<double>(N));
  auto tfidf = [&](const NgramCounts& c, std::size_t n) {
    NgramCounts v;
    for (const auto& [g, k] : c) {
      auto it = df[n].find(g);
      const double d = it == df[n].end() ? 1.0 : std::max(1.0, it->second);
      v[g] = k * (log_n - std::log(d));
    }
    return v;
  };
  auto norm_of = [](const NgramCounts& v) {
    double s = 0.0;
    for (const auto& [g, x] : v) s += x * x;
    return std::sqrt(s);
  };

  std::vector<double> scores(N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    if (ref_counts[i].empty()) throw ConfigError("cider: candidate " + std::to_string(i) + " has no references");
    double total = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
      const NgramCounts vc = tfidf(cand_counts[i][n], n);
      const double nc = norm_of(vc);
      double sim_sum = 0.0;
      for (const auto& rc : ref_counts[i]) {
        const NgramCounts vr = tfidf(rc[n], n);
        const double nr = norm_of(vr);
        double dot = 0.0;
        for (const auto& [g, x] : vc) {
          auto it = vr.find(g);
          if (it != vr.end()) dot += x * it->second;
        }
        sim_sum += (nc > 0.0 && nr > 0.0) ? dot / (nc * nr) : 0.0;
      }
      total += 10.0 * sim_sum / static_cast<double>(ref_counts[i].size());
    }
    scores[i] = total / 4.0;
  }
  return scores;
}

inline double cider(std::span<const std::string> candidates, std::span<const std::vector<std::string>> references) {
  const auto s = cider_scores(candidates, references);
  double sum = 0.0;
  for (double v : s) sum += v;
  return sum / static_cast<double>(s.size());
}

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

/// Exact-match alignment with the most matches, and among those the fewest
/// chunks (maximal runs adjacent in both sentences).
inline MeteorAlignment meteor_alignment(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  std::map<std::string, std::size_t> cc, rc;
  for (const auto& w : cand) ++cc[w];
  for (const auto& w : ref) ++rc[w];
  std::size_t max_matches = 0;
  for (const auto& [w, k] : cc) {
    if (auto it = rc.find(w); it != rc.end()) max_matches += std::min(k, it->second);
  }
  MeteorAlignment best{max_matches, 0};
  if (max_matches == 0) return best;

  // Remaining matchable occurrences per word, to force maximal matchings.
  std::map<std::string, std::size_t> skippable;
  for (const auto& [w, k] : cc) {
    const auto it = rc.find(w);
    skippable[w] = it == rc.end() ? k : k - std::min(k, it->second);
  }
  std::vector<char> used(ref.size(), 0);
  std::size_t best_chunks = cand.size() + 1;
  // prev_ref: reference index matched by candidate position i-1, or npos.
  std::function<void(std::size_t, std::size_t, std::size_t)> dfs = [&](std::size_t i, std::size_t prev_ref,
                                                                         std::size_t chunks) {
    if (chunks >= best_chunks) return;
    if (i == cand.size()) {
      best_chunks = chunks;
      return;
    }
    const std::string& w = cand[i];
    // Continuing the current chunk first finds good bounds early.
    if (prev_ref != std::string::npos && prev_ref + 1 < ref.size() && !used[prev_ref + 1] && ref[prev_ref + 1] == w) {
      used[prev_ref + 1] = 1;
      dfs(i + 1, prev_ref + 1, chunks);
      used[prev_ref + 1] = 0;
    }
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (used[j] || ref[j] != w || (prev_ref != std::string::npos && j == prev_ref + 1)) continue;
      used[j] = 1;
      dfs(i + 1, j, chunks + 1);
      used[j] = 0;
    }
    if (skippable[w] > 0) {
      --skippable[w];
      dfs(i + 1, std::string::npos, chunks);
      ++skippable[w];
    }
  };
  dfs(0, std::string::npos, 0);
  best.chunks = best_chunks;
  return best;
}

/// F = 10PR / (R + 9P), penalty = 0.5 (chunks / matches)^3, score = F (1 - penalty).
inline double meteor_lite(std::string_view candidate, std::string_view reference) {
  const auto cand = tokenize(candidate);
  const auto ref = tokenize(reference);
  if (cand.empty() || ref.empty()) return 0.0;
  const MeteorAlignment a = meteor_alignment(cand, ref);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double f = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(a.chunks) / m;
  return f * (1.0 - 0.5 * frag * frag * frag);
}

/// Best score over several references.
inline double meteor_lite(std::string_view candidate, std::span<const std::string> references) {
  double best = 0.0;
  for (const auto& r : references) best = std::max(best, meteor_lite(candidate, r));
  return best;
}

// ---------------------------------------------------------------------------
// Trajectory metrics

struct Horizons {
  double h1 = 0.0;  // 1 s, waypoint 2
  double h2 = 0.0;  // 2 s, waypoint 4
  double h3 = 0.0;  // 3 s, waypoint 6
  double avg = 0.0;
  friend bool operator==(const Horizons&, const Horizons&) = default;
};

inline constexpr std::array<std::size_t, 3> kHorizonSteps = {1, 3, 5};  // 0-based waypoint indices

/// Displacement at waypoints 2, 4, 6. With `cumulative`, each horizon is the
/// mean displacement over all waypoints up to it instead.
inline Horizons l2_horizons(const Trajectory& pred, const Trajectory& gt, bool cumulative = false) {
  if (pred.waypoints.size() != kHorizon || gt.waypoints.size() != kHorizon) {
    throw ArityError("l2_horizons expects " + std::to_string(kHorizon) + " waypoints, got " +
                     std::to_string(pred.waypoints.size()) + " and " + std::to_string(gt.waypoints.size()));
  }
  std::array<double, kHorizon> d{};
  for (std::size_t k = 0; k < kHorizon; ++k) d[k] = norm(pred.waypoints[k] - gt.waypoints[k]);
  std::array<double, 3> v{};
  for (std::size_t h = 0; h < 3; ++h) {
    const std::size_t k = kHorizonSteps[h];
    if (cumulative) {
      double s = 0.0;
      for (std::size_t i = 0; i <= k; ++i) s += d[i];
      v[h] = s / static_cast<double>(k + 1);
    } else {
      v[h] = d[k];
    }
  }
  return {v[0], v[1], v[2], (v[0] + v[1] + v[2]) / 3.0};
}

/// First 0-based step at which the ego footprint overlaps an agent's future
/// footprint, or -1. Headings follow the polylines; agents keep their last
/// pose if their future is shorter than the plan.
inline int first_collision_step(const Trajectory& plan, const Scene& scene, double ego_length = kEgoLength,
                                double ego_width = kEgoWidth) {
  const auto ego_headings = polyline_headings({0.0, 0.0}, 0.0, plan.waypoints);
  std::vector<std::vector<double>> agent_headings;
  for (const auto& a : scene.agents) agent_headings.push_back(polyline_headings({a.x, a.y}, a.heading, a.future));
  for (std::size_t k = 0; k < plan.waypoints.size(); ++k) {
    const OrientedBox ego{plan.waypoints[k], ego_headings[k], ego_length, ego_width};
    for (std::size_t i = 0; i < scene.agents.size(); ++i) {
      const auto& a = scene.agents[i];
      Vec2 pos{a.x, a.y};
      double heading = a.heading;
      if (!a.future.empty()) {
        const std::size_t j = std::min(k, a.future.size() - 1);
        pos = a.future[j];
        heading = agent_headings[i][j];
      }
      if (boxes_overlap(ego, {pos, heading, a.length, a.width})) return static_cast<int>(k);
    }
  }
  return -1;
}

/// Fraction of scenes with an overlap at or before each horizon.
inline Horizons collision_rate(std::span<const Trajectory> plans, std::span<const Scene> scenes,
                               double ego_length = kEgoLength, double ego_width = kEgoWidth) {
  metric_detail::require_pairs(plans.size(), scenes.size());
  std::array<std::size_t, 3> hits{};
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const int k = first_collision_step(plans[i], scenes[i], ego_length, ego_width);
    if (k < 0) continue;
    for (std::size_t h = 0; h < 3; ++h) hits[h] += static_cast<std::size_t>(k) <= kHorizonSteps[h];
  }
  const auto n = static_cast<double>(plans.size());
  Horizons r{hits[0] / n, hits[1] / n, hits[2] / n, 0.0};
  r.avg = (r.h1 + r.h2 + r.h3) / 3.0;
  return r;
}

// ---------------------------------------------------------------------------
// Report

struct MetricsReport {
  std::string mode;
  std::size_t n_samples = 0;
  double joint_accuracy = 0.0;
  double lateral_accuracy = 0.0;
  double longitudinal_accuracy = 0.0;
  std::map<std::string, double> path_f1;
  std::map<std::string, double> speed_f1;
  double bleu4 = 0.0;
  double cider = 0.0;
  double meteor_lite = 0.0;
  Horizons l2;
  Horizons collision;
  bool l2_cumulative = false;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline nlohmann::json horizons_to_json(const Horizons& h) {
  return {{"1s", h.h1}, {"2s", h.h2}, {"3s", h.h3}, {"avg", h.avg}};
}

inline Horizons horizons_from_json(const nlohmann::json& j) {
  return {j.at("1s").get<double>(), j.at("2s").get<double>(), j.at("3s").get<double>(), j.at("avg").get<double>()};
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json j = nlohmann::json::object();
  j["mode"] = r.mode;
  j["n_samples"] = r.n_samples;
  j["joint_accuracy"] = r.joint_accuracy;
  j["lateral_accuracy"] = r.lateral_accuracy;
  j["longitudinal_accuracy"] = r.longitudinal_accuracy;
  j["path_f1"] = r.path_f1;
  j["speed_f1"] = r.speed_f1;
  j["bleu4"] = r.bleu4;
  j["cider"] = r.cider;
  j["meteor_lite"] = r.meteor_lite;
  j["l2"] = horizons_to_json(r.l2);
  j["l2_convention"] = r.l2_cumulative ? "cumulative" : "at_step";
  j["collision"] = horizons_to_json(r.collision);
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.mode = j.at("mode").get<std::string>();
    r.n_samples = j.at("n_samples").get<std::size_t>();
    r.joint_accuracy = j.at("joint_accuracy").get<double>();
    r.lateral_accuracy = j.at("lateral_accuracy").get<double>();
    r.longitudinal_accuracy = j.at("longitudinal_accuracy").get<double>();
    r.path_f1 = j.at("path_f1").get<std::map<std::string, double>>();
    r.speed_f1 = j.at("speed_f1").get<std::map<std::string, double>>();
    r.bleu4 = j.at("bleu4").get<double>();
    r.cider = j.at("cider").get<double>();
    r.meteor_lite = j.at("meteor_lite").get<double>();
    r.l2 = horizons_from_json(j.at("l2"));
    r.l2_cumulative = j.value("l2_convention", "at_step") == "cumulative";
    r.collision = horizons_from_json(j.at("collision"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("report", std::string("malformed metrics report: ") + e.what());
  }
}

/// Checks the report invariants; returns violations (empty when sound).
inline std::vector<std::string> check_report(const MetricsReport& r) {
  std::vector<std::string> bad;
  auto frac = [&](const std::string& name, double v) {
    if (!(v >= 0.0 && v <= 1.0)) bad.push_back(name + " outside [0, 1]");
  };
  frac("joint_accuracy", r.joint_accuracy);
  frac("lateral_accuracy", r.lateral_accuracy);
  frac("longitudinal_accuracy", r.longitudinal_accuracy);
  for (const auto& [k, v] : r.path_f1) frac("path_f1." + k, v);
  for (const auto& [k, v] : r.speed_f1) frac("speed_f1." + k, v);
  frac("bleu4", r.bleu4);
  frac("meteor_lite", r.meteor_lite);
  if (!(r.cider >= 0.0 && r.cider <= 10.0)) bad.push_back("cider outside [0, 10]");
  for (double v : {r.collision.h1, r.collision.h2, r.collision.h3, r.collision.avg}) frac("collision", v);
  for (double v : {r.l2.h1, r.l2.h2, r.l2.h3, r.l2.avg}) {
    if (!(v >= 0.0)) bad.push_back("l2 negative");
  }
  if (r.joint_accuracy > std::min(r.lateral_accuracy, r.longitudinal_accuracy)) {
    bad.push_back("joint_accuracy exceeds a marginal accuracy");
  }
  return bad;
}

}  // namespace structplan
