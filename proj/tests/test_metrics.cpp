#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "oracles/sampling_oracle.hpp"
#include "structplan/geometry.hpp"
#include "structplan/evaluate.hpp"
#include "structplan/metrics.hpp"
#include "support.hpp"

using namespace structplan;

namespace {

MetaAction act(Lateral l, Longitudinal g = Longitudinal::kKeep) { return {l, g}; }

nlohmann::json fixture() {
  std::ifstream in(std::string(STRUCTPLAN_FIXTURES) + "/caption_fixture.json");
  return nlohmann::json::parse(in);
}

}  // namespace

TEST(JointAccuracy, Definition) {
  const std::vector<MetaAction> g = {act(Lateral::kLeft), act(Lateral::kStraight, Longitudinal::kStop),
                                     act(Lateral::kRight)};
  EXPECT_EQ(joint_accuracy(g, g), 1.0);
  std::vector<MetaAction> p = g;
  p[2].longitudinal = Longitudinal::kAccelerate;  // lateral still right
  EXPECT_NEAR(joint_accuracy(p, g), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(marginal_accuracy(p, g, Axis::kLateral), 1.0);
}

TEST(JointAccuracy, ArityErrors) {
  const std::vector<MetaAction> a(3), b(2), none;
  EXPECT_THROW(joint_accuracy(a, b), ArityError);
  EXPECT_THROW(joint_accuracy(none, none), ArityError);
}

TEST(JointAccuracy, NeverAboveMarginals) {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<int> pick(0, 11);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<MetaAction> p, g;
    for (int i = 0; i < 20; ++i) {
      p.push_back(meta_action_from_index(pick(gen)));
      g.push_back(meta_action_from_index(pick(gen)));
    }
    const double j = joint_accuracy(p, g);
    EXPECT_LE(j, marginal_accuracy(p, g, Axis::kLateral));
    EXPECT_LE(j, marginal_accuracy(p, g, Axis::kLongitudinal));
  }
}

TEST(PerClassF1, HandCounted) {
  // preds [L, L, S], gts [L, S, S]: class Left has TP 1, FP 1, FN 0
  const std::vector<MetaAction> p = {act(Lateral::kLeft), act(Lateral::kLeft), act(Lateral::kStraight)};
  const std::vector<MetaAction> g = {act(Lateral::kLeft), act(Lateral::kStraight), act(Lateral::kStraight)};
  EXPECT_NEAR(per_class_f1(p, g, Lateral::kLeft), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(per_class_f1(p, g, Lateral::kStraight), 2.0 / 3.0, 1e-12);  // P 1, R 0.5
  EXPECT_EQ(per_class_f1(p, g, Lateral::kRight), 1.0);                     // absent everywhere
  EXPECT_EQ(per_class_f1(g, g, Lateral::kLeft), 1.0);
  EXPECT_EQ(per_class_f1(g, g, Longitudinal::kKeep), 1.0);
  const std::vector<MetaAction> miss = {act(Lateral::kRight), act(Lateral::kRight), act(Lateral::kRight)};
  EXPECT_EQ(per_class_f1(miss, g, Lateral::kLeft), 0.0);
}

TEST(Tokenize, LowercaseNoPunctuation) {
  EXPECT_EQ(tokenize("The Light, is RED."), (std::vector<std::string>{"the", "light", "is", "red"}));
}

TEST(Bleu, Identity) {
  const std::vector<std::string> r = {"the traffic light ahead is green"};
  EXPECT_NEAR(bleu4(r[0], r), 1.0, 1e-12);
}

TEST(Bleu, Disjoint) {
  const std::vector<std::string> r = {"alpha beta gamma delta"};
  EXPECT_LE(bleu4("one two three four", r), 1e-2);
}

TEST(Bleu, EmptyCandidate) {
  const std::vector<std::string> r = {"a b c"};
  EXPECT_EQ(bleu4("", r), 0.0);
  EXPECT_EQ(bleu4("...", r), 0.0);
}

TEST(Bleu, HandComputedShortCandidate) {
  // p1 = 3/3, p2 = 1/2, p3 and p4 floored at 1e-9; BP = exp(1 - 5/3)
  const double expect = std::exp(1.0 - 5.0 / 3.0) * std::pow(1.0 * 0.5 * 1e-9 * 1e-9, 0.25);
  const std::vector<std::string> r = {"the red car stops now"};
  EXPECT_NEAR(bleu4("the car stops", r), expect, 1e-15);
}

TEST(Cider, IdentityIsTen) {
  const std::vector<std::string> c = {"the road is empty", "a cyclist waits at the light", "traffic is busy today"};
  const std::vector<std::vector<std::string>> r = {{c[0]}, {c[1]}, {c[2]}};
  for (double s : cider_scores(c, r)) EXPECT_NEAR(s, 10.0, 1e-9);
  EXPECT_NEAR(cider(c, r), 10.0, 1e-9);
}

TEST(Cider, DisjointIsZero) {
  const std::vector<std::string> c = {"x y z", "p q r"};
  const std::vector<std::vector<std::string>> r = {{"a b c"}, {"d e f"}};
  EXPECT_EQ(cider(c, r), 0.0);
}

TEST(Cider, EmptyCorpus) {
  const std::vector<std::string> c;
  const std::vector<std::vector<std::string>> r;
  EXPECT_THROW(cider(c, r), ConfigError);
}

TEST(Meteor, IdenticalSixTokens) {
  EXPECT_NEAR(meteor_lite("a b c d e f", std::string_view("a b c d e f")), 1.0 - 0.5 / 216.0, 1e-12);
}

TEST(Meteor, NoCommonTokens) { EXPECT_EQ(meteor_lite("a b", std::string_view("c d")), 0.0); }

TEST(Meteor, SingleToken) { EXPECT_NEAR(meteor_lite("car", std::string_view("car")), 0.5, 1e-12); }

TEST(Meteor, PrefersFewerChunks) {
  // "the" could align to either occurrence; the contiguous choice gives one chunk
  const auto a = meteor_alignment(tokenize("the car"), tokenize("the bus the car"));
  EXPECT_EQ(a.matches, 2u);
  EXPECT_EQ(a.chunks, 1u);
}

TEST(CaptionFixture, MatchesOracle) {
  const auto fx = fixture();
  std::vector<std::string> cands;
  std::vector<std::vector<std::string>> refs;
  for (const auto& p : fx["pairs"]) {
    cands.push_back(p["candidate"].get<std::string>());
    refs.push_back(p["references"].get<std::vector<std::string>>());
  }
  ASSERT_EQ(cands.size(), 10u);
  const auto cid = cider_scores(cands, refs);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto& p = fx["pairs"][i];
    EXPECT_NEAR(bleu4(cands[i], refs[i]), p["bleu4"].get<double>(), 1e-6) << i;
    EXPECT_NEAR(cid[i], p["cider"].get<double>(), 1e-6) << i;
    EXPECT_NEAR(meteor_lite(cands[i], refs[i]), p["meteor_lite"].get<double>(), 1e-6) << i;
  }
  EXPECT_NEAR(cider(cands, refs), fx["cider_corpus_mean"].get<double>(), 1e-6);
}

TEST(L2, Horizons) {
  const Trajectory gt = testing_support::straight(8.0);
  EXPECT_EQ(l2_horizons(gt, gt), (Horizons{0, 0, 0, 0}));
  Trajectory off = gt;
  for (auto& w : off.waypoints) w.x += 1.0;
  const Horizons h = l2_horizons(off, gt);
  EXPECT_DOUBLE_EQ(h.h1, 1.0);
  EXPECT_DOUBLE_EQ(h.h2, 1.0);
  EXPECT_DOUBLE_EQ(h.h3, 1.0);
  EXPECT_DOUBLE_EQ(h.avg, 1.0);
  Trajectory short_one = gt;
  short_one.waypoints.pop_back();
  EXPECT_THROW(l2_horizons(short_one, gt), ArityError);
}

TEST(L2, AtStepAndCumulative) {
  const Trajectory gt = testing_support::straight(0.0);
  Trajectory p = gt;
  for (std::size_t k = 0; k < 6; ++k) p.waypoints[k].y = static_cast<double>(k + 1);
  const Horizons a = l2_horizons(p, gt);
  EXPECT_DOUBLE_EQ(a.h1, 2.0);
  EXPECT_DOUBLE_EQ(a.h2, 4.0);
  EXPECT_DOUBLE_EQ(a.h3, 6.0);
  EXPECT_DOUBLE_EQ(a.avg, 4.0);
  const Horizons c = l2_horizons(p, gt, true);
  EXPECT_DOUBLE_EQ(c.h1, 1.5);
  EXPECT_DOUBLE_EQ(c.h2, 2.5);
  EXPECT_DOUBLE_EQ(c.h3, 3.5);
}

TEST(L2, AverageIsMeanOfHorizons) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int i = 0; i < 100; ++i) {
    Trajectory a, b;
    for (int k = 0; k < 6; ++k) {
      a.waypoints.push_back({n(gen), n(gen)});
      b.waypoints.push_back({n(gen), n(gen)});
    }
    const Horizons h = l2_horizons(a, b);
    EXPECT_EQ(h.avg, (h.h1 + h.h2 + h.h3) / 3.0);
  }
}

Scene scene_with_agent(double x, double y) {
  Scene s;
  s.scene_id = "c";
  AgentState a;
  a.id = 1;
  a.x = x;
  a.y = y;
  for (int k = 0; k < 6; ++k) a.future.push_back({x, y});
  s.agents.push_back(a);
  s.ego_future = testing_support::straight(10.0);
  return s;
}

TEST(Collision, EmptyScenes) {
  Scene s;
  s.ego_future = testing_support::straight(10.0);
  const std::vector<Scene> scenes = {s, s};
  const std::vector<Trajectory> plans = {s.ego_future, s.ego_future};
  EXPECT_EQ(collision_rate(plans, scenes), (Horizons{0, 0, 0, 0}));
}

TEST(Collision, WaypointOnAgentAtStepTwo) {
  // plan waypoint 2 (1 s) sits on a parked car at (10, 0)
  const Scene hit = scene_with_agent(10.0, 0.0);
  const Scene clear = scene_with_agent(10.0, 20.0);
  const std::vector<Scene> scenes = {hit, clear};
  const std::vector<Trajectory> plans = {testing_support::straight(10.0), testing_support::straight(10.0)};
  EXPECT_EQ(first_collision_step(plans[0], hit), 1);
  EXPECT_EQ(first_collision_step(plans[1], clear), -1);
  const Horizons r = collision_rate(plans, scenes);
  EXPECT_EQ(r.h1, 0.5);
  EXPECT_EQ(r.h2, 0.5);
  EXPECT_EQ(r.h3, 0.5);
  EXPECT_EQ(r.avg, 0.5);
  const std::vector<Trajectory> one = {plans[0]};
  EXPECT_THROW(collision_rate(one, scenes), ArityError);
}

TEST(Collision, LateContactCountsOnlyFromItsHorizon) {
  const Scene s = scene_with_agent(25.0, 0.0);
  const std::vector<Scene> scenes = {s};
  const std::vector<Trajectory> plans = {testing_support::straight(8.0)};  // first contact at waypoint 6
  const Horizons r = collision_rate(plans, scenes);
  EXPECT_EQ(r.h1, 0.0);
  EXPECT_EQ(r.h2, 0.0);
  EXPECT_EQ(r.h3, 1.0);
}

TEST(Collision, SatMatchesSampling) {
  std::mt19937_64 gen(41);
  std::uniform_real_distribution<double> pos(-4.0, 4.0), ang(-3.2, 3.2), len(0.5, 5.0), wid(0.4, 2.2);
  int decided = 0, agree = 0;
  for (int i = 0; i < 1000; ++i) {
    const oracle::Box a{0.0, 0.0, ang(gen), len(gen), wid(gen)};
    const oracle::Box b{pos(gen), pos(gen), ang(gen), len(gen), wid(gen)};
    const bool inner = oracle::sampled_overlap(oracle::grown(a, -0.01), oracle::grown(b, -0.01));
    const bool outer = oracle::sampled_overlap(oracle::grown(a, 0.01), oracle::grown(b, 0.01));
    if (inner != outer) continue;  // within 1 cm of touching
    ++decided;
    const bool sat = boxes_overlap({{a.cx, a.cy}, a.heading, a.length, a.width}, {{b.cx, b.cy}, b.heading, b.length, b.width});
    agree += sat == inner;
  }
  EXPECT_GT(decided, 900);
  EXPECT_EQ(agree, decided);
}

TEST(Collision, PermutationInvariant) {
  auto scenes = testing_support::scenes(30, 19);
  std::vector<Trajectory> plans;
  for (std::size_t i = 0; i < scenes.size(); ++i) plans.push_back(testing_support::straight(4.0 + i % 9));
  const Horizons before = collision_rate(plans, scenes);
  std::reverse(scenes.begin(), scenes.end());
  std::reverse(plans.begin(), plans.end());
  EXPECT_EQ(collision_rate(plans, scenes), before);
}

TEST(Report, JsonRoundTripAndInvariants) {
  MetricsReport r;
  r.mode = "gt";
  r.n_samples = 3;
  r.joint_accuracy = 0.5;
  r.lateral_accuracy = 0.75;
  r.longitudinal_accuracy = 0.5;
  r.path_f1 = {{"left", 1.0}, {"straight", 0.5}, {"right", 0.25}};
  r.speed_f1 = {{"keep", 1.0}, {"accelerate", 0.0}, {"decelerate", 0.5}, {"stop", 1.0}};
  r.bleu4 = 0.3;
  r.cider = 2.0;
  r.meteor_lite = 0.6;
  r.l2 = {1, 2, 3, 2};
  r.collision = {0, 0.1, 0.2, 0.1};
  EXPECT_EQ(report_from_json(nlohmann::json::parse(report_to_string(r))), r);
  EXPECT_TRUE(check_report(r).empty());
  r.joint_accuracy = 0.9;
  EXPECT_FALSE(check_report(r).empty());
  EXPECT_THROW(report_from_json(nlohmann::json::parse(R"({"mode":"gt"})")), SchemaError);
}

TEST(Evaluate, ReportInvariantsOnUntrainedModel) {
  const auto scenes = testing_support::scenes(24, 61);
  const auto qas = testing_support::labels(scenes);
  const Model m = init_model({}, 1);
  for (auto c : kAllConditionings) {
    EvalOptions opt;
    opt.conditioning = c;
    const MetricsReport r = evaluate(m, m, scenes, qas, opt);
    EXPECT_EQ(r.mode, std::string(to_string(c)));
    EXPECT_EQ(r.n_samples, 24u);
    EXPECT_TRUE(check_report(r).empty());
    EXPECT_EQ(r.path_f1.size(), 3u);
    EXPECT_EQ(r.speed_f1.size(), 4u);
  }
}

TEST(Evaluate, JobsDoNotChangeReport) {
  const auto scenes = testing_support::scenes(12, 62);
  const auto qas = testing_support::labels(scenes);
  const Model m = init_model({}, 2);
  EvalOptions a, b;
  b.jobs = 3;
  EXPECT_EQ(report_to_string(evaluate(m, m, scenes, qas, a)), report_to_string(evaluate(m, m, scenes, qas, b)));
}

TEST(Evaluate, MissingLabels) {
  const auto scenes = testing_support::scenes(2, 63);
  const Model m = init_model({}, 2);
  EXPECT_THROW(evaluate(m, m, scenes, {}, {}), ConfigError);
}

TEST(Evaluate, SelfMatchIdentities) {
  const auto scenes = testing_support::scenes(50, 64);
  std::vector<MetaAction> gts;
  std::vector<Trajectory> plans;
  for (const auto& s : scenes) {
    gts.push_back(derive_meta_action(s.ego_future));
    plans.push_back(s.ego_future);
  }
  EXPECT_EQ(joint_accuracy(gts, gts), 1.0);
  for (auto c : kAllLaterals) EXPECT_EQ(per_class_f1(gts, gts, c), 1.0);
  for (auto c : kAllLongitudinals) EXPECT_EQ(per_class_f1(gts, gts, c), 1.0);
  for (std::size_t i = 0; i < scenes.size(); ++i) EXPECT_EQ(l2_horizons(plans[i], scenes[i].ego_future).avg, 0.0);
}
