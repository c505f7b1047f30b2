// structplan: generate, label, train, evaluate and inspect.
//
// Exit codes: 0 success, 2 configuration error, 3 I/O or format error,
// 4 unknown scene id, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "structplan/autolabel.hpp"
#include "structplan/checkpoint.hpp"
#include "structplan/codec.hpp"
#include "structplan/config.hpp"
#include "structplan/evaluate.hpp"
#include "structplan/simworld.hpp"
#include "structplan/train.hpp"

namespace sp = structplan;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNotFound = 4;

sp::CliConfig base_config(const std::string& path) {
  return path.empty() ? sp::CliConfig{} : sp::load_config_file(path);
}

nlohmann::json summary_json(const sp::DatasetSummary& s) {
  nlohmann::json hist = nlohmann::json::object();
  for (std::size_t i = 0; i < sp::kNumMetaActions; ++i) {
    hist[sp::to_string(sp::meta_action_from_index(static_cast<long long>(i)))] = s.action_histogram[i];
  }
  return {{"count", s.count}, {"action_histogram", hist}};
}

// --- gen -------------------------------------------------------------------

struct GenArgs {
  long long n = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  std::size_t jobs = 1;
};

int cmd_gen(const GenArgs& a, const CLI::App& sub) {
  sp::CliConfig cfg = base_config(a.config);
  if (sub.count("--n")) cfg.sim.n_scenes = a.n;
  if (sub.count("--seed")) cfg.sim.seed = a.seed;
  if (sub.count("--jobs")) cfg.jobs = a.jobs;
  const auto summary = sp::generate_dataset(cfg.sim, a.out, cfg.jobs);
  std::cout << summary_json(summary).dump(2) << "\n";
  return 0;
}

// --- label -----------------------------------------------------------------

struct LabelArgs {
  std::string in, out, config;
  double tau_lat = 0.0, dv = 0.0, v_stop = 0.0;
};

int cmd_label(const LabelArgs& a, const CLI::App& sub) {
  sp::CliConfig cfg = base_config(a.config);
  if (sub.count("--tau-lat")) cfg.label.tau_lat = a.tau_lat;
  if (sub.count("--dv")) {
    cfg.label.dv_acc = a.dv;
    cfg.label.dv_dec = -a.dv;
  }
  if (sub.count("--v-stop")) cfg.label.v_stop = a.v_stop;
  const auto summary = sp::label_dataset(a.in, a.out, cfg.label);
  nlohmann::json j = nlohmann::json::object();
  std::size_t total = 0;
  for (sp::QaType t : sp::kAllQaTypes) {
    const std::string k(sp::to_string(t));
    j[k] = summary.records_per_type.at(k);
    total += summary.records_per_type.at(k);
  }
  std::cout << nlohmann::json{{"records", total}, {"per_type", j}}.dump(2) << "\n";
  return 0;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string scenes, qas, stages = "1,2,3", out, config, init;
  bool e2e = false;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
};

std::vector<sp::StageKind> parse_stage_list(const std::string& text) {
  std::vector<sp::StageKind> out;
  std::stringstream ss(text);
  std::string item;
  int last = 0;
  while (std::getline(ss, item, ',')) {
    if (item != "1" && item != "2" && item != "3") throw sp::ConfigError("invalid stage '" + item + "' in --stages");
    const int k = item[0] - '0';
    if (k <= last) throw sp::ConfigError("--stages must list distinct stages in increasing order");
    last = k;
    out.push_back(sp::kAllStages[static_cast<std::size_t>(k - 1)]);
  }
  if (out.empty()) throw sp::ConfigError("--stages is empty");
  return out;
}

int cmd_train(const TrainArgs& a, const CLI::App& sub) {
  sp::CliConfig cfg = base_config(a.config);
  if (sub.count("--jobs")) cfg.jobs = a.jobs;
  if (sub.count("--seed")) {
    for (auto& s : cfg.stages) s.seed = a.seed;
    cfg.e2e.seed = a.seed;
    cfg.train_seed = a.seed;
  }
  const auto kinds = parse_stage_list(a.stages);
  std::vector<sp::StageConfig> stages;
  for (auto k : kinds) stages.push_back(cfg.stages[static_cast<std::size_t>(k)]);

  const auto scenes = sp::read_scenes(a.scenes);
  const auto qas = sp::read_qas(a.qas);
  const sp::Model init = a.init.empty() ? sp::init_model(cfg.model, cfg.train_seed) : sp::load_checkpoint(a.init);

  std::filesystem::create_directories(a.out);
  const std::filesystem::path dir(a.out);
  const sp::TrainingSet data = sp::build_training_set(scenes, qas, cfg.jobs);
  const auto results = sp::run_three_stage(stages, init, data, cfg.jobs);
  nlohmann::json written = nlohmann::json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto path = dir / ("vlm_stage" + std::to_string(static_cast<int>(kinds[i]) + 1) + ".json");
    sp::save_checkpoint(results[i].model, path.string());
    written.push_back(path.string());
  }
  std::vector<sp::LossPoint> curve = results.back().curve;
  if (a.e2e) {
    const auto e2e = sp::train_e2e(results.back().model, scenes, cfg.e2e, cfg.jobs, &data.inputs);
    const auto path = dir / "e2e.json";
    sp::save_checkpoint(e2e.model, path.string());
    written.push_back(path.string());
    curve.insert(curve.end(), e2e.curve.begin(), e2e.curve.end());
  }
  const auto csv = dir / "loss.csv";
  sp::write_loss_csv(csv.string(), curve);
  nlohmann::json losses = nlohmann::json::array();
  for (const auto& p : curve) losses.push_back({{"stage", p.stage}, {"epoch", p.epoch}, {"loss", p.loss}});
  std::cout << nlohmann::json{{"checkpoints", written}, {"loss_csv", csv.string()}, {"loss", losses}}.dump(2)
            << "\n";
  return 0;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string vlm, e2e, scenes, qas, report, gt_actions = "predicted", config;
  bool l2_cumulative = false;
  std::size_t jobs = 1;
};

int cmd_eval(const EvalArgs& a, const CLI::App& sub) {
  sp::CliConfig cfg = base_config(a.config);
  if (sub.count("--jobs")) cfg.jobs = a.jobs;
  if (sub.count("--l2-cumulative")) cfg.l2_cumulative = a.l2_cumulative;
  std::vector<sp::Conditioning> modes;
  if (a.gt_actions == "all") {
    modes.assign(sp::kAllConditionings.begin(), sp::kAllConditionings.end());
  } else {
    for (auto c : sp::kAllConditionings) {
      if (sp::to_string(c) == a.gt_actions) modes.push_back(c);
    }
    if (modes.empty()) throw sp::ConfigError("--gt-actions must be none, predicted, gt or all");
  }
  const sp::Model vlm = sp::load_checkpoint(a.vlm);
  const sp::Model e2e = sp::load_checkpoint(a.e2e);
  const auto scenes = sp::read_scenes(a.scenes);
  const auto qas = sp::read_qas(a.qas);
  nlohmann::json all = nlohmann::json::object();
  for (auto mode : modes) {
    sp::EvalOptions opt;
    opt.conditioning = mode;
    opt.l2_cumulative = cfg.l2_cumulative;
    opt.jobs = cfg.jobs;
    const auto report = sp::evaluate(vlm, e2e, scenes, qas, opt);
    std::string path = a.report;
    if (modes.size() > 1) {
      const std::filesystem::path p(a.report);
      path = (p.parent_path() / (p.stem().string() + "." + std::string(sp::to_string(mode)) + p.extension().string()))
                 .string();
    }
    sp::write_report(report, path);
    all[std::string(sp::to_string(mode))] = sp::report_to_json(report);
  }
  std::cout << (modes.size() == 1 ? all.begin().value() : all).dump(2) << "\n";
  return 0;
}

// --- inspect ---------------------------------------------------------------

struct InspectArgs {
  std::string scenes, id;
};

/// Top-down sketch, x forward (up), y left (left). 3 m rows, 1.5 m columns.
std::string ascii_sketch(const sp::Scene& s) {
  constexpr int kRows = 21, kCols = 33;
  constexpr double x_top = 45.0, row_m = 3.0, col_m = 1.5;
  std::vector<std::string> grid(kRows, std::string(kCols, '.'));
  auto put = [&](double x, double y, char ch) {
    const int r = static_cast<int>(std::lround((x_top - x) / row_m));
    const int c = static_cast<int>(std::lround(kCols / 2 - y / col_m));
    if (r >= 0 && r < kRows && c >= 0 && c < kCols) grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = ch;
  };
  for (const auto& w : s.ego_future.waypoints) put(w.x, w.y, '*');
  if (s.traffic_light != sp::TrafficLight::kNone) put(sp::kTrafficLightPosition.x, sp::kTrafficLightPosition.y, 'L');
  for (const auto& a : s.agents) {
    put(a.x, a.y, a.cls == sp::AgentClass::kVehicle ? 'V' : a.cls == sp::AgentClass::kPedestrian ? 'P' : 'C');
  }
  put(0.0, 0.0, 'E');
  std::string out;
  for (const auto& row : grid) out += "  " + row + "\n";
  out += "  E ego, * ego future, V vehicle, P pedestrian, C cyclist, L traffic light\n";
  return out;
}

int cmd_inspect(const InspectArgs& a) {
  const auto scenes = sp::read_scenes(a.scenes);
  const sp::Scene* found = nullptr;
  for (const auto& s : scenes) {
    if (s.scene_id == a.id) found = &s;
  }
  if (!found) throw sp::NotFoundError("scene id '" + a.id + "' not found in " + a.scenes);
  const sp::Scene& s = *found;
  std::cout << "scene " << s.scene_id << "\n";
  std::cout << nlohmann::json::parse(sp::encode_record(s)).dump(2) << "\n";
  std::cout << "qa:\n";
  for (const auto& q : sp::label_scene(s)) std::cout << "  " << sp::to_string(q.qa_type) << ": " << q.answer << "\n";
  std::cout << "meta_action: " << sp::to_string(sp::derive_meta_action(s.ego_future)) << "\n";
  std::cout << "sketch:\n" << ascii_sketch(s);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured planning toolkit: synthetic scenes, auto-labels, training and evaluation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate synthetic scenes as JSONL");
  g->add_option("--n", gen.n, "Number of scenes");
  g->add_option("--seed", gen.seed, "Random seed");
  g->add_option("--out", gen.out, "Output JSONL path")->required();
  g->add_option("--config", gen.config, "JSON config file");
  g->add_option("--jobs", gen.jobs, "Worker threads");

  LabelArgs label;
  auto* l = app.add_subcommand("label", "Auto-label scenes into six QA records each");
  l->add_option("--in", label.in, "Scene JSONL")->required();
  l->add_option("--out", label.out, "QA JSONL output")->required();
  l->add_option("--tau-lat", label.tau_lat, "Lateral displacement threshold (m)");
  l->add_option("--dv", label.dv, "Speed-change threshold (m/s); decelerate uses -dv");
  l->add_option("--v-stop", label.v_stop, "Stop speed threshold (m/s)");
  l->add_option("--config", label.config, "JSON config file");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run training stages and optionally E2E training");
  t->add_option("--scenes", train.scenes, "Scene JSONL")->required();
  t->add_option("--qas", train.qas, "QA JSONL")->required();
  t->add_option("--stages", train.stages, "Comma-separated stage list, e.g. 1,2,3");
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_flag("--e2e", train.e2e, "Also train the trajectory model");
  t->add_option("--init", train.init, "Start from this checkpoint instead of a fresh model");
  t->add_option("--seed", train.seed, "Seed for initialization and batch order");
  t->add_option("--config", train.config, "JSON config file");
  t->add_option("--jobs", train.jobs, "Worker threads");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate checkpoints and write a metrics report");
  e->add_option("--vlm", ev.vlm, "VLM checkpoint")->required();
  e->add_option("--e2e", ev.e2e, "E2E checkpoint")->required();
  e->add_option("--scenes", ev.scenes, "Scene JSONL")->required();
  e->add_option("--qas", ev.qas, "QA JSONL")->required();
  e->add_option("--report", ev.report, "Report JSON path")->required();
  e->add_option("--gt-actions", ev.gt_actions, "Conditioning: none, predicted, gt or all");
  e->add_flag("--l2-cumulative", ev.l2_cumulative, "Average L2 over all waypoints up to each horizon");
  e->add_option("--config", ev.config, "JSON config file");
  e->add_option("--jobs", ev.jobs, "Worker threads");

  InspectArgs ins;
  auto* i = app.add_subcommand("inspect", "Print one scene with its labels and a sketch");
  i->add_option("--scenes", ins.scenes, "Scene JSONL")->required();
  i->add_option("--id", ins.id, "Scene id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*g) return cmd_gen(gen, *g);
    if (*l) return cmd_label(label, *l);
    if (*t) return cmd_train(train, *t);
    if (*e) return cmd_eval(ev, *e);
    if (*i) return cmd_inspect(ins);
  } catch (const sp::ConfigError& err) {
    std::cerr << "configuration error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const sp::NotFoundError& err) {
    std::cerr << "not found: " << err.what() << "\n";
    return kExitNotFound;
  } catch (const sp::IoError& err) {
    std::cerr << "i/o error: " << err.what() << "\n";
    return kExitIo;
  } catch (const sp::ParseError& err) {
    std::cerr << "parse error: " << err.what() << "\n";
    return kExitIo;
  } catch (const sp::SchemaError& err) {
    std::cerr << "schema error: " << err.what() << "\n";
    return kExitIo;
  } catch (const sp::SerializationError& err) {
    std::cerr << "serialization error: " << err.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "i/o error: " << err.what() << "\n";
    return kExitIo;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
