#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "structplan/autolabel.hpp"
#include "structplan/simworld.hpp"

namespace testing_support {

namespace fs = std::filesystem;

/// Fresh scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("structplan_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path operator/(const std::string& name) const { return path_ / name; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<structplan::Scene> scenes(long long n, std::uint64_t seed) {
  structplan::SimConfig cfg;
  cfg.seed = seed;
  cfg.n_scenes = n;
  return structplan::generate_scenes(cfg);
}

inline std::vector<structplan::QaRecord> labels(const std::vector<structplan::Scene>& ss) {
  std::vector<structplan::QaRecord> out;
  for (const auto& s : ss)
    for (auto& q : structplan::label_scene(s)) out.push_back(q);
  return out;
}

inline structplan::Trajectory straight(double speed) {
  structplan::Trajectory t;
  for (int k = 1; k <= 6; ++k) t.waypoints.push_back({speed * 0.5 * k, 0.0});
  return t;
}

#ifdef STRUCTPLAN_CLI
/// Runs the CLI with `args` through the shell; stdout and stderr go to the
/// given files. Returns the exit status.
inline int run_cli(const std::string& args, const fs::path& out, const fs::path& err) {
  const std::string cmd = std::string("\"") + STRUCTPLAN_CLI + "\" " + args + " >" + out.string() + " 2>" + err.string();
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}
#endif

}  // namespace testing_support
