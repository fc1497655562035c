#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "scoopgp/meta.hpp"
#include "scoopgp/tasks.hpp"

namespace scoopgp {

// Everything a pipeline run depends on besides the seed.
struct RunConfig {
  tasks::WorldConfig world;
  meta::TrainingConfig training;
  int model_seeds = 3;
  double gamma = 2.0;
  int budget = 20;
  std::vector<int> shots = {0, 5, 10};
  int mae_trials = 30;
  int deploy_trials = 10;
  std::string out_dir = "out";
  int threads = 0;  // 0: OpenMP default
};

// Flat "key = value" text; '#' starts a comment. Unknown keys and malformed
// values throw ConfigurationError naming the line.
RunConfig ParseConfig(std::istream& in, const std::string& source = "config");
RunConfig LoadConfig(const std::string& path);

// SCOOPGP_OUT_DIR and SCOOPGP_THREADS override out_dir and threads.
void ApplyEnvironment(RunConfig& config);

// Every key with its current value, preceded by a one-line description.
void WriteConfig(std::ostream& out, const RunConfig& config);

}  // namespace scoopgp
