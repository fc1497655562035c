#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "scoopgp/decide.hpp"
#include "scoopgp/gp.hpp"
#include "scoopgp/tasks.hpp"

namespace scoopgp::bench {

inline constexpr double kQueryFraction = 0.8;
inline constexpr int kTopCount = 5;

// One (method, model seed, task, shots) cell, averaged over trials.
struct MaeRow {
  std::string method;
  int model_seed = 0;
  int task_id = 0;
  int shots = 0;
  int trials = 0;
  double mae = 0.0;
  double top5_mae = 0.0;  // over the 5 largest-reward query samples
};

struct MaeSummary {
  double mae = 0.0;
  double top5_mae = 0.0;
  std::size_t cells = 0;
};

struct MaeReport {
  std::vector<MaeRow> rows;

  // Mean of the matching rows; cells == 0 when nothing matches.
  MaeSummary Aggregate(const std::string& method, int shots) const;
  std::vector<std::string> methods() const;  // in first-appearance order
  std::vector<int> shots() const;            // ascending

  void Append(const MaeReport& other);
  void Write(std::ostream& out) const;       // machine-readable rows
  void WriteTable(std::ostream& out) const;  // aligned aggregate table
  static MaeReport Read(std::istream& in, const std::string& source = "mae report");
};

struct QuerySplit {
  std::vector<Eigen::Index> query;    // 80% of the records
  std::vector<Eigen::Index> support;  // the rest, shuffled; k shots use the first k
};

// Depends on (seed, task_id, trial) only.
QuerySplit SampleQuerySplit(Eigen::Index records, int task_id, int trial, std::uint64_t seed);

// MAE and top-5 MAE of the deep mean alone on the same query sets
// EvalKshotMae draws, with the same arithmetic.
MaeReport EvalMeanOnlyMae(const gp::DeepGpModel& model, const std::string& method, int model_seed,
                          std::span<const tasks::TaskDataset> test, int trials, std::uint64_t seed);

// For each task and trial: 80% of the records form the query set, and the
// support for k shots is the first k of a shuffled remainder. Query sets
// depend on (seed, task, trial) only, so every model sees the same ones.
// Throws ArgumentError when k exceeds the remainder.
MaeReport EvalKshotMae(const gp::DeepGpModel& model, const std::string& method, int model_seed,
                       std::span<const tasks::TaskDataset> test, std::span<const int> shots, int trials,
                       std::uint64_t seed);

struct DeployRow {
  std::string method;
  int task_id = 0;
  int trial = 0;
  int model_seed = 0;
  double threshold = 0.0;
  int attempts = 0;
  bool success = false;
};

struct DeploySummary {
  double average_attempts = 0.0;
  int max_attempts = 0;
  double success_rate = 0.0;
  std::size_t trials = 0;
};

struct DeployReport {
  std::vector<DeployRow> rows;

  DeploySummary Aggregate(const std::string& method) const;
  std::vector<std::string> methods() const;
  // Attempts of the method, ordered by (task, trial).
  std::vector<int> Attempts(const std::string& method) const;

  void Write(std::ostream& out) const;
  void WriteTable(std::ostream& out) const;
  static DeployReport Read(std::istream& in, const std::string& source = "deploy report");
};

// A method under deployment: its scorer and one model per training seed.
// Trial t uses models[t % models.size()]; random and oracle need no models.
struct DeployMethod {
  std::string name;
  decide::ScorerConfig scorer;
  std::vector<gp::DeepGpModel> models;
};

struct DeploySettings {
  int budget = decide::kDefaultBudget;
  int trials = 10;
  std::uint64_t seed = 0;
  double threshold = 0.0;  // <= 0: 5th largest reward of each trial's dataset
};

// Each trial draws a fresh dataset of records_per_trial uniform scoops from
// the task, so trials differ in their candidate pools. Non-scoopable tasks
// are skipped.
DeployReport EvalSimulatedDeployment(std::span<const DeployMethod> methods, std::span<const tasks::TerrainTask> tasks,
                                     int records_per_trial, const DeploySettings& settings);

// Same protocol on fixed datasets; trials differ in model seed and the
// random scorer's stream only.
DeployReport EvalDatasetDeployment(std::span<const DeployMethod> methods, std::span<const tasks::TaskDataset> data,
                                   const DeploySettings& settings);

struct SignTestResult {
  int wins = 0;    // pairs where a < b
  int losses = 0;  // pairs where a > b
  int ties = 0;
  double p_value = 1.0;
};

// Paired one-sided sign test of "a tends to be smaller than b"; ties are
// dropped. p = P(Binomial(wins + losses, 1/2) >= wins).
SignTestResult SignTest(std::span<const int> a, std::span<const int> b);

}  // namespace scoopgp::bench
