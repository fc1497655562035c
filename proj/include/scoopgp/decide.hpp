#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "scoopgp/gp.hpp"
#include "scoopgp/tasks.hpp"

namespace scoopgp::decide {

inline constexpr double kDefaultGamma = 2.0;
inline constexpr int kDefaultBudget = 20;

// Sub-threshold outcomes observed during one deployment, in execution order.
class SupportSet {
 public:
  SupportSet(int input_dim, double threshold);

  // Throws ArgumentError for a reward at or above the threshold or a wrong
  // feature width.
  void Append(std::span<const double> x, double reward);

  std::size_t size() const { return rewards_.size(); }
  bool empty() const { return rewards_.empty(); }
  double threshold() const { return threshold_; }
  const Eigen::MatrixXd& inputs() const { return x_; }
  Eigen::VectorXd rewards() const;

 private:
  double threshold_;
  Eigen::MatrixXd x_;
  std::vector<double> rewards_;
};

// m + gamma * sigma from the GP posterior given the support.
std::vector<double> ScoreUcb(const gp::DeepGpModel& model, const SupportSet& support, const gp::QueryCache& candidates,
                             double gamma);
std::vector<double> ScoreGreedy(const gp::DeepGpModel& model, const SupportSet& support,
                                const gp::QueryCache& candidates);
// Deep mean only; the support is never consulted.
std::vector<double> ScoreNonAdaptive(const gp::QueryCache& candidates);

// Argmax over feasible entries, lowest index on ties. Throws SelectionError
// when nothing is feasible.
std::size_t SelectAction(std::span<const double> scores, std::span<const char> feasible);

enum class ScorerKind { kUcb, kGreedy, kNonAdaptive, kRandom, kOracle };
std::string_view ToString(ScorerKind k);
ScorerKind ParseScorer(std::string_view s);

struct ScorerConfig {
  ScorerKind kind = ScorerKind::kUcb;
  double gamma = kDefaultGamma;
};

struct DeploymentSettings {
  ScorerConfig scorer;
  double threshold = 0.0;  // B
  int budget = kDefaultBudget;
  std::uint64_t seed = 0;
};

struct Episode {
  tasks::ScoopAction action;
  double score = 0.0;
  double reward = 0.0;
  std::size_t support_size = 0;  // after this episode
};

struct DeploymentTrace {
  int task_id = 0;
  double threshold = 0.0;
  std::vector<Episode> episodes;
  bool success = false;

  int attempts() const { return static_cast<int>(episodes.size()); }
  // Tab-separated, one episode per line, then a summary comment line.
  void Write(std::ostream& out) const;
};

// 5th largest reward of the dataset (the smallest one if there are fewer).
double DefaultThreshold(const tasks::TaskDataset& data);

// Chooses among the dataset's recorded actions and observes their recorded
// rewards; an executed action is removed from the pool. model may be null
// for the random and oracle scorers. Throws ArgumentError naming the task
// when no record reaches the threshold.
DeploymentTrace RunDatasetDeployment(const gp::DeepGpModel* model, const tasks::TaskDataset& data,
                                     const DeploymentSettings& settings);

// Chooses from the full action grid on a live terrain: features are
// recomputed after every scoop, which lowers the terrain by the removed
// volume. Drags leaving the tray are infeasible.
DeploymentTrace RunLiveDeployment(const gp::DeepGpModel* model, tasks::TerrainTask task,
                                  const DeploymentSettings& settings);

}  // namespace scoopgp::decide
