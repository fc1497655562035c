#include "scoopgp/decide.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>

#include "scoopgp/error.hpp"
#include "scoopgp/rng.hpp"

namespace scoopgp::decide {
namespace {

constexpr std::uint64_t kRandomScores = 0x726e64;
constexpr std::uint64_t kLiveNoise = 0x6c6976;

const gp::DeepGpModel& RequireModel(const gp::DeepGpModel* model, ScorerKind kind) {
  if (!model) throw ArgumentError("scorer '" + std::string(ToString(kind)) + "' needs a model");
  return *model;
}

// Scores for one episode. truth is consulted by the oracle scorer only.
std::vector<double> Score(const gp::DeepGpModel* model, const ScorerConfig& scorer, const SupportSet& support,
                          const gp::QueryCache& cache, const std::function<std::vector<double>()>& truth, Rng& rng) {
  switch (scorer.kind) {
    case ScorerKind::kUcb: return ScoreUcb(RequireModel(model, scorer.kind), support, cache, scorer.gamma);
    case ScorerKind::kGreedy: return ScoreGreedy(RequireModel(model, scorer.kind), support, cache);
    case ScorerKind::kNonAdaptive: return ScoreNonAdaptive(cache);
    case ScorerKind::kOracle: return truth();
    case ScorerKind::kRandom: {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::vector<double> s(static_cast<std::size_t>(cache.means.size()));
      for (double& v : s) v = u(rng);
      return s;
    }
  }
  throw ArgumentError("unknown scorer");
}

gp::QueryCache Prepare(const gp::DeepGpModel* model, const Eigen::MatrixXd& x) {
  if (model) return gp::PrepareQueries(*model, x);
  // Random and oracle scorers only need the candidate count.
  return {Eigen::MatrixXd(x.rows(), 0), Eigen::VectorXd::Zero(x.rows())};
}

void CheckSettings(const DeploymentSettings& s) {
  if (!(s.threshold > 0.0)) throw ArgumentError("threshold must be positive");
  if (s.budget < 1) throw ArgumentError("budget must be at least 1");
  if (s.scorer.gamma < 0.0) throw ArgumentError("gamma must be non-negative");
}

std::span<const double> Row(const Eigen::MatrixXd& m, Eigen::Index r, std::vector<double>& buffer) {
  buffer.assign(static_cast<std::size_t>(m.cols()), 0.0);
  for (Eigen::Index c = 0; c < m.cols(); ++c) buffer[static_cast<std::size_t>(c)] = m(r, c);
  return buffer;
}

}  // namespace

SupportSet::SupportSet(int input_dim, double threshold) : threshold_(threshold), x_(0, input_dim) {}

void SupportSet::Append(std::span<const double> x, double reward) {
  if (static_cast<Eigen::Index>(x.size()) != x_.cols()) throw ArgumentError("support feature width mismatch");
  if (reward >= threshold_) throw ArgumentError("support set only holds rewards below the threshold");
  x_.conservativeResize(x_.rows() + 1, Eigen::NoChange);
  x_.row(x_.rows() - 1) = Eigen::Map<const Eigen::RowVectorXd>(x.data(), x_.cols());
  rewards_.push_back(reward);
}

Eigen::VectorXd SupportSet::rewards() const {
  return Eigen::Map<const Eigen::VectorXd>(rewards_.data(), static_cast<Eigen::Index>(rewards_.size()));
}

std::vector<double> ScoreUcb(const gp::DeepGpModel& model, const SupportSet& support, const gp::QueryCache& candidates,
                             double gamma) {
  if (gamma < 0.0) throw ArgumentError("gamma must be non-negative");
  const std::vector<gp::PosteriorPrediction> post = gp::Posterior(model, support.inputs(), support.rewards(), candidates);
  std::vector<double> s(post.size());
  for (std::size_t i = 0; i < post.size(); ++i) s[i] = post[i].mean + gamma * std::sqrt(post[i].variance);
  return s;
}

std::vector<double> ScoreGreedy(const gp::DeepGpModel& model, const SupportSet& support,
                                const gp::QueryCache& candidates) {
  const std::vector<gp::PosteriorPrediction> post = gp::Posterior(model, support.inputs(), support.rewards(), candidates);
  std::vector<double> s(post.size());
  for (std::size_t i = 0; i < post.size(); ++i) s[i] = post[i].mean;
  return s;
}

std::vector<double> ScoreNonAdaptive(const gp::QueryCache& candidates) {
  return {candidates.means.data(), candidates.means.data() + candidates.means.size()};
}

std::size_t SelectAction(std::span<const double> scores, std::span<const char> feasible) {
  if (scores.size() != feasible.size()) throw ArgumentError("score and feasibility lengths differ");
  std::size_t best = scores.size();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (feasible[i] && (best == scores.size() || scores[i] > scores[best])) best = i;
  }
  if (best == scores.size()) throw SelectionError("no feasible candidate");
  return best;
}

std::string_view ToString(ScorerKind k) {
  switch (k) {
    case ScorerKind::kUcb: return "ucb";
    case ScorerKind::kGreedy: return "greedy";
    case ScorerKind::kNonAdaptive: return "non-adaptive";
    case ScorerKind::kRandom: return "random";
    case ScorerKind::kOracle: return "oracle";
  }
  return "?";
}

ScorerKind ParseScorer(std::string_view s) {
  for (ScorerKind k : {ScorerKind::kUcb, ScorerKind::kGreedy, ScorerKind::kNonAdaptive, ScorerKind::kRandom,
                       ScorerKind::kOracle}) {
    if (ToString(k) == s) return k;
  }
  throw ArgumentError("unknown scorer '" + std::string(s) + "'");
}

void DeploymentTrace::Write(std::ostream& out) const {
  out << "episode\tx\ty\tyaw_index\tdepth_m\tstiffness\tscore\treward_cm3\tsupport_size\n";
  char buf[256];
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const Episode& e = episodes[i];
    std::snprintf(buf, sizeof buf, "%zu\t%.8e\t%.8e\t%d\t%.8e\t%s\t%.9g\t%.9g\t%zu\n", i + 1, e.action.x, e.action.y,
                  e.action.yaw_index, e.action.depth, std::string(tasks::ToString(e.action.stiffness)).c_str(), e.score,
                  e.reward, e.support_size);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "# task=%d threshold=%.9g attempts=%d success=%d\n", task_id, threshold, attempts(),
                success ? 1 : 0);
  out << buf;
}

double DefaultThreshold(const tasks::TaskDataset& data) {
  if (data.records.empty()) throw ArgumentError("task " + std::to_string(data.task_id) + " has no records");
  std::vector<double> r;
  for (const auto& rec : data.records) r.push_back(rec.reward);
  std::sort(r.begin(), r.end(), std::greater<>());
  return r[std::min<std::size_t>(4, r.size() - 1)];
}

DeploymentTrace RunDatasetDeployment(const gp::DeepGpModel* model, const tasks::TaskDataset& data,
                                     const DeploymentSettings& settings) {
  CheckSettings(settings);
  const bool reachable = std::any_of(data.records.begin(), data.records.end(),
                                     [&](const tasks::ScoopRecord& r) { return r.reward >= settings.threshold; });
  if (!reachable) {
    throw ArgumentError("task " + std::to_string(data.task_id) + " has no reward at or above the threshold " +
                        std::to_string(settings.threshold));
  }
  const Eigen::MatrixXd x = data.InputMatrix();
  const gp::QueryCache cache = Prepare(model, x);
  const auto truth = [&] {
    std::vector<double> r;
    for (const auto& rec : data.records) r.push_back(rec.reward);
    return r;
  };
  std::vector<char> available(data.records.size(), 1);
  SupportSet support(static_cast<int>(x.cols()), settings.threshold);
  Rng rng = MakeRng(settings.seed, {kRandomScores});
  DeploymentTrace trace{data.task_id, settings.threshold, {}, false};
  std::vector<double> row;

  while (trace.attempts() < settings.budget && std::find(available.begin(), available.end(), 1) != available.end()) {
    const std::vector<double> scores = Score(model, settings.scorer, support, cache, truth, rng);
    const std::size_t pick = SelectAction(scores, available);
    available[pick] = 0;
    const tasks::ScoopRecord& rec = data.records[pick];
    if (rec.reward >= settings.threshold) {
      trace.episodes.push_back({rec.action, scores[pick], rec.reward, support.size()});
      trace.success = true;
      break;
    }
    support.Append(Row(x, static_cast<Eigen::Index>(pick), row), rec.reward);
    trace.episodes.push_back({rec.action, scores[pick], rec.reward, support.size()});
  }
  return trace;
}

DeploymentTrace RunLiveDeployment(const gp::DeepGpModel* model, tasks::TerrainTask task,
                                  const DeploymentSettings& settings) {
  CheckSettings(settings);
  const std::vector<tasks::ScoopAction> grid = tasks::EnumerateActionGrid();
  std::vector<char> feasible(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) feasible[i] = tasks::DragInBounds(grid[i]) ? 1 : 0;

  SupportSet support(tasks::kModelInputDim, settings.threshold);
  Rng rng = MakeRng(settings.seed, {kRandomScores});
  DeploymentTrace trace{task.id, settings.threshold, {}, false};
  std::vector<double> row;
  for (int episode = 0; episode < settings.budget; ++episode) {
    const Eigen::MatrixXd x = tasks::ModelInputBatch(task, grid);
    const gp::QueryCache cache = Prepare(model, x);
    const auto truth = [&] {
      std::vector<double> r(grid.size());
      for (std::size_t i = 0; i < grid.size(); ++i) r[i] = feasible[i] ? tasks::RewardOracle(task, grid[i], std::nullopt) : 0.0;
      return r;
    };
    const std::vector<double> scores = Score(model, settings.scorer, support, cache, truth, rng);
    const std::size_t pick = SelectAction(scores, feasible);
    const tasks::ScoopAction& action = grid[pick];
    const double reward = tasks::Quantize(tasks::RewardOracle(
        task, action, DeriveSeed(settings.seed, {kLiveNoise, static_cast<std::uint64_t>(episode)})));
    if (reward >= settings.threshold) {
      trace.episodes.push_back({action, scores[pick], reward, support.size()});
      trace.success = true;
      break;
    }
    support.Append(Row(x, static_cast<Eigen::Index>(pick), row), reward);
    trace.episodes.push_back({action, scores[pick], reward, support.size()});
    tasks::ApplyScoop(task, action, reward);
  }
  return trace;
}

}  // namespace scoopgp::decide
