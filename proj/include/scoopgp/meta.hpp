#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scoopgp/gp.hpp"
#include "scoopgp/nnet.hpp"
#include "scoopgp/tasks.hpp"

namespace scoopgp::meta {

// Network shapes of the deep GP: a shared extractor feeding a scalar mean
// head and an embedding head for the RBF kernel.
struct Architecture {
  nnet::NetworkSpec feature;
  nnet::NetworkSpec mean_head;
  nnet::NetworkSpec kernel_head;

  // 13 -> [32 relu] -> 16; mean 16 -> [16 relu] -> 1; kernel 16 -> [16 tanh] -> 4.
  static Architecture Default(int input_dim = tasks::kModelInputDim);
};

// Which extractor the kernel head reads at deployment.
enum class KernelFeatureMode {
  kFinalExtractor,  // the extractor retrained on all data (shared with the mean)
  kOwnExtractor,    // a separate extractor copy trained together with the kernel
};

struct TrainingConfig {
  double mean_learning_rate = 5e-3;
  double kernel_learning_rate = 1e-2;
  int patience = 5;
  int max_epochs = 200;
  int batch_size = 32;
  double validation_fraction = 0.1;
  double noise_floor = 1e-3;  // lower clamp on the noise std (reward units)
  int folds = 4;
  KernelFeatureMode kernel_features = KernelFeatureMode::kFinalExtractor;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double validation_loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::string> warnings;

  // One line per epoch: "<tag> epoch=<e> loss=<l> val_loss=<v>".
  void Write(std::ostream& out, const std::string& tag) const;
};

// Tracks the best loss and reports when patience has run out.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  // Returns true when loss is a new best.
  bool Update(int epoch, double loss);
  bool ShouldStop() const { return since_best_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  int patience_;
  int since_best_ = 0;
  int best_epoch_ = -1;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

struct MeanFit {
  nnet::ParamVector feature_params;
  nnet::ParamVector mean_params;
  TrainingReport report;
};

// Deterministic starting points derived from the run seed. Every fold mean,
// the final mean and DKMT start from the same extractor weights.
nnet::ParamVector InitialFeatureParams(const Architecture& arch, std::uint64_t seed);
nnet::ParamVector InitialMeanParams(const Architecture& arch, std::uint64_t seed, double target_mean);
nnet::ParamVector InitialKernelParams(const Architecture& arch, std::uint64_t seed);

// Minimizes pooled MSE with Adam, holding out validation_fraction of the
// records for early stopping; returns the best-validation parameters.
MeanFit TrainMean(std::span<const tasks::TaskDataset> data, const Architecture& arch, const TrainingConfig& config,
                  std::uint64_t seed);

double MeanSquaredError(const Architecture& arch, const nnet::ParamVector& feature, const nnet::ParamVector& mean,
                        const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

struct FoldSplit {
  int fold = 0;
  std::vector<int> fold_materials;  // A_k
  std::vector<int> kernel_set;      // task ids containing any material of A_k
  std::vector<int> mean_set;        // all other task ids
};

class SplitStrategy {
 public:
  virtual ~SplitStrategy() = default;
  virtual std::vector<FoldSplit> Split(std::span<const tasks::TaskDataset> data, int folds, std::uint64_t seed) const = 0;
};

// Partitions the distinct materials into near-equal folds.
class MaterialSplit final : public SplitStrategy {
 public:
  std::vector<FoldSplit> Split(std::span<const tasks::TaskDataset> data, int folds, std::uint64_t seed) const override;
};

// Throws ArgumentError when folds exceeds the number of distinct materials.
std::vector<FoldSplit> MakeFoldSplits(std::span<const tasks::TaskDataset> data, int folds, std::uint64_t seed);

struct ResidualGroup {
  int task_id = 0;
  int fold = 0;
  Eigen::MatrixXd x;
  Eigen::VectorXd residual;
};

struct FoldCheckpoint {
  int fold = 0;
  std::uint64_t seed = 0;
  MeanFit fit;
  std::string name() const;  // "fold<k>-seed<s>"
};

struct ResidualDataset {
  std::vector<ResidualGroup> groups;
  std::vector<FoldCheckpoint> checkpoints;  // indexed by fold
};

// Trains one mean model per fold on its mean set (folds run in parallel) and
// collects that model's residuals on every task of the fold's kernel set.
ResidualDataset BuildResidualDataset(std::span<const FoldSplit> splits, std::span<const tasks::TaskDataset> data,
                                     const Architecture& arch, const TrainingConfig& config, std::uint64_t seed);

struct KernelFit {
  nnet::ParamVector kernel_params;
  std::optional<nnet::ParamVector> kernel_feature_params;  // kOwnExtractor only
  double log_lengthscale = 0.0;
  double log_outputscale = 0.0;
  double log_noise = 0.0;
  TrainingReport report;
};

// Zero-mean NLML over residual groups, one group per step, with the group's
// fold extractor loaded and frozen. Groups with fewer than 2 samples are
// skipped with a warning.
KernelFit TrainKernelCodega(std::span<const ResidualGroup> groups, std::span<const FoldCheckpoint> checkpoints,
                            const Architecture& arch, const TrainingConfig& config, std::uint64_t seed);

gp::DeepGpModel AssembleModel(const Architecture& arch, const MeanFit& mean, const KernelFit& kernel);

struct CodegaResult {
  gp::DeepGpModel model;
  std::vector<FoldSplit> splits;
  ResidualDataset residuals;
  KernelFit kernel;
  MeanFit final_mean;
};

CodegaResult TrainCodega(std::span<const tasks::TaskDataset> data, const Architecture& arch,
                         const TrainingConfig& config, std::uint64_t seed);

struct DkmtResult {
  gp::DeepGpModel model;
  TrainingReport report;
};

// Joint NLML training of extractor, mean and kernel, one task per step.
DkmtResult TrainDkmt(std::span<const tasks::TaskDataset> data, const Architecture& arch, const TrainingConfig& config,
                     std::uint64_t seed);

// Mean-only model (the non-adaptive baseline); kernel at its initial values.
gp::DeepGpModel TrainMeanOnly(std::span<const tasks::TaskDataset> data, const Architecture& arch,
                              const TrainingConfig& config, std::uint64_t seed, TrainingReport* report = nullptr);

}  // namespace scoopgp::meta
