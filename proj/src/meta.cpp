#include "scoopgp/meta.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>
#include <ostream>
#include <set>

#include "scoopgp/error.hpp"
#include "scoopgp/rng.hpp"

namespace scoopgp::meta {
namespace {

// Stream tags for DeriveSeed.
constexpr std::uint64_t kFeatureInit = 0x66656174;
constexpr std::uint64_t kMeanInit = 0x6d65616e;
constexpr std::uint64_t kKernelInit = 0x6b65726e;
constexpr std::uint64_t kValidation = 0x76616c;
constexpr std::uint64_t kShuffle = 0x73687566;
constexpr std::uint64_t kFolds = 0x666f6c64;
constexpr std::uint64_t kOrder = 0x6f726472;

const std::vector<nnet::LayerShape> kHyperLayout = {{0, 3, 1}};

struct Pooled {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

Pooled Pool(std::span<const tasks::TaskDataset> data) {
  std::size_t n = 0;
  for (const auto& t : data) n += t.records.size();
  Pooled p{Eigen::MatrixXd(static_cast<Eigen::Index>(n), tasks::kModelInputDim), Eigen::VectorXd(static_cast<Eigen::Index>(n))};
  Eigen::Index row = 0;
  for (const auto& t : data) {
    const Eigen::MatrixXd x = t.InputMatrix();
    p.x.middleRows(row, x.rows()) = x;
    p.y.segment(row, x.rows()) = t.Rewards();
    row += x.rows();
  }
  return p;
}

Eigen::MatrixXd Rows(const Eigen::MatrixXd& m, std::span<const Eigen::Index> idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

Eigen::VectorXd Entries(const Eigen::VectorXd& v, std::span<const Eigen::Index> idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(idx[i]);
  return out;
}

double Variance(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 1.0;
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

nnet::ParamVector HyperVector(double log_ls, double log_os, double log_noise) {
  return nnet::ParamVector(kHyperLayout, {log_ls, log_os, log_noise});
}

// Starting hyperparameters from the spread of the training targets.
nnet::ParamVector InitialHypers(double target_variance, double noise_floor) {
  const double var = std::max(target_variance, 1e-6);
  return HyperVector(0.0, std::log(var), std::log(std::max(noise_floor, 0.3 * std::sqrt(var))));
}

void ClampNoise(nnet::ParamVector& hypers, double noise_floor) {
  double& log_noise = hypers.values()[2];
  log_noise = std::max(log_noise, std::log(noise_floor));
}

nnet::ParamVector HyperGradient(const gp::NlmlResult& r) {
  return HyperVector(r.d_log_lengthscale, r.d_log_outputscale, r.d_log_noise);
}

gp::DeepGpModel SkeletonModel(const Architecture& arch) {
  gp::DeepGpModel m;
  m.feature_spec = arch.feature;
  m.mean_spec = arch.mean_head;
  m.kernel_spec = arch.kernel_head;
  return m;
}

void SetHypers(gp::DeepGpModel& m, const nnet::ParamVector& h) {
  m.log_lengthscale = h.values()[0];
  m.log_outputscale = h.values()[1];
  m.log_noise = h.values()[2];
}

}  // namespace

Architecture Architecture::Default(int input_dim) {
  Architecture a;
  a.feature = {input_dim, {{32, nnet::Activation::kRelu}}, 16, false};
  a.mean_head = {16, {{16, nnet::Activation::kRelu}}, 1, false};
  a.kernel_head = {16, {{16, nnet::Activation::kTanh}}, 4, false};
  return a;
}

void TrainingReport::Write(std::ostream& out, const std::string& tag) const {
  char buf[160];
  for (const EpochRecord& e : epochs) {
    std::snprintf(buf, sizeof buf, "%s epoch=%d loss=%.9g val_loss=%.9g\n", tag.c_str(), e.epoch, e.loss, e.validation_loss);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%s best_epoch=%d best_loss=%.9g\n", tag.c_str(), best_epoch, best_loss);
  out << buf;
  for (const std::string& w : warnings) out << tag << " warning=" << w << '\n';
}

bool EarlyStopping::Update(int epoch, double loss) {
  if (loss < best_loss_) {
    best_loss_ = loss;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

nnet::ParamVector InitialFeatureParams(const Architecture& arch, std::uint64_t seed) {
  return nnet::InitParams(arch.feature, DeriveSeed(seed, {kFeatureInit}));
}

nnet::ParamVector InitialMeanParams(const Architecture& arch, std::uint64_t seed, double target_mean) {
  nnet::ParamVector p = nnet::InitParams(arch.mean_head, DeriveSeed(seed, {kMeanInit}));
  // The output bias is the last entry of the layout.
  p.values()[p.size() - 1] = target_mean;
  return p;
}

nnet::ParamVector InitialKernelParams(const Architecture& arch, std::uint64_t seed) {
  return nnet::InitParams(arch.kernel_head, DeriveSeed(seed, {kKernelInit}));
}

double MeanSquaredError(const Architecture& arch, const nnet::ParamVector& feature, const nnet::ParamVector& mean,
                        const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  if (x.rows() == 0) return 0.0;
  const Eigen::VectorXd pred = nnet::ForwardBatch(arch.mean_head, mean, nnet::ForwardBatch(arch.feature, feature, x)).col(0);
  return (pred - y).squaredNorm() / static_cast<double>(y.size());
}

MeanFit TrainMean(std::span<const tasks::TaskDataset> data, const Architecture& arch, const TrainingConfig& config,
                  std::uint64_t seed) {
  const Pooled all = Pool(data);
  if (all.y.size() == 0) throw ArgumentError("train_mean needs at least one record");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(all.y.size()));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = MakeRng(seed, {kValidation});
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_val = all.y.size() >= 2
                         ? static_cast<std::size_t>(std::lround(config.validation_fraction * static_cast<double>(all.y.size())))
                         : std::size_t{0};
  const std::span<const Eigen::Index> val_idx(order.data(), n_val);
  std::vector<Eigen::Index> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  const Eigen::MatrixXd x_train = Rows(all.x, train_idx);
  const Eigen::VectorXd y_train = Entries(all.y, train_idx);
  const Eigen::MatrixXd x_val = Rows(all.x, val_idx);
  const Eigen::VectorXd y_val = Entries(all.y, val_idx);

  MeanFit fit;
  fit.feature_params = InitialFeatureParams(arch, seed);
  fit.mean_params = InitialMeanParams(arch, seed, y_train.mean());
  MeanFit best = fit;
  nnet::AdamState feature_state, mean_state;
  EarlyStopping stopper(config.patience);
  Rng shuffle_rng = MakeRng(seed, {kShuffle});
  const auto batch = static_cast<std::size_t>(std::max(1, config.batch_size));
  std::vector<std::size_t> perm(train_idx.size());
  std::iota(perm.begin(), perm.end(), 0);

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);
    for (std::size_t start = 0; start < perm.size(); start += batch) {
      const std::size_t end = std::min(perm.size(), start + batch);
      const auto b = static_cast<Eigen::Index>(end - start);
      Eigen::MatrixXd xb(b, x_train.cols());
      Eigen::VectorXd yb(b);
      for (Eigen::Index i = 0; i < b; ++i) {
        const auto src = static_cast<Eigen::Index>(perm[start + static_cast<std::size_t>(i)]);
        xb.row(i) = x_train.row(src);
        yb(i) = y_train(src);
      }
      const Eigen::MatrixXd h = nnet::ForwardBatch(arch.feature, fit.feature_params, xb);
      const Eigen::VectorXd pred = nnet::ForwardBatch(arch.mean_head, fit.mean_params, h).col(0);
      const Eigen::MatrixXd upstream = (2.0 / static_cast<double>(b)) * (pred - yb);
      const nnet::Gradients head = nnet::Backward(arch.mean_head, fit.mean_params, h, upstream);
      const nnet::Gradients body = nnet::Backward(arch.feature, fit.feature_params, xb, head.inputs);
      std::tie(fit.mean_params, mean_state) = nnet::AdamStep(fit.mean_params, head.params, std::move(mean_state),
                                                             config.mean_learning_rate);
      std::tie(fit.feature_params, feature_state) = nnet::AdamStep(fit.feature_params, body.params,
                                                                   std::move(feature_state), config.mean_learning_rate);
    }
    EpochRecord rec{epoch, MeanSquaredError(arch, fit.feature_params, fit.mean_params, x_train, y_train)};
    if (n_val > 0) rec.validation_loss = MeanSquaredError(arch, fit.feature_params, fit.mean_params, x_val, y_val);
    fit.report.epochs.push_back(rec);
    if (!std::isfinite(rec.loss)) throw NumericalError("train_mean diverged at epoch " + std::to_string(epoch));
    if (stopper.Update(epoch, n_val > 0 ? rec.validation_loss : rec.loss)) {
      best.feature_params = fit.feature_params;
      best.mean_params = fit.mean_params;
    }
    if (stopper.ShouldStop()) break;
  }
  best.report = std::move(fit.report);
  best.report.best_epoch = stopper.best_epoch();
  best.report.best_loss = stopper.best_loss();
  return best;
}

std::vector<FoldSplit> MaterialSplit::Split(std::span<const tasks::TaskDataset> data, int folds,
                                            std::uint64_t seed) const {
  std::set<int> distinct;
  for (const auto& t : data) distinct.insert(t.material_ids.begin(), t.material_ids.end());
  if (folds < 1) throw ArgumentError("fold count must be positive");
  if (static_cast<std::size_t>(folds) > distinct.size()) {
    throw ArgumentError("cannot split " + std::to_string(distinct.size()) + " materials into " + std::to_string(folds) +
                        " folds");
  }
  std::vector<int> materials(distinct.begin(), distinct.end());
  Rng rng = MakeRng(seed, {kFolds});
  std::shuffle(materials.begin(), materials.end(), rng);

  std::vector<FoldSplit> splits(static_cast<std::size_t>(folds));
  for (std::size_t i = 0; i < materials.size(); ++i) splits[i % splits.size()].fold_materials.push_back(materials[i]);
  for (std::size_t k = 0; k < splits.size(); ++k) {
    FoldSplit& s = splits[k];
    s.fold = static_cast<int>(k);
    std::sort(s.fold_materials.begin(), s.fold_materials.end());
    for (const auto& t : data) {
      const bool hit = std::any_of(t.material_ids.begin(), t.material_ids.end(), [&](int m) {
        return std::binary_search(s.fold_materials.begin(), s.fold_materials.end(), m);
      });
      (hit ? s.kernel_set : s.mean_set).push_back(t.task_id);
    }
  }
  return splits;
}

std::vector<FoldSplit> MakeFoldSplits(std::span<const tasks::TaskDataset> data, int folds, std::uint64_t seed) {
  return MaterialSplit().Split(data, folds, seed);
}

std::string FoldCheckpoint::name() const { return "fold" + std::to_string(fold) + "-seed" + std::to_string(seed); }

ResidualDataset BuildResidualDataset(std::span<const FoldSplit> splits, std::span<const tasks::TaskDataset> data,
                                     const Architecture& arch, const TrainingConfig& config, std::uint64_t seed) {
  auto subset = [&](const std::vector<int>& ids) {
    std::vector<tasks::TaskDataset> out;
    for (const auto& t : data) {
      if (std::find(ids.begin(), ids.end(), t.task_id) != ids.end()) out.push_back(t);
    }
    return out;
  };
  for (const FoldSplit& s : splits) {
    if (s.mean_set.empty()) {
      throw ConfigurationError("fold " + std::to_string(s.fold) +
                               " has an empty mean set; increase material diversity or reduce the fold count");
    }
  }

  ResidualDataset result;
  result.checkpoints.resize(splits.size());
  std::vector<std::exception_ptr> errors(splits.size());
  const auto n_folds = static_cast<std::ptrdiff_t>(splits.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t k = 0; k < n_folds; ++k) {
    try {
      const FoldSplit& s = splits[static_cast<std::size_t>(k)];
      const std::vector<tasks::TaskDataset> mean_data = subset(s.mean_set);
      result.checkpoints[static_cast<std::size_t>(k)] = {s.fold, seed, TrainMean(mean_data, arch, config, seed)};
    } catch (...) {
      errors[static_cast<std::size_t>(k)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  for (std::size_t k = 0; k < splits.size(); ++k) {
    const MeanFit& fit = result.checkpoints[k].fit;
    for (const tasks::TaskDataset& t : subset(splits[k].kernel_set)) {
      ResidualGroup g{t.task_id, splits[k].fold, t.InputMatrix(), t.Rewards()};
      g.residual -= nnet::ForwardBatch(arch.mean_head, fit.mean_params,
                                       nnet::ForwardBatch(arch.feature, fit.feature_params, g.x)).col(0);
      result.groups.push_back(std::move(g));
    }
  }
  return result;
}

KernelFit TrainKernelCodega(std::span<const ResidualGroup> groups, std::span<const FoldCheckpoint> checkpoints,
                            const Architecture& arch, const TrainingConfig& config, std::uint64_t seed) {
  if (groups.empty()) throw ArgumentError("kernel training needs a non-empty residual dataset");
  const bool own_extractor = config.kernel_features == KernelFeatureMode::kOwnExtractor;

  KernelFit fit;
  std::vector<std::size_t> usable;
  std::vector<double> pooled;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const ResidualGroup& g = groups[i];
    if (g.residual.size() < 2) {
      fit.report.warnings.push_back("skipped task " + std::to_string(g.task_id) + " fold " + std::to_string(g.fold) +
                                    ": fewer than 2 residuals");
      continue;
    }
    if (!own_extractor) {
      auto it = std::find_if(checkpoints.begin(), checkpoints.end(), [&](const FoldCheckpoint& c) { return c.fold == g.fold; });
      if (it == checkpoints.end()) throw ArgumentError("no checkpoint for fold " + std::to_string(g.fold));
    }
    usable.push_back(i);
    pooled.insert(pooled.end(), g.residual.data(), g.residual.data() + g.residual.size());
  }
  if (usable.empty()) throw ArgumentError("every residual group has fewer than 2 samples");

  nnet::ParamVector kernel = InitialKernelParams(arch, seed);
  nnet::ParamVector hypers =
      InitialHypers(Variance(Eigen::Map<const Eigen::VectorXd>(pooled.data(), static_cast<Eigen::Index>(pooled.size()))),
                    config.noise_floor);
  nnet::ParamVector own_features = own_extractor ? InitialFeatureParams(arch, seed) : nnet::ParamVector();
  nnet::AdamState kernel_state, hyper_state, feature_state;
  KernelFit best{kernel, std::nullopt, 0, 0, 0, {}};
  nnet::ParamVector best_hypers = hypers, best_features = own_features;

  gp::DeepGpModel work = SkeletonModel(arch);
  work.mean_params = nnet::ParamVector::Zeros(arch.mean_head);
  gp::NlmlRequest request;
  request.mean_source = gp::MeanSource::kZero;
  request.grad_features = own_extractor;

  EarlyStopping stopper(config.patience);
  Rng order_rng = MakeRng(seed, {kOrder});
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(usable.begin(), usable.end(), order_rng);
    double epoch_loss = 0.0;
    for (std::size_t gi : usable) {
      const ResidualGroup& g = groups[gi];
      if (own_extractor) {
        work.feature_params = own_features;
      } else {
        // Load and freeze the extractor of the fold that produced these residuals.
        work.feature_params = std::find_if(checkpoints.begin(), checkpoints.end(),
                                           [&](const FoldCheckpoint& c) { return c.fold == g.fold; })->fit.feature_params;
      }
      work.kernel_params = kernel;
      SetHypers(work, hypers);
      const gp::NlmlResult r = gp::Nlml(work, g.x, g.residual, request);
      epoch_loss += r.value;
      std::tie(kernel, kernel_state) = nnet::AdamStep(kernel, r.d_kernel_params, std::move(kernel_state),
                                                      config.kernel_learning_rate);
      std::tie(hypers, hyper_state) = nnet::AdamStep(hypers, HyperGradient(r), std::move(hyper_state),
                                                     config.kernel_learning_rate);
      ClampNoise(hypers, config.noise_floor);
      if (own_extractor) {
        std::tie(own_features, feature_state) = nnet::AdamStep(own_features, r.d_feature_params, std::move(feature_state),
                                                               config.kernel_learning_rate);
      }
    }
    fit.report.epochs.push_back({epoch, epoch_loss});
    if (!std::isfinite(epoch_loss)) throw NumericalError("kernel training diverged at epoch " + std::to_string(epoch));
    if (stopper.Update(epoch, epoch_loss)) {
      best.kernel_params = kernel;
      best_hypers = hypers;
      best_features = own_features;
    }
    if (stopper.ShouldStop()) break;
  }
  best.log_lengthscale = best_hypers.values()[0];
  best.log_outputscale = best_hypers.values()[1];
  best.log_noise = best_hypers.values()[2];
  if (own_extractor) best.kernel_feature_params = best_features;
  best.report = std::move(fit.report);
  best.report.best_epoch = stopper.best_epoch();
  best.report.best_loss = stopper.best_loss();
  return best;
}

gp::DeepGpModel AssembleModel(const Architecture& arch, const MeanFit& mean, const KernelFit& kernel) {
  gp::DeepGpModel m = SkeletonModel(arch);
  m.feature_params = mean.feature_params;
  m.mean_params = mean.mean_params;
  m.kernel_params = kernel.kernel_params;
  m.kernel_feature_params = kernel.kernel_feature_params;
  m.log_lengthscale = kernel.log_lengthscale;
  m.log_outputscale = kernel.log_outputscale;
  m.log_noise = kernel.log_noise;
  m.Validate();
  return m;
}

CodegaResult TrainCodega(std::span<const tasks::TaskDataset> data, const Architecture& arch,
                         const TrainingConfig& config, std::uint64_t seed) {
  CodegaResult r;
  r.splits = MakeFoldSplits(data, config.folds, seed);
  r.residuals = BuildResidualDataset(r.splits, data, arch, config, seed);
  r.kernel = TrainKernelCodega(r.residuals.groups, r.residuals.checkpoints, arch, config, seed);
  r.final_mean = TrainMean(data, arch, config, seed);
  r.model = AssembleModel(arch, r.final_mean, r.kernel);
  return r;
}

DkmtResult TrainDkmt(std::span<const tasks::TaskDataset> data, const Architecture& arch, const TrainingConfig& config,
                     std::uint64_t seed) {
  const Pooled all = Pool(data);
  if (all.y.size() == 0) throw ArgumentError("dkmt needs at least one record");
  std::vector<std::size_t> order;
  std::vector<Eigen::MatrixXd> xs;
  std::vector<Eigen::VectorXd> ys;
  for (const auto& t : data) {
    if (t.records.empty()) continue;
    order.push_back(xs.size());
    xs.push_back(t.InputMatrix());
    ys.push_back(t.Rewards());
  }

  gp::DeepGpModel model = SkeletonModel(arch);
  model.feature_params = InitialFeatureParams(arch, seed);
  model.mean_params = InitialMeanParams(arch, seed, all.y.mean());
  model.kernel_params = InitialKernelParams(arch, seed);
  nnet::ParamVector hypers = InitialHypers(Variance(all.y), config.noise_floor);
  SetHypers(model, hypers);
  gp::DeepGpModel best = model;

  gp::NlmlRequest request;
  request.grad_features = true;
  request.grad_mean = true;
  nnet::AdamState feature_state, mean_state, kernel_state, hyper_state;
  DkmtResult result;
  EarlyStopping stopper(config.patience);
  Rng order_rng = MakeRng(seed, {kOrder});
  const double lr = config.kernel_learning_rate;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double epoch_loss = 0.0;
    for (std::size_t t : order) {
      const gp::NlmlResult r = gp::Nlml(model, xs[t], ys[t], request);
      epoch_loss += r.value;
      std::tie(model.feature_params, feature_state) =
          nnet::AdamStep(model.feature_params, r.d_feature_params, std::move(feature_state), lr);
      std::tie(model.mean_params, mean_state) = nnet::AdamStep(model.mean_params, r.d_mean_params, std::move(mean_state), lr);
      std::tie(model.kernel_params, kernel_state) =
          nnet::AdamStep(model.kernel_params, r.d_kernel_params, std::move(kernel_state), lr);
      std::tie(hypers, hyper_state) = nnet::AdamStep(hypers, HyperGradient(r), std::move(hyper_state), lr);
      ClampNoise(hypers, config.noise_floor);
      SetHypers(model, hypers);
    }
    result.report.epochs.push_back({epoch, epoch_loss});
    if (!std::isfinite(epoch_loss)) throw NumericalError("dkmt diverged at epoch " + std::to_string(epoch));
    if (stopper.Update(epoch, epoch_loss)) best = model;
    if (stopper.ShouldStop()) break;
  }
  result.report.best_epoch = stopper.best_epoch();
  result.report.best_loss = stopper.best_loss();
  result.model = std::move(best);
  result.model.Validate();
  return result;
}

gp::DeepGpModel TrainMeanOnly(std::span<const tasks::TaskDataset> data, const Architecture& arch,
                              const TrainingConfig& config, std::uint64_t seed, TrainingReport* report) {
  MeanFit mean = TrainMean(data, arch, config, seed);
  KernelFit kernel;
  kernel.kernel_params = InitialKernelParams(arch, seed);
  const nnet::ParamVector h = InitialHypers(Variance(Pool(data).y), config.noise_floor);
  kernel.log_lengthscale = h.values()[0];
  kernel.log_outputscale = h.values()[1];
  kernel.log_noise = h.values()[2];
  if (report) *report = mean.report;
  return AssembleModel(arch, mean, kernel);
}

}  // namespace scoopgp::meta
