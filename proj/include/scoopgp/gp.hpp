#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scoopgp/nnet.hpp"

namespace scoopgp::gp {

// Exact GP whose mean and RBF-kernel inputs come from neural networks. The
// feature extractor feeds both heads; kernel_feature_params, when present,
// replaces it on the kernel path only.
struct DeepGpModel {
  nnet::NetworkSpec feature_spec;
  nnet::ParamVector feature_params;
  nnet::NetworkSpec mean_spec;
  nnet::ParamVector mean_params;
  nnet::NetworkSpec kernel_spec;
  nnet::ParamVector kernel_params;
  std::optional<nnet::ParamVector> kernel_feature_params;

  double log_lengthscale = 0.0;
  double log_outputscale = 0.0;
  double log_noise = -2.0;

  int input_dim() const { return feature_spec.input_dim; }
  int embed_dim() const { return kernel_spec.output_dim; }
  double lengthscale() const;
  double outputscale() const;
  double noise_std() const;
  const nnet::ParamVector& kernel_path_features() const {
    return kernel_feature_params ? *kernel_feature_params : feature_params;
  }

  // Throws ShapeError when heads do not chain onto the extractor, the mean
  // head is not scalar, or hyperparameters are not finite.
  void Validate() const;

  bool operator==(const DeepGpModel&) const = default;
};

struct PosteriorPrediction {
  double mean = 0.0;
  double variance = 0.0;  // predictive variance of an observed reward (includes noise)
};

Eigen::VectorXd Embed(const DeepGpModel& model, std::span<const double> x);
Eigen::MatrixXd EmbedBatch(const DeepGpModel& model, const Eigen::MatrixXd& x);
double KernelEval(const DeepGpModel& model, std::span<const double> x1, std::span<const double> x2);
double MeanEval(const DeepGpModel& model, std::span<const double> x);
Eigen::VectorXd MeanBatch(const DeepGpModel& model, const Eigen::MatrixXd& x);

// RBF kernel on embeddings: outputscale * exp(-|a-b|^2 / (2 lengthscale^2)).
// Built in parallel over rows; see reference.hpp for the serial version.
Eigen::MatrixXd RbfCross(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double lengthscale, double outputscale);
Eigen::MatrixXd RbfGram(const Eigen::MatrixXd& z, double lengthscale, double outputscale);

// Jitter schedule on the Gram diagonal, relative to outputscale.
inline constexpr double kJitterStart = 1e-8;
inline constexpr double kJitterMax = 1e-4;

struct Factorization {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;  // absolute jitter that made the factorization succeed
};

// Cholesky of gram + (noise_var) I with escalating jitter. Throws
// NumericalError after kJitterMax fails.
Factorization FactorizeCovariance(const Eigen::MatrixXd& gram, double noise_var, double outputscale);

// Posterior for many queries. The support may be empty, in which case every
// prediction is the prior: mean_eval(x*) and k(x*,x*) + noise^2.
std::vector<PosteriorPrediction> Posterior(const DeepGpModel& model, const Eigen::MatrixXd& support_x,
                                           const Eigen::VectorXd& support_y, const Eigen::MatrixXd& query);

// Same, with query embeddings and means precomputed (used when scoring the
// same candidate set repeatedly).
struct QueryCache {
  Eigen::MatrixXd embeddings;
  Eigen::VectorXd means;
};
QueryCache PrepareQueries(const DeepGpModel& model, const Eigen::MatrixXd& query);
std::vector<PosteriorPrediction> Posterior(const DeepGpModel& model, const Eigen::MatrixXd& support_x,
                                           const Eigen::VectorXd& support_y, const QueryCache& query);

// Where the residuals y - m(x) inside the NLML take their mean from.
enum class MeanSource {
  kModel,     // the model's own deep mean
  kZero,      // targets are already residuals
  kExternal,  // a caller-supplied vector, one entry per data point
};

struct NlmlRequest {
  MeanSource mean_source = MeanSource::kModel;
  Eigen::VectorXd external_mean;
  bool grad_features = false;  // differentiate through the kernel-path extractor
  bool grad_mean = false;      // differentiate through the mean head (and extractor if grad_features)
};

struct NlmlResult {
  double value = 0.0;
  nnet::ParamVector d_kernel_params;
  nnet::ParamVector d_feature_params;  // empty unless grad_features
  nnet::ParamVector d_mean_params;     // empty unless grad_mean
  double d_log_lengthscale = 0.0;
  double d_log_outputscale = 0.0;
  double d_log_noise = 0.0;
  double jitter = 0.0;
};

// 1/2 log|K| + 1/2 r^T K^-1 r + n/2 log 2 pi with K = Gram + noise^2 I and
// r = y - m(x). Gradients are always produced for the kernel head and the
// three log-hyperparameters.
NlmlResult Nlml(const DeepGpModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                const NlmlRequest& request = {});

// Model container: "scoopgp-model 1" header, nnet blocks for the extractor,
// heads and optional kernel extractor, then "hyper 3" and three
// little-endian float64 log-hyperparameters.
void WriteModel(std::ostream& out, const DeepGpModel& model);
DeepGpModel ReadModel(std::istream& in);
void SaveModel(const std::string& path, const DeepGpModel& model);
DeepGpModel LoadModel(const std::string& path);

}  // namespace scoopgp::gp
