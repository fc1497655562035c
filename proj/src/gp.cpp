#include "scoopgp/gp.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "scoopgp/error.hpp"

namespace scoopgp::gp {
namespace {

constexpr Eigen::Index kParallelRows = 64;

double SquaredDistance(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b, Eigen::Index j) {
  double d2 = 0.0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double d = a(i, c) - b(j, c);
    d2 += d * d;
  }
  return d2;
}

Eigen::MatrixXd KernelPathFeatures(const DeepGpModel& model, const Eigen::MatrixXd& x) {
  return nnet::ForwardBatch(model.feature_spec, model.kernel_path_features(), x);
}

}  // namespace

double DeepGpModel::lengthscale() const { return std::exp(log_lengthscale); }
double DeepGpModel::outputscale() const { return std::exp(log_outputscale); }
double DeepGpModel::noise_std() const { return std::exp(log_noise); }

void DeepGpModel::Validate() const {
  feature_spec.Validate();
  mean_spec.Validate();
  kernel_spec.Validate();
  nnet::CheckLayout(feature_spec, feature_params);
  nnet::CheckLayout(mean_spec, mean_params);
  nnet::CheckLayout(kernel_spec, kernel_params);
  if (kernel_feature_params) nnet::CheckLayout(feature_spec, *kernel_feature_params);
  if (mean_spec.input_dim != feature_spec.output_dim || kernel_spec.input_dim != feature_spec.output_dim) {
    throw ShapeError("heads must take the extractor output (dim " + std::to_string(feature_spec.output_dim) + ")");
  }
  if (mean_spec.output_dim != 1) throw ShapeError("mean head must be scalar");
  if (!std::isfinite(log_lengthscale) || !std::isfinite(log_outputscale) || !std::isfinite(log_noise)) {
    throw ShapeError("log-hyperparameters must be finite");
  }
}

Eigen::VectorXd Embed(const DeepGpModel& model, std::span<const double> x) {
  const Eigen::VectorXd h = nnet::Forward(model.feature_spec, model.kernel_path_features(), x);
  return nnet::Forward(model.kernel_spec, model.kernel_params, std::span<const double>(h.data(), h.size()));
}

Eigen::MatrixXd EmbedBatch(const DeepGpModel& model, const Eigen::MatrixXd& x) {
  return nnet::ForwardBatch(model.kernel_spec, model.kernel_params, KernelPathFeatures(model, x));
}

double KernelEval(const DeepGpModel& model, std::span<const double> x1, std::span<const double> x2) {
  const Eigen::VectorXd z1 = Embed(model, x1);
  const Eigen::VectorXd z2 = Embed(model, x2);
  const double l = model.lengthscale();
  return model.outputscale() * std::exp(-(z1 - z2).squaredNorm() / (2.0 * l * l));
}

double MeanEval(const DeepGpModel& model, std::span<const double> x) {
  const Eigen::VectorXd h = nnet::Forward(model.feature_spec, model.feature_params, x);
  return nnet::Forward(model.mean_spec, model.mean_params, std::span<const double>(h.data(), h.size()))(0);
}

Eigen::VectorXd MeanBatch(const DeepGpModel& model, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd h = nnet::ForwardBatch(model.feature_spec, model.feature_params, x);
  return nnet::ForwardBatch(model.mean_spec, model.mean_params, h).col(0);
}

Eigen::MatrixXd RbfCross(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double lengthscale, double outputscale) {
  if (a.cols() != b.cols()) throw ShapeError("rbf: embedding dims differ");
  const double inv = 1.0 / (2.0 * lengthscale * lengthscale);
  Eigen::MatrixXd k(a.rows(), b.rows());
#pragma omp parallel for schedule(static) if (a.rows() >= kParallelRows)
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) k(i, j) = outputscale * std::exp(-SquaredDistance(a, i, b, j) * inv);
  }
  return k;
}

Eigen::MatrixXd RbfGram(const Eigen::MatrixXd& z, double lengthscale, double outputscale) {
  const double inv = 1.0 / (2.0 * lengthscale * lengthscale);
  const Eigen::Index n = z.rows();
  Eigen::MatrixXd k(n, n);
#pragma omp parallel for schedule(dynamic, 8) if (n >= kParallelRows)
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = outputscale;
    for (Eigen::Index j = i + 1; j < n; ++j) k(i, j) = outputscale * std::exp(-SquaredDistance(z, i, z, j) * inv);
  }
  k.triangularView<Eigen::StrictlyLower>() = k.transpose();
  return k;
}

Factorization FactorizeCovariance(const Eigen::MatrixXd& gram, double noise_var, double outputscale) {
  const Eigen::Index n = gram.rows();
  Factorization f;
  for (double rel = kJitterStart; rel <= kJitterMax * (1.0 + 1e-9); rel *= 10.0) {
    f.jitter = rel * outputscale;
    Eigen::MatrixXd k = gram;
    k.diagonal().array() += noise_var + f.jitter;
    f.llt.compute(k);
    if (f.llt.info() == Eigen::Success && f.llt.matrixLLT().diagonal().allFinite()) return f;
  }
  std::ostringstream msg;
  msg << "covariance not positive definite after jitter " << kJitterMax << "*outputscale (n=" << n
      << ", outputscale=" << outputscale << ", noise_var=" << noise_var
      << ", min diag=" << (n ? gram.diagonal().minCoeff() : 0.0) << ")";
  throw NumericalError(msg.str());
}

QueryCache PrepareQueries(const DeepGpModel& model, const Eigen::MatrixXd& query) {
  if (query.cols() != model.input_dim()) {
    throw ShapeError("posterior: query dim " + std::to_string(query.cols()) + " != model input dim " +
                     std::to_string(model.input_dim()));
  }
  return {EmbedBatch(model, query), MeanBatch(model, query)};
}

std::vector<PosteriorPrediction> Posterior(const DeepGpModel& model, const Eigen::MatrixXd& support_x,
                                           const Eigen::VectorXd& support_y, const Eigen::MatrixXd& query) {
  return Posterior(model, support_x, support_y, PrepareQueries(model, query));
}

std::vector<PosteriorPrediction> Posterior(const DeepGpModel& model, const Eigen::MatrixXd& support_x,
                                           const Eigen::VectorXd& support_y, const QueryCache& query) {
  const Eigen::Index m = query.means.size();
  const double s = model.outputscale();
  const double noise_var = model.noise_std() * model.noise_std();
  std::vector<PosteriorPrediction> out(static_cast<std::size_t>(m));
  if (support_x.rows() != support_y.size()) throw ShapeError("posterior: support x/y sizes differ");
  if (support_x.rows() == 0) {
    for (Eigen::Index q = 0; q < m; ++q) out[q] = {query.means(q), s + noise_var};
    return out;
  }
  if (support_x.cols() != model.input_dim()) throw ShapeError("posterior: support dim mismatch");

  const Eigen::MatrixXd zs = EmbedBatch(model, support_x);
  const Eigen::VectorXd residual = support_y - MeanBatch(model, support_x);
  const double l = model.lengthscale();
  const Factorization f = FactorizeCovariance(RbfGram(zs, l, s), noise_var, s);
  const Eigen::VectorXd alpha = f.llt.solve(residual);
  const auto lower = f.llt.matrixL();
  const double inv = 1.0 / (2.0 * l * l);
  const Eigen::Index n = zs.rows();

#pragma omp parallel for schedule(static) if (m >= kParallelRows)
  for (Eigen::Index q = 0; q < m; ++q) {
    Eigen::VectorXd kq(n);
    for (Eigen::Index j = 0; j < n; ++j) kq(j) = s * std::exp(-SquaredDistance(query.embeddings, q, zs, j) * inv);
    const Eigen::VectorXd v = lower.solve(kq);
    const double var = s - v.squaredNorm();
    out[q] = {query.means(q) + kq.dot(alpha), std::max(var, 0.0) + noise_var};
  }
  return out;
}

NlmlResult Nlml(const DeepGpModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                const NlmlRequest& request) {
  const Eigen::Index n = x.rows();
  if (n < 1) throw ArgumentError("nlml needs at least one data point");
  if (y.size() != n) throw ShapeError("nlml: x/y sizes differ");
  if (x.cols() != model.input_dim()) throw ShapeError("nlml: input dim mismatch");
  if (request.grad_mean && request.mean_source != MeanSource::kModel) {
    throw ArgumentError("nlml: mean gradients require the model's own mean");
  }
  if (request.grad_mean && request.grad_features && model.kernel_feature_params) {
    throw ArgumentError("nlml: joint extractor gradients need a single shared extractor");
  }

  const Eigen::MatrixXd hk = KernelPathFeatures(model, x);
  const Eigen::MatrixXd z = nnet::ForwardBatch(model.kernel_spec, model.kernel_params, hk);

  Eigen::MatrixXd hm;
  Eigen::VectorXd residual = y;
  switch (request.mean_source) {
    case MeanSource::kModel:
      hm = model.kernel_feature_params ? nnet::ForwardBatch(model.feature_spec, model.feature_params, x) : hk;
      residual -= nnet::ForwardBatch(model.mean_spec, model.mean_params, hm).col(0);
      break;
    case MeanSource::kZero: break;
    case MeanSource::kExternal:
      if (request.external_mean.size() != n) throw ShapeError("nlml: external mean size mismatch");
      residual -= request.external_mean;
      break;
  }

  const double l = model.lengthscale();
  const double s = model.outputscale();
  const double noise_var = model.noise_std() * model.noise_std();
  const Eigen::MatrixXd kf = RbfGram(z, l, s);
  const Factorization f = FactorizeCovariance(kf, noise_var, s);
  const Eigen::VectorXd alpha = f.llt.solve(residual);
  const double log_det = 2.0 * f.llt.matrixLLT().diagonal().array().log().sum();

  NlmlResult result;
  result.jitter = f.jitter;
  result.value = 0.5 * log_det + 0.5 * residual.dot(alpha) + 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);

  // dL/dK = 1/2 (K^-1 - alpha alpha^T)
  const Eigen::MatrixXd w = f.llt.solve(Eigen::MatrixXd::Identity(n, n)) - alpha * alpha.transpose();
  const double trace_w = w.trace();
  const Eigen::MatrixXd wk = w.cwiseProduct(kf);

  double d_ls = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) d_ls += wk(i, j) * SquaredDistance(z, i, z, j);
  }
  result.d_log_lengthscale = 0.5 * d_ls / (l * l);
  // Jitter scales with outputscale, so it moves with log_outputscale.
  result.d_log_outputscale = 0.5 * wk.sum() + 0.5 * f.jitter * trace_w;
  result.d_log_noise = noise_var * trace_w;

  const Eigen::VectorXd row_sums = wk.rowwise().sum();
  const Eigen::MatrixXd dz = -(row_sums.asDiagonal() * z - wk * z) / (l * l);
  nnet::Gradients kernel_grads = nnet::Backward(model.kernel_spec, model.kernel_params, hk, dz);
  result.d_kernel_params = std::move(kernel_grads.params);

  Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(n, model.feature_spec.output_dim);
  if (request.grad_features) dh += kernel_grads.inputs;
  if (request.grad_mean) {
    nnet::Gradients mean_grads = nnet::Backward(model.mean_spec, model.mean_params, hm, -alpha);
    result.d_mean_params = std::move(mean_grads.params);
    if (request.grad_features) dh += mean_grads.inputs;
  }
  if (request.grad_features) {
    result.d_feature_params = nnet::Backward(model.feature_spec, model.kernel_path_features(), x, dh).params;
  }
  return result;
}

}  // namespace scoopgp::gp
