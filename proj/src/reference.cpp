#include "scoopgp/reference.hpp"

#include <cmath>

#include "scoopgp/error.hpp"

namespace scoopgp::reference {
namespace {

double SquaredDistance(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b, Eigen::Index j) {
  double d2 = 0.0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double d = a(i, c) - b(j, c);
    d2 += d * d;
  }
  return d2;
}

}  // namespace

Eigen::MatrixXd ForwardBatch(const nnet::NetworkSpec& spec, const nnet::ParamVector& params, const Eigen::MatrixXd& x) {
  if (x.cols() != spec.input_dim) throw ShapeError("forward: batch width does not match network input");
  Eigen::MatrixXd out(x.rows(), spec.output_dim);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::VectorXd row = x.row(r).transpose();
    out.row(r) = nnet::Forward(spec, params, std::span<const double>(row.data(), row.size())).transpose();
  }
  return out;
}

Eigen::MatrixXd RbfCross(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double lengthscale, double outputscale) {
  const double inv = 1.0 / (2.0 * lengthscale * lengthscale);
  Eigen::MatrixXd k(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) k(i, j) = outputscale * std::exp(-SquaredDistance(a, i, b, j) * inv);
  }
  return k;
}

Eigen::MatrixXd RbfGram(const Eigen::MatrixXd& z, double lengthscale, double outputscale) {
  const double inv = 1.0 / (2.0 * lengthscale * lengthscale);
  const Eigen::Index n = z.rows();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = outputscale;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      k(i, j) = outputscale * std::exp(-SquaredDistance(z, i, z, j) * inv);
      k(j, i) = k(i, j);
    }
  }
  return k;
}

std::vector<gp::PosteriorPrediction> Posterior(const gp::DeepGpModel& model, const Eigen::MatrixXd& support_x,
                                               const Eigen::VectorXd& support_y, const Eigen::MatrixXd& query) {
  const Eigen::MatrixXd zq =
      reference::ForwardBatch(model.kernel_spec, model.kernel_params, reference::ForwardBatch(model.feature_spec, model.kernel_path_features(), query));
  const Eigen::VectorXd mq =
      reference::ForwardBatch(model.mean_spec, model.mean_params, reference::ForwardBatch(model.feature_spec, model.feature_params, query)).col(0);
  const double s = model.outputscale();
  const double noise_var = model.noise_std() * model.noise_std();
  std::vector<gp::PosteriorPrediction> out(static_cast<std::size_t>(query.rows()));
  if (support_x.rows() == 0) {
    for (Eigen::Index q = 0; q < query.rows(); ++q) out[static_cast<std::size_t>(q)] = {mq(q), s + noise_var};
    return out;
  }
  const Eigen::MatrixXd hs = reference::ForwardBatch(model.feature_spec, model.kernel_path_features(), support_x);
  const Eigen::MatrixXd zs = reference::ForwardBatch(model.kernel_spec, model.kernel_params, hs);
  const Eigen::VectorXd ms =
      reference::ForwardBatch(model.mean_spec, model.mean_params, reference::ForwardBatch(model.feature_spec, model.feature_params, support_x)).col(0);
  const double l = model.lengthscale();
  const gp::Factorization f = gp::FactorizeCovariance(reference::RbfGram(zs, l, s), noise_var, s);
  const Eigen::VectorXd alpha = f.llt.solve(support_y - ms);
  const Eigen::MatrixXd kq = reference::RbfCross(zq, zs, l, s);
  for (Eigen::Index q = 0; q < query.rows(); ++q) {
    const Eigen::VectorXd k = kq.row(q).transpose();
    const Eigen::VectorXd v = f.llt.matrixL().solve(k);
    out[static_cast<std::size_t>(q)] = {mq(q) + k.dot(alpha), std::max(s - v.squaredNorm(), 0.0) + noise_var};
  }
  return out;
}

Eigen::MatrixXd ModelInputBatch(const tasks::TerrainTask& task, std::span<const tasks::ScoopAction> actions) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(actions.size()), tasks::kModelInputDim);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const std::vector<double> row = tasks::ModelInput(tasks::ObservationFeatures(task, actions[i]), actions[i]);
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), tasks::kModelInputDim);
  }
  return x;
}

}  // namespace scoopgp::reference
