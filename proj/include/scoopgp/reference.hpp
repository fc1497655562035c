#pragma once

// Single-threaded versions of the OpenMP kernels. They share the arithmetic
// of the parallel paths and must agree with them bit for bit; the tests and
// bench_kernels compare the two.

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "scoopgp/gp.hpp"
#include "scoopgp/nnet.hpp"
#include "scoopgp/tasks.hpp"

namespace scoopgp::reference {

Eigen::MatrixXd ForwardBatch(const nnet::NetworkSpec& spec, const nnet::ParamVector& params, const Eigen::MatrixXd& x);
Eigen::MatrixXd RbfCross(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double lengthscale, double outputscale);
Eigen::MatrixXd RbfGram(const Eigen::MatrixXd& z, double lengthscale, double outputscale);
std::vector<gp::PosteriorPrediction> Posterior(const gp::DeepGpModel& model, const Eigen::MatrixXd& support_x,
                                               const Eigen::VectorXd& support_y, const Eigen::MatrixXd& query);
Eigen::MatrixXd ModelInputBatch(const tasks::TerrainTask& task, std::span<const tasks::ScoopAction> actions);

}  // namespace scoopgp::reference
