// Times the OpenMP kernels against their serial references and checks that
// both produce identical results.

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "scoopgp/gp.hpp"
#include "scoopgp/meta.hpp"
#include "scoopgp/reference.hpp"
#include "scoopgp/tasks.hpp"

using namespace scoopgp;

namespace {

double Seconds(const std::function<void()>& fn, int repeats) {
  fn();
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < repeats; ++i) fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / repeats;
}

bool Same(const std::vector<gp::PosteriorPrediction>& a, const std::vector<gp::PosteriorPrediction>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].mean != b[i].mean || a[i].variance != b[i].variance) return false;
  }
  return true;
}

void Row(const std::string& name, double serial, double parallel, bool identical) {
  std::printf("%-22s %12.3f %12.3f %8.2fx  %s\n", name.c_str(), serial * 1e3, parallel * 1e3, serial / parallel,
              identical ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::stoi(argv[1]) : 5;
  const tasks::World world = tasks::BuildWorld({}, 11);
  const tasks::TerrainTask& task = world.test_tasks.front();
  const std::vector<tasks::ScoopAction> grid = tasks::EnumerateActionGrid();
  const meta::Architecture arch = meta::Architecture::Default();

  gp::DeepGpModel model;
  model.feature_spec = arch.feature;
  model.mean_spec = arch.mean_head;
  model.kernel_spec = arch.kernel_head;
  model.feature_params = meta::InitialFeatureParams(arch, 1);
  model.mean_params = meta::InitialMeanParams(arch, 1, 30.0);
  model.kernel_params = meta::InitialKernelParams(arch, 1);
  model.log_outputscale = std::log(200.0);

  const Eigen::MatrixXd x = tasks::ModelInputBatch(task, grid);
  const Eigen::MatrixXd z = gp::EmbedBatch(model, x);
  const Eigen::MatrixXd gram_input = z.topRows(1500);
  const tasks::TaskDataset support = world.test_data.front();
  const Eigen::MatrixXd sx = support.InputMatrix().topRows(20);
  const Eigen::VectorXd sy = support.Rewards().head(20);

  std::printf("threads %d, %zu candidate actions, %d repeats\n", omp_get_max_threads(), grid.size(), repeats);
  std::printf("%-22s %12s %12s %9s\n", "kernel", "serial ms", "parallel ms", "speedup");

  Eigen::MatrixXd a, b;
  double ts = Seconds([&] { a = tasks::ModelInputBatch(task, grid); }, repeats);
  double tp = Seconds([&] { b = reference::ModelInputBatch(task, grid); }, repeats);
  Row("model_input_batch", tp, ts, a == b);

  ts = Seconds([&] { a = reference::ForwardBatch(model.feature_spec, model.feature_params, x); }, repeats);
  tp = Seconds([&] { b = nnet::ForwardBatch(model.feature_spec, model.feature_params, x); }, repeats);
  Row("forward_batch", ts, tp, a == b);

  ts = Seconds([&] { a = reference::RbfGram(gram_input, 1.0, 200.0); }, repeats);
  tp = Seconds([&] { b = gp::RbfGram(gram_input, 1.0, 200.0); }, repeats);
  Row("rbf_gram (1500)", ts, tp, a == b);

  ts = Seconds([&] { a = reference::RbfCross(z, gram_input.topRows(20), 1.0, 200.0); }, repeats);
  tp = Seconds([&] { b = gp::RbfCross(z, gram_input.topRows(20), 1.0, 200.0); }, repeats);
  Row("rbf_cross", ts, tp, a == b);

  std::vector<gp::PosteriorPrediction> pa, pb;
  ts = Seconds([&] { pa = reference::Posterior(model, sx, sy, x); }, repeats);
  tp = Seconds([&] { pb = gp::Posterior(model, sx, sy, x); }, repeats);
  Row("posterior (20 shots)", ts, tp, Same(pa, pb));
  return 0;
}
