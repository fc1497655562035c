#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

#include "scoopgp/gp.hpp"
#include "scoopgp/meta.hpp"
#include "scoopgp/rng.hpp"
#include "scoopgp/tasks.hpp"

namespace fixture {

// total records, of which `successes` carry reward 50 and the rest reward 1.
// Observations are random so that every record has a distinct input.
inline scoopgp::tasks::TaskDataset BinaryDataset(int total, int successes, std::uint64_t seed, int task_id = 7) {
  scoopgp::Rng rng = scoopgp::MakeRng(seed, {31});
  std::normal_distribution<double> g;
  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  scoopgp::tasks::TaskDataset d;
  d.task_id = task_id;
  d.material_ids = {0};
  d.records.resize(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    auto& r = d.records[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    r.action = scoopgp::tasks::SampleAction(rng);
    r.observation.resize(scoopgp::tasks::kObservationDim);
    for (double& v : r.observation) v = scoopgp::tasks::Quantize(g(rng));
    r.reward = i < successes ? 50.0 : 1.0;
  }
  return d;
}

// Tasks tagged with 1-3 materials out of a pool of 4-10; records are left
// empty since fold splitting only reads material ids.
inline std::vector<scoopgp::tasks::TaskDataset> RandomFamily(std::uint64_t seed) {
  scoopgp::Rng rng = scoopgp::MakeRng(seed, {5});
  std::uniform_int_distribution<int> n_tasks(4, 16), pool(4, 10), per(1, 3);
  const int n = n_tasks(rng), m = pool(rng);
  std::vector<scoopgp::tasks::TaskDataset> out;
  for (int t = 0; t < n; ++t) {
    std::vector<int> ids(static_cast<std::size_t>(m));
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(static_cast<std::size_t>(per(rng)));
    scoopgp::tasks::TaskDataset d;
    d.task_id = 10 * t + 1;
    d.material_ids = ids;
    out.push_back(d);
  }
  return out;
}

// Default-shaped model at its seed-derived initial weights.
inline scoopgp::gp::DeepGpModel InitialModel(std::uint64_t seed, double target_mean = 20.0) {
  const auto arch = scoopgp::meta::Architecture::Default();
  scoopgp::gp::DeepGpModel m;
  m.feature_spec = arch.feature;
  m.mean_spec = arch.mean_head;
  m.kernel_spec = arch.kernel_head;
  m.feature_params = scoopgp::meta::InitialFeatureParams(arch, seed);
  m.mean_params = scoopgp::meta::InitialMeanParams(arch, seed, target_mean);
  m.kernel_params = scoopgp::meta::InitialKernelParams(arch, seed);
  m.log_outputscale = std::log(100.0);
  m.log_noise = std::log(2.0);
  return m;
}

}  // namespace fixture

namespace fixture {

// Tasks whose rewards are an exact function of the model input.
inline std::vector<scoopgp::tasks::TaskDataset> FunctionFamily(int n_tasks, int records, std::uint64_t seed,
                                                              const std::function<double(const std::vector<double>&)>& f) {
  scoopgp::Rng rng = scoopgp::MakeRng(seed, {41});
  std::normal_distribution<double> g;
  std::vector<scoopgp::tasks::TaskDataset> out;
  for (int t = 0; t < n_tasks; ++t) {
    scoopgp::tasks::TaskDataset d;
    d.task_id = t;
    d.material_ids = {t % 4, 4 + t % 3};
    d.composition = scoopgp::tasks::Composition::kMixture;
    for (int i = 0; i < records; ++i) {
      scoopgp::tasks::ScoopRecord r;
      r.action = scoopgp::tasks::SampleAction(rng);
      r.observation.resize(scoopgp::tasks::kObservationDim);
      for (double& v : r.observation) v = g(rng);
      r.reward = f(r.model_input());
      d.records.push_back(r);
    }
    out.push_back(d);
  }
  return out;
}

}  // namespace fixture
