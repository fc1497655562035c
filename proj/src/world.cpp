#include <algorithm>
#include <set>

#include "scoopgp/error.hpp"
#include "scoopgp/tasks.hpp"

namespace scoopgp::tasks {
namespace {

// Largest-remainder apportionment of n tasks to the 8:25:18 mix.
std::vector<Composition> TrainingCompositions(int n) {
  constexpr std::array<std::pair<Composition, int>, 3> kMix = {
      {{Composition::kSingle, 8}, {Composition::kPartition, 25}, {Composition::kMixture, 18}}};
  std::array<int, 3> counts{};
  std::array<double, 3> remainders{};
  int assigned = 0;
  for (std::size_t i = 0; i < kMix.size(); ++i) {
    const double exact = n * kMix[i].second / 51.0;
    counts[i] = static_cast<int>(exact);
    remainders[i] = exact - counts[i];
    assigned += counts[i];
  }
  while (assigned < n) {
    const auto best = std::max_element(remainders.begin(), remainders.end()) - remainders.begin();
    ++counts[static_cast<std::size_t>(best)];
    remainders[static_cast<std::size_t>(best)] = -1.0;
    ++assigned;
  }
  std::vector<Composition> out;
  for (std::size_t i = 0; i < kMix.size(); ++i) out.insert(out.end(), static_cast<std::size_t>(counts[i]), kMix[i].first);
  return out;
}

int Pick(const std::vector<int>& ids, Rng& rng) {
  return ids[std::uniform_int_distribution<std::size_t>(0, ids.size() - 1)(rng)];
}

int PickOther(const std::vector<int>& ids, int avoid, Rng& rng) {
  std::vector<int> rest;
  for (int id : ids) {
    if (id != avoid) rest.push_back(id);
  }
  if (rest.empty()) throw ArgumentError("not enough distinct materials for a two-material terrain");
  return Pick(rest, rng);
}

std::vector<Material> Lookup(const MaterialPools& pools, std::initializer_list<int> ids) {
  std::vector<Material> out;
  for (int id : ids) out.push_back(pools.Get(id));
  return out;
}

}  // namespace

std::vector<TerrainTask> SampleTrainingTasks(const MaterialPools& pools, int n_tasks, std::uint64_t seed) {
  if (pools.training.size() < 2) throw ArgumentError("training pool needs at least two materials");
  Rng rng = MakeRng(seed, {0x747261ULL});
  std::vector<Composition> comps = TrainingCompositions(n_tasks);
  std::shuffle(comps.begin(), comps.end(), rng);

  std::set<std::tuple<Composition, int, int>> used;
  std::vector<TerrainTask> tasks;
  int single_cursor = 0;
  for (int id = 0; id < n_tasks; ++id) {
    const Composition c = comps[static_cast<std::size_t>(id)];
    std::vector<Material> mats;
    for (int attempt = 0; attempt < 64; ++attempt) {
      if (c == Composition::kSingle) {
        const int m = pools.training[static_cast<std::size_t>(single_cursor) % pools.training.size()];
        mats = Lookup(pools, {m});
        if (used.insert({c, m, -1}).second || attempt == 63) break;
        ++single_cursor;
      } else {
        const int a = Pick(pools.training, rng);
        const int b = PickOther(pools.training, a, rng);
        mats = Lookup(pools, {a, b});
        if (used.insert({c, std::min(a, b), std::max(a, b)}).second) break;
      }
    }
    if (c == Composition::kSingle) ++single_cursor;
    tasks.push_back(GenerateTask(id, mats, c, DeriveSeed(seed, {static_cast<std::uint64_t>(id), 0x746f706fULL})));
  }
  return tasks;
}

std::vector<TerrainTask> SampleTestTasks(const MaterialPools& pools, int n_tasks, std::uint64_t seed, int first_id) {
  if (pools.ood.empty()) throw ArgumentError("test tasks need at least one OOD material");
  Rng rng = MakeRng(seed, {0x746573ULL});
  std::vector<int> scoopable_ood;
  for (int id : pools.ood) {
    if (pools.Get(id).latent[kScoopability] > 0.0) scoopable_ood.push_back(id);
  }
  if (scoopable_ood.empty()) scoopable_ood = pools.ood;
  std::vector<int> all = pools.training;
  all.insert(all.end(), pools.ood.begin(), pools.ood.end());

  constexpr std::array<Composition, 4> kCycle = {Composition::kSingle, Composition::kPartition, Composition::kMixture,
                                                 Composition::kLayers};
  std::vector<TerrainTask> tasks;
  std::size_t single_count = 0, other_count = 0;
  for (int i = 0; i < n_tasks; ++i) {
    const Composition c = kCycle[static_cast<std::size_t>(i) % kCycle.size()];
    // Single terrains walk the scoopable OOD materials; the others walk the
    // whole OOD pool, so every new material shows up.
    const int ood = c == Composition::kSingle ? scoopable_ood[single_count++ % scoopable_ood.size()]
                                              : pools.ood[other_count++ % pools.ood.size()];
    const bool ood_scoopable = pools.Get(ood).latent[kScoopability] > 0.0;
    const int primary = ood_scoopable ? ood : scoopable_ood[static_cast<std::size_t>(i) % scoopable_ood.size()];
    std::vector<Material> mats;
    switch (c) {
      case Composition::kSingle: mats = Lookup(pools, {primary}); break;
      case Composition::kPartition: mats = Lookup(pools, {ood, PickOther(all, ood, rng)}); break;
      case Composition::kMixture: mats = Lookup(pools, {primary, PickOther(pools.training, primary, rng)}); break;
      case Composition::kLayers: {
        const int top = Pick(pools.training, rng);
        mats = std::bernoulli_distribution(0.5)(rng) ? Lookup(pools, {top, PickOther(pools.training, top, rng), ood})
                                                     : Lookup(pools, {top, ood});
        break;
      }
    }
    const int id = first_id + i;
    tasks.push_back(GenerateTask(id, mats, c, DeriveSeed(seed, {static_cast<std::uint64_t>(id), 0x746f706fULL})));
  }
  return tasks;
}

World BuildWorld(const WorldConfig& config, std::uint64_t seed) {
  World world;
  world.pools = GenerateMaterials(config.materials, config.appearance_rho, DeriveSeed(seed, {1}));
  world.train_tasks = SampleTrainingTasks(world.pools, config.train_tasks, DeriveSeed(seed, {2}));
  world.test_tasks = SampleTestTasks(world.pools, config.test_tasks, DeriveSeed(seed, {3}));
  for (const TerrainTask& t : world.train_tasks) {
    world.train_data.push_back(SampleDataset(t, config.records_per_task, DeriveSeed(seed, {4})));
  }
  for (const TerrainTask& t : world.test_tasks) {
    world.test_data.push_back(SampleDataset(t, config.test_records_per_task, DeriveSeed(seed, {5})));
  }
  return world;
}

std::vector<TaskDataset> SampleOfflineDatabase(int n_tasks, int records_per_task, std::uint64_t seed,
                                               const WorldConfig& config) {
  const MaterialPools pools = GenerateMaterials(config.materials, config.appearance_rho, DeriveSeed(seed, {1}));
  std::vector<TaskDataset> data;
  for (const TerrainTask& t : SampleTrainingTasks(pools, n_tasks, DeriveSeed(seed, {2}))) {
    data.push_back(SampleDataset(t, records_per_task, DeriveSeed(seed, {4})));
  }
  return data;
}

}  // namespace scoopgp::tasks
