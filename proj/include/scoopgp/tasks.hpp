#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "scoopgp/rng.hpp"

namespace scoopgp::tasks {

// Tray geometry (meters). Height and region grids use 1 cm cells indexed
// (row = y, col = x).
inline constexpr double kTrayX = 0.9;
inline constexpr double kTrayY = 0.6;
inline constexpr double kCell = 0.01;
inline constexpr int kGridCols = 90;
inline constexpr int kGridRows = 60;
inline constexpr double kMaxElevation = 0.2;
inline constexpr double kMaxSlopeDeg = 30.0;

inline constexpr double kDepthMin = 0.03;
inline constexpr double kDepthMax = 0.08;
inline constexpr double kDragLength = 0.06;
inline constexpr double kScoopWidth = 0.05;
inline constexpr int kYawCount = 8;
// Below this depth a Layers task scoops its surface material only.
inline constexpr double kLayerDepth = 0.05;
// Heteroscedastic reward noise: std = kNoiseRelative * r + kNoiseFloor,
// truncated at kNoiseTruncation standard deviations.
inline constexpr double kNoiseRelative = 0.1;
inline constexpr double kNoiseFloor = 2.0;
inline constexpr double kNoiseTruncation = 3.0;

inline constexpr int kObservationDim = 11;
inline constexpr int kModelInputDim = kObservationDim + 2;

enum class Composition { kSingle, kMixture, kPartition, kLayers };
enum class Stiffness { kSoft, kHard };

std::string_view ToString(Composition c);
Composition ParseComposition(std::string_view s);
std::string_view ToString(Stiffness s);
Stiffness ParseStiffness(std::string_view s);

// Latent coordinates, in order.
enum LatentIndex { kScoopability = 0, kJamming = 1, kDepthSensitivity = 2, kSlopePreference = 3 };
inline constexpr int kLatentDim = 4;
inline constexpr int kAppearanceDim = 3;

struct Material {
  int id = 0;
  std::array<double, kLatentDim> latent{};
  std::array<double, kAppearanceDim> appearance{};
  bool ood = false;
  bool operator==(const Material&) const = default;
};

struct MaterialPools {
  std::vector<Material> materials;  // indexed by id
  std::vector<int> training;
  std::vector<int> ood;
  const Material& Get(int id) const { return materials.at(static_cast<std::size_t>(id)); }
};

// n materials; roughly a third (at least one) form the out-of-distribution
// pool. Each OOD material leaves the training box in one latent coordinate,
// and the first OOD material is non-scoopable. Appearance is
// rho * A z + sqrt(1 - rho^2) eps for standardized latents z.
MaterialPools GenerateMaterials(int n, double rho, std::uint64_t seed);

struct ScoopAction {
  double x = 0.0;
  double y = 0.0;
  int yaw_index = 0;
  double depth = kDepthMin;
  Stiffness stiffness = Stiffness::kSoft;

  double yaw() const;
  bool operator==(const ScoopAction&) const = default;
};

// Throws ArgumentError when the start point or depth is out of range.
void ValidateAction(const ScoopAction& a);
// True when the whole drag segment stays inside the tray.
bool DragInBounds(const ScoopAction& a);

struct TerrainTask {
  int id = 0;
  Composition composition = Composition::kSingle;
  std::vector<Material> materials;
  Eigen::MatrixXd heightmap;        // kGridRows x kGridCols, meters
  Eigen::MatrixXi region_map;       // material ids of the surface
  std::optional<Eigen::MatrixXi> hidden_layer_map;  // Layers only

  std::vector<int> material_ids() const;
  bool has_ood_material() const;
  bool scoopable() const;  // false for a Single task of a zero-scoopability material
};

// Material count must match composition: Single 1, Mixture/Partition 2,
// Layers 2-3 (last one buried). Throws ArgumentError otherwise.
TerrainTask GenerateTask(int id, std::span<const Material> materials, Composition composition,
                         std::uint64_t topography_seed);

// Largest terrain slope in degrees (central differences on the grid).
double MaxSlopeDegrees(const Eigen::MatrixXd& heightmap);
double HeightAt(const Eigen::MatrixXd& heightmap, double x, double y);

// Reward in cm^3. noise_seed == nullopt gives the noiseless reward.
double RewardOracle(const TerrainTask& task, const ScoopAction& action, std::optional<std::uint64_t> noise_seed);

// Yaw-aligned 8x8 patch summary: four along-drag height bands (cm, relative
// to the start point), mean gradient magnitude, mean gradient along yaw,
// height spread (cm), mean surface appearance (3), start height (dm). All
// values rounded to 9 significant digits.
std::vector<double> ObservationFeatures(const TerrainTask& task, const ScoopAction& action);

// Observation features followed by the normalized depth and stiffness flag.
std::vector<double> ModelInput(std::span<const double> observation, const ScoopAction& action);
// Model inputs for many actions, one row each, computed in parallel.
Eigen::MatrixXd ModelInputBatch(const TerrainTask& task, std::span<const ScoopAction> actions);

// Lowers the heightmap over the drag footprint by the removed volume.
void ApplyScoop(TerrainTask& task, const ScoopAction& action, double removed_cm3);

// Round to 9 significant digits (the dataset file precision).
double Quantize(double v);

struct ScoopRecord {
  std::vector<double> observation;
  ScoopAction action;
  double reward = 0.0;

  std::vector<double> model_input() const { return ModelInput(observation, action); }
  bool operator==(const ScoopRecord&) const = default;
};

struct TaskDataset {
  int task_id = 0;
  std::vector<int> material_ids;
  Composition composition = Composition::kSingle;
  std::vector<ScoopRecord> records;

  Eigen::MatrixXd InputMatrix() const;
  Eigen::VectorXd Rewards() const;
  bool operator==(const TaskDataset&) const = default;
};

// Uniform random feasible actions (infeasible drags are resampled).
ScoopAction SampleAction(Rng& rng);
TaskDataset SampleDataset(const TerrainTask& task, int records, std::uint64_t seed);

struct WorldConfig {
  int materials = 12;
  double appearance_rho = 0.8;
  int train_tasks = 12;
  int test_tasks = 6;
  int records_per_task = 60;
  int test_records_per_task = 60;
};

struct World {
  MaterialPools pools;
  std::vector<TerrainTask> train_tasks;
  std::vector<TerrainTask> test_tasks;
  std::vector<TaskDataset> train_data;
  std::vector<TaskDataset> test_data;
};

// Training tasks use training materials only with a Single:Partition:Mixture
// mix of 8:25:18; test tasks cycle Single, Partition, Mixture, Layers and each
// contains an OOD material.
std::vector<TerrainTask> SampleTrainingTasks(const MaterialPools& pools, int n_tasks, std::uint64_t seed);
std::vector<TerrainTask> SampleTestTasks(const MaterialPools& pools, int n_tasks, std::uint64_t seed,
                                         int first_id = 1000);
World BuildWorld(const WorldConfig& config, std::uint64_t seed);

// Size of the physical database: 51 terrains with 100 scoops each.
inline constexpr int kPaperTasks = 51;
inline constexpr int kPaperRecordsPerTask = 100;

// Offline database: n_tasks training-material terrains with records_per_task
// uniform random scoops each.
std::vector<TaskDataset> SampleOfflineDatabase(int n_tasks, int records_per_task, std::uint64_t seed,
                                               const WorldConfig& config = {});

// 15 x 12 x 8 x 4 x 2 grid (11,520 actions).
std::vector<ScoopAction> EnumerateActionGrid();

// Canonical interchange files: a tab-separated record file with header
//   task_id material_ids composition x y yaw_index depth_m stiffness reward_cm3 feature_vector
// (material ids joined by '+', features by ';', reals as %.8e) and a
// manifest with header task_id composition material_ids records.
void WriteRecords(std::ostream& out, std::span<const TaskDataset> data);
void WriteManifest(std::ostream& out, std::span<const TaskDataset> data);
void SaveDataset(const std::string& records_path, const std::string& manifest_path, std::span<const TaskDataset> data);

struct DatasetStatistics {
  std::size_t tasks = 0;
  std::size_t records = 0;
  double mean_reward = 0.0;
  double max_reward = 0.0;
};
DatasetStatistics Summarize(std::span<const TaskDataset> data);

// Parses and validates; throws IngestionError naming line and field. The
// manifest, when given, must agree with the record file.
std::vector<TaskDataset> ReadRecords(std::istream& records, const std::string& source = "records");
std::vector<TaskDataset> ReadDataset(const std::string& records_path, const std::string& manifest_path = "");
void CheckManifest(std::istream& manifest, std::span<const TaskDataset> data, const std::string& source = "manifest");

}  // namespace scoopgp::tasks
