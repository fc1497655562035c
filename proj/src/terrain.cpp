#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <set>

#include "scoopgp/error.hpp"
#include "scoopgp/tasks.hpp"

namespace scoopgp::tasks {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
// Effective volume per meter of depth for a full drag (cm^3 / m).
constexpr double kVolumePerDepth = 1200.0;
constexpr double kReferenceDepth = 0.055;
constexpr double kSlopeGain = 3.0;
constexpr double kHardJamRelief = 0.3;
constexpr double kTargetSlopeDeg = 28.0;
constexpr Eigen::Index kParallelActions = 256;

int CellCol(double x) { return std::clamp(static_cast<int>(std::floor(x / kCell)), 0, kGridCols - 1); }
int CellRow(double y) { return std::clamp(static_cast<int>(std::floor(y / kCell)), 0, kGridRows - 1); }

const Material& FindMaterial(const TerrainTask& task, int id) {
  for (const Material& m : task.materials) {
    if (m.id == id) return m;
  }
  throw ArgumentError("task " + std::to_string(task.id) + " has no material " + std::to_string(id));
}

Eigen::Vector2d Direction(const ScoopAction& a) { return {std::cos(a.yaw()), std::sin(a.yaw())}; }

Eigen::Vector2d Gradient(const Eigen::MatrixXd& h, double x, double y) {
  return {(HeightAt(h, x + kCell, y) - HeightAt(h, x - kCell, y)) / (2 * kCell),
          (HeightAt(h, x, y + kCell) - HeightAt(h, x, y - kCell)) / (2 * kCell)};
}

// Cells touched by the scoop while dragging: 7 along-drag x 5 lateral samples.
template <typename Fn>
void ForEachFootprintPoint(const ScoopAction& a, Fn&& fn) {
  const Eigen::Vector2d dir = Direction(a);
  const Eigen::Vector2d lateral(-dir.y(), dir.x());
  for (int i = 0; i <= 6; ++i) {
    for (int j = -2; j <= 2; ++j) {
      const Eigen::Vector2d p = Eigen::Vector2d(a.x, a.y) + dir * (i * kCell) + lateral * (j * kCell);
      fn(p.x(), p.y());
    }
  }
}

void EnforceSlopeAndElevation(Eigen::MatrixXd& h) {
  for (int iter = 0; iter < 8; ++iter) {
    const double slope = MaxSlopeDegrees(h);
    if (slope > kTargetSlopeDeg) {
      const double mean = h.mean();
      const double scale = std::tan(kTargetSlopeDeg * kDeg) / std::tan(slope * kDeg);
      h = (h.array() - mean) * scale + mean;
    }
    h = h.cwiseMax(0.005).cwiseMin(kMaxElevation);
    if (MaxSlopeDegrees(h) <= kTargetSlopeDeg) return;
  }
}

Eigen::MatrixXd RandomHeightmap(Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  Eigen::MatrixXd h(kGridRows, kGridCols);
  const double base = uniform(0.05, 0.09);
  struct Wave {
    double amp, fx, fy, phase;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 4; ++k) {
    waves.push_back({uniform(0.004, 0.018), uniform(-3.0, 3.0), uniform(-3.0, 3.0), uniform(0.0, 2 * std::numbers::pi)});
  }
  const bool ridge = u01(rng) < 0.5;
  const double ridge_amp = uniform(0.01, 0.03);
  const double ridge_width = uniform(0.03, 0.08);
  const double ridge_angle = uniform(0.0, std::numbers::pi);
  const double ridge_offset = uniform(-0.2, 0.2);
  for (int r = 0; r < kGridRows; ++r) {
    for (int c = 0; c < kGridCols; ++c) {
      const double x = (c + 0.5) * kCell;
      const double y = (r + 0.5) * kCell;
      double v = base;
      for (const Wave& w : waves) v += w.amp * std::sin(2 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
      if (ridge) {
        const double d = (x - kTrayX / 2) * std::cos(ridge_angle) + (y - kTrayY / 2) * std::sin(ridge_angle) - ridge_offset;
        v += ridge_amp * std::exp(-d * d / (2 * ridge_width * ridge_width));
      }
      h(r, c) = v;
    }
  }
  EnforceSlopeAndElevation(h);
  return h;
}

Eigen::MatrixXi PartitionMap(int left, int right, int boundary_col) {
  Eigen::MatrixXi m(kGridRows, kGridCols);
  for (int r = 0; r < kGridRows; ++r) {
    for (int c = 0; c < kGridCols; ++c) m(r, c) = c < boundary_col ? left : right;
  }
  return m;
}

}  // namespace

std::string_view ToString(Composition c) {
  switch (c) {
    case Composition::kSingle: return "single";
    case Composition::kMixture: return "mixture";
    case Composition::kPartition: return "partition";
    case Composition::kLayers: return "layers";
  }
  return "single";
}

Composition ParseComposition(std::string_view s) {
  if (s == "single") return Composition::kSingle;
  if (s == "mixture") return Composition::kMixture;
  if (s == "partition") return Composition::kPartition;
  if (s == "layers") return Composition::kLayers;
  throw ArgumentError("unknown composition '" + std::string(s) + "'");
}

std::string_view ToString(Stiffness s) { return s == Stiffness::kHard ? "hard" : "soft"; }

Stiffness ParseStiffness(std::string_view s) {
  if (s == "soft") return Stiffness::kSoft;
  if (s == "hard") return Stiffness::kHard;
  throw ArgumentError("unknown stiffness '" + std::string(s) + "'");
}

double ScoopAction::yaw() const { return yaw_index * (2.0 * std::numbers::pi / kYawCount); }

void ValidateAction(const ScoopAction& a) {
  if (!(a.x >= 0.0 && a.x <= kTrayX && a.y >= 0.0 && a.y <= kTrayY)) {
    throw ArgumentError("scoop start (" + std::to_string(a.x) + ", " + std::to_string(a.y) + ") outside tray");
  }
  if (a.yaw_index < 0 || a.yaw_index >= kYawCount) throw ArgumentError("yaw index out of range");
  if (!(a.depth >= kDepthMin - 1e-12 && a.depth <= kDepthMax + 1e-12)) {
    throw ArgumentError("scoop depth " + std::to_string(a.depth) + " outside [0.03, 0.08]");
  }
}

bool DragInBounds(const ScoopAction& a) {
  const Eigen::Vector2d end = Eigen::Vector2d(a.x, a.y) + Direction(a) * kDragLength;
  auto inside = [](double x, double y) { return x >= 0.0 && x <= kTrayX && y >= 0.0 && y <= kTrayY; };
  return inside(a.x, a.y) && inside(end.x(), end.y());
}

std::vector<int> TerrainTask::material_ids() const {
  std::vector<int> ids;
  for (const Material& m : materials) ids.push_back(m.id);
  return ids;
}

bool TerrainTask::has_ood_material() const {
  return std::any_of(materials.begin(), materials.end(), [](const Material& m) { return m.ood; });
}

bool TerrainTask::scoopable() const {
  return !(composition == Composition::kSingle && materials.front().latent[kScoopability] <= 0.0);
}

TerrainTask GenerateTask(int id, std::span<const Material> materials, Composition composition,
                         std::uint64_t topography_seed) {
  const std::size_t n = materials.size();
  const bool ok = (composition == Composition::kSingle && n == 1) ||
                  ((composition == Composition::kMixture || composition == Composition::kPartition) && n == 2) ||
                  (composition == Composition::kLayers && (n == 2 || n == 3));
  if (!ok) {
    throw ArgumentError("composition " + std::string(ToString(composition)) + " cannot use " + std::to_string(n) +
                        " materials");
  }
  TerrainTask task;
  task.id = id;
  task.composition = composition;
  task.materials.assign(materials.begin(), materials.end());
  Rng rng = MakeRng(topography_seed, {0x746572ULL});
  task.heightmap = RandomHeightmap(rng);
  std::uniform_int_distribution<int> boundary(kGridCols / 3, 2 * kGridCols / 3);

  switch (composition) {
    case Composition::kSingle:
      task.region_map = Eigen::MatrixXi::Constant(kGridRows, kGridCols, materials[0].id);
      break;
    case Composition::kPartition:
      task.region_map = PartitionMap(materials[0].id, materials[1].id, boundary(rng));
      break;
    case Composition::kMixture: {
      task.region_map.resize(kGridRows, kGridCols);
      std::bernoulli_distribution coin(0.5);
      for (int r = 0; r < kGridRows; ++r) {
        for (int c = 0; c < kGridCols; ++c) task.region_map(r, c) = coin(rng) ? materials[0].id : materials[1].id;
      }
      break;
    }
    case Composition::kLayers: {
      const int col = boundary(rng);
      const int left = materials[0].id;
      const int right = n == 3 ? materials[1].id : materials[0].id;
      const int buried = materials[n - 1].id;
      task.region_map = PartitionMap(left, right, col);
      const bool bury_left = std::bernoulli_distribution(0.5)(rng);
      task.hidden_layer_map = PartitionMap(bury_left ? buried : left, bury_left ? right : buried, col);
      break;
    }
  }
  return task;
}

double HeightAt(const Eigen::MatrixXd& h, double x, double y) {
  // Bilinear on cell centers, clamped at the tray edge.
  const double fx = std::clamp(x / kCell - 0.5, 0.0, static_cast<double>(h.cols() - 1));
  const double fy = std::clamp(y / kCell - 0.5, 0.0, static_cast<double>(h.rows() - 1));
  const int c0 = std::min(static_cast<int>(fx), static_cast<int>(h.cols()) - 2);
  const int r0 = std::min(static_cast<int>(fy), static_cast<int>(h.rows()) - 2);
  const double tx = fx - c0;
  const double ty = fy - r0;
  return (1 - ty) * ((1 - tx) * h(r0, c0) + tx * h(r0, c0 + 1)) + ty * ((1 - tx) * h(r0 + 1, c0) + tx * h(r0 + 1, c0 + 1));
}

double MaxSlopeDegrees(const Eigen::MatrixXd& h) {
  double worst = 0.0;
  for (Eigen::Index r = 0; r < h.rows(); ++r) {
    for (Eigen::Index c = 0; c < h.cols(); ++c) {
      const Eigen::Index cl = std::max<Eigen::Index>(c - 1, 0), cr = std::min<Eigen::Index>(c + 1, h.cols() - 1);
      const Eigen::Index rl = std::max<Eigen::Index>(r - 1, 0), rr = std::min<Eigen::Index>(r + 1, h.rows() - 1);
      const double gx = (h(r, cr) - h(r, cl)) / ((cr - cl) * kCell);
      const double gy = (h(rr, c) - h(rl, c)) / ((rr - rl) * kCell);
      worst = std::max(worst, std::hypot(gx, gy));
    }
  }
  return std::atan(worst) / kDeg;
}

double RewardOracle(const TerrainTask& task, const ScoopAction& action, std::optional<std::uint64_t> noise_seed) {
  ValidateAction(action);
  const bool buried = task.hidden_layer_map && action.depth > kLayerDepth;
  const Eigen::MatrixXi& map = buried ? *task.hidden_layer_map : task.region_map;

  std::array<double, kLatentDim> props{};
  int count = 0;
  ForEachFootprintPoint(action, [&](double x, double y) {
    const Material& m = FindMaterial(task, map(CellRow(y), CellCol(x)));
    for (int k = 0; k < kLatentDim; ++k) props[k] += m.latent[k];
    ++count;
  });
  for (double& p : props) p /= count;

  const Eigen::Vector2d end = Eigen::Vector2d(action.x, action.y) + Direction(action) * kDragLength;
  const double slope_along =
      (HeightAt(task.heightmap, end.x(), end.y()) - HeightAt(task.heightmap, action.x, action.y)) / kDragLength;

  const double base = kVolumePerDepth * action.depth * std::pow(action.depth / kReferenceDepth, props[kDepthSensitivity]);
  const double slope_mod = std::clamp(1.0 + kSlopeGain * props[kSlopePreference] * slope_along, 0.1, 2.5);
  const double depth_frac = (action.depth - kDepthMin) / (kDepthMax - kDepthMin);
  const double relief = action.stiffness == Stiffness::kHard ? kHardJamRelief : 1.0;
  const double gate = std::max(0.0, 1.0 - props[kJamming] * relief * (0.3 + 0.7 * depth_frac));
  const double clean = std::max(0.0, base * props[kScoopability] * slope_mod * gate);
  if (!noise_seed) return clean;

  Rng rng(*noise_seed);
  const double z = std::clamp(std::normal_distribution<double>(0.0, 1.0)(rng), -kNoiseTruncation, kNoiseTruncation);
  return std::max(0.0, clean + z * (kNoiseRelative * clean + kNoiseFloor));
}

double Quantize(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.8e", v);
  return std::strtod(buf, nullptr);
}

std::vector<double> ObservationFeatures(const TerrainTask& task, const ScoopAction& action) {
  const Eigen::Vector2d dir = Direction(action);
  const Eigen::Vector2d lateral(-dir.y(), dir.x());
  const Eigen::Vector2d start(action.x, action.y);
  const double h0 = HeightAt(task.heightmap, action.x, action.y);

  std::array<double, 4> bands{};
  double grad_mag = 0.0, grad_along = 0.0, sum = 0.0, sum_sq = 0.0;
  std::array<double, kAppearanceDim> appearance{};
  for (int u = 0; u < 8; ++u) {
    for (int v = 0; v < 8; ++v) {
      const Eigen::Vector2d p = start + dir * (u * kCell) + lateral * ((v - 3.5) * kCell);
      const double rel = (HeightAt(task.heightmap, p.x(), p.y()) - h0) * 100.0;
      bands[u / 2] += rel / 16.0;
      sum += rel;
      sum_sq += rel * rel;
      const Eigen::Vector2d g = Gradient(task.heightmap, p.x(), p.y());
      grad_mag += g.norm() / 64.0;
      grad_along += g.dot(dir) / 64.0;
      const Material& m = FindMaterial(task, task.region_map(CellRow(p.y()), CellCol(p.x())));
      for (int k = 0; k < kAppearanceDim; ++k) appearance[k] += m.appearance[k] / 64.0;
    }
  }
  const double mean = sum / 64.0;
  std::vector<double> f;
  f.reserve(kObservationDim);
  for (double b : bands) f.push_back(b);
  f.push_back(grad_mag);
  f.push_back(grad_along);
  f.push_back(std::sqrt(std::max(0.0, sum_sq / 64.0 - mean * mean)));
  for (double a : appearance) f.push_back(a);
  f.push_back(h0 * 10.0);
  for (double& v : f) v = Quantize(v);
  return f;
}

std::vector<double> ModelInput(std::span<const double> observation, const ScoopAction& action) {
  std::vector<double> x(observation.begin(), observation.end());
  x.push_back((action.depth - kReferenceDepth) / 0.025);
  x.push_back(action.stiffness == Stiffness::kHard ? 1.0 : 0.0);
  return x;
}

Eigen::MatrixXd ModelInputBatch(const TerrainTask& task, std::span<const ScoopAction> actions) {
  const auto n = static_cast<Eigen::Index>(actions.size());
  Eigen::MatrixXd x(n, kModelInputDim);
#pragma omp parallel for schedule(static) if (n >= kParallelActions)
  for (Eigen::Index i = 0; i < n; ++i) {
    const ScoopAction& a = actions[static_cast<std::size_t>(i)];
    const std::vector<double> row = ModelInput(ObservationFeatures(task, a), a);
    for (int c = 0; c < kModelInputDim; ++c) x(i, c) = row[static_cast<std::size_t>(c)];
  }
  return x;
}

void ApplyScoop(TerrainTask& task, const ScoopAction& action, double removed_cm3) {
  std::set<std::pair<int, int>> cells;
  ForEachFootprintPoint(action, [&](double x, double y) { cells.insert({CellRow(y), CellCol(x)}); });
  const double drop = removed_cm3 * 1e-6 / (static_cast<double>(cells.size()) * kCell * kCell);
  for (const auto& [r, c] : cells) task.heightmap(r, c) = std::max(0.0, task.heightmap(r, c) - drop);
}

Eigen::MatrixXd TaskDataset::InputMatrix() const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(records.size()), kModelInputDim);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::vector<double> row = records[i].model_input();
    if (row.size() != static_cast<std::size_t>(kModelInputDim)) throw ShapeError("record feature dim mismatch");
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), kModelInputDim);
  }
  return x;
}

Eigen::VectorXd TaskDataset::Rewards() const {
  Eigen::VectorXd y(static_cast<Eigen::Index>(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i) y(static_cast<Eigen::Index>(i)) = records[i].reward;
  return y;
}

ScoopAction SampleAction(Rng& rng) {
  std::uniform_real_distribution<double> ux(0.0, kTrayX), uy(0.0, kTrayY), ud(kDepthMin, kDepthMax);
  std::uniform_int_distribution<int> yaw(0, kYawCount - 1);
  std::bernoulli_distribution hard(0.5);
  for (;;) {
    ScoopAction a;
    a.x = Quantize(ux(rng));
    a.y = Quantize(uy(rng));
    a.yaw_index = yaw(rng);
    a.depth = Quantize(ud(rng));
    a.stiffness = hard(rng) ? Stiffness::kHard : Stiffness::kSoft;
    if (DragInBounds(a)) return a;
  }
}

TaskDataset SampleDataset(const TerrainTask& task, int records, std::uint64_t seed) {
  if (records < 1) throw ArgumentError("a dataset needs at least one record");
  TaskDataset data;
  data.task_id = task.id;
  data.material_ids = task.material_ids();
  data.composition = task.composition;
  Rng rng = MakeRng(seed, {static_cast<std::uint64_t>(task.id), 0x616374ULL});
  for (int i = 0; i < records; ++i) {
    ScoopRecord rec;
    rec.action = SampleAction(rng);
    rec.observation = ObservationFeatures(task, rec.action);
    rec.reward = Quantize(RewardOracle(task, rec.action, DeriveSeed(seed, {static_cast<std::uint64_t>(task.id),
                                                                            static_cast<std::uint64_t>(i), 0x6e6fULL})));
    data.records.push_back(std::move(rec));
  }
  return data;
}

std::vector<ScoopAction> EnumerateActionGrid() {
  std::vector<ScoopAction> grid;
  grid.reserve(15 * 12 * 8 * 4 * 2);
  for (int ix = 0; ix < 15; ++ix) {
    for (int iy = 0; iy < 12; ++iy) {
      for (int yaw = 0; yaw < kYawCount; ++yaw) {
        for (int id = 0; id < 4; ++id) {
          for (Stiffness s : {Stiffness::kSoft, Stiffness::kHard}) {
            ScoopAction a;
            a.x = 0.24 + 0.03 * ix;
            a.y = 0.19 + 0.02 * iy;
            a.yaw_index = yaw;
            a.depth = kDepthMin + id * (kDepthMax - kDepthMin) / 3.0;
            a.stiffness = s;
            grid.push_back(a);
          }
        }
      }
    }
  }
  return grid;
}

}  // namespace scoopgp::tasks
