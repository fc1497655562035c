#include <cmath>

#include "scoopgp/error.hpp"
#include "scoopgp/rng.hpp"
#include "scoopgp/tasks.hpp"

namespace scoopgp::tasks {
namespace {

// Latent box of the training pool, per coordinate.
constexpr std::array<double, kLatentDim> kTrainLow = {0.30, 0.00, -0.20, 0.20};
constexpr std::array<double, kLatentDim> kTrainHigh = {0.85, 0.30, 0.60, 1.00};

// OOD archetypes: which coordinate leaves the training box, and where to.
struct Excursion {
  int coordinate;
  double low;
  double high;
};
constexpr std::array<Excursion, 4> kExcursions = {{
    {kScoopability, 0.0, 0.0},        // non-scoopable sheet
    {kJamming, 0.65, 0.95},           // interlocking, jams
    {kSlopePreference, -1.0, -0.4},   // slides away when scooped against a slope
    {kDepthSensitivity, -1.0, -0.7},  // volume saturates with depth
}};

}  // namespace

MaterialPools GenerateMaterials(int n, double rho, std::uint64_t seed) {
  if (n < 2) throw ArgumentError("generate_materials needs n >= 2");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ArgumentError("appearance correlation must lie in [0, 1]");
  Rng rng = MakeRng(seed, {0x6d61746cULL});
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::Matrix<double, kAppearanceDim, kLatentDim> mixing;
  for (int r = 0; r < kAppearanceDim; ++r) {
    for (int c = 0; c < kLatentDim; ++c) mixing(r, c) = 0.5 * normal(rng);
  }

  const int n_ood = std::max(1, n / 3);
  MaterialPools pools;
  pools.materials.resize(static_cast<std::size_t>(n));
  for (int id = 0; id < n; ++id) {
    Material& m = pools.materials[static_cast<std::size_t>(id)];
    m.id = id;
    m.ood = id >= n - n_ood;
    for (int c = 0; c < kLatentDim; ++c) {
      std::uniform_real_distribution<double> u(kTrainLow[c], kTrainHigh[c]);
      m.latent[c] = u(rng);
    }
    if (m.ood) {
      const Excursion& e = kExcursions[static_cast<std::size_t>(id - (n - n_ood)) % kExcursions.size()];
      std::uniform_real_distribution<double> u(e.low, e.high);
      m.latent[e.coordinate] = e.low == e.high ? e.low : u(rng);
      pools.ood.push_back(id);
    } else {
      pools.training.push_back(id);
    }

    Eigen::Matrix<double, kLatentDim, 1> z;
    for (int c = 0; c < kLatentDim; ++c) {
      const double center = 0.5 * (kTrainLow[c] + kTrainHigh[c]);
      const double half = 0.5 * (kTrainHigh[c] - kTrainLow[c]);
      z(c) = (m.latent[c] - center) / half;
    }
    const Eigen::Matrix<double, kAppearanceDim, 1> signal = mixing * z;
    const double spread = std::sqrt(1.0 - rho * rho);
    for (int r = 0; r < kAppearanceDim; ++r) m.appearance[r] = rho * signal(r) + spread * normal(rng);
  }
  return pools;
}

}  // namespace scoopgp::tasks
