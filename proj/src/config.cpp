#include "scoopgp/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

#include "scoopgp/error.hpp"

namespace scoopgp {
namespace {

struct Key {
  const char* name;
  const char* doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

int ToInt(const std::string& s) {
  std::size_t used = 0;
  const int v = std::stoi(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

double ToReal(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

std::string Str(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

#define SCOOPGP_INT(key, field, doc) \
  Key{key, doc, [](RunConfig& c, const std::string& v) { c.field = ToInt(v); }, \
      [](const RunConfig& c) { return std::to_string(c.field); }}
#define SCOOPGP_REAL(key, field, doc) \
  Key{key, doc, [](RunConfig& c, const std::string& v) { c.field = ToReal(v); }, \
      [](const RunConfig& c) { return Str(c.field); }}

const std::vector<Key>& Keys() {
  static const std::vector<Key> keys = {
      SCOOPGP_INT("materials", world.materials, "number of synthetic materials; the last third are held out as OOD"),
      SCOOPGP_REAL("appearance_rho", world.appearance_rho, "correlation between appearance and latent properties"),
      SCOOPGP_INT("train_tasks", world.train_tasks, "training terrains in the offline database"),
      SCOOPGP_INT("test_tasks", world.test_tasks, "OOD test terrains"),
      SCOOPGP_INT("records_per_task", world.records_per_task, "uniform random scoops per training terrain"),
      SCOOPGP_INT("test_records_per_task", world.test_records_per_task, "uniform random scoops per test terrain"),
      SCOOPGP_REAL("mean_learning_rate", training.mean_learning_rate, "Adam step size for mean training"),
      SCOOPGP_REAL("kernel_learning_rate", training.kernel_learning_rate, "Adam step size for kernel and DKMT training"),
      SCOOPGP_INT("patience", training.patience, "epochs without improvement before early stopping"),
      SCOOPGP_INT("max_epochs", training.max_epochs, "hard epoch cap for every training loop"),
      SCOOPGP_INT("batch_size", training.batch_size, "mean-training minibatch size"),
      SCOOPGP_REAL("validation_fraction", training.validation_fraction, "records held out for mean early stopping"),
      SCOOPGP_REAL("noise_floor", training.noise_floor, "lower clamp on the GP noise std during training"),
      SCOOPGP_INT("folds", training.folds, "material folds K for meta-training"),
      Key{"kernel_features", "kernel-path extractor: final (shared with the mean) or own",
          [](RunConfig& c, const std::string& v) {
            if (v == "final") {
              c.training.kernel_features = meta::KernelFeatureMode::kFinalExtractor;
            } else if (v == "own") {
              c.training.kernel_features = meta::KernelFeatureMode::kOwnExtractor;
            } else {
              throw std::invalid_argument(v);
            }
          },
          [](const RunConfig& c) {
            return std::string(c.training.kernel_features == meta::KernelFeatureMode::kOwnExtractor ? "own" : "final");
          }},
      SCOOPGP_INT("model_seeds", model_seeds, "training repeats per method"),
      SCOOPGP_REAL("gamma", gamma, "UCB exploration weight"),
      SCOOPGP_INT("budget", budget, "attempts per deployment trial"),
      Key{"shots", "comma-separated support sizes for MAE evaluation",
          [](RunConfig& c, const std::string& v) {
            std::vector<int> shots;
            std::stringstream ss(v);
            std::string part;
            while (std::getline(ss, part, ',')) shots.push_back(ToInt(part));
            if (shots.empty()) throw std::invalid_argument(v);
            c.shots = shots;
          },
          [](const RunConfig& c) {
            std::string s;
            for (std::size_t i = 0; i < c.shots.size(); ++i) s += (i ? "," : "") + std::to_string(c.shots[i]);
            return s;
          }},
      SCOOPGP_INT("mae_trials", mae_trials, "query/support resamples per task in MAE evaluation"),
      SCOOPGP_INT("deploy_trials", deploy_trials, "deployment trials per task"),
      Key{"out_dir", "directory for generated files (env SCOOPGP_OUT_DIR)",
          [](RunConfig& c, const std::string& v) { c.out_dir = v; }, [](const RunConfig& c) { return c.out_dir; }},
      SCOOPGP_INT("threads", threads, "OpenMP threads, 0 for the runtime default (env SCOOPGP_THREADS)"),
  };
  return keys;
}

#undef SCOOPGP_INT
#undef SCOOPGP_REAL

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

void Validate(const RunConfig& c, const std::string& source) {
  auto require = [&](bool ok, const char* what) {
    if (!ok) throw ConfigurationError(source + ": " + what);
  };
  require(c.world.materials >= 2, "materials must be at least 2");
  require(c.world.appearance_rho >= 0.0 && c.world.appearance_rho <= 1.0, "appearance_rho must lie in [0, 1]");
  require(c.world.train_tasks >= 1 && c.world.test_tasks >= 1, "task counts must be positive");
  require(c.world.records_per_task >= 1 && c.world.test_records_per_task >= 1, "record counts must be positive");
  require(c.training.mean_learning_rate > 0.0 && c.training.kernel_learning_rate > 0.0, "learning rates must be positive");
  require(c.training.patience >= 1 && c.training.max_epochs >= 1 && c.training.batch_size >= 1,
          "patience, max_epochs and batch_size must be positive");
  require(c.training.validation_fraction >= 0.0 && c.training.validation_fraction < 1.0,
          "validation_fraction must lie in [0, 1)");
  require(c.training.noise_floor > 0.0, "noise_floor must be positive");
  require(c.training.folds >= 1, "folds must be positive");
  require(c.model_seeds >= 1, "model_seeds must be positive");
  require(c.gamma >= 0.0, "gamma must be non-negative");
  require(c.budget >= 1, "budget must be positive");
  require(c.mae_trials >= 1 && c.deploy_trials >= 1, "trial counts must be positive");
  require(c.threads >= 0, "threads must be non-negative");
}

}  // namespace

RunConfig ParseConfig(std::istream& in, const std::string& source) {
  RunConfig config;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(n);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigurationError(where + ": expected key = value");
    const std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    const auto& keys = Keys();
    auto it = std::find_if(keys.begin(), keys.end(), [&](const Key& k) { return key == k.name; });
    if (it == keys.end()) throw ConfigurationError(where + ": unknown key '" + key + "'");
    try {
      it->set(config, value);
    } catch (const std::exception&) {
      throw ConfigurationError(where + ": bad value '" + value + "' for " + key);
    }
  }
  Validate(config, source);
  return config;
}

RunConfig LoadConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot open config '" + path + "'");
  return ParseConfig(in, path);
}

void ApplyEnvironment(RunConfig& config) {
  if (const char* dir = std::getenv("SCOOPGP_OUT_DIR"); dir && *dir) config.out_dir = dir;
  if (const char* threads = std::getenv("SCOOPGP_THREADS"); threads && *threads) {
    try {
      config.threads = ToInt(threads);
    } catch (const std::exception&) {
      throw ConfigurationError(std::string("SCOOPGP_THREADS is not an integer: '") + threads + "'");
    }
    if (config.threads < 0) throw ConfigurationError("SCOOPGP_THREADS must be non-negative");
  }
}

void WriteConfig(std::ostream& out, const RunConfig& config) {
  for (const Key& k : Keys()) out << "# " << k.doc << '\n' << k.name << " = " << k.get(config) << '\n';
}

}  // namespace scoopgp
