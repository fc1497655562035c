#include <omp.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scoopgp/bench.hpp"
#include "scoopgp/config.hpp"
#include "scoopgp/decide.hpp"
#include "scoopgp/error.hpp"
#include "scoopgp/gp.hpp"
#include "scoopgp/meta.hpp"
#include "scoopgp/rng.hpp"
#include "scoopgp/tasks.hpp"

namespace fs = std::filesystem;
using namespace scoopgp;

namespace {

// Bad invocations that CLI11 cannot see (missing inputs, bad method specs).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::uint64_t seed = 0;
  std::string config_path;
};

void AddCommon(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "random seed")->capture_default_str();
  app->add_option("--config", c.config_path, "key = value configuration file")->check(CLI::ExistingFile);
}

RunConfig Load(const Common& c) {
  RunConfig config = c.config_path.empty() ? RunConfig{} : LoadConfig(c.config_path);
  ApplyEnvironment(config);
  if (config.threads > 0) omp_set_num_threads(config.threads);
  return config;
}

void RequireFile(const std::string& path) {
  if (!fs::is_regular_file(path)) throw UsageError("no such file: " + path);
}

std::ofstream OpenOut(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  return out;
}

std::vector<tasks::TaskDataset> ReadData(const std::string& records) {
  RequireFile(records);
  std::string manifest = records;
  if (const auto pos = manifest.rfind("_records.tsv"); pos != std::string::npos) {
    manifest.replace(pos, std::string("_records.tsv").size(), "_manifest.tsv");
  }
  return tasks::ReadDataset(records, fs::is_regular_file(manifest) && manifest != records ? manifest : "");
}

// world.txt: "world_seed = <s>" followed by the full configuration.
void WriteWorldFile(const std::string& path, std::uint64_t seed, const RunConfig& config) {
  std::ofstream out = OpenOut(path);
  out << "world_seed = " << seed << '\n';
  WriteConfig(out, config);
}

std::pair<std::uint64_t, RunConfig> ReadWorldFile(const std::string& dir) {
  const std::string path = (fs::path(dir) / "world.txt").string();
  RequireFile(path);
  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  const std::string prefix = "world_seed = ";
  if (first.rfind(prefix, 0) != 0) throw ConfigurationError(path + ":1: expected world_seed");
  const std::uint64_t seed = std::stoull(first.substr(prefix.size()));
  std::stringstream rest;
  rest << in.rdbuf();
  RunConfig config = ParseConfig(rest, path);
  ApplyEnvironment(config);
  return {seed, config};
}

// NAME:SCORER[:PATH,PATH...]
bench::DeployMethod ParseMethod(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ':')) parts.push_back(part);
  if (parts.size() < 2 || parts.size() > 3 || parts[0].empty()) {
    throw UsageError("--method expects NAME:SCORER[:MODEL,...], got '" + text + "'");
  }
  bench::DeployMethod m;
  m.name = parts[0];
  try {
    m.scorer.kind = decide::ParseScorer(parts[1]);
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  if (parts.size() == 3) {
    std::stringstream paths(parts[2]);
    while (std::getline(paths, part, ',')) {
      RequireFile(part);
      m.models.push_back(gp::LoadModel(part));
    }
  }
  return m;
}

int Gen(const Common& c, const std::string& out_dir_flag) {
  const RunConfig config = Load(c);
  const std::string dir = out_dir_flag.empty() ? config.out_dir : out_dir_flag;
  const tasks::World world = tasks::BuildWorld(config.world, c.seed);
  fs::create_directories(dir);
  WriteWorldFile((fs::path(dir) / "world.txt").string(), c.seed, config);
  const auto path = [&](const char* name) { return (fs::path(dir) / name).string(); };
  tasks::SaveDataset(path("train_records.tsv"), path("train_manifest.tsv"), world.train_data);
  tasks::SaveDataset(path("test_records.tsv"), path("test_manifest.tsv"), world.test_data);
  const tasks::DatasetStatistics train = tasks::Summarize(world.train_data);
  const tasks::DatasetStatistics test = tasks::Summarize(world.test_data);
  std::cout << "wrote " << dir << ": " << train.tasks << " training tasks (" << train.records << " records), "
            << test.tasks << " test tasks (" << test.records << " records)\n";
  return 0;
}

int Train(const Common& c, const std::string& method, std::string records, std::string out, int folds) {
  RunConfig config = Load(c);
  if (folds > 0) config.training.folds = folds;
  if (records.empty()) records = (fs::path(config.out_dir) / "train_records.tsv").string();
  if (out.empty()) out = (fs::path(config.out_dir) / (method + "-seed" + std::to_string(c.seed) + ".model")).string();
  const std::vector<tasks::TaskDataset> data = ReadData(records);
  const meta::Architecture arch = meta::Architecture::Default();

  gp::DeepGpModel model;
  std::ostringstream log;
  if (method == "codega") {
    const meta::CodegaResult r = meta::TrainCodega(data, arch, config.training, c.seed);
    for (const meta::FoldCheckpoint& ck : r.residuals.checkpoints) ck.fit.report.Write(log, ck.name());
    r.kernel.report.Write(log, "kernel");
    r.final_mean.report.Write(log, "mean");
    model = r.model;
  } else if (method == "dkmt") {
    const meta::DkmtResult r = meta::TrainDkmt(data, arch, config.training, c.seed);
    r.report.Write(log, "dkmt");
    model = r.model;
  } else {
    meta::TrainingReport report;
    model = meta::TrainMeanOnly(data, arch, config.training, c.seed, &report);
    report.Write(log, "mean");
  }
  std::ofstream model_out = OpenOut(out);
  gp::WriteModel(model_out, model);
  std::ofstream log_out = OpenOut(out + ".log");
  log_out << "# method=" << method << " seed=" << c.seed << " records=" << records << '\n' << log.str();
  std::cout << "wrote " << out << " (lengthscale " << model.lengthscale() << ", outputscale " << model.outputscale()
            << ", noise " << model.noise_std() << ")\n";
  return 0;
}

int EvalMae(const Common& c, const std::vector<std::string>& models, std::string test, std::string out,
            std::vector<int> shots, int trials) {
  const RunConfig config = Load(c);
  if (test.empty()) test = (fs::path(config.out_dir) / "test_records.tsv").string();
  if (out.empty()) out = (fs::path(config.out_dir) / "mae.tsv").string();
  if (shots.empty()) shots = config.shots;
  if (trials <= 0) trials = config.mae_trials;
  const std::vector<tasks::TaskDataset> data = ReadData(test);

  bench::MaeReport report;
  std::map<std::string, int> seen;
  for (const std::string& spec : models) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--model expects METHOD=PATH, got '" + spec + "'");
    const std::string method = spec.substr(0, eq), path = spec.substr(eq + 1);
    RequireFile(path);
    report.Append(bench::EvalKshotMae(gp::LoadModel(path), method, seen[method]++, data, shots, trials, c.seed));
  }
  std::ofstream file = OpenOut(out);
  file << "# seed=" << c.seed << " test=" << test << '\n';
  for (const std::string& spec : models) file << "# model " << spec << '\n';
  report.Write(file);
  report.WriteTable(std::cout);
  std::cout << "wrote " << out << '\n';
  return 0;
}

int Deploy(const Common& c, const std::string& mode, const std::vector<std::string>& method_specs,
           const std::string& world_dir, const std::string& test, std::string out, double threshold, int budget,
           int trials, int task_id) {
  RunConfig config = Load(c);
  std::vector<bench::DeployMethod> methods;
  for (const std::string& s : method_specs) methods.push_back(ParseMethod(s));
  if (budget <= 0) budget = config.budget;
  if (trials <= 0) trials = config.deploy_trials;
  for (bench::DeployMethod& m : methods) m.scorer.gamma = config.gamma;

  if (mode == "dataset") {
    if (out.empty()) out = (fs::path(config.out_dir) / "deploy.tsv").string();
    const bench::DeploySettings settings{budget, trials, c.seed, threshold};
    bench::DeployReport report;
    if (!test.empty()) {
      report = bench::EvalDatasetDeployment(methods, ReadData(test), settings);
    } else {
      if (world_dir.empty()) throw UsageError("deploy --mode dataset needs --world or --test");
      const auto [world_seed, world_config] = ReadWorldFile(world_dir);
      const tasks::World world = tasks::BuildWorld(world_config.world, world_seed);
      report = bench::EvalSimulatedDeployment(methods, world.test_tasks, world_config.world.test_records_per_task,
                                              settings);
    }
    std::ofstream file = OpenOut(out);
    file << "# seed=" << c.seed << " budget=" << budget << " trials=" << trials << '\n';
    for (const std::string& s : method_specs) file << "# method " << s << '\n';
    report.Write(file);
    report.WriteTable(std::cout);
    std::cout << "wrote " << out << '\n';
    return 0;
  }

  if (world_dir.empty()) throw UsageError("deploy --mode live needs --world");
  if (out.empty()) out = (fs::path(config.out_dir) / "live_traces.tsv").string();
  const auto [world_seed, world_config] = ReadWorldFile(world_dir);
  const tasks::World world = tasks::BuildWorld(world_config.world, world_seed);
  std::ofstream file = OpenOut(out);
  bool any = false;
  for (std::size_t t = 0; t < world.test_tasks.size(); ++t) {
    const tasks::TerrainTask& task = world.test_tasks[t];
    if (task_id >= 0 && task.id != task_id) continue;
    any = true;
    const double b = threshold > 0.0 ? threshold : decide::DefaultThreshold(world.test_data[t]);
    for (const bench::DeployMethod& m : methods) {
      for (int trial = 0; trial < trials; ++trial) {
        const gp::DeepGpModel* model = m.models.empty() ? nullptr : &m.models[static_cast<std::size_t>(trial) % m.models.size()];
        const decide::DeploymentSettings ds{m.scorer, b, budget,
                                            DeriveSeed(c.seed, {static_cast<std::uint64_t>(task.id),
                                                                static_cast<std::uint64_t>(trial)})};
        const decide::DeploymentTrace trace = decide::RunLiveDeployment(model, task, ds);
        file << "# method=" << m.name << " trial=" << trial << '\n';
        trace.Write(file);
        std::cout << m.name << " task " << task.id << " trial " << trial << ": " << trace.attempts() << " attempts, "
                  << (trace.success ? "success" : "budget exhausted") << '\n';
      }
    }
  }
  if (!any) throw UsageError("no test task with id " + std::to_string(task_id));
  std::cout << "wrote " << out << '\n';
  return 0;
}

int Ingest(const Common& c, const std::string& records, const std::string& manifest, const std::string& out_dir) {
  Load(c);
  RequireFile(records);
  if (!manifest.empty()) RequireFile(manifest);
  const std::vector<tasks::TaskDataset> data = tasks::ReadDataset(records, manifest);
  const tasks::DatasetStatistics stats = tasks::Summarize(data);
  std::cout << "tasks " << stats.tasks << "\nrecords " << stats.records << "\nmean_reward " << stats.mean_reward
            << "\nmax_reward " << stats.max_reward << '\n';
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    tasks::SaveDataset((fs::path(out_dir) / "ingested_records.tsv").string(),
                       (fs::path(out_dir) / "ingested_manifest.tsv").string(), data);
  }
  return 0;
}

// Strips the "# ..." provenance lines that precede report rows.
std::stringstream ReportBody(const std::string& path) {
  RequireFile(path);
  std::ifstream in(path);
  std::stringstream body;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("#", 0) != 0) body << line << '\n';
  }
  return body;
}

int Report(const Common& c, const std::string& mae, const std::string& deploy, const std::string& compare,
           const std::string& out) {
  Load(c);
  if (mae.empty() && deploy.empty()) throw UsageError("report needs --mae and/or --deploy");
  std::ostringstream text;
  if (!mae.empty()) {
    std::stringstream body = ReportBody(mae);
    text << "Prediction MAE (" << mae << ")\n";
    bench::MaeReport::Read(body, mae).WriteTable(text);
  }
  if (!deploy.empty()) {
    std::stringstream body = ReportBody(deploy);
    const bench::DeployReport report = bench::DeployReport::Read(body, deploy);
    if (!mae.empty()) text << '\n';
    text << "Simulated deployment (" << deploy << ")\n";
    report.WriteTable(text);
    if (!compare.empty()) {
      const auto comma = compare.find(',');
      if (comma == std::string::npos) throw UsageError("--compare expects A,B");
      const std::string a = compare.substr(0, comma), b = compare.substr(comma + 1);
      const bench::SignTestResult s = bench::SignTest(report.Attempts(a), report.Attempts(b));
      text << "sign test " << a << " < " << b << ": wins " << s.wins << ", losses " << s.losses << ", ties " << s.ties
           << ", p = " << s.p_value << '\n';
    }
  }
  std::cout << text.str();
  if (!out.empty()) OpenOut(out) << text.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep GP scooping: synthetic data, meta-training, evaluation and deployment"};
  app.require_subcommand(1);

  Common gen_c, train_c, mae_c, deploy_c, ingest_c, report_c;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "generate a synthetic world: training database and OOD test tasks");
  AddCommon(gen, gen_c);
  gen->add_option("--out", gen_out, "output directory (default: out_dir)");

  std::string method = "codega", train_records, train_out;
  int folds = 0;
  auto* train = app.add_subcommand("train", "train a model on a record file");
  AddCommon(train, train_c);
  train->add_option("--method", method, "codega, dkmt or mean-only")
      ->check(CLI::IsMember({"codega", "dkmt", "mean-only"}))
      ->capture_default_str();
  train->add_option("--folds", folds, "material folds (overrides the config)")->check(CLI::PositiveNumber);
  train->add_option("--records", train_records, "training records (default: out_dir/train_records.tsv)");
  train->add_option("--out", train_out, "checkpoint path (default: out_dir/<method>-seed<seed>.model)");

  std::vector<std::string> mae_models;
  std::string mae_test, mae_out;
  std::vector<int> shots;
  int mae_trials = 0;
  auto* mae = app.add_subcommand("eval-mae", "k-shot prediction MAE on test records");
  AddCommon(mae, mae_c);
  mae->add_option("--model", mae_models, "METHOD=PATH, repeatable; repeats of a method are its model seeds")->required();
  mae->add_option("--test", mae_test, "test records (default: out_dir/test_records.tsv)");
  mae->add_option("--shots", shots, "support sizes")->delimiter(',');
  mae->add_option("--trials", mae_trials, "query/support resamples per task");
  mae->add_option("--out", mae_out, "report path (default: out_dir/mae.tsv)");

  std::string mode = "dataset", world_dir, deploy_test, deploy_out;
  std::vector<std::string> methods;
  double threshold = 0.0;
  int budget = 0, deploy_trials = 0, task_id = -1;
  auto* deploy = app.add_subcommand("deploy", "run deployment trials");
  AddCommon(deploy, deploy_c);
  deploy->add_option("--mode", mode, "dataset or live")->check(CLI::IsMember({"dataset", "live"}))->capture_default_str();
  deploy->add_option("--method", methods, "NAME:SCORER[:MODEL,...], scorer one of ucb, greedy, non-adaptive, random, oracle")
      ->required();
  deploy->add_option("--world", world_dir, "directory written by gen");
  deploy->add_option("--test", deploy_test, "fixed test records (dataset mode)");
  deploy->add_option("--threshold", threshold, "success threshold B (default: 5th largest reward per dataset)");
  deploy->add_option("--budget", budget, "attempts per trial");
  deploy->add_option("--trials", deploy_trials, "trials per task");
  deploy->add_option("--task", task_id, "live mode: only this test task id");
  deploy->add_option("--out", deploy_out, "report or trace path");

  std::string ingest_records, ingest_manifest, ingest_out;
  auto* ingest = app.add_subcommand("ingest", "validate a record file in the canonical schema");
  AddCommon(ingest, ingest_c);
  ingest->add_option("--records", ingest_records, "record file")->required();
  ingest->add_option("--manifest", ingest_manifest, "manifest file");
  ingest->add_option("--out", ingest_out, "directory for canonical copies");

  std::string report_mae, report_deploy, compare, report_out;
  auto* report = app.add_subcommand("report", "render aggregate tables from report files");
  AddCommon(report, report_c);
  report->add_option("--mae", report_mae, "MAE report");
  report->add_option("--deploy", report_deploy, "deployment report");
  report->add_option("--compare", compare, "A,B: sign test of A's attempts against B's");
  report->add_option("--out", report_out, "also write the tables here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return Gen(gen_c, gen_out);
    if (train->parsed()) return Train(train_c, method, train_records, train_out, folds);
    if (mae->parsed()) return EvalMae(mae_c, mae_models, mae_test, mae_out, shots, mae_trials);
    if (deploy->parsed()) {
      return Deploy(deploy_c, mode, methods, world_dir, deploy_test, deploy_out, threshold, budget, deploy_trials, task_id);
    }
    if (ingest->parsed()) return Ingest(ingest_c, ingest_records, ingest_manifest, ingest_out);
    if (report->parsed()) return Report(report_c, report_mae, report_deploy, compare, report_out);
  } catch (const UsageError& e) {
    std::cerr << "scoopgp: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "scoopgp: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
