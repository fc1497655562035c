#include "scoopgp/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "scoopgp/error.hpp"
#include "scoopgp/rng.hpp"

namespace scoopgp::bench {
namespace {

constexpr std::uint64_t kQuery = 0x717279;
constexpr std::uint64_t kSupport = 0x737570;
constexpr std::uint64_t kTrialData = 0x646174;
constexpr std::uint64_t kTrialScorer = 0x73636f;

constexpr const char* kMaeHeader = "method\tmodel_seed\ttask_id\tshots\ttrials\tmae\ttop5_mae";
constexpr const char* kDeployHeader = "method\ttask_id\ttrial\tmodel_seed\tthreshold\tattempts\tsuccess";

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string Fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::string> Fields(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string part;
  while (std::getline(ss, part, '\t')) f.push_back(part);
  return f;
}

template <typename Parse>
auto Field(const std::string& source, std::size_t line, const std::string& text, const char* name, Parse parse) {
  try {
    std::size_t used = 0;
    auto v = parse(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw IngestionError(source + ":" + std::to_string(line) + ": field '" + name + "': cannot parse '" + text + "'");
  }
}

int ParseInt(const std::string& source, std::size_t line, const std::string& text, const char* name) {
  return Field(source, line, text, name, [](const std::string& s, std::size_t* n) { return std::stoi(s, n); });
}

double ParseReal(const std::string& source, std::size_t line, const std::string& text, const char* name) {
  return Field(source, line, text, name, [](const std::string& s, std::size_t* n) { return std::stod(s, n); });
}

// Aligned columns: the first column is left-justified, the rest right.
void PrintTable(std::ostream& out, const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& row : cells) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::string pad(width[c] - row[c].size(), ' ');
      line += c == 0 ? row[c] + pad : "  " + pad + row[c];
    }
    out << line << '\n';
  }
}

template <typename Row>
std::vector<std::string> MethodOrder(const std::vector<Row>& rows) {
  std::vector<std::string> names;
  for (const Row& r : rows) {
    if (std::find(names.begin(), names.end(), r.method) == names.end()) names.push_back(r.method);
  }
  return names;
}

struct Cell {
  std::size_t task = 0;
  int trial = 0;
};

DeployReport RunCells(std::span<const DeployMethod> methods, std::size_t n_tasks, const DeploySettings& settings,
                      const std::function<tasks::TaskDataset(std::size_t, int)>& dataset_for) {
  if (settings.trials < 1) throw ArgumentError("deployment needs at least one trial");
  for (const DeployMethod& m : methods) {
    const bool needs_model = m.scorer.kind != decide::ScorerKind::kRandom && m.scorer.kind != decide::ScorerKind::kOracle;
    if (needs_model && m.models.empty()) throw ArgumentError("method '" + m.name + "' has no models");
  }
  std::vector<Cell> cells;
  for (std::size_t t = 0; t < n_tasks; ++t) {
    for (int trial = 0; trial < settings.trials; ++trial) cells.push_back({t, trial});
  }
  std::vector<std::vector<DeployRow>> out(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  const auto n_cells = static_cast<std::ptrdiff_t>(cells.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n_cells; ++i) {
    try {
      const Cell& c = cells[static_cast<std::size_t>(i)];
      const tasks::TaskDataset data = dataset_for(c.task, c.trial);
      const double threshold = settings.threshold > 0.0 ? settings.threshold : decide::DefaultThreshold(data);
      for (const DeployMethod& m : methods) {
        const std::size_t model_index = m.models.empty() ? 0 : static_cast<std::size_t>(c.trial) % m.models.size();
        decide::DeploymentSettings ds{m.scorer, threshold, settings.budget,
                                      DeriveSeed(settings.seed, {kTrialScorer, static_cast<std::uint64_t>(data.task_id),
                                                                 static_cast<std::uint64_t>(c.trial)})};
        const decide::DeploymentTrace trace =
            decide::RunDatasetDeployment(m.models.empty() ? nullptr : &m.models[model_index], data, ds);
        out[static_cast<std::size_t>(i)].push_back(
            {m.name, data.task_id, c.trial, static_cast<int>(model_index), threshold, trace.attempts(), trace.success});
      }
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  DeployReport report;
  // Method-major order, then task, then trial.
  for (std::size_t m = 0; m < methods.size(); ++m) {
    for (const auto& cell_rows : out) report.rows.push_back(cell_rows[m]);
  }
  return report;
}

}  // namespace

MaeSummary MaeReport::Aggregate(const std::string& method, int shots) const {
  MaeSummary s;
  for (const MaeRow& r : rows) {
    if (r.method != method || r.shots != shots) continue;
    s.mae += r.mae;
    s.top5_mae += r.top5_mae;
    ++s.cells;
  }
  if (s.cells) {
    s.mae /= static_cast<double>(s.cells);
    s.top5_mae /= static_cast<double>(s.cells);
  }
  return s;
}

std::vector<std::string> MaeReport::methods() const { return MethodOrder(rows); }

std::vector<int> MaeReport::shots() const {
  std::set<int> s;
  for (const MaeRow& r : rows) s.insert(r.shots);
  return {s.begin(), s.end()};
}

void MaeReport::Append(const MaeReport& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }

void MaeReport::Write(std::ostream& out) const {
  out << kMaeHeader << '\n';
  for (const MaeRow& r : rows) {
    out << r.method << '\t' << r.model_seed << '\t' << r.task_id << '\t' << r.shots << '\t' << r.trials << '\t'
        << Num(r.mae) << '\t' << Num(r.top5_mae) << '\n';
  }
}

void MaeReport::WriteTable(std::ostream& out) const {
  std::vector<std::vector<std::string>> cells{{"method"}};
  const std::vector<int> ks = shots();
  for (int k : ks) cells[0].push_back(std::to_string(k) + "-shot MAE");
  for (int k : ks) cells[0].push_back(std::to_string(k) + "-shot top-5");
  for (const std::string& m : methods()) {
    std::vector<std::string> row{m};
    for (int k : ks) row.push_back(Fixed(Aggregate(m, k).mae, 2));
    for (int k : ks) row.push_back(Fixed(Aggregate(m, k).top5_mae, 2));
    cells.push_back(std::move(row));
  }
  PrintTable(out, cells);
}

MaeReport MaeReport::Read(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line) || line != kMaeHeader) throw IngestionError(source + ":1: not an MAE report");
  MaeReport report;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = Fields(line);
    if (f.size() != 7) throw IngestionError(source + ":" + std::to_string(n) + ": expected 7 fields");
    report.rows.push_back({f[0], ParseInt(source, n, f[1], "model_seed"), ParseInt(source, n, f[2], "task_id"),
                           ParseInt(source, n, f[3], "shots"), ParseInt(source, n, f[4], "trials"),
                           ParseReal(source, n, f[5], "mae"), ParseReal(source, n, f[6], "top5_mae")});
  }
  return report;
}

QuerySplit SampleQuerySplit(Eigen::Index records, int task_id, int trial, std::uint64_t seed) {
  const auto n_query = static_cast<Eigen::Index>(std::lround(kQueryFraction * static_cast<double>(records)));
  const std::uint64_t base = DeriveSeed(seed, {static_cast<std::uint64_t>(task_id), static_cast<std::uint64_t>(trial)});
  std::vector<Eigen::Index> order(static_cast<std::size_t>(records));
  std::iota(order.begin(), order.end(), 0);
  Rng qrng = MakeRng(base, {kQuery});
  std::shuffle(order.begin(), order.end(), qrng);
  QuerySplit split{{order.begin(), order.begin() + n_query}, {order.begin() + n_query, order.end()}};
  Rng srng = MakeRng(base, {kSupport});
  std::shuffle(split.support.begin(), split.support.end(), srng);
  return split;
}

namespace {

// Query positions of the largest rewards, ties to the earlier position.
std::vector<Eigen::Index> TopPositions(const Eigen::VectorXd& yq) {
  std::vector<Eigen::Index> top(static_cast<std::size_t>(yq.size()));
  std::iota(top.begin(), top.end(), 0);
  std::stable_sort(top.begin(), top.end(), [&](Eigen::Index a, Eigen::Index b) { return yq(a) > yq(b); });
  top.resize(std::min<std::size_t>(kTopCount, top.size()));
  return top;
}

struct ErrorPair {
  double mae = 0.0;
  double top5 = 0.0;
};

ErrorPair Errors(const Eigen::VectorXd& predicted, const Eigen::VectorXd& yq) {
  double abs_sum = 0.0, top_sum = 0.0;
  for (Eigen::Index i = 0; i < yq.size(); ++i) abs_sum += std::abs(predicted(i) - yq(i));
  const std::vector<Eigen::Index> top = TopPositions(yq);
  for (Eigen::Index i : top) top_sum += std::abs(predicted(i) - yq(i));
  return {abs_sum / static_cast<double>(yq.size()), top_sum / static_cast<double>(top.size())};
}

Eigen::VectorXd Gather(const Eigen::VectorXd& v, std::span<const Eigen::Index> idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(idx[i]);
  return out;
}

void CheckTask(const tasks::TaskDataset& task, std::span<const int> shots) {
  const auto n = static_cast<Eigen::Index>(task.records.size());
  const auto n_query = static_cast<Eigen::Index>(std::lround(kQueryFraction * static_cast<double>(n)));
  if (n_query < 1) throw ArgumentError("task " + std::to_string(task.task_id) + " is too small for a query set");
  for (int k : shots) {
    if (k < 0) throw ArgumentError("shot counts must be non-negative");
    if (k > n - n_query) {
      throw ArgumentError(std::to_string(k) + " shots exceed the " + std::to_string(n - n_query) +
                          " non-query records of task " + std::to_string(task.task_id));
    }
  }
}

}  // namespace

MaeReport EvalKshotMae(const gp::DeepGpModel& model, const std::string& method, int model_seed,
                       std::span<const tasks::TaskDataset> test, std::span<const int> shots, int trials,
                       std::uint64_t seed) {
  if (trials < 1) throw ArgumentError("MAE evaluation needs at least one trial");
  MaeReport report;
  for (const tasks::TaskDataset& task : test) {
    CheckTask(task, shots);
    const Eigen::MatrixXd x = task.InputMatrix();
    const Eigen::VectorXd y = task.Rewards();
    const gp::QueryCache all = gp::PrepareQueries(model, x);
    std::vector<ErrorPair> acc(shots.size());

    for (int trial = 0; trial < trials; ++trial) {
      const QuerySplit split = SampleQuerySplit(x.rows(), task.task_id, trial, seed);
      const auto n_query = static_cast<Eigen::Index>(split.query.size());
      gp::QueryCache q{Eigen::MatrixXd(n_query, all.embeddings.cols()), Gather(all.means, split.query)};
      for (Eigen::Index i = 0; i < n_query; ++i) q.embeddings.row(i) = all.embeddings.row(split.query[static_cast<std::size_t>(i)]);
      const Eigen::VectorXd yq = Gather(y, split.query);

      for (std::size_t s = 0; s < shots.size(); ++s) {
        const int k = shots[s];
        Eigen::MatrixXd xs(k, x.cols());
        for (int i = 0; i < k; ++i) xs.row(i) = x.row(split.support[static_cast<std::size_t>(i)]);
        const Eigen::VectorXd ys = Gather(y, std::span(split.support).first(static_cast<std::size_t>(k)));
        const std::vector<gp::PosteriorPrediction> post = gp::Posterior(model, xs, ys, q);
        Eigen::VectorXd predicted(n_query);
        for (Eigen::Index i = 0; i < n_query; ++i) predicted(i) = post[static_cast<std::size_t>(i)].mean;
        const ErrorPair e = Errors(predicted, yq);
        acc[s].mae += e.mae;
        acc[s].top5 += e.top5;
      }
    }
    for (std::size_t s = 0; s < shots.size(); ++s) {
      report.rows.push_back({method, model_seed, task.task_id, shots[s], trials, acc[s].mae / trials,
                             acc[s].top5 / trials});
    }
  }
  return report;
}

MaeReport EvalMeanOnlyMae(const gp::DeepGpModel& model, const std::string& method, int model_seed,
                          std::span<const tasks::TaskDataset> test, int trials, std::uint64_t seed) {
  if (trials < 1) throw ArgumentError("MAE evaluation needs at least one trial");
  MaeReport report;
  for (const tasks::TaskDataset& task : test) {
    CheckTask(task, {});
    const Eigen::VectorXd mean = gp::MeanBatch(model, task.InputMatrix());
    const Eigen::VectorXd y = task.Rewards();
    ErrorPair acc;
    for (int trial = 0; trial < trials; ++trial) {
      const QuerySplit split = SampleQuerySplit(y.size(), task.task_id, trial, seed);
      const ErrorPair e = Errors(Gather(mean, split.query), Gather(y, split.query));
      acc.mae += e.mae;
      acc.top5 += e.top5;
    }
    report.rows.push_back({method, model_seed, task.task_id, 0, trials, acc.mae / trials, acc.top5 / trials});
  }
  return report;
}

DeploySummary DeployReport::Aggregate(const std::string& method) const {
  DeploySummary s;
  int successes = 0;
  for (const DeployRow& r : rows) {
    if (r.method != method) continue;
    s.average_attempts += r.attempts;
    s.max_attempts = std::max(s.max_attempts, r.attempts);
    successes += r.success ? 1 : 0;
    ++s.trials;
  }
  if (s.trials) {
    s.average_attempts /= static_cast<double>(s.trials);
    s.success_rate = successes / static_cast<double>(s.trials);
  }
  return s;
}

std::vector<std::string> DeployReport::methods() const { return MethodOrder(rows); }

std::vector<int> DeployReport::Attempts(const std::string& method) const {
  std::vector<const DeployRow*> sel;
  for (const DeployRow& r : rows) {
    if (r.method == method) sel.push_back(&r);
  }
  std::stable_sort(sel.begin(), sel.end(), [](const DeployRow* a, const DeployRow* b) {
    return std::tie(a->task_id, a->trial) < std::tie(b->task_id, b->trial);
  });
  std::vector<int> out;
  for (const DeployRow* r : sel) out.push_back(r->attempts);
  return out;
}

void DeployReport::Write(std::ostream& out) const {
  out << kDeployHeader << '\n';
  for (const DeployRow& r : rows) {
    out << r.method << '\t' << r.task_id << '\t' << r.trial << '\t' << r.model_seed << '\t' << Num(r.threshold) << '\t'
        << r.attempts << '\t' << (r.success ? 1 : 0) << '\n';
  }
}

void DeployReport::WriteTable(std::ostream& out) const {
  std::vector<std::vector<std::string>> cells{{"method", "avg attempts", "max attempts", "success rate", "trials"}};
  for (const std::string& m : methods()) {
    const DeploySummary s = Aggregate(m);
    cells.push_back({m, Fixed(s.average_attempts, 2), std::to_string(s.max_attempts), Fixed(s.success_rate, 3),
                     std::to_string(s.trials)});
  }
  PrintTable(out, cells);
}

DeployReport DeployReport::Read(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line) || line != kDeployHeader) throw IngestionError(source + ":1: not a deployment report");
  DeployReport report;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = Fields(line);
    if (f.size() != 7) throw IngestionError(source + ":" + std::to_string(n) + ": expected 7 fields");
    report.rows.push_back({f[0], ParseInt(source, n, f[1], "task_id"), ParseInt(source, n, f[2], "trial"),
                           ParseInt(source, n, f[3], "model_seed"), ParseReal(source, n, f[4], "threshold"),
                           ParseInt(source, n, f[5], "attempts"), ParseInt(source, n, f[6], "success") != 0});
  }
  return report;
}

DeployReport EvalSimulatedDeployment(std::span<const DeployMethod> methods, std::span<const tasks::TerrainTask> tasks,
                                     int records_per_trial, const DeploySettings& settings) {
  std::vector<const tasks::TerrainTask*> included;
  for (const tasks::TerrainTask& t : tasks) {
    if (t.scoopable()) included.push_back(&t);
  }
  return RunCells(methods, included.size(), settings, [&](std::size_t t, int trial) {
    return tasks::SampleDataset(*included[t], records_per_trial,
                                DeriveSeed(settings.seed, {kTrialData, static_cast<std::uint64_t>(trial)}));
  });
}

DeployReport EvalDatasetDeployment(std::span<const DeployMethod> methods, std::span<const tasks::TaskDataset> data,
                                   const DeploySettings& settings) {
  return RunCells(methods, data.size(), settings, [&](std::size_t t, int) { return data[t]; });
}

SignTestResult SignTest(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw ArgumentError("sign test needs paired samples");
  SignTestResult r;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) {
      ++r.wins;
    } else if (a[i] > b[i]) {
      ++r.losses;
    } else {
      ++r.ties;
    }
  }
  const int n = r.wins + r.losses;
  double p = 0.0;
  for (int k = r.wins; k <= n; ++k) {
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  }
  r.p_value = std::min(1.0, p);
  return r;
}

}  // namespace scoopgp::bench
