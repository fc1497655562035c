#include <doctest.h>

#include <numeric>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "scoopgp/decide.hpp"
#include "scoopgp/error.hpp"

using namespace scoopgp;
using namespace scoopgp::decide;

namespace {

DeploymentSettings Settings(ScorerKind kind, double threshold, int budget = 20, std::uint64_t seed = 0) {
  return {{kind, kDefaultGamma}, threshold, budget, seed};
}

}  // namespace

TEST_CASE("support set accepts only failures") {
  SupportSet s(3, 10.0);
  const std::vector<double> x = {1, 2, 3};
  s.Append(x, 4.0);
  CHECK(s.size() == 1);
  CHECK_THROWS_AS(s.Append(x, 10.0), ArgumentError);
  CHECK_THROWS_AS(s.Append(std::vector<double>{1, 2}, 1.0), ArgumentError);
  CHECK(s.inputs().row(0)(2) == 3.0);
  CHECK(s.rewards()(0) == 4.0);
}

TEST_CASE("selection") {
  const std::vector<double> scores = {1.0, 5.0, 5.0, 2.0};
  CHECK(SelectAction(scores, std::vector<char>{1, 1, 1, 1}) == 1);
  CHECK(SelectAction(scores, std::vector<char>{1, 0, 1, 1}) == 2);
  CHECK(SelectAction(scores, std::vector<char>{1, 0, 0, 1}) == 3);
  CHECK_THROWS_AS(SelectAction(scores, std::vector<char>{0, 0, 0, 0}), SelectionError);
}

TEST_CASE("ucb is mean plus gamma sigma of the posterior") {
  const gp::DeepGpModel m = oracle::RandomModel(4);
  Rng rng = MakeRng(4);
  const Eigen::MatrixXd q = oracle::RandomInputs(rng, 12, m.input_dim());
  const Eigen::MatrixXd sx = oracle::RandomInputs(rng, 3, m.input_dim());
  SupportSet s(m.input_dim(), 1e9);
  Eigen::VectorXd sy(3);
  for (Eigen::Index i = 0; i < 3; ++i) {
    sy(i) = 0.5 * static_cast<double>(i) - 0.3;
    s.Append(oracle::Row(sx, i), sy(i));
  }
  const gp::QueryCache cache = gp::PrepareQueries(m, q);
  const auto want = oracle::DenseInversePosterior(m, sx, sy, q, gp::kJitterStart * m.outputscale());
  const std::vector<double> ucb = ScoreUcb(m, s, cache, 2.0);
  const std::vector<double> greedy = ScoreGreedy(m, s, cache);
  const std::vector<double> zero = ScoreUcb(m, s, cache, 0.0);
  const std::vector<double> plain = ScoreNonAdaptive(cache);
  for (std::size_t i = 0; i < ucb.size(); ++i) {
    CHECK(ucb[i] == doctest::Approx(want[i].mean + 2.0 * std::sqrt(want[i].variance)).epsilon(1e-9));
    CHECK(greedy[i] == doctest::Approx(want[i].mean).epsilon(1e-9));
    CHECK(zero[i] == greedy[i]);
    CHECK(plain[i] == doctest::Approx(oracle::MeanOf(m, oracle::Row(q, static_cast<Eigen::Index>(i)))));
  }
}

TEST_CASE("with no support ucb ranks like the mean") {
  const gp::DeepGpModel m = fixture::InitialModel(3);
  const tasks::TaskDataset d = fixture::BinaryDataset(40, 3, 3);
  const gp::QueryCache cache = gp::PrepareQueries(m, d.InputMatrix());
  const SupportSet empty(tasks::kModelInputDim, 10.0);
  const std::vector<char> all(40, 1);
  CHECK(SelectAction(ScoreUcb(m, empty, cache, 2.0), all) == SelectAction(ScoreNonAdaptive(cache), all));
}

TEST_CASE("ucb with an empty support is the prior closed form") {
  const gp::DeepGpModel m = oracle::RandomModel(9);
  Rng rng = MakeRng(9);
  const Eigen::MatrixXd q = oracle::RandomInputs(rng, 10, m.input_dim());
  const std::vector<double> ucb = ScoreUcb(m, SupportSet(m.input_dim(), 1.0), gp::PrepareQueries(m, q), 1.5);
  const double sd = std::sqrt(m.outputscale() + m.noise_std() * m.noise_std());
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    CHECK(ucb[static_cast<std::size_t>(i)] == doctest::Approx(oracle::MeanOf(m, oracle::Row(q, i)) + 1.5 * sd).epsilon(1e-12));
}

TEST_CASE("non-adaptive ranking is a sort by the mean") {
  const gp::DeepGpModel m = fixture::InitialModel(6);
  const tasks::TaskDataset d = fixture::BinaryDataset(25, 25, 6);
  const Eigen::MatrixXd x = d.InputMatrix();
  const gp::QueryCache cache = gp::PrepareQueries(m, x);
  std::vector<Eigen::Index> order(25);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return cache.means(a) > cache.means(b); });
  std::vector<char> left(25, 1);
  for (Eigen::Index want : order) {
    const std::size_t got = SelectAction(ScoreNonAdaptive(cache), left);
    CHECK(got == static_cast<std::size_t>(want));
    left[got] = 0;
  }
}

TEST_CASE("selection matches a linear scan") {
  Rng rng = MakeRng(12);
  std::uniform_int_distribution<int> score(0, 5), bit(0, 2);
  for (int rep = 0; rep < 500; ++rep) {
    std::vector<double> s(17);
    std::vector<char> mask(17);
    for (std::size_t i = 0; i < 17; ++i) {
      s[i] = score(rng);
      mask[i] = bit(rng) > 0;
    }
    long best = -1;
    for (std::size_t i = 0; i < 17; ++i)
      if (mask[i] && (best < 0 || s[i] > s[static_cast<std::size_t>(best)])) best = static_cast<long>(i);
    if (best < 0) {
      CHECK_THROWS_AS(SelectAction(s, mask), SelectionError);
    } else {
      CHECK(SelectAction(s, mask) == static_cast<std::size_t>(best));
    }
  }
}

TEST_CASE("dataset deployment invariants") {
  const gp::DeepGpModel m = fixture::InitialModel(5);
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const tasks::TaskDataset d = fixture::BinaryDataset(30, 2, seed);
    for (ScorerKind k : {ScorerKind::kUcb, ScorerKind::kGreedy, ScorerKind::kNonAdaptive, ScorerKind::kRandom}) {
      const DeploymentTrace t = RunDatasetDeployment(&m, d, Settings(k, 10.0, 40, seed));
      CHECK(t.success);
      CHECK(t.attempts() <= 29);
      std::set<std::tuple<double, double, int, double>> picked;
      for (std::size_t i = 0; i < t.episodes.size(); ++i) {
        const Episode& e = t.episodes[i];
        picked.insert({e.action.x, e.action.y, e.action.yaw_index, e.action.depth});
        const bool last = i + 1 == t.episodes.size();
        CHECK((e.reward >= 10.0) == last);
        CHECK(e.support_size == (last ? i : i + 1));
      }
      CHECK(picked.size() == t.episodes.size());
    }
  }
}

TEST_CASE("budget caps the attempts") {
  const tasks::TaskDataset d = fixture::BinaryDataset(50, 1, 2);
  const gp::DeepGpModel m = fixture::InitialModel(1);
  int failures = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const DeploymentTrace t = RunDatasetDeployment(&m, d, Settings(ScorerKind::kRandom, 10.0, 5, seed));
    CHECK(t.attempts() <= 5);
    if (!t.success) {
      CHECK(t.attempts() == 5);
      ++failures;
    }
  }
  CHECK(failures > 0);
}

TEST_CASE("oracle scorer succeeds at once and needs no model") {
  const tasks::TaskDataset d = fixture::BinaryDataset(30, 1, 9);
  const DeploymentTrace t = RunDatasetDeployment(nullptr, d, Settings(ScorerKind::kOracle, 10.0));
  CHECK(t.success);
  CHECK(t.attempts() == 1);
  CHECK_THROWS(RunDatasetDeployment(nullptr, d, Settings(ScorerKind::kUcb, 10.0)));
}

TEST_CASE("random scorer matches the hypergeometric mean") {
  const tasks::TaskDataset d = fixture::BinaryDataset(30, 4, 1);
  double sum = 0.0;
  const int trials = 3000;
  for (int i = 0; i < trials; ++i)
    sum += RunDatasetDeployment(nullptr, d, Settings(ScorerKind::kRandom, 10.0, 30, static_cast<std::uint64_t>(i))).attempts();
  CHECK(sum / trials == doctest::Approx(oracle::HypergeometricFirstSuccess(30, 4)).epsilon(0.05));
  CHECK(oracle::HypergeometricFirstSuccess(100, 5) == doctest::Approx(101.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("unreachable threshold names the task") {
  const tasks::TaskDataset d = fixture::BinaryDataset(10, 1, 1, 4242);
  try {
    RunDatasetDeployment(nullptr, d, Settings(ScorerKind::kRandom, 100.0));
    FAIL("expected an error");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("4242") != std::string::npos);
  }
}

TEST_CASE("default threshold is the fifth largest reward") {
  tasks::TaskDataset d = fixture::BinaryDataset(12, 0, 1);
  for (std::size_t i = 0; i < d.records.size(); ++i) d.records[i].reward = static_cast<double>((i * 7) % 12);
  CHECK(DefaultThreshold(d) == 7.0);
  d.records.resize(3);
  CHECK(DefaultThreshold(d) == std::min({d.records[0].reward, d.records[1].reward, d.records[2].reward}));
}

TEST_CASE("trace output") {
  const tasks::TaskDataset d = fixture::BinaryDataset(20, 2, 3, 55);
  const DeploymentTrace t = RunDatasetDeployment(nullptr, d, Settings(ScorerKind::kRandom, 10.0, 20, 1));
  std::ostringstream out;
  t.Write(out);
  const std::string s = out.str();
  CHECK(s.rfind("episode\t", 0) == 0);
  CHECK(s.find("# task=55 threshold=10 attempts=" + std::to_string(t.attempts()) + " success=1") != std::string::npos);
  CHECK(std::count(s.begin(), s.end(), '\n') == t.attempts() + 2);
}

TEST_CASE("live deployment") {
  const tasks::World w = tasks::BuildWorld({12, 0.8, 2, 2, 10, 10}, 5);
  const gp::DeepGpModel m = fixture::InitialModel(2, 30.0);
  const tasks::TerrainTask& task = w.test_tasks[1];
  const DeploymentSettings s = Settings(ScorerKind::kUcb, 1e9, 3, 4);
  const DeploymentTrace a = RunLiveDeployment(&m, task, s);
  const DeploymentTrace b = RunLiveDeployment(&m, task, s);
  CHECK(a.attempts() == 3);
  CHECK_FALSE(a.success);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.episodes[i].action == b.episodes[i].action);
    CHECK(a.episodes[i].reward == b.episodes[i].reward);
    CHECK(tasks::DragInBounds(a.episodes[i].action));
  }
  const DeploymentTrace o = RunLiveDeployment(nullptr, task, Settings(ScorerKind::kOracle, 1.0, 3, 4));
  CHECK(o.success);
}

TEST_CASE("scorer names") {
  for (ScorerKind k : {ScorerKind::kUcb, ScorerKind::kGreedy, ScorerKind::kNonAdaptive, ScorerKind::kRandom,
                       ScorerKind::kOracle})
    CHECK(ParseScorer(ToString(k)) == k);
  CHECK_THROWS(ParseScorer("thompson"));
}
