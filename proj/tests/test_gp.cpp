#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "scoopgp/error.hpp"
#include "scoopgp/gp.hpp"
#include "scoopgp/reference.hpp"

using namespace scoopgp;
using namespace scoopgp::gp;

namespace {

double Jitter(const DeepGpModel& m) { return kJitterStart * m.outputscale(); }

// Central differences of the NLML in every kernel-path coordinate, with the
// mean held fixed through an external vector.
struct FdCase {
  DeepGpModel model;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd fixed_mean;
};

FdCase MakeCase(std::uint64_t seed, Eigen::Index n) {
  FdCase c{oracle::RandomModel(seed, true), {}, {}, {}};
  Rng rng = MakeRng(seed, {1});
  c.x = oracle::RandomInputs(rng, n, c.model.input_dim());
  c.y = oracle::RandomInputs(rng, n, 1).col(0);
  c.fixed_mean = oracle::RandomInputs(rng, n, 1).col(0) * 0.3;
  return c;
}

}  // namespace

TEST_CASE("posterior agrees with the dense-inverse oracle") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const DeepGpModel m = oracle::RandomModel(seed);
    Rng rng = MakeRng(seed, {2});
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(seed % 12);
    const Eigen::MatrixXd sx = oracle::RandomInputs(rng, n, m.input_dim());
    const Eigen::VectorXd sy = oracle::RandomInputs(rng, n, 1).col(0);
    const Eigen::MatrixXd q = oracle::RandomInputs(rng, 7, m.input_dim());
    const auto got = Posterior(m, sx, sy, q);
    const auto want = oracle::DenseInversePosterior(m, sx, sy, q, Jitter(m));
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].mean == doctest::Approx(want[i].mean).epsilon(1e-9));
      CHECK(got[i].variance == doctest::Approx(want[i].variance).epsilon(1e-9));
    }
  }
}

TEST_CASE("empty support gives the prior") {
  const DeepGpModel m = oracle::RandomModel(3);
  Rng rng = MakeRng(3);
  const Eigen::MatrixXd q = oracle::RandomInputs(rng, 5, m.input_dim());
  const auto got = Posterior(m, Eigen::MatrixXd(0, m.input_dim()), Eigen::VectorXd(0), q);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    CHECK(got[static_cast<std::size_t>(i)].mean == doctest::Approx(oracle::MeanOf(m, oracle::Row(q, i))));
    CHECK(got[static_cast<std::size_t>(i)].variance ==
          doctest::Approx(m.outputscale() + m.noise_std() * m.noise_std()));
  }
}

TEST_CASE("posterior variance shrinks as support grows") {
  const DeepGpModel m = oracle::RandomModel(8);
  Rng rng = MakeRng(8);
  const Eigen::MatrixXd sx = oracle::RandomInputs(rng, 10, m.input_dim());
  const Eigen::VectorXd sy = oracle::RandomInputs(rng, 10, 1).col(0);
  const Eigen::MatrixXd q = oracle::RandomInputs(rng, 6, m.input_dim());
  std::vector<PosteriorPrediction> prev = Posterior(m, sx.topRows(0), sy.head(0), q);
  for (Eigen::Index k = 1; k <= 10; ++k) {
    const auto cur = Posterior(m, sx.topRows(k), sy.head(k), q);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      CHECK(cur[i].variance <= prev[i].variance + 1e-12);
      CHECK(cur[i].variance >= m.noise_std() * m.noise_std() - 1e-12);
    }
    prev = cur;
  }
}

TEST_CASE("parallel kernels match the serial reference bit for bit") {
  const DeepGpModel m = oracle::RandomModel(5);
  Rng rng = MakeRng(5);
  const Eigen::MatrixXd z = oracle::RandomInputs(rng, 700, 4);
  CHECK(RbfGram(z, 0.7, 2.0) == reference::RbfGram(z, 0.7, 2.0));
  CHECK(RbfCross(z, z.topRows(13), 0.7, 2.0) == reference::RbfCross(z, z.topRows(13), 0.7, 2.0));
  const Eigen::MatrixXd sx = oracle::RandomInputs(rng, 9, m.input_dim());
  const Eigen::VectorXd sy = oracle::RandomInputs(rng, 9, 1).col(0);
  const Eigen::MatrixXd q = oracle::RandomInputs(rng, 900, m.input_dim());
  const auto a = Posterior(m, sx, sy, q);
  const auto b = reference::Posterior(m, sx, sy, q);
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i].mean == b[i].mean && a[i].variance == b[i].variance;
  CHECK(same);
}

TEST_CASE("rbf gram is symmetric with outputscale on the diagonal") {
  Rng rng = MakeRng(6);
  const Eigen::MatrixXd z = oracle::RandomInputs(rng, 30, 3);
  const Eigen::MatrixXd k = RbfGram(z, 1.3, 4.0);
  CHECK(k.isApprox(k.transpose(), 0.0));
  for (Eigen::Index i = 0; i < 30; ++i) CHECK(k(i, i) == 4.0);
  CHECK(k.maxCoeff() <= 4.0);
  CHECK(k.minCoeff() > 0.0);
}

TEST_CASE("jitter escalates and then gives up") {
  Eigen::MatrixXd dup = Eigen::MatrixXd::Constant(3, 3, 1.0);  // rank one
  const Factorization f = FactorizeCovariance(dup, 0.0, 1.0);
  CHECK(f.jitter >= kJitterStart);
  CHECK(f.jitter <= kJitterMax * 1.0000001);
  Eigen::MatrixXd indefinite = Eigen::MatrixXd::Identity(2, 2);
  indefinite(0, 1) = indefinite(1, 0) = 3.0;
  CHECK_THROWS_AS(FactorizeCovariance(indefinite, 0.0, 1.0), NumericalError);
  const Factorization good = FactorizeCovariance(Eigen::MatrixXd::Identity(4, 4), 0.1, 2.0);
  CHECK(good.jitter == doctest::Approx(kJitterStart * 2.0));
}

TEST_CASE("nlml value agrees with the dense oracle") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const DeepGpModel m = oracle::RandomModel(seed);
    Rng rng = MakeRng(seed, {3});
    const Eigen::MatrixXd x = oracle::RandomInputs(rng, 8, m.input_dim());
    const Eigen::VectorXd y = oracle::RandomInputs(rng, 8, 1).col(0);
    CHECK(Nlml(m, x, y).value == doctest::Approx(oracle::DenseNlml(m, x, y, Jitter(m))).epsilon(1e-9));
  }
}

TEST_CASE("nlml gradients match central differences") {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    FdCase c = MakeCase(seed, 6);
    NlmlRequest req{MeanSource::kExternal, c.fixed_mean, true, false};
    const NlmlResult r = Nlml(c.model, c.x, c.y, req);
    auto value = [&](const DeepGpModel& m) { return Nlml(m, c.x, c.y, req).value; };
    const double h = 1e-6;
    auto fd = [&](auto&& poke) {
      DeepGpModel a = c.model, b = c.model;
      poke(a, h);
      poke(b, -h);
      return (value(a) - value(b)) / (2 * h);
    };
    for (std::size_t k = 0; k < c.model.kernel_params.size(); ++k)
      CHECK(r.d_kernel_params.values()[k] ==
            doctest::Approx(fd([&](DeepGpModel& m, double d) { m.kernel_params.values()[k] += d; })).epsilon(1e-5));
    for (std::size_t k = 0; k < c.model.feature_params.size(); ++k)
      CHECK(r.d_feature_params.values()[k] ==
            doctest::Approx(fd([&](DeepGpModel& m, double d) { m.feature_params.values()[k] += d; })).epsilon(1e-5));
    CHECK(r.d_log_lengthscale == doctest::Approx(fd([](DeepGpModel& m, double d) { m.log_lengthscale += d; })).epsilon(1e-5));
    CHECK(r.d_log_outputscale == doctest::Approx(fd([](DeepGpModel& m, double d) { m.log_outputscale += d; })).epsilon(1e-5));
    CHECK(r.d_log_noise == doctest::Approx(fd([](DeepGpModel& m, double d) { m.log_noise += d; })).epsilon(1e-5));
  }
}

TEST_CASE("joint gradients through the model mean") {
  FdCase c = MakeCase(42, 7);
  NlmlRequest req{MeanSource::kModel, {}, true, true};
  const NlmlResult r = Nlml(c.model, c.x, c.y, req);
  auto value = [&](const DeepGpModel& m) { return Nlml(m, c.x, c.y, req).value; };
  const double h = 1e-6;
  for (std::size_t k = 0; k < c.model.mean_params.size(); ++k) {
    DeepGpModel a = c.model, b = c.model;
    a.mean_params.values()[k] += h;
    b.mean_params.values()[k] -= h;
    CHECK(r.d_mean_params.values()[k] == doctest::Approx((value(a) - value(b)) / (2 * h)).epsilon(1e-5));
  }
  for (std::size_t k = 0; k < c.model.feature_params.size(); ++k) {
    DeepGpModel a = c.model, b = c.model;
    a.feature_params.values()[k] += h;
    b.feature_params.values()[k] -= h;
    CHECK(r.d_feature_params.values()[k] == doctest::Approx((value(a) - value(b)) / (2 * h)).epsilon(1e-5));
  }
}

TEST_CASE("nlml rejects bad requests") {
  DeepGpModel m = oracle::RandomModel(1);
  Rng rng = MakeRng(1);
  const Eigen::MatrixXd x = oracle::RandomInputs(rng, 3, m.input_dim());
  const Eigen::VectorXd y = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(Nlml(m, x.topRows(0), y.head(0)), ArgumentError);
  CHECK_THROWS_AS(Nlml(m, x, y.head(2)), ShapeError);
  CHECK_THROWS_AS(Nlml(m, x, y, {MeanSource::kZero, {}, false, true}), ArgumentError);
  CHECK_THROWS_AS(Nlml(m, x, y, {MeanSource::kExternal, Eigen::VectorXd::Zero(2), false, false}), ShapeError);
  m.kernel_feature_params = m.feature_params;
  CHECK_THROWS_AS(Nlml(m, x, y, {MeanSource::kModel, {}, true, true}), ArgumentError);
}

TEST_CASE("model files round trip exactly") {
  DeepGpModel m = oracle::RandomModel(12);
  std::stringstream a;
  WriteModel(a, m);
  CHECK(ReadModel(a) == m);
  m.kernel_feature_params = m.feature_params;
  m.kernel_feature_params->values()[0] += 1.0;
  std::stringstream b;
  WriteModel(b, m);
  const DeepGpModel back = ReadModel(b);
  CHECK(back == m);
  std::stringstream c;
  WriteModel(c, back);
  CHECK(c.str() == b.str());
  std::stringstream junk("scoopgp-model 9\n");
  CHECK_THROWS(ReadModel(junk));
}

TEST_CASE("validate catches broken models") {
  DeepGpModel m = oracle::RandomModel(2);
  CHECK_NOTHROW(m.Validate());
  DeepGpModel bad = m;
  bad.log_noise = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(bad.Validate(), ShapeError);
  bad = m;
  bad.mean_spec.input_dim += 1;
  CHECK_THROWS_AS(bad.Validate(), ShapeError);
}

TEST_CASE("embedding, mean and kernel agree with composition oracles") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    DeepGpModel m = oracle::RandomModel(seed + 50);
    if (seed % 2) {
      m.kernel_feature_params = m.feature_params;
      for (double& v : m.kernel_feature_params->values()) v *= 0.9;
    }
    Rng rng = MakeRng(seed, {4});
    const Eigen::MatrixXd x = oracle::RandomInputs(rng, 2, m.input_dim());
    const std::vector<double> a = oracle::Row(x, 0), b = oracle::Row(x, 1);
    const Eigen::VectorXd z = Embed(m, a);
    const std::vector<double> zw = oracle::KernelEmbed(m, a);
    for (std::size_t i = 0; i < zw.size(); ++i) CHECK(z(static_cast<Eigen::Index>(i)) == doctest::Approx(zw[i]).epsilon(1e-12));
    CHECK(MeanEval(m, a) == doctest::Approx(oracle::MeanOf(m, a)).epsilon(1e-12));
    const std::vector<double> zb = oracle::KernelEmbed(m, b);
    double d2 = 0.0;
    for (std::size_t i = 0; i < zw.size(); ++i) d2 += (zw[i] - zb[i]) * (zw[i] - zb[i]);
    const double l = m.lengthscale();
    CHECK(KernelEval(m, a, b) == doctest::Approx(m.outputscale() * std::exp(-d2 / (2 * l * l))).epsilon(1e-12));
    CHECK(MeanBatch(m, x)(1) == MeanEval(m, b));
  }
}

TEST_CASE("single-point nlml is a scalar gaussian log density") {
  DeepGpModel m = oracle::RandomModel(77);
  Rng rng = MakeRng(77);
  const Eigen::MatrixXd x = oracle::RandomInputs(rng, 1, m.input_dim());
  const double y0 = 1.7;
  const double v = m.outputscale() + m.noise_std() * m.noise_std() + Jitter(m);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(1, y0);
  const NlmlResult r = Nlml(m, x, y, {MeanSource::kZero, {}, false, false});
  CHECK(r.value == doctest::Approx(0.5 * std::log(v) + y0 * y0 / (2 * v) + 0.5 * std::log(2 * M_PI)).epsilon(1e-13));
}
