#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "scoopgp/config.hpp"
#include "scoopgp/error.hpp"

using namespace scoopgp;

TEST_CASE("defaults") {
  std::istringstream empty("");
  const RunConfig c = ParseConfig(empty);
  CHECK(c.world.materials == 12);
  CHECK(c.world.appearance_rho == 0.8);
  CHECK(c.training.folds == 4);
  CHECK(c.training.patience == 5);
  CHECK(c.training.mean_learning_rate == 5e-3);
  CHECK(c.training.kernel_learning_rate == 1e-2);
  CHECK(c.budget == 20);
  CHECK(c.gamma == 2.0);
  CHECK(c.shots == std::vector<int>{0, 5, 10});
}

TEST_CASE("parsing") {
  std::istringstream in("# comment\n folds = 3  # trailing\nshots=1,2\nkernel_features = own\n\nappearance_rho = 0.5\n");
  const RunConfig c = ParseConfig(in);
  CHECK(c.training.folds == 3);
  CHECK(c.shots == std::vector<int>{1, 2});
  CHECK(c.training.kernel_features == meta::KernelFeatureMode::kOwnExtractor);
  CHECK(c.world.appearance_rho == 0.5);
}

TEST_CASE("bad input names the line") {
  auto fails = [](const std::string& text, const std::string& needle) {
    std::istringstream in(text);
    try {
      ParseConfig(in, "cfg");
    } catch (const ConfigurationError& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
    return false;
  };
  CHECK(fails("folds = 2\ncolour = red\n", "cfg:2"));
  CHECK(fails("folds = two\n", "cfg:1"));
  CHECK(fails("folds 2\n", "cfg:1"));
  CHECK(fails("budget = 0\n", "budget"));
  CHECK(fails("appearance_rho = 1.5\n", "appearance_rho"));
  CHECK(fails("kernel_features = both\n", "kernel_features"));
}

TEST_CASE("written config parses back to the same values") {
  std::istringstream in("folds = 2\ngamma = 0.5\nout_dir = elsewhere\nshots = 0,10\n");
  const RunConfig c = ParseConfig(in);
  std::stringstream out;
  WriteConfig(out, c);
  const RunConfig back = ParseConfig(out);
  std::stringstream again;
  WriteConfig(again, back);
  CHECK(again.str() == out.str());
  CHECK(back.out_dir == "elsewhere");
}

TEST_CASE("environment overrides") {
  RunConfig c;
  setenv("SCOOPGP_OUT_DIR", "/tmp/x", 1);
  setenv("SCOOPGP_THREADS", "3", 1);
  ApplyEnvironment(c);
  CHECK(c.out_dir == "/tmp/x");
  CHECK(c.threads == 3);
  setenv("SCOOPGP_THREADS", "many", 1);
  CHECK_THROWS_AS(ApplyEnvironment(c), ConfigurationError);
  unsetenv("SCOOPGP_OUT_DIR");
  unsetenv("SCOOPGP_THREADS");
}
