#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include <unistd.h>

#include "maxent/cli.hpp"

using namespace maxent;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
  nlohmann::json json() const { return nlohmann::json::parse(out); }
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "maxent");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("maxent_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, SolveEquilibrium) {
  const auto r = run({"solve", "--moments", "0,1,0,3", "--n", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lam = r.json()["lambda"].get<std::vector<double>>();
  const std::vector<double> want{0, 0.5, 0, 0};
  ASSERT_EQ(lam.size(), 4u);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(lam[i], want[i], 1e-6);
  EXPECT_LE(r.json()["iterations"].get<int>(), 30);
}

TEST_F(CliTest, SolveLengthMismatchIsUsage) {
  const auto r = run({"solve", "--moments", "0,1,0", "--n", "4"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("N = 4"), std::string::npos);
}

TEST_F(CliTest, DomainErrorsExitOne) {
  const auto r = run({"solve", "--moments", "0,1,0,3", "--v-min", "5", "--v-max", "-5"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error"), std::string::npos);
  EXPECT_EQ(run({"predict", "--model", path("missing.json"), "--moments", "0,1,0,3"}).code, 1);
}

TEST_F(CliTest, UnknownFlagIsUsageWithHelp) {
  const auto r = run({"solve", "--moments", "0,1,0,3", "--bogus"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--bogus"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
}

TEST_F(CliTest, HelpListsDefaults) {
  const auto gen = run({"gen-data", "--help"});
  EXPECT_EQ(gen.code, 0);
  for (const char* s : {"--n INT [4]", "--b FLOAT [10]", "--quad-order INT [64]", "--v-min FLOAT [-10]", "--seed"}) {
    EXPECT_NE(gen.out.find(s), std::string::npos) << s;
  }
  const auto train = run({"train", "--help"});
  for (const char* s : {"[rbf]", "--starts INT [4]", "--max-iters INT [200]"}) {
    EXPECT_NE(train.out.find(s), std::string::npos) << s;
  }
  EXPECT_NE(run({"experiment", "noisy", "--help"}).out.find("--noise-sigma FLOAT [0.1]"), std::string::npos);
  EXPECT_NE(run({"experiment", "bgk", "--help"}).out.find("[0,3,8,20]"), std::string::npos);
  for (const char* sub : {"predict", "solve", "benchmark"}) EXPECT_EQ(run({sub, "--help"}).code, 0) << sub;
  for (const char* sub : {"bimodal", "bkw", "realizability", "kernels"}) {
    EXPECT_EQ(run({"experiment", sub, "--help"}).code, 0) << sub;
  }
}

TEST_F(CliTest, GenDataIsDeterministic) {
  ASSERT_EQ(run({"gen-data", "--n", "6", "--count", "10", "--seed", "7", "--out", path("a.csv")}).code, 0);
  ASSERT_EQ(run({"gen-data", "--n", "6", "--count", "10", "--seed", "7", "--out", path("b.csv")}).code, 0);
  EXPECT_EQ(io::read_file(path("a.csv")), io::read_file(path("b.csv")));
  EXPECT_EQ(io::read_file(path("a.meta.json")), io::read_file(path("b.meta.json")));
  EXPECT_EQ(load_dataset(path("a.csv")).size(), 10);
  EXPECT_FALSE(fs::exists(path("a.csv.tmp")));
}

TEST_F(CliTest, StochasticCommandsNeedASeed) {
  const auto r = run({"gen-data", "--count", "5", "--out", path("a.csv")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--seed auto"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("a.csv")));
  EXPECT_EQ(run({"gen-data", "--count", "5", "--seed", "x1", "--out", path("a.csv")}).code, 2);
  const auto a = run({"gen-data", "--count", "5", "--seed", "auto", "--out", path("a.csv")});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_TRUE(a.json()["seed_auto"].get<bool>());
  const auto seed = a.json()["seed"].get<std::uint64_t>();
  EXPECT_EQ(nlohmann::json::parse(io::read_file(path("a.meta.json")))["seed"].get<std::uint64_t>(), seed);
}

TEST_F(CliTest, ConfigPrecedence) {
  io::write_file_atomic(path("cfg.json"), R"({"n_moments": 5, "seed": 11, "quad_order": 48})");
  ASSERT_EQ(run({"gen-data", "--count", "4", "--config", path("cfg.json"), "--out", path("c.csv")}).code, 0);
  const auto c = load_dataset(path("c.csv"));
  EXPECT_EQ(c.n_moments(), 5);
  EXPECT_EQ(c.meta.seed, 11u);
  EXPECT_EQ(c.meta.quad_order, 48);
  ASSERT_EQ(run({"gen-data", "--count", "4", "--config", path("cfg.json"), "--n", "4", "--seed", "12", "--out",
                 path("f.csv")})
                .code,
            0);
  const auto f = load_dataset(path("f.csv"));
  EXPECT_EQ(f.n_moments(), 4);
  EXPECT_EQ(f.meta.seed, 12u);
  EXPECT_EQ(f.meta.quad_order, 48);
  ASSERT_EQ(run({"gen-data", "--count", "4", "--seed", "1", "--out", path("d.csv")}).code, 0);
  EXPECT_EQ(load_dataset(path("d.csv")).meta.quad_order, kDefaultQuadOrder);

  io::write_file_atomic(path("bad.json"), R"({"n_moment": 5})");
  const auto bad = run({"gen-data", "--count", "4", "--seed", "1", "--config", path("bad.json"), "--out", path("e.csv")});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("n_moment"), std::string::npos);
  io::write_file_atomic(path("broken.json"), "{");
  EXPECT_EQ(run({"solve", "--moments", "0,1,0,3", "--config", path("broken.json")}).code, 2);
}

TEST_F(CliTest, TrainPredictRoundTrip) {
  ASSERT_EQ(run({"gen-data", "--count", "40", "--seed", "3", "--out", path("d.csv")}).code, 0);
  EXPECT_EQ(run({"train", "--data", path("d.csv"), "--out", path("m.json")}).code, 2);
  const auto t = run({"train", "--data", path("d.csv"), "--out", path("m.json"), "--seed", "4", "--starts", "2"});
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(t.json()["train_size"].get<int>(), 40);
  EXPECT_EQ(nlohmann::json::parse(io::read_file(path("m.json")))["seed"].get<int>(), 4);

  const auto p = run({"predict", "--model", path("m.json"), "--moments", "0.5,1.25,0.875,3.4"});
  ASSERT_EQ(p.code, 0) << p.err;
  const auto model = load_model(path("m.json"));
  const auto c = close_moments(model, MomentVector{0.5, 1.25, 0.875, 3.4});
  const auto lam = p.json()["lambda"].get<std::vector<double>>();
  const auto var = p.json()["variance"].get<std::vector<double>>();
  const auto rec = p.json()["reconstructed_moments"].get<std::vector<double>>();
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(lam[i], c.lambda_hat.values[i]);
    EXPECT_EQ(var[i], c.posterior_variance[i]);
    EXPECT_EQ(rec[i], c.reconstructed_moments.values[i]);
  }

  const auto wrong = run({"predict", "--model", path("m.json"), "--moments", "0,1,0"});
  EXPECT_EQ(wrong.code, 2);
  EXPECT_NE(wrong.err.find("N = 4"), std::string::npos);
}

TEST_F(CliTest, ExperimentsAndBenchmark) {
  ASSERT_EQ(run({"gen-data", "--count", "40", "--seed", "3", "--out", path("d.csv")}).code, 0);
  ASSERT_EQ(run({"train", "--data", path("d.csv"), "--out", path("m.json"), "--seed", "1", "--starts", "1"}).code, 0);
  const auto out = path("rep");
  const auto bgk = run({"experiment", "bgk", "--model", path("m.json"), "--out-dir", out});
  ASSERT_EQ(bgk.code, 0) << bgk.err;
  EXPECT_TRUE(fs::exists(dir_ / "rep" / "bgk.json"));
  EXPECT_TRUE(fs::exists(dir_ / "rep" / "bgk_summary.csv"));
  EXPECT_EQ(run({"experiment", "noisy", "--model", path("m.json"), "--out-dir", out}).code, 2);
  ASSERT_EQ(run({"experiment", "noisy", "--model", path("m.json"), "--out-dir", out, "--seed", "2"}).code, 0);
  const auto first = io::read_file(dir_ / "rep" / "noisy_summary.csv");
  ASSERT_EQ(run({"experiment", "noisy", "--model", path("m.json"), "--out-dir", out, "--seed", "2"}).code, 0);
  EXPECT_EQ(io::read_file(dir_ / "rep" / "noisy_summary.csv"), first);
  EXPECT_EQ(run({"experiment", "bimodal", "--model", path("m.json"), "--case", "1.0,0.5", "--out-dir", out}).code, 1);
  EXPECT_EQ(run({"experiment", "realizability", "--model", path("m.json"), "--family", "Q", "--out-dir", out}).code,
            2);
  EXPECT_EQ(run({"experiment", "bkw", "--model", path("m.json"), "--times", "5.0", "--out-dir", out}).code, 1);

  const auto b = run({"benchmark", "--model", path("m.json"), "--data", path("d.csv"), "--count", "10", "--repeats",
                      "3"});
  ASSERT_EQ(b.code, 0) << b.err;
  const auto run0 = b.json()["runs"][0];
  EXPECT_GT(run0["ratio"].get<double>(), 0.0);
  EXPECT_EQ(run0["gp_seconds"].size(), 3u);
}
