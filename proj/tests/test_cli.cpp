#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"

namespace fs = std::filesystem;
using namespace irrbma;

namespace {

// Fast sampler settings; convergence is not the point here.
std::string const kSampler = " --chains 4 --warmup 200 --draws 200 ";
std::string const kQuick = kSampler + "--bootstrap 20 ";

class Cli : public ::testing::Test {
protected:
  fs::path dir;

  void SetUp() override {
    auto const* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / (std::string("irrbma_cli_") + info->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  int run(std::string const& args) const {
    std::string const cmd = std::string(IRRBMA_CLI_PATH) + " " + args + " > " + (dir / "stdout.txt").string() + " 2> " +
                            (dir / "stderr.txt").string();
    int const status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string stderr_text() const { return slurp(dir / "stderr.txt"); }

  static std::string slurp(fs::path const& p) {
    std::ifstream in(p);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  fs::path k1_data(std::uint64_t seed = 4) const {
    auto cfg = find_scenario("4.2");
    cfg.ratees_per_group = 30;
    cfg.ratings_per_ratee = 3;
    cfg.seed = seed;
    auto const p = dir / "k1.csv";
    write_csv(p, simulate_dataset(cfg));
    return p;
  }

  fs::path k2_data() const {
    ParameterVector p = ParameterVector::zeros(2);
    p.alpha_gamma = 0.67;
    p.alpha_epsilon = 0.74;
    p.beta_mu[0] = 0.5;
    p.beta_epsilon[1] = 0.4;
    auto const path = dir / "k2.csv";
    write_csv(path, simulate_balanced(CovariateSchema({"gender", "career"}), p, 10, 3, 2));
    return path;
  }
};

double probability_sum(cli::CsvTable const& t) {
  double s = 0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) s += t.num(r, "posterior_prob");
  return s;
}

} // namespace

TEST_F(Cli, FitK1WritesBundle) {
  auto const out = dir / "bundle";
  int const code = run("fit --data " + k1_data().string() + " --covariates group" + kQuick + "--out " + out.string());
  EXPECT_TRUE(code == 0 || code == 3) << stderr_text();
  auto const models = cli::read_csv_table(out / "models.csv");
  ASSERT_TRUE(models);
  EXPECT_EQ(models->rows.size(), 8u);
  EXPECT_NEAR(probability_sum(*models), 1.0, 1e-6);
  for (auto const* f : {"weights.csv", "inclusion.csv", "irr.csv", "marginal_means.csv", "summary.json", "report.md"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  auto const inclusion = cli::read_csv_table(out / "inclusion.csv");
  ASSERT_TRUE(inclusion);
  EXPECT_EQ(inclusion->rows.size(), 3u);
}

TEST_F(Cli, FitK2HasSixtyFourModels) {
  auto const out = dir / "bundle";
  int const code = run("fit --data " + k2_data().string() + " --covariates gender,career --methods bma" + kQuick + "--out " +
                       out.string());
  EXPECT_TRUE(code == 0 || code == 3) << stderr_text();
  auto const models = cli::read_csv_table(out / "models.csv");
  ASSERT_TRUE(models);
  EXPECT_EQ(models->rows.size(), 64u);
  EXPECT_NEAR(probability_sum(*models), 1.0, 1e-6);
}

TEST_F(Cli, MeanCovariatesOff) {
  auto const out = dir / "bundle";
  run("fit --data " + k1_data().string() + " --covariates group --methods bma --mean-covariates off" + kQuick + "--out " +
      out.string());
  auto const models = cli::read_csv_table(out / "models.csv");
  ASSERT_TRUE(models);
  EXPECT_EQ(models->rows.size(), 4u);
  for (std::size_t r = 0; r < models->rows.size(); ++r) EXPECT_EQ(models->at(r, "mean"), "none");
}

TEST_F(Cli, UsageErrors) {
  auto const bad = dir / "bad.csv";
  std::ofstream(bad) << "ratee,rating,group\n1,abc,x\n";
  EXPECT_EQ(run("fit --data " + bad.string() + " --covariates group --out " + (dir / "o").string()), 2);
  EXPECT_EQ(run("fit --covariates group --out " + (dir / "o").string()), 2);
  EXPECT_EQ(run("fit --data " + k1_data().string() + " --covariates group --prior huge --out " + (dir / "o").string()), 2);
  EXPECT_EQ(run("fit --data " + k1_data().string() + " --covariates group --methods magic --out " + (dir / "o").string()), 2);
  EXPECT_EQ(run("fit --no-such-flag"), 2);
  EXPECT_EQ(run("simulate --scenarios 99 --replications 1 --out " + (dir / "o").string()), 2);
  EXPECT_EQ(run("report --out " + (dir / "missing").string()), 2);
}

TEST_F(Cli, ShortRunWarns) {
  auto const out = dir / "bundle";
  EXPECT_EQ(run("fit --data " + k1_data().string() + " --covariates group --methods bma --warmup 100 --draws 100 --out " +
                out.string()),
            3);
  EXPECT_NE(stderr_text().find("did not converge"), std::string::npos);
  EXPECT_NE(Cli::slurp(out / "report.md").find("## Warnings"), std::string::npos);
}

TEST_F(Cli, SimulateIsReproducible) {
  std::string const args = "simulate --scenarios 1 --I 10 --J 3 --replications 1 --methods bf,bic --workers 1" + kSampler;
  int const a = run(args + "--seed 5 --out " + (dir / "a").string());
  int const b = run(args + "--seed 5 --out " + (dir / "b").string());
  EXPECT_TRUE(a == 0 || a == 3) << stderr_text();
  EXPECT_EQ(a, b);
  auto const ma = Cli::slurp(dir / "a" / "metrics.csv");
  EXPECT_FALSE(ma.empty());
  EXPECT_EQ(ma, Cli::slurp(dir / "b" / "metrics.csv"));
}

TEST_F(Cli, ReportIsIdempotent) {
  auto const out = dir / "bundle";
  run("fit --data " + k1_data().string() + " --covariates group --methods bma,bic" + kQuick + "--out " + out.string());
  auto const first = Cli::slurp(out / "report.md");
  ASSERT_EQ(run("report --out " + out.string()), 0);
  EXPECT_EQ(Cli::slurp(out / "report.md"), first);
  EXPECT_EQ(Cli::slurp(dir / "stdout.txt"), first);

  // every IRR point estimate shows up in the rendered table
  auto const irr = cli::read_csv_table(out / "irr.csv");
  ASSERT_TRUE(irr);
  for (std::size_t r = 0; r < irr->rows.size(); ++r)
    EXPECT_NE(first.find(cli::fmt::fix2(irr->num(r, "point"))), std::string::npos) << irr->at(r, "quantity");
}

TEST_F(Cli, ReportLabelsFollowBayesFactor) {
  std::ofstream(dir / "summary.json") << R"({"command": "fit", "warnings": []})";
  std::ofstream(dir / "inclusion.csv") << "component,covariate,prior_odds,posterior_odds,bf,label\n"
                                       << "residual,group,1,7.25,7.25,stale\n";
  ASSERT_EQ(run("report --out " + dir.string()), 0);
  auto const md = Cli::slurp(dir / "report.md");
  EXPECT_NE(md.find("moderate evidence for presence"), std::string::npos);
  EXPECT_EQ(md.find("stale"), std::string::npos);
}

TEST_F(Cli, ConfigFileOverriddenByFlags) {
  auto const cfg = dir / "run.json";
  std::ofstream(cfg) << R"({"covariates": "group", "methods": ["bma"], "draws": 200, "warmup": 200, "seed": 9, "out": ")"
                     << (dir / "from_config").string() << "\"}";
  auto const out = dir / "from_flag";
  int const code = run("fit --config " + cfg.string() + " --data " + k1_data().string() + " --seed 11 --out " + out.string());
  EXPECT_TRUE(code == 0 || code == 3) << stderr_text();
  EXPECT_FALSE(fs::exists(dir / "from_config"));
  std::ifstream in(out / "summary.json");
  auto const j = nlohmann::json::parse(in);
  EXPECT_EQ(j["seed"].get<std::uint64_t>(), 11u);
  EXPECT_EQ(j["sampler"]["draws"].get<std::size_t>(), 200u);
  EXPECT_EQ(j["methods"], nlohmann::json::array({"bma"}));
}

TEST_F(Cli, BadConfigFile) {
  std::ofstream(dir / "bad.json") << "{not json";
  EXPECT_EQ(run("fit --config " + (dir / "bad.json").string()), 2);
  std::ofstream(dir / "unknown.json") << R"({"colour": "blue"})";
  EXPECT_EQ(run("fit --config " + (dir / "unknown.json").string()), 2);
}
