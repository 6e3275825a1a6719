#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "cli_app.hpp"
#include "test_support.hpp"

using namespace topical_gibbs;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "topical-gibbs");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string dir_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.filename().string() + "\n" + test_support::read_text(f);
  return all;
}

void set_flag(std::vector<std::string>& args, const std::string& flag, const std::string& value) {
  const auto it = std::find(args.begin(), args.end(), flag);
  if (it == args.end()) args.insert(args.end(), {flag, value});
  else *(it + 1) = value;
}

std::vector<std::string> small_sim_args(const fs::path& out, const std::string& seed = "3") {
  return {"simulate", "--output", out.string(), "--seed", seed, "--tumors", "60", "--classes", "2", "--topics", "2",
          "--categories", "6", "--variants-per-category", "40", "--burden-min", "10", "--burden-max", "30"};
}

std::vector<std::string> small_fit_args(const fs::path& data, const fs::path& out) {
  return {"fit", "--variants", (data / "variants.tsv").string(), "--labels", (data / "labels.tsv").string(),
          "--map", (data / "map.tsv").string(), "--output", out.string(), "--iterations", "20", "--burn-in", "4",
          "--thin", "4", "--topic-update-every", "2", "--topics", "2", "--screen-cap", "3", "--lasso-grid", "4",
          "--lasso-folds", "3", "--threads", "1"};
}

TEST(Cli, HelpListsDefaults) {
  for (const auto& args : {std::vector<std::string>{"--help"}, std::vector<std::string>{"fit", "--help"}}) {
    const auto r = run(args);
    EXPECT_EQ(r.code, 0);
    for (const char* s : {"iterations 20000", "burn-in 1000", "topic update every 10", "thin 10", "topics S 50",
                          "a_H 1", "b_H 1", "a_W 0.5", "b_W 0.5", "tau0_alpha 10", "a_lambda 0.01", "b_lambda 0.01",
                          "screen cap 50", "HPD mass 0.8"})
      EXPECT_NE(r.out.find(s), std::string::npos) << s;
  }
  const auto fit = run({"fit", "--help"});
  EXPECT_NE(fit.out.find("--iterations INT [20000]"), std::string::npos);
  EXPECT_NE(fit.out.find("--a-lambda FLOAT [0.01]"), std::string::npos);
}

TEST(Cli, SimulateIsByteIdenticalForAFixedSeed) {
  test_support::TempDir tmp("cli_sim");
  ASSERT_EQ(run(small_sim_args(tmp / "a")).code, 0);
  ASSERT_EQ(run(small_sim_args(tmp / "b")).code, 0);
  ASSERT_EQ(run(small_sim_args(tmp / "c", "4")).code, 0);
  EXPECT_EQ(dir_digest(tmp / "a"), dir_digest(tmp / "b"));
  EXPECT_NE(dir_digest(tmp / "a"), dir_digest(tmp / "c"));
}

TEST(Cli, FitIsReproducibleAndExports) {
  test_support::TempDir tmp("cli_fit");
  ASSERT_EQ(run(small_sim_args(tmp / "data")).code, 0);
  auto a = small_fit_args(tmp / "data", tmp / "run1");
  auto b = small_fit_args(tmp / "data", tmp / "run2");
  set_flag(a, "--seed", "7");
  set_flag(b, "--seed", "7");
  set_flag(b, "--threads", "3");
  const auto ra = run(a);
  ASSERT_EQ(ra.code, 0) << ra.err;
  ASSERT_EQ(run(b).code, 0);
  EXPECT_EQ(dir_digest(tmp / "run1"), dir_digest(tmp / "run2"));
  const auto manifest = detail::read_json_file(tmp / "run1" / "manifest.json");
  EXPECT_EQ(manifest["config"]["sampler"]["seed"], 7);
  EXPECT_FALSE(manifest["config"].contains("output"));

  const auto ex = run({"export", "--chain", (tmp / "run1").string(), "--csv", (tmp / "csv").string()});
  ASSERT_EQ(ex.code, 0) << ex.err;
  const std::string alpha = test_support::read_text(tmp / "csv" / "alpha.csv");
  EXPECT_EQ(alpha.substr(0, alpha.find('\n')), "iteration,alpha[0,0],alpha[1,0]");
}

TEST(Cli, ZeroIterationsWritesTheManifest) {
  test_support::TempDir tmp("cli_zero");
  ASSERT_EQ(run(small_sim_args(tmp / "data")).code, 0);
  auto args = small_fit_args(tmp / "data", tmp / "run");
  set_flag(args, "--iterations", "0");
  const auto r = run(args);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(tmp / "run" / "manifest.json"));
  EXPECT_EQ(read_archive(tmp / "run").records.size(), 1u);
}

TEST(Cli, ConfigFileValuesAreOverriddenByFlags) {
  test_support::TempDir tmp("cli_cfg");
  ASSERT_EQ(run(small_sim_args(tmp / "data")).code, 0);
  test_support::write_text(tmp / "cfg.json", R"({"sampler": {"iterations": 12, "thin": 3}, "topic": {"a_W": 0.7}})");
  auto args = small_fit_args(tmp / "data", tmp / "run");
  args.erase(std::find(args.begin(), args.end(), "--thin"), std::find(args.begin(), args.end(), "--thin") + 2);
  args.insert(args.end(), {"--config", (tmp / "cfg.json").string()});
  ASSERT_EQ(run(args).code, 0);
  const auto m = detail::read_json_file(tmp / "run" / "manifest.json");
  EXPECT_EQ(m["config"]["sampler"]["iterations"], 20);  // flag wins
  EXPECT_EQ(m["config"]["sampler"]["thin"], 3);         // file value
  EXPECT_EQ(m["config"]["topic"]["a_W"], 0.7);

  test_support::write_text(tmp / "bad.json", R"({"sampler": {"iteratons": 12}})");
  const auto bad = run({"fit", "--config", (tmp / "bad.json").string(), "--output", (tmp / "x").string()});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("iteratons"), std::string::npos);
  EXPECT_EQ(run({"fit", "--approximation", "A3"}).code, 1);
}

TEST(Cli, MissingInputsAreDataErrors) {
  test_support::TempDir tmp("cli_missing");
  ASSERT_EQ(run(small_sim_args(tmp / "data")).code, 0);
  auto args = small_fit_args(tmp / "data", tmp / "run");
  const auto pos = std::find(args.begin(), args.end(), "--labels") + 1;
  *pos = (tmp / "nope.tsv").string();
  const auto r = run(args);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nope.tsv"), std::string::npos);
}

TEST(Cli, NumericalFailureWritesACheckpoint) {
  test_support::TempDir tmp("cli_num");
  ASSERT_EQ(run(small_sim_args(tmp / "data")).code, 0);
  auto args = small_fit_args(tmp / "data", tmp / "run");
  args.insert(args.end(), {"--no-map-init", "--a-lambda", "1e300", "--b-lambda", "1e-300"});
  const auto r = run(args);
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("checkpoint.json"), std::string::npos) << r.err;
  EXPECT_TRUE(fs::exists(tmp / "run" / "checkpoint.json"));
}

// Writes a chain whose coefficients are all zero over categories C1, C2.
void write_zero_chain(const fs::path& dir) {
  ChainStore chain;
  chain.manifest = {{"format", "topical-gibbs-chain"},
                    {"format_version", 1},
                    {"dims", {{"N", 2}, {"K", 3}, {"J0", 1}, {"S", 1}, {"P", 2}, {"L", 2}}},
                    {"screened_variants", {"v1"}},
                    {"source", "src"},
                    {"categories", {"C1", "C2"}},
                    {"classes", {"a", "b", "c"}},
                    {"tumors", {"t1", "t2"}},
                    {"stores_exposures", false}};
  ChainRecord r;
  r.iteration = 1;
  r.alpha = Eigen::VectorXd::Zero(3);
  r.beta0_scaled = Eigen::MatrixXd::Zero(1, 3);
  r.theta_scaled = Eigen::MatrixXd::Zero(1, 3);
  r.Wtilde = Eigen::MatrixXd::Constant(1, 2, 0.5);
  r.tau_sq = Eigen::VectorXd::Ones(2);
  r.lambda_sq = 1;
  r.sigma_obs = Eigen::VectorXd::Ones(1);
  r.sigma_topic = Eigen::VectorXd::Ones(1);
  chain.records.push_back(r);
  write_archive(dir, chain);
}

TEST(Cli, PredictHandlesNovelVariantsThroughTheMap) {
  test_support::TempDir tmp("cli_pred");
  write_zero_chain(tmp / "chain");
  test_support::write_text(tmp / "map.tsv", "v1\tsrc\tC1\nv2\tsrc\tC2\nnew7\tsrc\tC2\nv1\tother\tC9\n");
  test_support::write_text(tmp / "test.tsv", "x\tv1\nx\tnew7\ny\tv2\n");
  const auto r = run({"predict", "--chain", (tmp / "chain").string(), "--variants", (tmp / "test.tsv").string(),
                      "--map", (tmp / "map.tsv").string(), "--output", (tmp / "pred.tsv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string tsv = test_support::read_text(tmp / "pred.tsv");
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "tumor_id\ta\tb\tc");
  std::istringstream lines(tsv);
  std::string line;
  std::getline(lines, line);
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    std::istringstream f(line);
    std::string id;
    double p;
    f >> id;
    while (f >> p) EXPECT_NEAR(p, 1.0 / 3, 1e-15);
  }
  EXPECT_EQ(rows, 2);
  EXPECT_TRUE(fs::exists(tmp / "pred.tsv.manifest.json"));

  test_support::write_text(tmp / "bad.tsv", "x\tv1\nx\tghost3\n");
  const auto bad = run({"predict", "--chain", (tmp / "chain").string(), "--variants", (tmp / "bad.tsv").string(),
                        "--map", (tmp / "map.tsv").string(), "--output", (tmp / "p2.tsv").string()});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("ghost3"), std::string::npos);
}

TEST(Cli, IdentifyFindsTwoGenerators) {
  test_support::TempDir tmp("cli_id");
  ChainStore chain;
  chain.manifest = {{"format", "topical-gibbs-chain"}, {"format_version", 1}, {"classes", {"a", "b"}}, {"categories", {"p0", "p1", "p2", "p3", "p4", "p5", "p6", "p7", "p8", "p9"}},
                    {"screened_variants", nlohmann::json::array()}, {"stores_exposures", false},
                    {"dims", {{"N", 1}, {"K", 2}, {"J0", 0}, {"S", 2}, {"P", 10}, {"L", 2}}}};
  RngStream rng(31, 0);
  for (int d = 1; d <= 100; ++d) {
    ChainRecord r;
    r.iteration = d;
    r.alpha = Eigen::VectorXd::Zero(2);
    r.beta0_scaled = Eigen::MatrixXd::Zero(0, 2);
    r.theta_scaled = Eigen::MatrixXd::Zero(2, 2);
    r.theta_scaled(0, 0) = 1.0;
    r.tau_sq = Eigen::VectorXd::Ones(2);
    r.sigma_obs = Eigen::VectorXd::Zero(0);
    r.sigma_topic = Eigen::VectorXd::Ones(2);
    r.Wtilde.resize(2, 10);
    const bool swap = rng.uniform() < 0.5;
    for (int s = 0; s < 2; ++s)
      for (int p = 0; p < 10; ++p) {
        const int g = swap ? 1 - s : s;
        r.Wtilde(s, p) = ((p < 5) == (g == 0) ? 0.18 : 0.02) * (1 + 0.05 * rng.normal());
      }
    chain.records.push_back(r);
  }
  write_archive(tmp / "chain", chain);
  const auto r = run({"identify", "--chain", (tmp / "chain").string(), "--output", (tmp / "id").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("k*=2"), std::string::npos) << r.out;
  const auto m = detail::read_json_file(tmp / "id" / "manifest.json");
  EXPECT_EQ(m["options"]["k_star"], 2);
  const std::string summary = test_support::read_text(tmp / "id" / "summary.tsv");
  EXPECT_NE(summary.find("topic:0|a|rest|per_sd"), std::string::npos);
  const auto q = run({"identify", "--chain", (tmp / "chain").string(), "--output", (tmp / "id2").string(), "--query",
                      "topic:1|a|b", "--query", "topic:0|b|all|per_sd"});
  ASSERT_EQ(q.code, 0) << q.err;
  EXPECT_EQ(run({"identify", "--chain", (tmp / "chain").string(), "--output", (tmp / "id3").string(), "--query",
                 "topic:1|zz|b"})
                .code,
            1);

  // TV of identical topic files is zero.
  const auto rep = run({"report", "--topics", (tmp / "id" / "centers.tsv").string(), "--against",
                        (tmp / "id" / "centers.tsv").string(), "--output", (tmp / "tv.tsv").string()});
  ASSERT_EQ(rep.code, 0) << rep.err;
  std::istringstream tv(test_support::read_text(tmp / "tv.tsv"));
  std::string line;
  std::getline(tv, line);
  EXPECT_EQ(line, "topic\tagainst\ttv_distance");
  while (std::getline(tv, line)) {
    std::istringstream f(line);
    std::string a, b;
    double d;
    f >> a >> b >> d;
    if (a == b) EXPECT_NEAR(d, 0.0, 1e-15);
    else EXPECT_GT(d, 0.6);
  }
}

TEST(Cli, ReportSpearmanAgainstScores) {
  test_support::TempDir tmp("cli_rep");
  test_support::write_text(tmp / "topics.tsv", "topic\tA\tB\tC\tD\nt0\t0.1\t0.2\t0.3\t0.4\nt1\t0.25\t0.25\t0.25\t0.25\n");
  test_support::write_text(tmp / "scores.tsv", "category\tscore\nD\t4\nC\t3\nB\t2\nA\t1\n");
  const auto r = run({"report", "--topics", (tmp / "topics.tsv").string(), "--scores", (tmp / "scores.tsv").string(),
                      "--output", (tmp / "rho.tsv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string out = test_support::read_text(tmp / "rho.tsv");
  EXPECT_NE(out.find("t0\t1\t."), std::string::npos) << out;
  EXPECT_NE(out.find("t1\tnan\tconstant_input"), std::string::npos) << out;
}

TEST(Cli, CrossValidationWritesTable) {
  test_support::TempDir tmp("cli_cv");
  ASSERT_EQ(run(small_sim_args(tmp / "data")).code, 0);
  auto args = small_fit_args(tmp / "data", tmp / "unused");
  args[0] = "cv";
  const auto out_pos = std::find(args.begin(), args.end(), "--output");
  args.erase(out_pos, out_pos + 2);
  args.insert(args.end(), {"--folds", "3", "--jobs", "2", "--output", (tmp / "cv.tsv").string()});
  const auto r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string tsv = test_support::read_text(tmp / "cv.tsv");
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "replication\tfold_set\tclass\tpr_auc\tnull_baseline");
  EXPECT_NE(tsv.find("0\tall\tmacro"), std::string::npos);
  EXPECT_TRUE(fs::exists(tmp / "cv.tsv.manifest.json"));
}

TEST(Cli, BinaryExitCodes) {
  const std::string exe = TOPICAL_GIBBS_EXE;
  EXPECT_EQ(std::system((exe + " --help > /dev/null").c_str()), 0);
  const int bad = std::system((exe + " fit --variants /nonexistent/v.tsv --labels /nonexistent/l.tsv --map "
                                     "/nonexistent/m.tsv --output /tmp/tg_never 2> /dev/null")
                                  .c_str());
  EXPECT_EQ(WEXITSTATUS(bad), 2);
  const int unknown = std::system((exe + " frobnicate 2> /dev/null > /dev/null").c_str());
  EXPECT_EQ(WEXITSTATUS(unknown), 1);
}

}  // namespace
