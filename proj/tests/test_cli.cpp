#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + NONMARKOV_CLI + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::current_path() / "cli_out" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

TEST(Cli, SimulateRejectsEmptySample) {
  const auto d = fresh_dir("n0");
  EXPECT_EQ(run("simulate --n 0 --out " + d.string()), 2);
  EXPECT_FALSE(fs::exists(d / "sample.csv"));
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("simulate --bogus 1"), 2);
  EXPECT_EQ(run("band --band-weight unit --band-transform phi2"), 2);
}

TEST(Cli, ConfigUnknownKeyExitsTwo) {
  const auto d = fresh_dir("badcfg");
  std::ofstream(d / "run.cfg") << "n=20\ncolour=blue\n";
  EXPECT_EQ(run("simulate --config " + (d / "run.cfg").string() + " --out " + d.string()), 2);
  EXPECT_FALSE(fs::exists(d / "sample.csv"));
}

TEST(Cli, FlagsOverrideConfig) {
  const auto d = fresh_dir("override");
  std::ofstream(d / "run.cfg") << "# small\nn=7\nseed=3\n";
  ASSERT_EQ(run("simulate --config " + (d / "run.cfg").string() + " --n 4 --out " + d.string()), 0);
  const auto text = slurp(d / "sample.csv");
  EXPECT_NE(text.find("\n4,0,0\n"), std::string::npos);
  EXPECT_EQ(text.find("\n5,0,0\n"), std::string::npos);
}

TEST(Cli, OutputsAreStableAcrossThreadCounts) {
  const auto a = fresh_dir("threads1"), b = fresh_dir("threads4");
  const std::string common = " --n 120 --seed 11 --b 60 ";
  for (const auto& [dir, env] : {std::pair{a, std::string("NONMARKOV_THREADS=1")}, std::pair{b, std::string("NONMARKOV_THREADS=4")}}) {
    ASSERT_EQ(run("simulate" + common + "--out " + dir.string(), env), 0);
    const std::string in = " --input " + (dir / "sample.csv").string();
    ASSERT_EQ(run("estimate" + common + in + " --out " + dir.string(), env), 0);
    ASSERT_EQ(run("band" + common + in + " --out " + dir.string(), env), 0);
    ASSERT_EQ(run("elos-test" + common + in + " --input2 " + (dir / "sample.csv").string() + " --out " + dir.string(),
                  env),
              0);
  }
  for (const char* f : {"sample.csv", "curve.csv", "band.csv", "test.json"}) {
    EXPECT_FALSE(slurp(a / f).empty()) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_EQ(slurp(a / "band.csv").substr(0, 22), "t,lower,estimate,upper");
}

TEST(Cli, EstimateMatchesHandComputation) {
  const auto d = fresh_dir("hand");
  std::ofstream(d / "three.csv") << "subject_id,time,state\n"
                                    "A,0,0\nA,2,1\nA,6,0\nA,9,C\n"
                                    "B,0,0\nB,3,1\nB,7,2\n"
                                    "C,0,0\nC,1,1\nC,8,C\n";
  ASSERT_EQ(run("estimate --input " + (d / "three.csv").string() + " --s 5 --tau 10 --set-i 1 --set-j 0 --out " +
                d.string()),
            0);
  std::istringstream csv(slurp(d / "curve.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "t,estimate");
  const std::vector<std::pair<double, double>> expected = {{5, 0.0},       {6, 1.0 / 3},  {7, 1.0 / 3},
                                                           {8, 2.0 / 3.0}, {9, 2.0 / 3}, {10, 2.0 / 3}};
  for (const auto& [t, p] : expected) {
    ASSERT_TRUE(std::getline(csv, line));
    const auto comma = line.find(',');
    EXPECT_EQ(std::stod(line.substr(0, comma)), t);
    EXPECT_NEAR(std::stod(line.substr(comma + 1)), p, 1e-15) << line;
  }
  EXPECT_FALSE(std::getline(csv, line));
}

TEST(Cli, ParseErrorsExitTwoAndLeaveNoOutput) {
  const auto d = fresh_dir("parse");
  std::ofstream(d / "bad.csv") << "subject_id,time,state\nA,0,0\nA,5,1\nA,4,0\n";
  EXPECT_EQ(run("estimate --input " + (d / "bad.csv").string() + " --out " + d.string()), 2);
  EXPECT_FALSE(fs::exists(d / "curve.csv"));
}

TEST(Cli, ElosTestJsonLayout) {
  const auto d = fresh_dir("json");
  ASSERT_EQ(run("elos-test --n 150 --seed 5 --b 50 --out " + d.string()), 0);
  const auto j = nlohmann::json::parse(slurp(d / "test.json"));
  ASSERT_TRUE(j.is_array());
  ASSERT_EQ(j.size(), 3u);
  EXPECT_EQ(j[0]["method"], "wald");
  EXPECT_EQ(j[1]["method"], "naive_bootstrap");
  EXPECT_EQ(j[2]["method"], "bootstrap_t");
  for (const auto& r : j) {
    EXPECT_LE(r["ci_lo"].get<double>(), r["ci_hi"].get<double>());
    EXPECT_EQ(r["n1"], 150);
    EXPECT_EQ(r["delta"], j[0]["delta"]);
  }
}

TEST(Cli, CoverageSummaryColumns) {
  const auto d = fresh_dir("coverage");
  ASSERT_EQ(run("coverage --n 60 --replicates 4 --b 20 --seed 2 --out " + d.string()), 0);
  std::istringstream csv(slurp(d / "coverage.csv"));
  std::string header, values;
  std::getline(csv, header);
  std::getline(csv, values);
  for (const char* col : {"bias_AJ", "bias_NM", "cov_wald_AJ", "cov_wald_NM", "cov_naive_boot", "cov_boot_t", "cov_hw",
                          "cov_ep", "cov_naive", "cov_aj_ep", "fail_hw"})
    EXPECT_NE(header.find(col), std::string::npos) << col;
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(values.begin(), values.end(), ','));
}

}  // namespace
