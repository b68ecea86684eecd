#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "discvar/cli.hpp"
#include "oracles.hpp"

using namespace discvar;
namespace fs = std::filesystem;
using cli::json;

namespace {

const fs::path configs = DISCVAR_CONFIG_DIR;

fs::path scratch(const std::string & name)
{
  const auto d = fs::temp_directory_path() / ("discvar_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path & p)
{
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load(const fs::path & p) { return json::parse(slurp(p)); }

void save(const fs::path & p, const json & j) { std::ofstream(p) << j.dump(2); }

/// Runs the executable; returns its exit status and fills stdout+stderr.
int exec(const std::string & args, std::string * output = nullptr, const fs::path & log = {})
{
  const fs::path out = log.empty() ? fs::temp_directory_path() / "discvar_cli_exec.log" : log;
  const std::string cmd = std::string(DISCVAR_CLI_PATH) + " " + args + " > " + out.string() + " 2>&1";
  const int status      = std::system(cmd.c_str());
  if (output) { *output = slurp(out); }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Captured
{
  std::vector<std::string> errors;
  cli::Logger logger()
  {
    return [this](cli::LogLevel l, const std::string & m) {
      if (l == cli::LogLevel::Error) { errors.push_back(m); }
    };
  }
};

int solve(const fs::path & config, const fs::path & out, cli::Overrides ov = {})
{
  ov.out = out.string();
  Captured c;
  std::ostringstream os;
  return cli::main_entry("solve", config, std::nullopt, ov, os, c.logger());
}

int verify(const fs::path & config, const fs::path & traj, std::string * text = nullptr, cli::Overrides ov = {})
{
  Captured c;
  std::ostringstream os;
  const int code = cli::main_entry("verify", config, traj, ov, os, c.logger());
  if (text) { *text = os.str(); }
  return code;
}

double reported(const std::string & text, const std::string & key)
{
  std::istringstream is(text);
  std::string k;
  double v = 0.0;
  while (is >> k) {
    if (k == key) {
      is >> v;
      return v;
    }
  }
  return NAN;
}

/// Fully actuated SO(3) reorientation written to `dir`.
fs::path so3_config(const fs::path & dir, int N, const std::string & retraction = "cay")
{
  json j                            = load(configs / "rest_to_rest.json");
  const Eigen::Matrix3d R           = oracle::axis_angle({0.4, -0.3, 0.5});
  j["problem"]["N"]                 = N;
  j["problem"]["retraction"]        = retraction;
  j["problem"]["boundary"]["gT"]    = {{R(0, 0), R(0, 1), R(0, 2)}, {R(1, 0), R(1, 1), R(1, 2)}, {R(2, 0), R(2, 1), R(2, 2)}};
  const fs::path p                  = dir / ("so3_" + std::to_string(N) + ".json");
  save(p, j);
  return p;
}

}  // namespace

TEST(Run, RestToRestHasZeroControls)
{
  const auto dir = scratch("rest");
  ASSERT_EQ(exec("solve " + (configs / "rest_to_rest.json").string() + " --out " + dir.string()), 0);
  const auto t = cli::read_csv(dir / "controls.csv");
  ASSERT_EQ(t.rows.size(), 8u);
  for (const auto & row : t.rows) {
    for (std::size_t c = 2; c < row.size(); ++c) { EXPECT_EQ(std::stod(row[c]), 0.0); }
  }
  EXPECT_TRUE(load(dir / "report.json")["converged"].get<bool>());
}

TEST(Run, DoubleIntegratorMatchesCubicAndVerifies)
{
  const auto dir = scratch("di");
  ASSERT_EQ(solve(configs / "double_integrator.json", dir), 0);
  const auto t = cli::read_csv(dir / "trajectory.csv");
  ASSERT_EQ(t.rows.size(), 65u);
  const auto q = t.columns("q_");
  double err   = 0.0;
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const double s = static_cast<double>(k) / 64.0;
    err            = std::max(err, std::abs(t.row_vector(k, q)(0) - (3 * s * s - 2 * s * s * s)));
  }
  EXPECT_LT(err, 1e-2);
  EXPECT_NEAR(load(dir / "report.json")["cost"].get<double>(), 6.0, 0.06);
  EXPECT_EQ(exec("verify " + (configs / "double_integrator.json").string() + " " + (dir / "trajectory.csv").string()), 0);
}

TEST(Run, MalformedConfigNamesTheField)
{
  std::string out;
  EXPECT_EQ(exec("solve " + (configs / "malformed_missing_boundary.json").string(), &out), 1);
  EXPECT_NE(out.find("problem.boundary"), std::string::npos) << out;
}

TEST(Run, SyntaxErrorReportsLine)
{
  const auto dir = scratch("syntax");
  std::ofstream(dir / "bad.json") << "{\n  \"system\": {\"type\": \"point_mass\",\n  \"n\": 1\n";
  try {
    cli::load_config_file(dir / "bad.json");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError & e) {
    EXPECT_NE(std::string(e.what()).find("bad.json:4:"), std::string::npos) << e.what();
  }
}

TEST(Run, ConfigValidation)
{
  const json base = load(configs / "rest_to_rest.json");
  auto expect_bad = [&](json j, const std::string & field) {
    try {
      cli::load_config(j);
      ADD_FAILURE() << "accepted " << j.dump();
    } catch (const ConfigError & e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  json j                        = base;
  j["problem"]["N"]             = 1;
  expect_bad(j, "problem.N");
  j                             = base;
  j["problem"]["retraction"]    = "rk4";
  expect_bad(j, "problem.retraction");
  j                             = base;
  j["problem"]["cost"]["type"]  = "l3";
  expect_bad(j, "problem.cost.type");
  j                             = base;
  j["problem"]["boundary"]["gT"] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 2}};
  expect_bad(j, "problem.boundary.gT");
  j                             = base;
  j["system"]["type"]           = "pendulum";
  expect_bad(j, "system.type");
  j                             = base;
  j["system"]["inertia"]        = {1.0, -2.0, 3.0};
  expect_bad(j, "inertia");
}

TEST(Run, NoConvergenceStillWritesArtifacts)
{
  const auto dir = scratch("noconv");
  cli::Overrides ov;
  ov.max_iter = 1;
  EXPECT_EQ(solve(configs / "uuv_reconfiguration.json", dir, ov), 2);
  const auto r = load(dir / "report.json");
  EXPECT_FALSE(r["converged"].get<bool>());
  EXPECT_TRUE(fs::exists(dir / "trajectory.csv"));
  EXPECT_TRUE(fs::exists(dir / "controls.csv"));
}

TEST(Run, SeededRunsAreByteIdentical)
{
  auto cfg                       = load(configs / "uuv_reconfiguration.json");
  cfg["problem"]["seed"]         = 7;
  cfg["problem"]["perturbation"] = 1e-3;
  const auto dir                 = scratch("seed");
  save(dir / "cfg.json", cfg);
  ASSERT_EQ(solve(dir / "cfg.json", dir / "a"), 0);
  ASSERT_EQ(solve(dir / "cfg.json", dir / "b"), 0);
  EXPECT_EQ(slurp(dir / "a" / "trajectory.csv"), slurp(dir / "b" / "trajectory.csv"));
  EXPECT_EQ(slurp(dir / "a" / "controls.csv"), slurp(dir / "b" / "controls.csv"));
}

TEST(Run, RetractionOverrideIsRecorded)
{
  const auto dir = scratch("override");
  cli::Overrides ov;
  ov.retraction = "exp";
  ASSERT_EQ(solve(so3_config(dir, 8), dir / "out", ov), 0);
  EXPECT_EQ(load(dir / "out" / "report.json")["retraction"], "exp");
}

TEST(Simulate, HarmonicFollowsCosine)
{
  const auto dir = scratch("harm");
  ASSERT_EQ(exec("simulate " + (configs / "harmonic_simulate.json").string() + " --out " + dir.string()), 0);
  const auto t = cli::read_csv(dir / "trajectory.csv");
  ASSERT_EQ(t.rows.size(), 301u);
  const auto q = t.columns("q_");
  double err   = 0.0;
  for (std::size_t k = 0; k < t.rows.size(); ++k) { err = std::max(err, std::abs(t.row_vector(k, q)(0) - std::cos(0.02 * k))); }
  EXPECT_LT(err, 1e-3);
}

TEST(Simulate, RigidBodyRowsAreRotations)
{
  const auto dir = scratch("sosim");
  ASSERT_EQ(exec("simulate " + (configs / "so3_simulate.json").string() + " --out " + dir.string()), 0);
  const auto t = cli::read_csv(dir / "trajectory.csv");
  ASSERT_EQ(t.rows.size(), 101u);
  const auto g = t.columns("g_");
  ASSERT_EQ(g.size(), 9u);
  for (std::size_t k = 0; k < t.rows.size(); k += 10) {
    const Eigen::VectorXd v = t.row_vector(k, g);
    const Eigen::Matrix3d R = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(v.data());
    EXPECT_LT((R.transpose() * R - Eigen::Matrix3d::Identity()).norm(), 1e-12);
  }
}

TEST(Verify, RoundTripPasses)
{
  const auto dir = scratch("rt");
  const auto cfg = so3_config(dir, 8);
  ASSERT_EQ(solve(cfg, dir / "out"), 0);
  std::string text;
  EXPECT_EQ(verify(cfg, dir / "out" / "trajectory.csv", &text), 0);
  EXPECT_NE(text.find("PASS"), std::string::npos);
}

TEST(Verify, PerturbedVelocityFails)
{
  const auto dir = scratch("perturb");
  const auto cfg = so3_config(dir, 8);
  ASSERT_EQ(solve(cfg, dir / "out"), 0);
  auto t                = cli::read_csv(dir / "out" / "trajectory.csv");
  const auto col        = static_cast<std::size_t>(t.columns("xi_")[1]);
  t.rows[3][col]        = cli::detail::num(std::stod(t.rows[3][col]) + 1e-2);
  std::ofstream os(dir / "bad.csv");
  for (std::size_t i = 0; i < t.header.size(); ++i) { os << (i ? "," : "") << t.header[i]; }
  os << '\n';
  for (const auto & row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) { os << (i ? "," : "") << row[i]; }
    os << '\n';
  }
  os.close();
  std::string text;
  EXPECT_EQ(verify(cfg, dir / "bad.csv", &text), cli::VerifyFailed);
  EXPECT_GT(reported(text, "optimality"), 1e-4);
}

TEST(Verify, OtherRetractionIsReportedNotFailed)
{
  const auto dir = scratch("retr");
  cli::Overrides exp;
  exp.retraction = "exp";
  std::vector<double> opt, bnd, mom;
  for (int N : {8, 16, 32}) {
    const auto cfg = so3_config(dir, N);
    const auto out = dir / ("out" + std::to_string(N));
    ASSERT_EQ(solve(cfg, out), 0);
    std::string text;
    EXPECT_EQ(verify(cfg, out / "trajectory.csv", &text, exp), 0);
    EXPECT_NE(text.find("residuals reported only"), std::string::npos);
    opt.push_back(reported(text, "optimality"));
    bnd.push_back(reported(text, "boundary"));
    mom.push_back(reported(text, "momentum"));
  }
  EXPECT_GT(opt[0], 1e-8);
  // group stationarity and end point gap are O(h^2)
  EXPECT_GT(oracle::loglog_slope({1.0 / 8, 1.0 / 16, 1.0 / 32}, opt), 1.9);
  EXPECT_GT(oracle::loglog_slope({1.0 / 8, 1.0 / 16, 1.0 / 32}, bnd), 1.9);
  // nu rows carry the 2/h of the force terms
  EXPECT_GT(oracle::loglog_slope({1.0 / 8, 1.0 / 16, 1.0 / 32}, mom), 0.9);
}

TEST(Verify, MismatchedTrajectoryIsRejected)
{
  const auto dir = scratch("mismatch");
  ASSERT_EQ(solve(configs / "double_integrator.json", dir), 0);
  EXPECT_EQ(verify(configs / "rest_to_rest.json", dir / "trajectory.csv"), cli::BadConfig);
}
