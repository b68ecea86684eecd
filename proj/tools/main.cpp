#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

#include "discvar/cli.hpp"

namespace {

void setup_logging()
{
  auto logger = spdlog::stderr_color_mt("discvar");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char * lvl = std::getenv("DISCVAR_LOG")) { spdlog::set_level(spdlog::level::from_str(lvl)); }
}

void forward(discvar::cli::LogLevel l, const std::string & msg)
{
  using discvar::cli::LogLevel;
  switch (l) {
  case LogLevel::Debug: spdlog::debug(msg); break;
  case LogLevel::Info: spdlog::info(msg); break;
  case LogLevel::Warn: spdlog::warn(msg); break;
  case LogLevel::Error: spdlog::error(msg); break;
  }
}

}  // namespace

int main(int argc, char ** argv)
{
  setup_logging();
  CLI::App app{"Discrete variational optimal control"};
  app.require_subcommand(1);

  discvar::cli::Overrides ov;
  std::string config, trajectory;
  auto add_common = [&](CLI::App * sub) {
    sub->add_option("config", config, "JSON problem definition")->required()->check(CLI::ExistingFile);
    sub->add_option("--tol", ov.tol, "Solver tolerance (verify: residual tolerance)");
    sub->add_option("--max-iter", ov.max_iter, "Solver iteration limit");
    sub->add_option("--retraction", ov.retraction, "Retraction map")->check(CLI::IsMember({"cay", "exp"}));
  };

  auto * sim = app.add_subcommand("simulate", "Forward simulation with the configured controls");
  auto * sol = app.add_subcommand("solve", "Solve the optimal control problem");
  auto * ver = app.add_subcommand("verify", "Re-evaluate the residuals of a stored solve");
  for (auto * sub : {sim, sol}) {
    add_common(sub);
    sub->add_option("--out", ov.out, "Output directory");
  }
  add_common(ver);
  ver->add_option("trajectory", trajectory, "trajectory.csv from a solve")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  const std::string command = sim->parsed() ? "simulate" : sol->parsed() ? "solve" : "verify";
  std::optional<std::filesystem::path> traj;
  if (!trajectory.empty()) { traj = trajectory; }
  return discvar::cli::main_entry(command, config, traj, ov, std::cout, forward);
}
