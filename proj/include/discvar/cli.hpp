#pragma once

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "discvar/errors.hpp"
#include "discvar/lgoc.hpp"
#include "discvar/mech.hpp"
#include "discvar/solvers.hpp"
#include "discvar/systems.hpp"
#include "discvar/tboc.hpp"

namespace discvar::cli {

using json = nlohmann::json;
using Vec  = Eigen::VectorXd;
using Mat  = Eigen::MatrixXd;
namespace fs = std::filesystem;

enum ExitCode : int { Ok = 0, BadConfig = 1, NotConverged = 2, VerifyFailed = 3 };

enum class LogLevel { Debug, Info, Warn, Error };
using Logger = std::function<void(LogLevel, const std::string &)>;

inline Logger stderr_logger()
{
  return [](LogLevel l, const std::string & msg) {
    if (l >= LogLevel::Warn) { std::cerr << msg << '\n'; }
  };
}

/// Command line overrides; unset fields keep the config values.
struct Overrides
{
  std::optional<double> tol;
  std::optional<int> max_iter;
  std::optional<std::string> retraction;
  std::optional<std::string> out;
};

struct RnCase
{
  systems::PointMass mass;
  tboc::OcProblemRn problem;
};

struct LieCase
{
  lgoc::OcProblemLie problem;
};

struct RunConfig
{
  std::string command = "solve";
  std::string system_type;
  std::variant<RnCase, LieCase> problem;
  std::string retraction = "cay";
  solvers::SolverOptions solver;
  bool use_lm = false;
  /// eps continuation for smoothed-L1 costs on Lie group problems
  bool continuation = true;
  std::uint64_t seed  = 0;
  double perturbation = 0.0;
  double verify_tol   = 1e-6;
  std::vector<std::pair<Vec, Vec>> sim_controls;
  fs::path out_dir = "out";

  int N() const { return std::visit([](const auto & c) { return c.problem.N; }, problem); }
  double h() const
  {
    if (const auto * r = std::get_if<RnCase>(&problem)) { return r->problem.h(); }
    return std::get<LieCase>(problem).problem.h;
  }
};

// ---------------------------------------------------------------------------
// JSON access with field paths in every diagnostic
// ---------------------------------------------------------------------------

namespace detail {

inline const json & field(const json & j, const std::string & key, const std::string & path)
{
  if (!j.is_object()) { throw ConfigError(path + ": expected an object"); }
  const auto it = j.find(key);
  if (it == j.end()) { throw ConfigError(path + "." + key + ": missing field"); }
  return *it;
}

inline const json * optional_field(const json & j, const std::string & key)
{
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

inline double number(const json & j, const std::string & path)
{
  if (!j.is_number()) { throw ConfigError(path + ": expected a number"); }
  return j.get<double>();
}

inline int integer(const json & j, const std::string & path)
{
  if (!j.is_number_integer()) { throw ConfigError(path + ": expected an integer"); }
  return j.get<int>();
}

inline std::string string(const json & j, const std::string & path)
{
  if (!j.is_string()) { throw ConfigError(path + ": expected a string"); }
  return j.get<std::string>();
}

inline Vec vector(const json & j, const std::string & path, int expect = -1)
{
  if (!j.is_array()) { throw ConfigError(path + ": expected an array of numbers"); }
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) { v(static_cast<Eigen::Index>(i)) = number(j[i], path + "[" + std::to_string(i) + "]"); }
  if (expect >= 0 && v.size() != expect) {
    throw ConfigError(path + ": expected " + std::to_string(expect) + " entries, got " + std::to_string(v.size()));
  }
  return v;
}

inline Mat matrix(const json & j, const std::string & path, int rows = -1, int cols = -1)
{
  if (!j.is_array() || j.empty() || !j[0].is_array()) { throw ConfigError(path + ": expected an array of rows"); }
  const auto r = static_cast<Eigen::Index>(j.size());
  const auto c = static_cast<Eigen::Index>(j[0].size());
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const Vec row = vector(j[static_cast<std::size_t>(i)], path + "[" + std::to_string(i) + "]", static_cast<int>(c));
    m.row(i)      = row.transpose();
  }
  if ((rows >= 0 && r != rows) || (cols >= 0 && c != cols)) {
    throw ConfigError(path + ": expected a " + std::to_string(rows) + "x" + std::to_string(cols) + " matrix");
  }
  return m;
}

/// Diagonal given as a flat array, or a full square matrix.
inline Mat square(const json & j, const std::string & path, int n = -1)
{
  if (j.is_number()) {
    if (n < 0) { throw ConfigError(path + ": scalar needs a known dimension"); }
    return number(j, path) * Mat::Identity(n, n);
  }
  if (j.is_array() && !j.empty() && j[0].is_number()) { return vector(j, path, n).asDiagonal(); }
  return matrix(j, path, n, n);
}

inline std::vector<int> indices(const json & j, const std::string & path)
{
  if (!j.is_array()) { throw ConfigError(path + ": expected an array of integers"); }
  std::vector<int> out;
  for (std::size_t i = 0; i < j.size(); ++i) { out.push_back(integer(j[i], path + "[" + std::to_string(i) + "]")); }
  return out;
}

inline lie::Retraction retraction(const std::string & name, const std::string & path)
{
  if (name == "cay") { return lie::Retraction::cayley(); }
  if (name == "exp") { return lie::Retraction::exponential(); }
  throw ConfigError(path + ": retraction must be \"cay\" or \"exp\"");
}

inline lie::GroupElement group_element(const json & j, const lie::GroupSpec & spec, const std::string & path)
{
  try {
    switch (spec.kind()) {
    case lie::GroupKind::RealN: return lie::GroupElement::translation(vector(j, path, spec.algebra_dim()));
    case lie::GroupKind::SO3: return lie::GroupElement::rotation(matrix(j, path, 3, 3));
    case lie::GroupKind::SE3: {
      const Mat R = matrix(field(j, "R", path), path + ".R", 3, 3);
      const Vec x = vector(field(j, "x", path), path + ".x", 3);
      return lie::GroupElement::rigid(R, x);
    }
    }
  } catch (const ConfigError &) {
    throw;
  } catch (const std::exception & e) {
    throw ConfigError(path + ": " + e.what());
  }
  throw ConfigError(path + ": unknown group");
}

inline systems::CostSpec cost(const json & j, int m, const std::string & path)
{
  const std::string type = string(field(j, "type", path), path + ".type");
  systems::CostSpec c;
  if (type == "l2") {
    systems::L2 l2;
    if (const auto * w = optional_field(j, "weight")) { l2.weight = number(*w, path + ".weight"); }
    c = l2;
  } else if (type == "smoothed_l1") {
    systems::SmoothedL1 l1;
    if (const auto * e = optional_field(j, "eps")) { l1.eps = number(*e, path + ".eps"); }
    if (const auto * p = optional_field(j, "penalty")) { l1.penalty = number(*p, path + ".penalty"); }
    if (const auto * lo = optional_field(j, "u_min")) { l1.u_min = vector(*lo, path + ".u_min", m); }
    if (const auto * hi = optional_field(j, "u_max")) { l1.u_max = vector(*hi, path + ".u_max", m); }
    c = l1;
  } else {
    throw ConfigError(path + ".type: expected \"l2\" or \"smoothed_l1\"");
  }
  try {
    systems::validate(c, m);
  } catch (const std::invalid_argument & e) {
    throw ConfigError(path + ": " + e.what());
  }
  return c;
}

inline std::vector<std::pair<Vec, Vec>> control_sequence(const json & j, int N, int m, const std::string & path)
{
  std::vector<std::pair<Vec, Vec>> u;
  if (const auto * c = optional_field(j, "constant")) {
    const Vec v = vector(*c, path + ".constant", m);
    u.assign(static_cast<std::size_t>(N), {v, v});
  } else if (const auto * s = optional_field(j, "sequence")) {
    if (!s->is_array() || static_cast<int>(s->size()) != N) { throw ConfigError(path + ".sequence: expected N entries"); }
    for (std::size_t k = 0; k < s->size(); ++k) {
      const std::string p = path + ".sequence[" + std::to_string(k) + "]";
      u.emplace_back(vector(field((*s)[k], "minus", p), p + ".minus", m), vector(field((*s)[k], "plus", p), p + ".plus", m));
    }
  } else {
    throw ConfigError(path + ": expected \"constant\" or \"sequence\"");
  }
  return u;
}

inline lgoc::ReducedSystem reduced_system(const json & s, const std::string & type, lie::Retraction r)
{
  if (type == "rigid_body_so3") {
    const Vec I            = vector(field(s, "inertia", "system"), "system.inertia", 3);
    std::vector<int> act   = {0, 1};
    if (const auto * a = optional_field(s, "actuated")) { act = indices(*a, "system.actuated"); }
    return systems::make_rigid_body_so3(I, act, r);
  }
  if (type == "uuv_se3") {
    systems::UuvParams p;
    if (const auto * v = optional_field(s, "mass")) { p.mass = number(*v, "system.mass"); }
    if (const auto * v = optional_field(s, "radius")) { p.radius = number(*v, "system.radius"); }
    if (const auto * v = optional_field(s, "length")) { p.length = number(*v, "system.length"); }
    if (const auto * v = optional_field(s, "c")) { p.c = number(*v, "system.c"); }
    if (const auto * v = optional_field(s, "d")) { p.d = number(*v, "system.d"); }
    if (const auto * v = optional_field(s, "drag")) { p.H = square(*v, "system.drag", 6); }
    return systems::make_uuv(p, r);
  }
  // custom reduced system
  const std::string g = string(field(s, "group", "system"), "system.group");
  lie::GroupSpec spec = lie::GroupSpec::so3(r);
  if (g == "se3") {
    spec = lie::GroupSpec::se3(r);
  } else if (g == "rn") {
    spec = lie::GroupSpec::real_n(integer(field(s, "n", "system"), "system.n"), r);
  } else if (g != "so3") {
    throw ConfigError("system.group: expected \"so3\", \"se3\" or \"rn\"");
  }
  const int n = spec.algebra_dim();
  const Mat I = square(field(s, "inertia", "system"), "system.inertia", n);
  std::vector<int> act(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) { act[static_cast<std::size_t>(i)] = i; }
  if (const auto * a = optional_field(s, "actuated")) { act = indices(*a, "system.actuated"); }
  const int m = static_cast<int>(act.size());
  const Mat B = optional_field(s, "control_map") ? matrix(s["control_map"], "system.control_map", m, m) : Mat(Mat::Identity(m, m));
  const Mat D = optional_field(s, "drift") ? square(s["drift"], "system.drift", n) : Mat();
  return lgoc::ReducedSystem(spec, I, act, B, D);
}

inline systems::PointMass point_mass(const json & s, double h)
{
  const int n = integer(field(s, "n", "system"), "system.n");
  if (n < 1) { throw ConfigError("system.n: must be positive"); }
  const Mat M = optional_field(s, "mass") ? square(s["mass"], "system.mass", n) : Mat(Mat::Identity(n, n));
  auto forces = systems::ForceDiscretization::Trapezoidal;
  if (const auto * f = optional_field(s, "forces")) {
    const std::string v = string(*f, "system.forces");
    if (v == "identity") {
      forces = systems::ForceDiscretization::Identity;
    } else if (v != "trapezoidal") {
      throw ConfigError("system.forces: expected \"trapezoidal\" or \"identity\"");
    }
  }
  if (const auto * k = optional_field(s, "stiffness")) {
    auto pm   = systems::make_harmonic(n, M, number(*k, "system.stiffness"), h);
    pm.forces = forces;
    return pm;
  }
  return systems::make_point_mass(n, M, h, forces);
}

}  // namespace detail

/// Parses a JSON document; syntax errors report line and column.
inline json parse_json(const std::string & text, const std::string & name)
{
  try {
    return json::parse(text);
  } catch (const json::parse_error & e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(name + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
}

inline RunConfig load_config(const json & doc, const Overrides & ov = {})
{
  using namespace detail;
  RunConfig cfg;
  try {
    if (const auto * c = optional_field(doc, "command")) { cfg.command = string(*c, "command"); }
    const json & s   = field(doc, "system", "config");
    const json & p   = field(doc, "problem", "config");
    cfg.system_type  = string(field(s, "type", "system"), "system.type");
    const int N      = integer(field(p, "N", "problem"), "problem.N");
    if (N < 2) { throw ConfigError("problem.N: must be >= 2"); }
    double h = 0.0;
    if (const auto * hp = optional_field(p, "h")) {
      h = number(*hp, "problem.h");
    } else {
      h = number(field(p, "T", "problem"), "problem.T") / N;
    }
    if (!(h > 0.0)) { throw ConfigError("problem.h: must be positive"); }

    if (const auto * r = optional_field(p, "retraction")) { cfg.retraction = string(*r, "problem.retraction"); }
    if (ov.retraction) { cfg.retraction = *ov.retraction; }
    const auto retr = retraction(cfg.retraction, "problem.retraction");

    if (const auto * sv = optional_field(p, "solver")) {
      if (const auto * v = optional_field(*sv, "tol")) { cfg.solver.tol = number(*v, "problem.solver.tol"); }
      if (const auto * v = optional_field(*sv, "max_iter")) { cfg.solver.max_iter = integer(*v, "problem.solver.max_iter"); }
      if (const auto * v = optional_field(*sv, "method")) {
        const std::string m = string(*v, "problem.solver.method");
        if (m != "lm" && m != "newton_lm") { throw ConfigError("problem.solver.method: expected \"lm\" or \"newton_lm\""); }
        cfg.use_lm = m == "lm";
      }
      if (const auto * v = optional_field(*sv, "continuation")) {
        if (!v->is_boolean()) { throw ConfigError("problem.solver.continuation: expected a boolean"); }
        cfg.continuation = v->get<bool>();
      }
    }
    if (ov.tol) { cfg.solver.tol = *ov.tol; }
    if (ov.max_iter) { cfg.solver.max_iter = *ov.max_iter; }
    if (const auto * v = optional_field(p, "seed")) { cfg.seed = static_cast<std::uint64_t>(integer(*v, "problem.seed")); }
    if (const auto * v = optional_field(p, "perturbation")) { cfg.perturbation = number(*v, "problem.perturbation"); }
    if (const auto * v = optional_field(doc, "verify")) { cfg.verify_tol = number(field(*v, "tol", "verify"), "verify.tol"); }
    if (const auto * o = optional_field(doc, "output")) { cfg.out_dir = string(field(*o, "dir", "output"), "output.dir"); }
    if (ov.out) { cfg.out_dir = *ov.out; }

    const json & b = field(p, "boundary", "problem");
    int m          = 0;
    if (cfg.system_type == "point_mass") {
      RnCase rc{point_mass(s, h), {}};
      const int n = rc.mass.lagrangian.dim();
      tboc::BoundaryRn bd;
      bd.x0 = vector(field(b, "x0", "problem.boundary"), "problem.boundary.x0", n);
      bd.xT = vector(field(b, "xT", "problem.boundary"), "problem.boundary.xT", n);
      bd.p0 = optional_field(b, "p0") ? vector(b["p0"], "problem.boundary.p0", n) : Vec(Vec::Zero(n));
      bd.pT = optional_field(b, "pT") ? vector(b["pT"], "problem.boundary.pT", n) : Vec(Vec::Zero(n));
      m     = n;
      const systems::CostSpec c = optional_field(p, "cost") ? cost(p["cost"], m, "problem.cost") : systems::CostSpec{systems::L2{}};
      rc.problem = rc.mass.problem(bd, N, c);
      cfg.problem = std::move(rc);
    } else if (cfg.system_type == "rigid_body_so3" || cfg.system_type == "uuv_se3" || cfg.system_type == "reduced") {
      auto sys          = reduced_system(s, cfg.system_type, retr);
      const auto & spec = sys.group();
      const int n       = sys.dim();
      lgoc::BoundaryLie bd{group_element(field(b, "g0", "problem.boundary"), spec, "problem.boundary.g0"),
                           optional_field(b, "xi0") ? vector(b["xi0"], "problem.boundary.xi0", n) : Vec(Vec::Zero(n)),
                           group_element(field(b, "gT", "problem.boundary"), spec, "problem.boundary.gT"),
                           optional_field(b, "xiT") ? vector(b["xiT"], "problem.boundary.xiT", n) : Vec(Vec::Zero(n))};
      m = sys.control_dim();
      const systems::CostSpec c = optional_field(p, "cost") ? cost(p["cost"], m, "problem.cost") : systems::CostSpec{systems::L2{}};
      auto f = lgoc::Formulation::General;
      if (const auto * v = optional_field(p, "formulation")) {
        const std::string fs = string(*v, "problem.formulation");
        if (fs == "eliminated") {
          f = lgoc::Formulation::Eliminated;
        } else if (fs != "general") {
          throw ConfigError("problem.formulation: expected \"general\" or \"eliminated\"");
        }
      }
      cfg.problem = LieCase{lgoc::OcProblemLie{std::move(sys), std::move(bd), N, h, c, f}};
    } else {
      throw ConfigError("system.type: unknown system \"" + cfg.system_type + "\"");
    }

    if (const auto * u = optional_field(p, "controls")) {
      cfg.sim_controls = control_sequence(*u, N, m, "problem.controls");
    } else {
      cfg.sim_controls.assign(static_cast<std::size_t>(N), {Vec::Zero(m), Vec::Zero(m)});
    }
  } catch (const ConfigError &) {
    throw;
  } catch (const json::exception & e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::exception & e) {
    // validation errors raised by the library constructors
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

inline RunConfig load_config_file(const fs::path & path, const Overrides & ov = {})
{
  std::ifstream in(path);
  if (!in) { throw ConfigError(path.string() + ": cannot open"); }
  std::stringstream ss;
  ss << in.rdbuf();
  return load_config(parse_json(ss.str(), path.string()), ov);
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

namespace detail {

inline std::string num(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void put(std::ostream & os, const Vec & v)
{
  for (Eigen::Index i = 0; i < v.size(); ++i) { os << ',' << num(v(i)); }
}

inline void blanks(std::ostream & os, Eigen::Index n)
{
  for (Eigen::Index i = 0; i < n; ++i) { os << ','; }
}

inline void names(std::ostream & os, const std::string & prefix, Eigen::Index n)
{
  for (Eigen::Index i = 0; i < n; ++i) { os << ',' << prefix << i; }
}

inline Vec flat(const lie::GroupElement & g)
{
  const Mat & d = g.data();
  Vec v(d.size());
  for (Eigen::Index r = 0; r < d.rows(); ++r) {
    for (Eigen::Index c = 0; c < d.cols(); ++c) { v(r * d.cols() + c) = d(r, c); }
  }
  return v;
}

inline void write_controls(const fs::path & file, const std::vector<std::pair<Vec, Vec>> & u, double h)
{
  std::ofstream os(file);
  const auto m = u.empty() ? 0 : u.front().first.size();
  os << "k,t";
  names(os, "um_", m);
  names(os, "up_", m);
  os << '\n';
  for (std::size_t k = 0; k < u.size(); ++k) {
    os << k << ',' << num(static_cast<double>(k) * h);
    put(os, u[k].first);
    put(os, u[k].second);
    os << '\n';
  }
}

/// q/p rows for R^n problems; multipliers are blank at k = N.
inline void write_rn(const fs::path & file, const std::vector<tboc::StateRn> & s, const std::vector<std::pair<Vec, Vec>> & mult,
                     double h)
{
  std::ofstream os(file);
  const auto n = s.front().q.size();
  const auto c = mult.empty() ? 0 : mult.front().first.size();
  os << "k,t";
  names(os, "q_", n);
  names(os, "p_", n);
  names(os, "lm_", c);
  names(os, "lp_", c);
  os << '\n';
  for (std::size_t k = 0; k < s.size(); ++k) {
    os << k << ',' << num(static_cast<double>(k) * h);
    put(os, s[k].q);
    put(os, s[k].p);
    if (k < mult.size()) {
      put(os, mult[k].first);
      put(os, mult[k].second);
    } else {
      blanks(os, 2 * c);
    }
    os << '\n';
  }
}

/// Flattened g_k (row-major), xi_k, nu_k and the interval multipliers.
inline void write_lie(const fs::path & file, const std::vector<lie::GroupElement> & g, const std::vector<Vec> & xi,
                      const std::vector<Vec> & nu, const std::vector<std::pair<Vec, Vec>> & mult, double h)
{
  std::ofstream os(file);
  const Mat & d = g.front().data();
  const auto n  = nu.front().size();
  const auto c  = mult.empty() ? 0 : mult.front().first.size();
  os << "k,t";
  for (Eigen::Index r = 0; r < d.rows(); ++r) {
    for (Eigen::Index cc = 0; cc < d.cols(); ++cc) { os << ",g_" << r << '_' << cc; }
  }
  names(os, "xi_", n);
  names(os, "nu_", n);
  names(os, "lm_", c);
  names(os, "lp_", c);
  os << '\n';
  for (std::size_t k = 0; k < g.size(); ++k) {
    os << k << ',' << num(static_cast<double>(k) * h);
    put(os, flat(g[k]));
    k < xi.size() ? put(os, xi[k]) : blanks(os, n);
    put(os, nu[k]);
    if (k < mult.size()) {
      put(os, mult[k].first);
      put(os, mult[k].second);
    } else {
      blanks(os, 2 * c);
    }
    os << '\n';
  }
}

inline void write_report(const fs::path & file, const json & report)
{
  std::ofstream os(file);
  os << report.dump(2) << '\n';
}

inline json report_json(const RunConfig & cfg, const solvers::SolveReport & rep, double seconds)
{
  json r;
  r["command"]          = cfg.command;
  r["system"]           = cfg.system_type;
  r["retraction"]       = cfg.retraction;
  r["N"]                = cfg.N();
  r["h"]                = cfg.h();
  r["converged"]        = rep.converged;
  r["iterations"]       = rep.iterations;
  r["residual_norm"]    = rep.residual_norm;
  r["method"]           = rep.method == solvers::Method::Newton ? "newton" : "levenberg_marquardt";
  r["slow_convergence"] = rep.slow_convergence;
  r["residual_history"] = rep.residual_history;
  r["timings"]          = {{"total_s", seconds}};
  return r;
}

inline Vec perturbed(const RunConfig & cfg, Vec z)
{
  if (cfg.perturbation == 0.0) { return z; }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (Eigen::Index i = 0; i < z.size(); ++i) { z(i) += cfg.perturbation * d(rng); }
  return z;
}

inline Vec run_solver(const RunConfig & cfg, const solvers::ResidualSystem & sys, const Vec & z0, solvers::SolveReport & rep)
{
  return cfg.use_lm ? solvers::levenberg_marquardt(sys, z0, rep, cfg.solver) : solvers::solve(sys, z0, rep, cfg.solver);
}

/// q_1 from the initial momentum p_0 through the forced Legendre transform.
inline Vec second_position(const systems::PointMass & pm, const mech::DiscreteForcePairRn & F, const Vec & q0, const Vec & p0,
                           const std::pair<Vec, Vec> & u0)
{
  const auto & L = pm.lagrangian;
  solvers::ResidualSystem rs;
  rs.dim  = L.dim();
  rs.eval = [&](const Vec & q1) -> Vec { return mech::legendre_pair(L, F, q0, q1, u0.first, u0.second).first - p0; };
  solvers::SolveReport rep;
  return solvers::newton(rs, q0 + L.h * L.M.ldlt().solve(p0), rep, {.tol = 1e-13});
}

}  // namespace detail

/// Runs `simulate` or `solve` and writes trajectory.csv, controls.csv and report.json.
inline int run(const std::string & command, const RunConfig & cfg_in, const Logger & log = stderr_logger())
{
  RunConfig cfg = cfg_in;
  cfg.command   = command;
  if (command != "simulate" && command != "solve") { throw ConfigError("unknown command \"" + command + "\""); }
  fs::create_directories(cfg.out_dir);
  const auto traj = cfg.out_dir / "trajectory.csv";
  const auto ctrl = cfg.out_dir / "controls.csv";
  const auto rep  = cfg.out_dir / "report.json";
  const auto t0   = std::chrono::steady_clock::now();
  auto seconds    = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  const int N     = cfg.N();
  const double h  = cfg.h();

  if (command == "simulate") {
    solvers::SolveReport sr;
    sr.converged = true;
    try {
      if (const auto * rc = std::get_if<RnCase>(&cfg.problem)) {
        const auto F = rc->problem.forces;
        mech::Controls u;
        for (const auto & [a, b] : cfg.sim_controls) { u.push_back({a, b}); }
        const auto & bd = rc->problem.boundary;
        const Vec q1    = detail::second_position(rc->mass, F, bd.x0, bd.p0, cfg.sim_controls.front());
        const auto q    = mech::integrate(rc->mass.lagrangian, F, bd.x0, q1, u, N);
        std::vector<tboc::StateRn> s;
        for (int k = 0; k < N; ++k) {
          const auto K = static_cast<std::size_t>(k);
          s.push_back({q[K], mech::legendre_pair(rc->mass.lagrangian, F, q[K], q[K + 1], u[K].minus, u[K].plus).first});
        }
        const auto K = static_cast<std::size_t>(N - 1);
        s.push_back({q.back(), mech::legendre_pair(rc->mass.lagrangian, F, q[K], q[K + 1], u[K].minus, u[K].plus).second});
        detail::write_rn(traj, s, {}, h);
      } else {
        const auto & p = std::get<LieCase>(cfg.problem).problem;
        const auto f   = lgoc::simulate(p.system, p.boundary.g0, p.boundary.xi0, cfg.sim_controls, N, h);
        detail::write_lie(traj, f.g, f.xi, f.nu, {}, h);
      }
    } catch (const StepSolveFailed & e) {
      log(LogLevel::Error, std::string("simulation failed: ") + e.what());
      sr.converged = false;
      auto r       = detail::report_json(cfg, sr, seconds());
      r["error"]   = e.what();
      detail::write_report(rep, r);
      return NotConverged;
    }
    detail::write_controls(ctrl, cfg.sim_controls, h);
    detail::write_report(rep, detail::report_json(cfg, sr, seconds()));
    log(LogLevel::Info, "simulated " + std::to_string(N) + " steps into " + cfg.out_dir.string());
    return Ok;
  }

  solvers::SolveReport sr;
  bool ok = true;
  double cost = 0.0;
  if (const auto * rc = std::get_if<RnCase>(&cfg.problem)) {
    const tboc::OptimalitySystem os(rc->problem);
    Vec z;
    try {
      z = detail::run_solver(cfg, os.system(), detail::perturbed(cfg, os.initial_guess()), sr);
    } catch (const solvers::NoConvergence & e) {
      ok = false;
      z  = e.best();
      sr = e.report();
    }
    const auto states = os.unpack_states(z);
    const auto u      = os.controls(states);
    std::vector<std::pair<Vec, Vec>> up;
    for (const auto & c : u) { up.emplace_back(c.minus, c.plus); }
    cost = os.cost(u);
    detail::write_rn(traj, states, os.unpack_multipliers(z), h);
    detail::write_controls(ctrl, up, h);
  } else {
    const auto & p = std::get<LieCase>(cfg.problem).problem;
    const lgoc::LieOcSystem s(p);
    const bool l1 = std::holds_alternative<systems::SmoothedL1>(p.cost);
    Vec z;
    try {
      if (l1 && cfg.continuation) {
        auto r = lgoc::solve_continuation(p, cfg.solver);
        z      = std::move(r.unknowns);
        sr     = std::move(r.report);
      } else {
        z = detail::run_solver(cfg, s.system(), detail::perturbed(cfg, s.initial_guess()), sr);
      }
    } catch (const solvers::NoConvergence & e) {
      ok = false;
      z  = e.best();
      sr = e.report();
    }
    const auto sol = lgoc::finish(s, z, sr);
    cost           = sol.cost;
    detail::write_lie(traj, sol.trajectory.g, sol.trajectory.xi, sol.trajectory.nu, sol.trajectory.multipliers, h);
    detail::write_controls(ctrl, sol.controls, h);
  }
  auto r    = detail::report_json(cfg, sr, seconds());
  r["cost"] = cost;
  detail::write_report(rep, r);
  if (!ok) {
    log(LogLevel::Error, "no convergence after " + std::to_string(sr.iterations) + " iterations, |F| = " + detail::num(sr.residual_norm));
    return NotConverged;
  }
  log(LogLevel::Info, "converged in " + std::to_string(sr.iterations) + " iterations, cost " + detail::num(cost));
  return Ok;
}

// ---------------------------------------------------------------------------
// Verification of stored output
// ---------------------------------------------------------------------------

struct Table
{
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::vector<int> columns(const std::string & prefix) const
  {
    std::vector<int> out;
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i].rfind(prefix, 0) == 0) { out.push_back(static_cast<int>(i)); }
    }
    return out;
  }

  Vec row_vector(std::size_t r, const std::vector<int> & cols) const
  {
    Vec v(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) {
      const auto c = static_cast<std::size_t>(cols[i]);
      if (c >= rows[r].size() || rows[r][c].empty()) { throw DimensionMismatch("trajectory row " + std::to_string(r) + " is missing " + header[c]); }
      v(static_cast<Eigen::Index>(i)) = std::stod(rows[r][c]);
    }
    return v;
  }
};

inline Table read_csv(const fs::path & path)
{
  std::ifstream in(path);
  if (!in) { throw ConfigError(path.string() + ": cannot open"); }
  auto split = [](const std::string & line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) { out.push_back(cell); }
    if (!line.empty() && line.back() == ',') { out.emplace_back(); }
    return out;
  };
  Table t;
  std::string line;
  if (!std::getline(in, line)) { throw DimensionMismatch(path.string() + ": empty file"); }
  t.header = split(line);
  while (std::getline(in, line)) {
    if (!line.empty()) { t.rows.push_back(split(line)); }
  }
  return t;
}

/// Largest residual of each check.
struct VerifyResult
{
  double dynamics    = 0.0;
  double optimality  = 0.0;
  /// nu matching rows of Lie group problems
  double momentum    = 0.0;
  double constraints = 0.0;
  double boundary    = 0.0;

  double worst() const { return std::max({dynamics, optimality, momentum, constraints, boundary}); }
};

inline VerifyResult verify_residuals(const RunConfig & cfg, const Table & t)
{
  VerifyResult v;
  const int N = cfg.N();
  if (static_cast<int>(t.rows.size()) != N + 1) { throw DimensionMismatch("trajectory must have N + 1 rows"); }
  auto inf = [](const Vec & x) { return x.size() ? x.lpNorm<Eigen::Infinity>() : 0.0; };

  if (const auto * rc = std::get_if<RnCase>(&cfg.problem)) {
    const tboc::OptimalitySystem os(rc->problem);
    const int n  = rc->problem.dim();
    const auto q = t.columns("q_"), p = t.columns("p_"), lm = t.columns("lm_"), lp = t.columns("lp_");
    if (static_cast<int>(q.size()) != n || static_cast<int>(p.size()) != n || static_cast<int>(lm.size()) != os.constraint_dim()) {
      throw DimensionMismatch("trajectory columns do not match the config");
    }
    std::vector<tboc::StateRn> s;
    std::vector<std::pair<Vec, Vec>> mult;
    for (int k = 0; k <= N; ++k) {
      const auto K = static_cast<std::size_t>(k);
      s.push_back({t.row_vector(K, q), t.row_vector(K, p)});
      if (k < N) { mult.emplace_back(t.row_vector(K, lm), t.row_vector(K, lp)); }
    }
    const auto & b = rc->problem.boundary;
    v.boundary     = std::max({inf(s.front().q - b.x0), inf(s.front().p - b.p0), inf(s.back().q - b.xT), inf(s.back().p - b.pT)});
    const Vec r    = os.residual(os.pack(s, mult));
    v.optimality   = inf(r.head(os.state_unknowns()));
    v.constraints  = inf(r.tail(r.size() - os.state_unknowns()));
    const auto u   = os.controls(s);
    const auto & L = rc->problem.lagrangian;
    const auto & F = rc->problem.forces;
    for (int k = 0; k < N; ++k) {
      const auto K       = static_cast<std::size_t>(k);
      const auto [pm, pp] = mech::legendre_pair(L, F, s[K].q, s[K + 1].q, u[K].minus, u[K].plus);
      v.dynamics         = std::max({v.dynamics, inf(pm - s[K].p), inf(pp - s[K + 1].p)});
    }
    return v;
  }

  const auto & prob = std::get<LieCase>(cfg.problem).problem;
  const lgoc::LieOcSystem s(prob);
  const int n   = prob.system.dim();
  const auto gc = t.columns("g_"), xc = t.columns("xi_"), nc = t.columns("nu_"), lm = t.columns("lm_"), lp = t.columns("lp_");
  const Mat & d0 = prob.boundary.g0.data();
  if (static_cast<int>(xc.size()) != n || static_cast<int>(nc.size()) != n || static_cast<Eigen::Index>(gc.size()) != d0.size() ||
      static_cast<int>(lm.size()) != s.constraint_dim()) {
    throw DimensionMismatch("trajectory columns do not match the config");
  }
  std::vector<Vec> xi, nu;
  std::vector<std::pair<Vec, Vec>> mult;
  for (int k = 0; k <= N; ++k) {
    const auto K = static_cast<std::size_t>(k);
    nu.push_back(t.row_vector(K, nc));
    if (k < N) {
      xi.push_back(t.row_vector(K, xc));
      mult.emplace_back(t.row_vector(K, lm), t.row_vector(K, lp));
    }
  }
  const Vec z  = s.pack(xi, nu, mult);
  const Vec r  = s.residual(z);
  v.optimality = inf(r.head(s.nu_row()));
  if (!s.eliminated()) { v.momentum = inf(r.segment(s.nu_row(), s.constraint_row() - s.nu_row())); }
  for (const auto & [a, b] : s.constraints(z)) { v.constraints = std::max({v.constraints, inf(a), inf(b)}); }
  // stored configurations against reconstruction, and the end point against gT
  const auto g = s.reconstruct(xi);
  for (int k = 0; k <= N; ++k) {
    const Vec stored = t.row_vector(static_cast<std::size_t>(k), gc);
    v.boundary       = std::max(v.boundary, inf(stored - detail::flat(g[static_cast<std::size_t>(k)])));
  }
  v.boundary = std::max({v.boundary, inf(detail::flat(g.front()) - detail::flat(prob.boundary.g0)), inf(r.tail(n))});
  const auto u = s.controls(z);
  const auto f = lgoc::simulate(prob.system, prob.boundary.g0, prob.boundary.xi0, u, N, prob.h);
  for (int k = 0; k < N; ++k) { v.dynamics = std::max(v.dynamics, inf(f.xi[static_cast<std::size_t>(k)] - xi[static_cast<std::size_t>(k)])); }
  return v;
}

/// Re-evaluates the residuals of a stored solve. A retraction different from the
/// config's own is reported but never fails.
inline int verify(const RunConfig & cfg, const fs::path & trajectory, std::ostream & out, const std::string & native_retraction)
{
  const auto v = verify_residuals(cfg, read_csv(trajectory));
  out << "dynamics    " << detail::num(v.dynamics) << '\n'
      << "optimality  " << detail::num(v.optimality) << '\n'
      << "momentum    " << detail::num(v.momentum) << '\n'
      << "constraints " << detail::num(v.constraints) << '\n'
      << "boundary    " << detail::num(v.boundary) << '\n';
  if (cfg.retraction != native_retraction) {
    out << "retraction " << cfg.retraction << " differs from the solve (" << native_retraction << "), residuals reported only\n";
    return Ok;
  }
  const bool pass = v.worst() <= cfg.verify_tol;
  out << (pass ? "PASS" : "FAIL") << " (tol " << detail::num(cfg.verify_tol) << ")\n";
  return pass ? Ok : VerifyFailed;
}

/// Entry point shared by the executable and the tests. Maps errors to exit codes.
inline int main_entry(const std::string & command, const fs::path & config, const std::optional<fs::path> & trajectory,
                      const Overrides & ov, std::ostream & out, const Logger & log)
{
  try {
    if (command == "verify") {
      if (!trajectory) { throw ConfigError("verify needs a trajectory file"); }
      Overrides base = ov;
      base.retraction.reset();
      const auto native = load_config_file(config, base).retraction;
      auto cfg          = load_config_file(config, ov);
      if (ov.tol) { cfg.verify_tol = *ov.tol; }
      return verify(cfg, *trajectory, out, native);
    }
    return run(command, load_config_file(config, ov), log);
  } catch (const ConfigError & e) {
    log(LogLevel::Error, e.what());
    return BadConfig;
  } catch (const DimensionMismatch & e) {
    log(LogLevel::Error, e.what());
    return BadConfig;
  }
}

}  // namespace discvar::cli
