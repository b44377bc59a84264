#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "cglue/cglue.hpp"
#include "cglue/io.hpp"

// Batch scenarios behind the command-line tool: config parsing and
// validation, the pipelines themselves, and their built-in checks.

namespace cglue::cli {

using nlohmann::json;

/// Bad configuration or usage. Exit status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// defaults, which double as the schema

namespace detail {

inline json solver_defaults(double tol = 1e-8) {
  return {{"rel_tolerance", tol}, {"max_iterations", 0}, {"preconditioner", "DIAGONAL"}};
}
inline json weight_defaults() { return {{"a", nullptr}, {"s", 1.0}}; }
inline json grid_defaults(double lo, double hi, int cells) { return {{"lower", lo}, {"upper", hi}, {"cells", cells}}; }
inline json charge(std::vector<double> c, double q, double smoothing) {
  return {{"center", c}, {"q", q}, {"smoothing", smoothing}};
}
inline json blob_defaults() { return {{"center", {0.03, -0.02, 0.04}}, {"width", 0.13}}; }

inline json coulomb_base(const std::string& scenario) {
  return {{"scenario", scenario},
          {"operator", "GRAD"},
          {"dimension", 3},
          {"grid", grid_defaults(-2.3, 2.3, 64)},
          {"shape", {{"type", "annulus"}, {"center", {0.0, 0.0, 0.0}}, {"r_in", 1.0}, {"r_out", 2.0}}},
          {"weights", weight_defaults()},
          {"solver", solver_defaults()},
          {"collar", {{"inner", 1.3}, {"outer", 1.7}}}};
}

}  // namespace detail

inline const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"solve1d",          "solve2d-radial", "tt-manufacture",
                                              "coulomb-glue",     "coulomb-truncate", "tt-truncate",
                                              "coulomb-flux-match", "api-estimate",   "kernel-dim"};
  return names;
}

/// Subcommand that runs a scenario.
inline std::string subcommand_of(const std::string& scenario) {
  if (scenario == "solve1d" || scenario == "solve2d-radial" || scenario == "tt-manufacture") return "solve";
  if (scenario == "coulomb-glue") return "glue";
  if (scenario == "coulomb-truncate" || scenario == "tt-truncate") return "truncate";
  if (scenario == "coulomb-flux-match") return "flux-match";
  if (scenario == "api-estimate") return "api-estimate";
  if (scenario == "kernel-dim") return "kernel-dim";
  throw ConfigError("unknown scenario '" + scenario + "'");
}

inline json scenario_defaults(const std::string& scenario) {
  using detail::charge;
  if (scenario == "solve1d")
    return {{"scenario", scenario},
            {"operator", "GRAD"},
            {"dimension", 1},
            {"grid", detail::grid_defaults(-0.0078125, 1.0078125, 520)},
            {"shape", {{"type", "ball"}, {"center", {0.5}}, {"radius", 0.5}}},
            {"weights", detail::weight_defaults()},
            {"solver", detail::solver_defaults(1e-10)},
            {"source", {{"center", 0.5}, {"half_width", 0.4}}},
            {"checks", {{"max_rel_error", 1e-4}, {"max_forward_residual", 1e-6}}}};
  if (scenario == "solve2d-radial")
    return {{"scenario", scenario},
            {"operator", "GRAD"},
            {"dimension", 2},
            {"grid", detail::grid_defaults(-1.5, 1.5, 256)},
            {"shape", {{"type", "ball"}, {"center", {0.0, 0.0}}, {"radius", 1.0}}},
            {"weights", detail::weight_defaults()},
            {"solver", detail::solver_defaults()},
            {"source", {{"r0", 0.2}, {"r1", 0.7}, {"make_compatible", false}}},
            {"checks", {{"max_rel_error", 5e-3}, {"max_forward_residual", 1e-6}}}};
  if (scenario == "tt-manufacture")
    return {{"scenario", scenario},
            {"operator", "CONF_KILLING"},
            {"dimension", 3},
            {"grid", detail::grid_defaults(-1.4, 1.4, 48)},
            {"shape", {{"type", "ball"}, {"center", {0.0, 0.0, 0.0}}, {"radius", 1.25}}},
            {"weights", detail::weight_defaults()},
            {"solver", detail::solver_defaults()},
            {"blob", detail::blob_defaults()},
            {"checks", {{"max_divergence_residual", 0.2}}}};
  if (scenario == "coulomb-glue") {
    json j = detail::coulomb_base(scenario);
    j["inner_charges"] = {charge({0.3, 0.0, 0.0}, 0.5, 0.2), charge({-0.3, 0.0, 0.0}, 0.5, 0.2)};
    j["outer_charges"] = {charge({0.0, 0.0, 0.0}, 1.0, 0.0)};
    j["outer_defined_radius"] = 0.5;
    j["checks"] = {{"max_kernel_coefficient", 1e-6}, {"mismatch_rel_tolerance", 0.05}, {"max_forward_residual", 1e-5}};
    return j;
  }
  if (scenario == "coulomb-truncate") {
    json j = detail::coulomb_base(scenario);
    j["inner_charges"] = {charge({0.3, 0.0, 0.0}, 0.5, 0.2), charge({-0.3, 0.0, 0.0}, -0.5, 0.2)};
    j["checks"] = {{"max_kernel_coefficient", 1e-6}, {"max_forward_residual", 1e-5}, {"max_divergence_ratio", 0.1}};
    return j;
  }
  if (scenario == "coulomb-flux-match") {
    json j = detail::coulomb_base(scenario);
    j["inner_charges"] = {charge({0.3, 0.0, 0.0}, 0.5, 0.2), charge({-0.3, 0.0, 0.0}, 0.5, 0.2)};
    j["family"] = {charge({0.0, 0.0, 0.0}, 1.0, 0.0), charge({0.2, 0.0, 0.0}, 1.0, 0.0)};
    j["outer_defined_radius"] = 0.5;
    j["checks"] = {{"max_kernel_coefficient", 1e-6}, {"max_flux_residual", 1e-8}, {"max_forward_residual", 1e-5}};
    return j;
  }
  if (scenario == "tt-truncate") {
    json j = scenario_defaults("tt-manufacture");
    j["scenario"] = scenario;
    j["truncation"] = {{"r_in", 0.15}, {"r_out", 1.0}, {"collar_inner", 0.35}, {"collar_outer", 0.75}};
    j["checks"] = {{"max_trace", 1e-12}, {"max_divergence_residual", 0.2}};
    return j;
  }
  if (scenario == "api-estimate")
    return {{"scenario", scenario},
            {"operator", "CONF_KILLING"},
            {"dimension", 3},
            {"grid", detail::grid_defaults(-1.25, 1.25, 24)},
            {"shape", {{"type", "ball"}, {"center", {0.0, 0.0, 0.0}}, {"radius", 1.0}}},
            {"weights", detail::weight_defaults()},
            {"collar_widths", {0.4, 0.3}},
            {"sample_count", 20},
            {"seed", 7}};
  if (scenario == "kernel-dim")
    return {{"scenario", scenario},
            {"operator", "KILLING"},
            {"dimension", 3},
            {"grid", detail::grid_defaults(-1.5, 1.5, 24)},
            {"shape", {{"type", "ball"}, {"center", {0.0, 0.0, 0.0}}, {"radius", 1.0}}},
            {"weights", detail::weight_defaults()},
            {"candidate_count", 16},
            {"seed", 20240601},
            {"expected", nullptr}};
  throw ConfigError("unknown scenario '" + scenario + "'");
}

/// Defaults of every scenario run by `subcommand` (all scenarios when empty).
inline json print_defaults(const std::string& subcommand) {
  json out = json::object();
  for (const auto& name : scenario_names())
    if (subcommand.empty() || subcommand_of(name) == subcommand) out[name] = scenario_defaults(name);
  return out;
}

// ---------------------------------------------------------------------------
// parsing and validation

namespace detail {

/// Line of the first occurrence of the quoted keys of `path`, in order.
inline int line_of(const std::string& text, const std::vector<std::string>& path) {
  std::size_t pos = 0;
  for (const auto& key : path) {
    const std::size_t found = text.find("\"" + key + "\"", pos);
    if (found == std::string::npos) break;
    pos = found;
  }
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

inline std::string dotted(const std::vector<std::string>& path) {
  std::string s;
  for (const auto& k : path) s += (s.empty() ? "" : ".") + k;
  return s;
}

class Validator {
 public:
  explicit Validator(const std::string& text) : text_(text) {}

  [[noreturn]] void error(const std::vector<std::string>& path, const std::string& what) const {
    throw ConfigError("config line " + std::to_string(line_of(text_, path)) + ": " +
                      (path.empty() ? std::string() : "'" + dotted(path) + "' ") + what);
  }

  /// Overlays `user` on `defaults`, rejecting unknown keys and wrong types.
  json merge(const json& defaults, const json& user, std::vector<std::string> path) const {
    if (!user.is_object()) error(path, "must be an object");
    json out = defaults;
    for (auto it = user.begin(); it != user.end(); ++it) {
      auto sub = path;
      sub.push_back(it.key());
      if (!defaults.contains(it.key())) error(sub, "is not a recognised key");
      const json& d = defaults.at(it.key());
      const json& u = it.value();
      if (it.key() == "shape" || it.key().ends_with("charges") || it.key() == "family") {
        out[it.key()] = u;  // replaced wholesale, checked when built
      } else if (d.is_object()) {
        out[it.key()] = merge(d, u, sub);
      } else if (d.is_null()) {
        if (!u.is_null() && !u.is_number()) error(sub, "must be a number or null");
        out[it.key()] = u;
      } else if (d.is_number()) {
        if (!u.is_number()) error(sub, "must be a number");
        out[it.key()] = u;
      } else if (d.type() != u.type()) {
        error(sub, std::string("must be of type ") + d.type_name());
      } else {
        out[it.key()] = u;
      }
    }
    return out;
  }

  double number(const json& cfg, const std::vector<std::string>& path, double lo, double hi) const {
    const json* node = &cfg;
    for (const auto& k : path) node = &node->at(k);
    if (!node->is_number()) error(path, "must be a number");
    const double v = node->get<double>();
    if (!std::isfinite(v) || v < lo || v > hi)
      error(path, "must lie in [" + format(lo) + ", " + format(hi) + "], got " + format(v));
    return v;
  }

  int integer(const json& cfg, const std::vector<std::string>& path, long lo, long hi) const {
    const double v = number(cfg, path, static_cast<double>(lo), static_cast<double>(hi));
    if (v != std::floor(v)) error(path, "must be an integer");
    return static_cast<int>(v);
  }

  Point point(const json& node, const std::vector<std::string>& path, int n) const {
    if (!node.is_array() || static_cast<int>(node.size()) != n)
      error(path, "must be an array of " + std::to_string(n) + " numbers");
    Point p{};
    for (int a = 0; a < n; ++a) {
      if (!node[a].is_number()) error(path, "must hold numbers");
      p[a] = node[a].get<double>();
    }
    return p;
  }

  const std::string& text() const { return text_; }

 private:
  static std::string format(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  }
  const std::string& text_;
};

}  // namespace detail

/// Everything a scenario needs, built and validated up front.
struct Setup {
  json config;
  std::string scenario;
  OperatorSpec op;
  std::shared_ptr<const Grid> grid;
  std::shared_ptr<const Domain> domain;
  WeightConfig weights;
  SolveConfig solver;
  std::vector<analytic::Charge> inner_charges, outer_charges, family;
};

namespace detail {

inline ShapeSpec parse_shape(const Validator& v, const json& node, int n) {
  const std::vector<std::string> path{"shape"};
  if (!node.is_object() || !node.contains("type") || !node["type"].is_string())
    v.error(path, "must be an object with a string 'type'");
  const std::string type = node["type"];
  std::vector<std::string> keys;
  if (type == "ball") keys = {"type", "center", "radius"};
  else if (type == "annulus") keys = {"type", "center", "r_in", "r_out"};
  else if (type == "ball_difference") keys = {"type", "center", "radius", "removed_center", "removed_radius"};
  else v.error({"shape", "type"}, "must be ball, annulus or ball_difference");
  for (auto it = node.begin(); it != node.end(); ++it)
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
      v.error({"shape", it.key()}, "is not a recognised key for shape type " + type);
  for (const auto& k : keys)
    if (!node.contains(k)) v.error(path, "is missing '" + k + "'");
  const json wrapped{{"shape", node}};
  auto positive = [&](const std::string& k) { return v.number(wrapped, {"shape", k}, 1e-12, 1e12); };
  const Point c = v.point(node["center"], {"shape", "center"}, n);
  if (type == "ball") return Ball{c, positive("radius")};
  if (type == "annulus") return Annulus{c, positive("r_in"), positive("r_out")};
  return BallDifference{Ball{c, positive("radius")},
                        Ball{v.point(node["removed_center"], {"shape", "removed_center"}, n), positive("removed_radius")}};
}

inline std::vector<analytic::Charge> parse_charges(const Validator& v, const json& cfg, const std::string& key, int n) {
  const json& node = cfg.at(key);
  if (!node.is_array() || node.empty()) v.error({key}, "must be a non-empty array of charges");
  std::vector<analytic::Charge> out;
  for (const auto& item : node) {
    if (!item.is_object()) v.error({key}, "entries must be objects");
    for (auto it = item.begin(); it != item.end(); ++it)
      if (it.key() != "center" && it.key() != "q" && it.key() != "smoothing")
        v.error({key, it.key()}, "is not a recognised charge key");
    if (!item.contains("center") || !item.contains("q")) v.error({key}, "entries need 'center' and 'q'");
    analytic::Charge c;
    c.center = v.point(item["center"], {key, "center"}, n);
    const json wrapped{{"c", item}};
    c.q = v.number(wrapped, {"c", "q"}, -1e6, 1e6);
    if (item.contains("smoothing")) c.smoothing = v.number(wrapped, {"c", "smoothing"}, 0.0, 1e6);
    out.push_back(c);
  }
  return out;
}

}  // namespace detail

/// Parses and validates a config document. Throws ConfigError with a line reference.
inline Setup load_config(const std::string& text, const std::string& expected_subcommand = "") {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  const detail::Validator v(text);
  if (!user.is_object()) v.error({}, "config must be a JSON object");
  if (!user.contains("scenario") || !user["scenario"].is_string()) v.error({}, "config needs a string 'scenario'");
  const std::string scenario = user["scenario"];
  const auto& names = scenario_names();
  if (std::find(names.begin(), names.end(), scenario) == names.end())
    v.error({"scenario"}, "names an unknown scenario '" + scenario + "'");
  if (!expected_subcommand.empty() && subcommand_of(scenario) != expected_subcommand)
    v.error({"scenario"}, "'" + scenario + "' is run by the '" + subcommand_of(scenario) + "' subcommand, not '" +
                              expected_subcommand + "'");

  Setup s;
  s.scenario = scenario;
  s.config = v.merge(scenario_defaults(scenario), user, {});
  const json& cfg = s.config;
  const json defaults = scenario_defaults(scenario);

  const int n = v.integer(cfg, {"dimension"}, 1, 3);
  OperatorKind kind{};
  try {
    kind = operator_kind_from_string(cfg["operator"].get<std::string>());
  } catch (const Error&) {
    v.error({"operator"}, "must be GRAD, KILLING or CONF_KILLING");
  }
  s.op = OperatorSpec{kind, n, 1};
  try {
    s.op.validate();
  } catch (const Error& e) {
    v.error({user.contains("operator") || !user.contains("dimension") ? "operator" : "dimension"}, e.what());
  }
  const bool free_operator = scenario == "api-estimate" || scenario == "kernel-dim";
  if (!free_operator && (cfg["operator"] != defaults["operator"]))
    v.error({"operator"}, "scenario " + scenario + " runs operator " + defaults["operator"].get<std::string>());
  const bool free_dimension = free_operator || scenario == "solve2d-radial";
  if (!free_dimension && cfg["dimension"] != defaults["dimension"])
    v.error({"dimension"}, "scenario " + scenario + " runs in dimension " + defaults["dimension"].dump());
  if (scenario == "solve2d-radial" && n < 2) v.error({"dimension"}, "radial scenario needs dimension 2 or 3");

  const double lo = v.number(cfg, {"grid", "lower"}, -1e6, 1e6);
  const double hi = v.number(cfg, {"grid", "upper"}, -1e6, 1e6);
  const int cells = v.integer(cfg, {"grid", "cells"}, 4, n == 1 ? 1 << 20 : (n == 2 ? 4096 : 256));
  if (hi <= lo) v.error({"grid", "upper"}, "must exceed grid.lower");
  s.grid = Grid::cube(n, lo, hi, cells);

  const ShapeSpec shape = detail::parse_shape(v, cfg["shape"], n);
  try {
    s.domain = build_domain(shape, s.grid);
  } catch (const Error& e) {
    v.error({"shape"}, e.what());
  }

  s.weights = WeightConfig::defaults(n);
  if (!cfg["weights"]["a"].is_null()) s.weights.a = v.integer(cfg, {"weights", "a"}, 1, 16);
  s.weights.s = v.number(cfg, {"weights", "s"}, 1e-6, 1e3);

  if (cfg.contains("solver")) {
    s.solver.rel_tolerance = v.number(cfg, {"solver", "rel_tolerance"}, 1e-15, 0.5);
    s.solver.max_iterations = v.integer(cfg, {"solver", "max_iterations"}, 0, 100000000);
    try {
      s.solver.preconditioner = preconditioner_from_string(cfg["solver"]["preconditioner"].get<std::string>());
    } catch (const Error&) {
      v.error({"solver", "preconditioner"}, "must be NONE or DIAGONAL");
    }
  }

  if (cfg.contains("collar")) {
    const double ci = v.number(cfg, {"collar", "inner"}, 0.0, 1e6);
    const double co = v.number(cfg, {"collar", "outer"}, 0.0, 1e6);
    try {
      const CutoffField chi = build_cutoff(*s.domain, CollarSpec{ci, co});
      if (chi.transition_width() < 4.0 * s.grid->h_max())
        v.error({"collar"}, "transition must span at least four cells");
    } catch (const Error& e) {
      v.error({"collar"}, e.what());
    }
  }
  if (cfg.contains("inner_charges")) s.inner_charges = detail::parse_charges(v, cfg, "inner_charges", n);
  if (cfg.contains("outer_charges")) s.outer_charges = detail::parse_charges(v, cfg, "outer_charges", n);
  if (cfg.contains("family")) s.family = detail::parse_charges(v, cfg, "family", n);
  if (cfg.contains("outer_defined_radius")) v.number(cfg, {"outer_defined_radius"}, 0.0, 1e6);

  if (scenario == "coulomb-glue") {
    double q = 0.0;
    for (const auto& c : s.inner_charges) q += c.q;
    if (q == 0.0) v.error({"inner_charges"}, "must carry a nonzero total charge (it sets the unit of flux)");
  }
  if (scenario == "solve1d") {
    v.number(cfg, {"source", "center"}, -1e6, 1e6);
    v.number(cfg, {"source", "half_width"}, 1e-9, 1e6);
  }
  if (scenario == "solve2d-radial") {
    const double r0 = v.number(cfg, {"source", "r0"}, 0.0, 1e6);
    if (v.number(cfg, {"source", "r1"}, 0.0, 1e6) <= r0) v.error({"source", "r1"}, "must exceed source.r0");
  }
  if (cfg.contains("blob")) {
    v.point(cfg["blob"]["center"], {"blob", "center"}, 3);
    v.number(cfg, {"blob", "width"}, 1e-6, 1e6);
  }
  if (scenario == "tt-truncate") {
    const double ri = v.number(cfg, {"truncation", "r_in"}, 1e-9, 1e6);
    const double ro = v.number(cfg, {"truncation", "r_out"}, 1e-9, 1e6);
    const double ci = v.number(cfg, {"truncation", "collar_inner"}, 0.0, 1e6);
    const double co = v.number(cfg, {"truncation", "collar_outer"}, 0.0, 1e6);
    try {
      auto ann = build_domain(Annulus{shape_center(shape), ri, ro}, s.grid);
      const CutoffField chi = build_cutoff(*ann, CollarSpec{ci, co});
      if (chi.transition_width() < 4.0 * s.grid->h_max())
        v.error({"truncation"}, "transition must span at least four cells");
    } catch (const Error& e) {
      v.error({"truncation"}, e.what());
    }
  }
  if (scenario == "api-estimate") {
    const json& w = cfg["collar_widths"];
    if (!w.is_array() || w.empty()) v.error({"collar_widths"}, "must be a non-empty array");
    for (const auto& x : w)
      if (!x.is_number() || !(x.get<double>() > 0.0)) v.error({"collar_widths"}, "entries must be positive numbers");
    v.integer(cfg, {"sample_count"}, 20, 100000);
    v.integer(cfg, {"seed"}, 0, 1L << 52);
  }
  if (scenario == "kernel-dim") {
    v.integer(cfg, {"candidate_count"}, 1, 10000);
    v.integer(cfg, {"seed"}, 0, 1L << 52);
    if (!cfg["expected"].is_null()) v.integer(cfg, {"expected"}, 0, 10000);
  }
  if (cfg.contains("checks"))
    for (const auto& [key, value] : cfg["checks"].items()) v.number(cfg, {"checks", key}, 0.0, 1e12);
  return s;
}

// ---------------------------------------------------------------------------
// running

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct Outcome {
  json report = json::object();
  std::vector<Check> checks;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline Check at_most(const std::string& name, double value, double limit) {
  return {name, value <= limit, fmt(value) + " <= " + fmt(limit)};
}

/// Worst relative defect of <P w, u> = <w, P* u> over random interior pairs.
inline double adjointness_defect(const OperatorSpec& op, const std::shared_ptr<const Domain>& domain, int pairs,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int k = 0; k < pairs; ++k) {
    const TensorField u = analytic::random_interior_field(domain, op.adjoint_domain(), rng);
    const TensorField w = analytic::random_interior_field(domain, op.forward_domain(), rng);
    const double lhs = l2_inner(apply_forward(op, w), u);
    const double rhs = l2_inner(w, apply_adjoint(op, u));
    const double scale = l2_norm(u) * l2_norm(w);
    if (scale > 0.0) worst = std::max(worst, std::abs(lhs - rhs) / scale);
  }
  return worst;
}

inline double sum_q(const std::vector<analytic::Charge>& charges) {
  double q = 0.0;
  for (const auto& c : charges) q += c.q;
  return q;
}

inline Point point_of(const json& node) {
  Point p{};
  for (std::size_t a = 0; a < node.size() && a < 3; ++a) p[a] = node[a].get<double>();
  return p;
}

inline TensorField coulomb_field(const Setup& s, const std::vector<analytic::Charge>& charges,
                                 const std::function<bool(const Point&)>& defined = {}) {
  const int n = s.op.n;
  return analytic::sample_ambient(
      s.grid, s.op.forward_domain(), [&](const Point& p) { return analytic::coulomb(charges, p, n); }, defined);
}

/// Cells at least `radius` away from every charge centre.
inline std::function<bool(const Point&)> away_from(const std::vector<analytic::Charge>& charges, double radius, int n) {
  return [charges, radius, n](const Point& p) {
    for (const auto& c : charges) {
      double r2 = 0.0;
      for (int a = 0; a < n; ++a) r2 += (p[a] - c.center[a]) * (p[a] - c.center[a]);
      if (r2 <= radius * radius) return false;
    }
    return true;
  };
}

/// ||P T||_L2 over the domain for the plain interpolant, the yardstick the correction is measured against.
inline double interpolant_divergence(const GluingProblem& p) {
  TensorField d = apply_forward(p.op, interpolate(p));
  d.mask_with(p.domain->mask());
  return l2_norm(d);
}

/// Glued field equals V (chi = 1) or W (chi = 0) bitwise on every cell outside the domain.
inline long outside_mismatches(const GluingProblem& p, const TensorField& glued) {
  long bad = 0;
  for (std::size_t cell = 0; cell < glued.cell_count(); ++cell) {
    if (p.domain->inside(cell)) continue;
    const double k = p.chi.values[cell];
    for (int c = 0; c < glued.components(); ++c) {
      const double ref = k == 1.0 ? (p.v_defined[cell] ? p.V.at(c, cell) : 0.0)
                                  : (p.w_defined[cell] ? p.W.at(c, cell) : 0.0);
      if (glued.at(c, cell) != ref) ++bad;
    }
  }
  return bad;
}

struct Manufactured {
  TensorField tensor;  ///< W0 + U, supported in the ball
  TensorField source;
  SolveResult solve;
  double divergence_residual = 0.0;  ///< ||P(W0 + U)|| / ||f||
};

/// Trace-free divergence-free tensor: a smooth trace-free blob W0 corrected
/// by the compactly supported solution of P U = -P W0.
inline Manufactured manufacture_tt(const Setup& s) {
  const json& b = s.config["blob"];
  analytic::TracefreeBlob blob{point_of(b["center"]), b["width"].get<double>()};
  const KernelBasis basis = build_kernel_basis(s.op, s.domain, s.weights);
  const TensorField w0 =
      analytic::sample(s.domain, s.op.forward_domain(), [&](const Point& p) { return blob.stored(p); });
  const TensorField raw =
      analytic::sample(s.domain, s.op.adjoint_domain(), [&](const Point& p) { return blob.divergence(p); });
  // P W0 = -div W0 in closed form; the source is its negative.
  const TensorField f = compatible_part(raw, basis);
  Manufactured m{w0, f, solve_compact_support(basis, f, s.solver), 0.0};
  m.tensor += m.solve.U;
  m.divergence_residual = l2_norm(apply_forward(s.op, m.tensor)) / l2_norm(f);
  return m;
}

inline double max_trace(const TensorField& t) {
  double worst = 0.0;
  std::vector<double> stored(t.components());
  for (std::size_t cell = 0; cell < t.cell_count(); ++cell) {
    for (int c = 0; c < t.components(); ++c) stored[c] = t.at(c, cell);
    const auto m = expand_tensor(t.bundle(), stored.data());
    double tr = 0.0;
    for (int i = 0; i < t.bundle().n; ++i) tr += m[i][i];
    worst = std::max(worst, std::abs(tr));
  }
  return worst;
}

inline void add_glue_report(Outcome& out, const GluingReport& r) {
  const json j = to_json(r);
  for (const auto& [key, value] : j.items()) out.report[key] = value;
}

// -- scenarios --------------------------------------------------------------

inline Outcome run_solve1d(const Setup& s, const std::filesystem::path& dir) {
  const double c = s.config["source"]["center"], w = s.config["source"]["half_width"];
  const KernelBasis basis = build_kernel_basis(s.op, s.domain, s.weights);
  const TensorField f = analytic::sample(s.domain, s.op.adjoint_domain(), [&](const Point& p) {
    return analytic::Components{analytic::poly_bump_derivative((p[0] - c) / w) / w};
  });
  const TensorField exact = analytic::sample(s.domain, s.op.forward_domain(), [&](const Point& p) {
    return analytic::Components{-analytic::poly_bump((p[0] - c) / w)};
  });
  const SolveResult r = solve_compact_support(basis, f, s.solver);
  Outcome out;
  out.report = to_json(r.report);
  const double err = cglue::detail::relative_misfit(r.U, exact);
  out.report["rel_error"] = err;
  out.checks.push_back(at_most("oracle relative L2 error", err, s.config["checks"]["max_rel_error"]));
  out.checks.push_back(
      at_most("forward residual", r.report.forward_residual, s.config["checks"]["max_forward_residual"]));
  write_field_csv((dir / "solution.csv").string(), r.U);
  write_field_csv((dir / "source.csv").string(), f);
  return out;
}

inline Outcome run_solve_radial(const Setup& s, const std::filesystem::path& dir) {
  const int n = s.op.n;
  analytic::RadialBump bump{s.config["source"]["r0"].get<double>(), s.config["source"]["r1"].get<double>()};
  const Point centre = shape_center(s.domain->shape());
  auto radius = [&](const Point& p) {
    double r2 = 0.0;
    for (int a = 0; a < n; ++a) r2 += (p[a] - centre[a]) * (p[a] - centre[a]);
    return std::sqrt(r2);
  };
  const KernelBasis basis = build_kernel_basis(s.op, s.domain, s.weights);
  TensorField f = analytic::sample(s.domain, s.op.adjoint_domain(),
                                   [&](const Point& p) { return analytic::Components{bump.source(radius(p), n)}; });
  if (s.config["source"]["make_compatible"].get<bool>()) f = compatible_part(f, basis);
  const TensorField exact = analytic::sample(s.domain, s.op.forward_domain(), [&](const Point& p) {
    const double r = radius(p);
    analytic::Components e{};
    if (r > 0.0)
      for (int a = 0; a < n; ++a) e[a] = bump.value(r) * (p[a] - centre[a]) / r;
    return e;
  });
  const SolveResult r = solve_compact_support(basis, f, s.solver);
  Outcome out;
  out.report = to_json(r.report);
  const double err = cglue::detail::relative_misfit(r.U, exact);
  out.report["rel_error"] = err;
  out.checks.push_back(at_most("oracle relative L2 error", err, s.config["checks"]["max_rel_error"]));
  out.checks.push_back(
      at_most("forward residual", r.report.forward_residual, s.config["checks"]["max_forward_residual"]));
  write_field_csv((dir / "solution.csv").string(), r.U);
  return out;
}

inline Outcome run_tt_manufacture(const Setup& s, const std::filesystem::path& dir) {
  const Manufactured m = manufacture_tt(s);
  Outcome out;
  out.report = to_json(m.solve.report);
  out.report["divergence_residual"] = m.divergence_residual;
  out.report["max_trace"] = max_trace(m.tensor);
  out.checks.push_back(at_most("relative divergence residual of the manufactured tensor", m.divergence_residual,
                               s.config["checks"]["max_divergence_residual"]));
  write_field_csv((dir / "tt_tensor.csv").string(), m.tensor);
  return out;
}

inline Outcome finish_glue(const Setup& s, const GluingProblem& p, const GluingResult& g,
                           const std::filesystem::path& dir, Outcome out) {
  add_glue_report(out, g.report);
  const double before = interpolant_divergence(p);
  const double ratio = before > 0.0 ? g.report.glued_divergence_residual / before : 0.0;
  out.report["interpolant_divergence"] = before;
  out.report["divergence_ratio"] = ratio;
  const long bad = outside_mismatches(p, g.glued);
  out.report["outside_mismatched_values"] = bad;
  out.checks.push_back({"glued field equals the inputs outside the domain", bad == 0, std::to_string(bad) + " values differ"});
  if (s.config["checks"].contains("max_forward_residual") && !out.report.contains("forward_check_skipped"))
    out.checks.push_back(at_most("correction cancels the cutoff commutator", g.report.solve_report.forward_residual,
                                 s.config["checks"]["max_forward_residual"]));
  if (s.config["checks"].contains("max_divergence_ratio"))
    out.checks.push_back(at_most("divergence left after correction, relative to the interpolant", ratio,
                                 s.config["checks"]["max_divergence_ratio"]));
  write_field_csv((dir / "glued.csv").string(), g.glued, p.domain.get());
  write_field_csv((dir / "correction.csv").string(), g.correction);
  return out;
}

inline double worst_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline Outcome run_coulomb_glue(const Setup& s, const std::filesystem::path& dir) {
  const double radius = s.config["outer_defined_radius"];
  const auto defined = away_from(s.outer_charges, radius, s.op.n);
  const CutoffField chi =
      build_cutoff(*s.domain, CollarSpec{s.config["collar"]["inner"].get<double>(), s.config["collar"]["outer"].get<double>()});
  const GluingProblem p =
      make_gluing_problem(s.op, s.domain, coulomb_field(s, s.inner_charges), all_defined(*s.grid),
                          coulomb_field(s, s.outer_charges, defined), analytic::defined_mask(*s.grid, defined), chi, s.weights);
  const GluingResult g = glue(p, s.solver);
  Outcome out;
  const double q_in = sum_q(s.inner_charges), q_out = sum_q(s.outer_charges);
  const double unit = g.report.flux_V.coefficients[0] / q_in;
  const double expected = (q_out - q_in) * unit;
  const double got = g.report.flux_mismatch[0];
  out.report["unit_charge_flux"] = unit;
  out.report["expected_flux_mismatch"] = expected;
  const double tol = s.config["checks"]["mismatch_rel_tolerance"].get<double>() * std::max(std::abs(unit), std::abs(expected));
  out.checks.push_back({"flux mismatch matches the charge difference", std::abs(got - expected) <= tol,
                        fmt(got) + " vs " + fmt(expected)});
  if (q_in == q_out)
    out.checks.push_back(at_most("kernel coefficient with equal charges", worst_abs(g.report.solve_report.kernel_coefficients),
                                 s.config["checks"]["max_kernel_coefficient"]));
  else
    out.report["forward_check_skipped"] = "charges differ; the obstruction is reported, not removed";
  return finish_glue(s, p, g, dir, std::move(out));
}

inline Outcome run_coulomb_truncate(const Setup& s, const std::filesystem::path& dir) {
  const CutoffField chi =
      build_cutoff(*s.domain, CollarSpec{s.config["collar"]["inner"].get<double>(), s.config["collar"]["outer"].get<double>()});
  const TensorField V = coulomb_field(s, s.inner_charges);
  const TensorField W = TensorField::ambient(s.grid, s.op.forward_domain());
  const GluingProblem p = make_gluing_problem(s.op, s.domain, V, all_defined(*s.grid), W, all_defined(*s.grid), chi, s.weights);
  const GluingResult g = glue(p, s.solver);
  Outcome out;
  out.checks.push_back(at_most("kernel coefficient", worst_abs(g.report.solve_report.kernel_coefficients),
                               s.config["checks"]["max_kernel_coefficient"]));
  return finish_glue(s, p, g, dir, std::move(out));
}

inline Outcome run_flux_match(const Setup& s, const std::filesystem::path& dir) {
  const double radius = s.config["outer_defined_radius"];
  const CutoffField chi =
      build_cutoff(*s.domain, CollarSpec{s.config["collar"]["inner"].get<double>(), s.config["collar"]["outer"].get<double>()});
  std::vector<FamilyMember> family;
  for (const auto& c : s.family) {
    const auto defined = away_from({c}, radius, s.op.n);
    family.push_back({coulomb_field(s, {c}, defined), analytic::defined_mask(*s.grid, defined)});
  }
  const TensorField zero = TensorField::ambient(s.grid, s.op.forward_domain());
  const GluingProblem start = make_gluing_problem(s.op, s.domain, coulomb_field(s, s.inner_charges), all_defined(*s.grid),
                                                  zero, all_defined(*s.grid), chi, s.weights);
  const FluxMatch match = flux_match(start, family);
  const GluingResult g = glue(match.problem, s.solver);
  Outcome out;
  out.report["family_parameters"] = match.parameters;
  out.report["flux_residual"] = match.residual;
  out.report["flux_condition"] = match.condition;
  out.checks.push_back(at_most("flux residual of the matched family member", match.residual,
                               s.config["checks"]["max_flux_residual"]));
  out.checks.push_back(at_most("kernel coefficient after matching", worst_abs(g.report.solve_report.kernel_coefficients),
                               s.config["checks"]["max_kernel_coefficient"]));
  return finish_glue(s, match.problem, g, dir, std::move(out));
}

inline Outcome run_tt_truncate(const Setup& s, const std::filesystem::path& dir) {
  const Manufactured m = manufacture_tt(s);
  const json& t = s.config["truncation"];
  const Point centre = shape_center(s.domain->shape());
  const double r_out = t["r_out"];
  auto ann = build_domain(Annulus{centre, t["r_in"].get<double>(), r_out}, s.grid);
  const CutoffField chi = build_cutoff(*ann, CollarSpec{t["collar_inner"].get<double>(), t["collar_outer"].get<double>()});
  const TensorField V = m.tensor.as_ambient();
  const GluingProblem p = make_gluing_problem(s.op, ann, V, all_defined(*s.grid), V.zeros_like(), all_defined(*s.grid), chi,
                                              s.weights);
  const GluingResult g = glue(p, s.solver);
  Outcome out;
  out.report["manufacture_iterations"] = m.solve.report.iterations;
  out.report["manufacture_divergence_residual"] = m.divergence_residual;
  add_glue_report(out, g.report);
  const double rel = l2_norm(apply_forward(s.op, g.glued)) / l2_norm(m.source);
  out.report["divergence_residual"] = rel;
  const double trace = max_trace(g.glued);
  out.report["max_trace"] = trace;
  long outside = 0;
  for (std::size_t cell = 0; cell < g.glued.cell_count(); ++cell) {
    double r2 = 0.0;
    const Point p = s.grid->center(cell);
    for (int a = 0; a < 3; ++a) r2 += (p[a] - centre[a]) * (p[a] - centre[a]);
    if (r2 < r_out * r_out) continue;
    for (int c = 0; c < g.glued.components(); ++c) outside += g.glued.at(c, cell) != 0.0;
  }
  out.report["nonzero_outside"] = outside;
  out.checks.push_back(at_most("pointwise trace", trace, s.config["checks"]["max_trace"]));
  out.checks.push_back({"zero outside the truncation ball", outside == 0, std::to_string(outside) + " nonzero values"});
  out.checks.push_back(
      at_most("relative divergence residual", rel, s.config["checks"]["max_divergence_residual"]));
  write_field_csv((dir / "truncated.csv").string(), g.glued, ann.get());
  return out;
}

inline Outcome run_api(const Setup& s, const std::filesystem::path&) {
  std::vector<double> widths = s.config["collar_widths"].get<std::vector<double>>();
  std::sort(widths.rbegin(), widths.rend());
  Outcome out;
  std::vector<double> lambdas;
  std::vector<std::size_t> cells;
  for (double w : widths) {
    const ApiEstimate e = estimate_api_constant_detailed(s.op, s.domain, s.weights, w, s.config["sample_count"],
                                                         s.config["seed"].get<std::uint64_t>());
    lambdas.push_back(e.lambda);
    cells.push_back(e.collar_cells);
  }
  out.report["collar_widths"] = widths;
  out.report["lambda"] = lambdas;
  out.report["collar_cells"] = cells;
  bool positive = true, monotone = true;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    positive = positive && lambdas[i] > 0.0;
    if (i > 0) monotone = monotone && lambdas[i] >= lambdas[i - 1];
  }
  out.checks.push_back({"estimates are positive", positive, ""});
  out.checks.push_back({"estimates do not decrease as the collar shrinks", monotone, ""});
  return out;
}

inline Outcome run_kernel_dim(const Setup& s, const std::filesystem::path&) {
  const int got = numeric_kernel_dim(s.op, s.domain, s.weights, s.config["candidate_count"],
                                     s.config["seed"].get<std::uint64_t>());
  const int expected = s.config["expected"].is_null() ? analytic_kernel_dim(s.op) : s.config["expected"].get<int>();
  Outcome out;
  out.report["kernel_dim"] = got;
  out.report["expected"] = expected;
  out.checks.push_back({"numeric kernel dimension", got == expected, std::to_string(got) + " vs " + std::to_string(expected)});
  return out;
}

inline void write_summary(const std::filesystem::path& dir, const std::string& scenario, const std::vector<Check>& checks,
                          bool pass, const std::string& error = "") {
  std::ofstream out(dir / "summary.txt");
  out << "scenario " << scenario << '\n';
  for (const auto& c : checks)
    out << (c.pass ? "PASS " : "FAIL ") << c.name << (c.detail.empty() ? "" : ": " + c.detail) << '\n';
  if (!error.empty()) out << "FAIL numerical failure: " << error << '\n';
  out << (pass ? "PASS" : "FAIL") << '\n';
}

}  // namespace detail

/// Runs a validated scenario, writing report.json, field dumps and summary.txt
/// into `dir`. Returns 0 when every built-in check passes, 1 otherwise.
inline int run_scenario(const Setup& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json report{{"scenario", s.scenario}, {"operator", std::string(to_string(s.op.kind))}, {"dimension", s.op.n}};
  std::vector<Check> checks;
  try {
    const double defect = detail::adjointness_defect(s.op, s.domain, 3, 1234);
    report["adjointness_defect"] = defect;
    if (defect > 1e-12) fail(ErrorCode::InvalidArgument, "discrete adjointness defect " + detail::fmt(defect) + " exceeds 1e-12");

    Outcome out;
    const std::string& sc = s.scenario;
    if (sc == "solve1d") out = detail::run_solve1d(s, dir);
    else if (sc == "solve2d-radial") out = detail::run_solve_radial(s, dir);
    else if (sc == "tt-manufacture") out = detail::run_tt_manufacture(s, dir);
    else if (sc == "coulomb-glue") out = detail::run_coulomb_glue(s, dir);
    else if (sc == "coulomb-truncate") out = detail::run_coulomb_truncate(s, dir);
    else if (sc == "coulomb-flux-match") out = detail::run_flux_match(s, dir);
    else if (sc == "tt-truncate") out = detail::run_tt_truncate(s, dir);
    else if (sc == "api-estimate") out = detail::run_api(s, dir);
    else out = detail::run_kernel_dim(s, dir);

    for (auto& [key, value] : out.report.items()) report[key] = value;
    checks = out.checks;
  } catch (const Error& e) {
    report["error"] = e.what();
    report["error_code"] = std::string(to_string(e.code()));
    if (const auto* nc = dynamic_cast<const NoConvergenceError*>(&e)) {
      const json partial = to_json(nc->report());
      for (const auto& [key, value] : partial.items()) report[key] = value;
    }
    if (const auto* inc = dynamic_cast<const IncompatibleSourceError*>(&e)) report["kernel_pairings"] = inc->pairings();
    write_json((dir / "report.json").string(), report);
    detail::write_summary(dir, s.scenario, checks, false, e.what());
    return 1;
  }
  bool pass = true;
  json results = json::object();
  for (const auto& c : checks) {
    results[c.name] = c.pass;
    pass = pass && c.pass;
  }
  report["checks"] = results;
  report["pass"] = pass;
  write_json((dir / "report.json").string(), report);
  detail::write_summary(dir, s.scenario, checks, pass);
  return pass ? 0 : 1;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// self test

struct SelfTestLine {
  std::string name;
  bool pass;
  std::string detail;
};

/// Quick identities on small grids: adjointness for every operator and
/// dimension, projector idempotence, and a small solve.
inline std::vector<SelfTestLine> selftest() {
  std::vector<SelfTestLine> lines;
  const OperatorKind kinds[] = {OperatorKind::Grad, OperatorKind::Killing, OperatorKind::ConfKilling};
  const int cells_for[] = {0, 64, 32, 16};
  for (int n = 1; n <= 3; ++n)
    for (OperatorKind k : kinds) {
      if (k == OperatorKind::ConfKilling && n < 3) continue;
      const OperatorSpec op{k, n, 1};
      auto domain = build_domain(Ball{{0.0, 0.0, 0.0}, 1.0}, Grid::cube(n, -1.5, 1.5, cells_for[n]));
      const double defect = detail::adjointness_defect(op, domain, 5, 99);
      lines.push_back({"adjointness " + std::string(to_string(k)) + " n=" + std::to_string(n), defect <= 1e-12,
                       detail::fmt(defect)});
    }
  {
    const OperatorSpec op{OperatorKind::Killing, 2, 1};
    auto domain = build_domain(Ball{{0.0, 0.0, 0.0}, 1.0}, Grid::cube(2, -1.5, 1.5, 32));
    const KernelBasis basis = build_kernel_basis(op, domain, WeightConfig::defaults(2));
    std::mt19937_64 rng(5);
    const TensorField x = analytic::random_interior_field(domain, op.adjoint_domain(), rng);
    const TensorField once = project_off(x, basis).result;
    const TensorField twice = project_off(once, basis).result;
    const double d = cglue::detail::relative_misfit(twice, once);
    lines.push_back({"projector idempotence", d <= 1e-12, detail::fmt(d)});
  }
  {
    const OperatorSpec op{OperatorKind::Grad, 1, 1};
    const double lo[] = {-4.0 / 128}, hi[] = {1.0 + 4.0 / 128};
    const int c[] = {136};
    auto domain = build_domain(Ball{{0.5, 0.0, 0.0}, 0.5}, std::make_shared<const Grid>(1, lo, hi, c));
    const KernelBasis basis = build_kernel_basis(op, domain, WeightConfig::defaults(1));
    const TensorField f = analytic::sample(domain, op.adjoint_domain(), [](const Point& p) {
      return analytic::Components{analytic::poly_bump_derivative((p[0] - 0.5) / 0.4) / 0.4};
    });
    const SolveResult r = solve_compact_support(basis, f);
    lines.push_back({"1D solve converges", r.report.converged && r.report.forward_residual < 1e-6,
                     detail::fmt(r.report.forward_residual)});
  }
  return lines;
}

}  // namespace cglue::cli
