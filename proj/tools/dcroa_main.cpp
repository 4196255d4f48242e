// Batch front end for the certification / synthesis / simulation pipeline.
//
// Subcommands: certify, synthesize, simulate, roa2d, sensitivity. All write
// structured JSON reports (with input content hashes) and delimited data
// files into --out. Exit codes: 0 success, 2 parse error, 3 infeasible,
// 4 solver/numerical failure, 5 falsification (simulation contradicts a
// certificate).

#include "dcroa/report.hpp"
#include "dcroa/sim.hpp"
#include "dcroa/steadystate.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

namespace {

using namespace dcroa;
using Eigen::VectorXd;

constexpr int exit_ok = 0, exit_parse = 2, exit_infeasible = 3,
              exit_solver = 4, exit_falsified = 5;

struct Common {
  std::string network;
  std::string box;  // "current,voltage" half-width override
  bool per_unit = false;
  std::string tol = "default";
  std::string out = ".";
  int jobs = 1;
  int seed = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--network", c.network, "network description (JSON)")
      ->required();
  cmd->add_option("--box", c.box,
                  "operating half-widths 'current,voltage' (overrides the "
                  "network file)");
  cmd->add_flag("--per-unit", c.per_unit,
                "normalize the network to per-unit before solving");
  cmd->add_option("--tol", c.tol, "tolerance profile: fast|default|tight")
      ->check(CLI::IsMember({"fast", "default", "tight"}));
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--jobs", c.jobs, "worker threads for simulation sweeps")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "recorded in the manifest");
}

std::vector<double> parse_csv_numbers(const std::string& text) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) vals.push_back(std::stod(item));
  return vals;
}

net::NetworkSpec load_network(const Common& c) {
  auto spec = net::parse_network_file(c.network);
  if (c.per_unit && !spec.normalized) spec = net::per_unit(spec);
  if (!c.box.empty()) {
    auto vals = parse_csv_numbers(c.box);
    if (vals.size() != 2 || vals[0] <= 0 || vals[1] <= 0)
      throw net::ParseError(
          "--box expects two positive numbers 'current,voltage'");
    spec.halfwidth_current = vals[0];
    spec.halfwidth_voltage = vals[1];
  }
  return spec;
}

certify::Schedule schedule_for(const net::NetworkSpec& spec,
                               const std::string& tol) {
  certify::Schedule s;
  if (spec.fixed_beta > 0.0) {
    s.beta0 = spec.fixed_beta;
    s.fixed = true;
  }
  if (tol == "fast") s.bisect_rel = 1e-2;
  if (tol == "tight") s.bisect_rel = 1e-4;
  return s;
}

VectorXd h0_for(const net::NetworkSpec& spec) {
  return spec.lpv_slope.size() ? spec.lpv_slope : certify::default_h0(spec);
}

sim::SimOptions sim_options_for(const net::NetworkSpec& spec,
                                const std::string& tol) {
  auto opts = sim::default_options(spec);
  if (tol == "fast") opts.rel_tol = 1e-6;
  if (tol == "tight") opts.rel_tol = 1e-10;
  return opts;
}

nlohmann::json common_manifest(const std::string& command, const Common& c,
                               std::vector<std::string> extra_inputs = {}) {
  std::vector<std::string> inputs{c.network};
  inputs.insert(inputs.end(), extra_inputs.begin(), extra_inputs.end());
  nlohmann::json options = {{"box", c.box},       {"per_unit", c.per_unit},
                            {"tol", c.tol},       {"out", c.out},
                            {"jobs", c.jobs},     {"seed", c.seed}};
  return report::manifest(command, inputs, options);
}

std::string out_path(const Common& c, const std::string& name) {
  std::filesystem::create_directories(c.out);
  return (std::filesystem::path(c.out) / name).string();
}

const char* outcome_name(sim::Outcome o) {
  switch (o) {
    case sim::Outcome::converged: return "converged";
    case sim::Outcome::diverged: return "diverged";
    case sim::Outcome::undecided: return "undecided";
    case sim::Outcome::failed: return "failed";
  }
  return "failed";
}

nlohmann::json certificate_report(const certify::Certificate& cert,
                                  const certify::CodesignResult& step1) {
  return {{"beta", cert.lpv.beta},
          {"floor", report::vector_json(cert.floor)},
          {"dx_inf", report::vector_json(cert.dx_inf)},
          {"gamma", report::vector_json(cert.sublevel.gamma)},
          {"tau", cert.sublevel.tau},
          {"lmi_solves", step1.lmi_solves},
          {"max_lmi_seconds", step1.max_solve_seconds}};
}

int cmd_certify(const Common& c) {
  auto spec = load_network(c);
  auto m = net::build_dynamics(spec);
  certify::OperatingBox box{net::operating_halfwidth(spec)};
  certify::CodesignResult step1;
  auto t0 = std::chrono::steady_clock::now();
  auto cert =
      certify::make_certificate(m, box, m.cpl_power, h0_for(spec),
                                schedule_for(spec, c.tol),
                                net::fingerprint(spec), &step1);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  report::write_json(out_path(c, "certificate.json"), certify::to_json(cert));
  nlohmann::json rep = certificate_report(cert, step1);
  rep["seconds"] = seconds;
  rep["manifest"] = common_manifest("certify", c);
  report::write_json(out_path(c, "certify_report.json"), rep);

  std::printf("beta: %.6g\n", cert.lpv.beta);
  std::printf("floor:");
  for (int k = 0; k < cert.floor.size(); ++k)
    std::printf(" %.4f", cert.floor[k]);
  std::printf("\nlmi solves: %d (slowest %.3f s)\n", step1.lmi_solves,
              step1.max_solve_seconds);
  return exit_ok;
}

nlohmann::json point_report(const steady::SynthesisResult& res) {
  const char* relax =
      res.relaxation == steady::Relaxation::exact
          ? "exact"
          : res.relaxation == steady::Relaxation::refined ? "refined"
                                                          : "inexact";
  return {{"u", report::vector_json(res.point.u)},
          {"load_voltages", report::vector_json(res.point.vl)},
          {"generation", report::vector_json(res.point.ps)},
          {"state", report::vector_json(res.point.xe)},
          {"objective", res.objective},
          {"relaxation", relax},
          {"verdict", res.verdict}};
}

int cmd_synthesize(const Common& c, const std::string& cert_path) {
  auto spec = load_network(c);
  auto m = net::build_dynamics(spec);

  steady::SynthesisResult res;
  nlohmann::json rep;
  if (cert_path.empty()) {
    auto out = steady::run_algorithm1(spec);
    res = out.synthesis;
    rep["certificate"] = certificate_report(
        out.certificate,
        certify::CodesignResult{out.certificate.lpv.beta, out.certificate.sublevel,
                                out.timings.lmi_solves,
                                out.timings.max_lmi_seconds});
    rep["timings"] = {{"codesign", out.timings.codesign},
                      {"support", out.timings.support},
                      {"floor", out.timings.floor},
                      {"synthesis", out.timings.synthesis}};
  } else {
    std::ifstream in(cert_path);
    if (!in) throw net::ParseError("cannot open '" + cert_path + "'");
    auto cert = certify::certificate_from_json(nlohmann::json::parse(in));
    if (cert.network_fingerprint != net::fingerprint(spec))
      throw net::ParseError(
          "certificate was produced for a different network (fingerprint "
          "mismatch)");
    steady::SynthesisSpec ss;
    ss.network = &spec;
    ss.matrices = &m;
    ss.floor = cert.floor;
    ss.costs = spec.costs;
    ss.bounds = spec.bounds;
    ss.certificate = &cert;
    res = steady::solve_synthesis(ss);
  }
  rep["operating_point"] = point_report(res);
  rep["manifest"] = common_manifest(
      "synthesize", c,
      cert_path.empty() ? std::vector<std::string>{}
                        : std::vector<std::string>{cert_path});
  report::write_json(out_path(c, "operating_point.json"), rep);

  std::printf("u:");
  for (int k = 0; k < res.point.u.size(); ++k)
    std::printf(" %.4f", res.point.u[k]);
  std::printf("\nobjective: %.6g  (%s, verdict %s)\n", res.objective,
              rep["operating_point"]["relaxation"].get<std::string>().c_str(),
              res.verdict ? "pass" : "fail");
  return exit_ok;
}

int cmd_simulate(const Common& c, const std::string& setpoints) {
  auto spec = load_network(c);
  auto m = net::build_dynamics(spec);
  auto opts = sim_options_for(spec, c.tol);

  VectorXd u;
  bool certified = false;
  if (!setpoints.empty()) {
    auto vals = parse_csv_numbers(setpoints);
    if (static_cast<int>(vals.size()) != m.ns)
      throw net::ParseError("--setpoint needs one value per source");
    u = Eigen::Map<VectorXd>(vals.data(), vals.size());
  } else {
    auto out = steady::run_algorithm1(spec);
    u = out.synthesis.point.u;
    certified = out.synthesis.verdict;
  }
  auto op = steady::power_flow(spec, m, u);
  VectorXd hw = net::operating_halfwidth(spec);

  // Exhaustive vertex enumeration up to 12 states; beyond that a seeded
  // random sample of vertices (the sweep would otherwise need 2^n runs).
  std::vector<std::uint64_t> masks;
  if (m.n <= 12) {
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m.n); ++mask)
      masks.push_back(mask);
  } else {
    std::mt19937_64 rng(static_cast<std::uint64_t>(c.seed));
    for (int k = 0; k < 256; ++k) masks.push_back(rng());
  }
  std::vector<std::vector<double>> rows;
  int converged = 0;
  sim::SimOptions vopts = opts;
  vopts.record = false;
  for (std::uint64_t mask : masks) {
    VectorXd x0 = op.xe;
    for (int i = 0; i < m.n; ++i)
      x0[i] += (mask >> i) & 1 ? hw[i] : -hw[i];
    auto traj = sim::simulate(m, u, x0, op.xe, vopts);
    converged += traj.outcome == sim::Outcome::converged;
    rows.push_back({static_cast<double>(mask),
                    static_cast<double>(static_cast<int>(traj.outcome)),
                    traj.final_distance});
  }
  const int count = static_cast<int>(masks.size());
  report::write_csv(out_path(c, "vertices.csv"),
                    {"vertex", "outcome", "final_distance"}, rows);
  nlohmann::json rep = {{"vertices", count},
                        {"converged", converged},
                        {"setpoints", report::vector_json(u)},
                        {"manifest", common_manifest("simulate", c)}};
  report::write_json(out_path(c, "simulate_report.json"), rep);
  std::printf("vertices converged: %d / %d\n", converged, count);
  if (certified && converged != count) {
    std::fprintf(stderr,
                 "falsification: a certified design has a non-convergent "
                 "vertex\n");
    return exit_falsified;
  }
  return exit_ok;
}

int cmd_roa2d(const Common& c, const std::string& setpoints, int grid_n,
              double span) {
  auto spec = load_network(c);
  auto m = net::build_dynamics(spec);
  auto opts = sim_options_for(spec, c.tol);

  VectorXd u;
  if (!setpoints.empty()) {
    auto vals = parse_csv_numbers(setpoints);
    u = Eigen::Map<VectorXd>(vals.data(), vals.size());
  } else {
    u = steady::run_algorithm1(spec).synthesis.point.u;
  }
  auto op = steady::power_flow(spec, m, u);
  auto grid = sim::roa_grid_2d(m, u, op.xe, net::operating_halfwidth(spec),
                               opts, grid_n, grid_n, span, c.jobs);

  std::vector<std::vector<double>> rows;
  rows.reserve(grid.cls.size());
  for (int i = 0; i < grid.axis1.size(); ++i)
    for (int j = 0; j < grid.axis2.size(); ++j)
      rows.push_back(
          {grid.axis1[i], grid.axis2[j],
           static_cast<double>(static_cast<int>(
               grid.cls[static_cast<size_t>(i) * grid.axis2.size() + j]))});
  report::write_csv(out_path(c, "roa_grid.csv"),
                    {"current", "voltage", "outcome"}, rows);
  std::vector<std::vector<double>> brows;
  for (const auto& [a, b] : grid.boundary) brows.push_back({a, b});
  report::write_csv(out_path(c, "roa_boundary.csv"), {"current", "voltage"},
                    brows);
  int conv = 0;
  for (auto o : grid.cls) conv += o == sim::Outcome::converged;
  nlohmann::json rep = {{"grid", grid_n},
                        {"span", span},
                        {"converged_cells", conv},
                        {"total_cells", static_cast<int>(grid.cls.size())},
                        {"boundary_points", static_cast<int>(grid.boundary.size())},
                        {"setpoints", report::vector_json(u)},
                        {"manifest", common_manifest("roa2d", c)}};
  report::write_json(out_path(c, "roa2d_report.json"), rep);
  std::printf("grid cells converged: %d / %d, boundary points: %zu\n", conv,
              static_cast<int>(grid.cls.size()), grid.boundary.size());
  return exit_ok;
}

int cmd_sensitivity(const Common& c, const std::string& values,
                    bool borderline) {
  auto base_spec = load_network(c);
  auto cpls = parse_csv_numbers(values);
  if (cpls.empty()) throw net::ParseError("--values must list CPL powers");

  std::vector<std::vector<double>> rows;
  for (double watts : cpls) {
    auto spec = base_spec;
    for (auto& b : spec.buses)
      if (b.has_cpl) b.cpl_power = -std::abs(watts);
    auto out = steady::run_algorithm1(spec);
    std::vector<double> row{watts, out.synthesis.point.u[0],
                            out.certificate.floor.size()
                                ? out.certificate.floor[0]
                                : 0.0};
    if (borderline) {
      auto m = net::build_dynamics(spec);
      const double u_star = out.synthesis.point.u[0];
      const double u_min = sim::borderline_design(
          spec, m, net::operating_halfwidth(spec),
          0.5 * spec.bounds.setpoint.lo + 1e-6, 1.05 * u_star,
          sim_options_for(spec, c.tol));
      row.push_back(u_min);
      row.push_back(sim::relative_difference(u_star, u_min));
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::string> header{"cpl_watts", "u_synth", "floor"};
  if (borderline) {
    header.push_back("u_border");
    header.push_back("rd");
  }
  report::write_csv(out_path(c, "sensitivity.csv"), header, rows);
  nlohmann::json rep = {{"rows", static_cast<int>(rows.size())},
                        {"borderline", borderline},
                        {"manifest", common_manifest("sensitivity", c)}};
  report::write_json(out_path(c, "sensitivity_report.json"), rep);
  for (const auto& row : rows)
    std::printf("cpl %.6g W -> u %.4f\n", row[0], row[1]);
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Operating-point certification and synthesis for DC microgrids with "
      "constant power loads"};
  app.set_version_flag("--version", std::string("dcroa ") +
                                        report::tool_version);
  app.require_subcommand(1);

  Common c_cert, c_synth, c_sim, c_roa, c_sens;
  std::string cert_path, setpoints_sim, setpoints_roa, sens_values;
  int grid_n = 301;
  double span = 3.0;
  bool borderline = false;

  add_common(app.add_subcommand("certify",
                                "co-design LMI line search and voltage floor"),
             c_cert);
  auto* synth = app.add_subcommand(
      "synthesize", "stability-constrained optimal power flow");
  add_common(synth, c_synth);
  synth->add_option("--certificate", cert_path,
                    "existing certificate (default: run the full pipeline)");
  auto* simc = app.add_subcommand(
      "simulate", "vertex-convergence validation of a design");
  add_common(simc, c_sim);
  simc->add_option("--setpoint", setpoints_sim,
                   "source setpoints, comma separated (default: synthesize)");
  auto* roac =
      app.add_subcommand("roa2d", "region-of-attraction map (two states)");
  add_common(roac, c_roa);
  roac->add_option("--setpoint", setpoints_roa, "source setpoint");
  roac->add_option("--grid", grid_n, "grid points per axis")
      ->check(CLI::Range(2, 2001));
  roac->add_option("--span", span, "window size in operating boxes");
  auto* sens = app.add_subcommand("sensitivity",
                                  "re-run the pipeline over a CPL sweep");
  add_common(sens, c_sens);
  sens->add_option("--values", sens_values, "CPL magnitudes, watts")
      ->required();
  sens->add_flag("--borderline", borderline,
                 "also bisect the borderline setpoint and report RD");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("certify")) return cmd_certify(c_cert);
    if (app.got_subcommand("synthesize"))
      return cmd_synthesize(c_synth, cert_path);
    if (app.got_subcommand("simulate"))
      return cmd_simulate(c_sim, setpoints_sim);
    if (app.got_subcommand("roa2d"))
      return cmd_roa2d(c_roa, setpoints_roa, grid_n, span);
    if (app.got_subcommand("sensitivity"))
      return cmd_sensitivity(c_sens, sens_values, borderline);
  } catch (const net::ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return exit_parse;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return exit_parse;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return exit_parse;
  } catch (const certify::CertifyError& e) {
    std::fprintf(stderr, "infeasible: %s\n", e.what());
    return exit_infeasible;
  } catch (const steady::SteadyStateError& e) {
    const bool infeasible =
        std::string(e.what()).find("infeasible") != std::string::npos;
    std::fprintf(stderr, "%s: %s\n",
                 infeasible ? "infeasible" : "solver failure", e.what());
    return infeasible ? exit_infeasible : exit_solver;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "solver failure: %s\n", e.what());
    return exit_solver;
  }
  return exit_ok;
}
