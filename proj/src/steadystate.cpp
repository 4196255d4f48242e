#include "dcroa/steadystate.hpp"

#include "dcroa/conic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>
#include <utility>
#include <vector>

namespace dcroa::steady {

using net::NetworkSpec;
using net::SystemMatrices;

namespace {

// Full equilibrium from the linear circuit at fixed setpoints and CPL
// currents p_l / v_l.
VectorXd recover_state(const SystemMatrices& m, const VectorXd& u,
                       const VectorXd& vl) {
  VectorXd rhs = -(m.B2 * (u.array() / m.source_resistance.array()).matrix());
  if (m.nl > 0)
    rhs -= m.B1 * (m.cpl_power.array() / vl.array()).matrix();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m.A);
  VectorXd xe = lu.solve(rhs);
  if ((m.A * xe - rhs).lpNorm<Eigen::Infinity>() >
      1e-8 * std::max(1.0, rhs.lpNorm<Eigen::Infinity>()))
    throw SteadyStateError("steady-state circuit matrix is singular");
  return xe;
}

}  // namespace

OperatingPoint power_flow(const NetworkSpec& spec, const SystemMatrices& m,
                          const VectorXd& u, const VectorXd* vl_init) {
  if (u.size() != m.ns)
    throw SteadyStateError("setpoint vector has the wrong size");
  const double vnom = spec.normalized ? 1.0 : spec.base_voltage;
  VectorXd vl = vl_init && vl_init->size() == m.nl
                    ? *vl_init
                    : VectorXd::Constant(m.nl, vnom);

  if (m.nl > 0) {
    const Eigen::MatrixXd Yls = m.Y_sl.transpose();
    const double scale =
        std::max(1.0, m.cpl_power.lpNorm<Eigen::Infinity>());
    auto resid = [&](const VectorXd& v) -> VectorXd {
      return (v.array() * (Yls * u + m.Y_ll * v).array() -
              m.cpl_power.array())
          .matrix();
    };
    VectorXd f = resid(vl);
    for (int it = 0; it < 100 && f.lpNorm<Eigen::Infinity>() > 1e-10 * scale;
         ++it) {
      Eigen::MatrixXd J =
          Eigen::MatrixXd((Yls * u + m.Y_ll * vl).asDiagonal()) +
          vl.asDiagonal() * m.Y_ll;
      VectorXd dv = J.fullPivLu().solve(-f);
      double alpha = 1.0;
      bool ok = false;
      for (int bt = 0; bt < 60 && !ok; ++bt) {
        VectorXd vn = vl + alpha * dv;
        if ((vn.array() > 0.0).all()) {
          VectorXd fn = resid(vn);
          if (fn.lpNorm<Eigen::Infinity>() < f.lpNorm<Eigen::Infinity>()) {
            vl = vn;
            f = fn;
            ok = true;
          }
        }
        alpha *= 0.5;
      }
      if (!ok) break;
    }
    if (f.lpNorm<Eigen::Infinity>() > 1e-10 * scale) {
      std::ostringstream os;
      os << "power-flow Newton did not converge; scaled residual "
         << f.lpNorm<Eigen::Infinity>() / scale;
      throw SteadyStateError(os.str());
    }
    if ((vl.array() <= 0.0).any())
      throw SteadyStateError(
          "power flow landed on a nonpositive-voltage branch");
  }

  OperatingPoint op;
  op.u = u;
  op.vl = vl;
  op.ps = (u.array() * (m.Y_ss * u + m.Y_sl * vl).array()).matrix();
  op.xe = recover_state(m, u, vl);
  if (m.nl > 0 &&
      (m.C1() * op.xe - vl).lpNorm<Eigen::Infinity>() > 1e-6 * vnom)
    throw SteadyStateError(
        "nodal reduction and dynamic model disagree at the solution");
  return op;
}

namespace {

// Branch-flow description in squared-voltage variables:
// nodes = buses then one terminal node per source, edges = lines plus the
// internal source resistances. Variable layout: [W_node; W_edge; p_s].
struct FlowGraph {
  int nb = 0, ns = 0, ne = 0;
  std::vector<std::array<int, 2>> ends;  // node indices per edge
  std::vector<double> g;                 // edge conductance
  std::vector<bool> is_line;             // line edges carry current bounds

  int wnode(int i) const { return i; }
  int wedge(int e) const { return nb + ns + e; }
  int psvar(int k) const { return nb + ns + ne + k; }
  int num_vars() const { return nb + ns + ne + ns; }
};

FlowGraph build_graph(const NetworkSpec& spec) {
  FlowGraph fg;
  fg.nb = spec.n_buses();
  fg.ns = spec.n_sources();

  std::map<std::string, int> node;
  for (int b = 0; b < fg.nb; ++b) node[spec.buses[b].id] = b;
  // Source order must match build_dynamics: ideal terminals first, then
  // bus-attached sources in bus order.
  int k = 0;
  for (const auto& s : spec.ideal_sources) node[s.id] = fg.nb + k++;
  for (int b = 0; b < fg.nb; ++b) {
    if (!spec.buses[b].has_source) continue;
    fg.ends.push_back({fg.nb + k, b});
    fg.g.push_back(1.0 / spec.buses[b].source_resistance);
    fg.is_line.push_back(false);
    ++k;
  }
  for (const auto& l : spec.lines) {
    fg.ends.push_back({node.at(l.from), node.at(l.to)});
    fg.g.push_back(1.0 / l.resistance);
    fg.is_line.push_back(true);
  }
  fg.ne = static_cast<int>(fg.ends.size());
  return fg;
}

struct SocpRaw {
  bool feasible = false;
  VectorXd u, vl, ps;
  std::string message;
};

// The relaxed program: minimize c^T p_s (or the first terminal's squared
// voltage) subject to nodal balance, voltage/generation bounds, optional
// per-CPL-bus floors, line-current limits, and the rotated-cone couplings
// W_e^2 <= W_i W_j.
SocpRaw solve_socp(const NetworkSpec& spec, const SystemMatrices& m,
                   const VectorXd& floor, const VectorXd& costs,
                   const net::Bounds& bounds, bool min_setpoint) {
  FlowGraph fg = build_graph(spec);
  conic::Problem prob;
  prob.num_vars = fg.num_vars();
  prob.b = VectorXd::Zero(prob.num_vars);
  if (min_setpoint) {
    prob.b[fg.wnode(fg.nb)] = -1.0;
  } else {
    for (int s = 0; s < fg.ns; ++s) prob.b[fg.psvar(s)] = -costs[s];
  }

  // Nodal balance. Buses absorb their CPL draw; source terminals inject p_s.
  std::vector<VectorXd> bal(fg.nb + fg.ns,
                            VectorXd::Zero(prob.num_vars));
  for (int e = 0; e < fg.ne; ++e) {
    for (int side = 0; side < 2; ++side) {
      const int nd = fg.ends[e][side];
      bal[nd][fg.wnode(nd)] += fg.g[e];
      bal[nd][fg.wedge(e)] -= fg.g[e];
    }
  }
  for (int b = 0; b < fg.nb; ++b) {
    bal[b][fg.wnode(b)] += spec.buses[b].shunt_conductance;
    prob.add_equality(bal[b], spec.buses[b].has_cpl
                                  ? spec.buses[b].cpl_power
                                  : 0.0);
  }
  for (int s = 0; s < fg.ns; ++s) {
    VectorXd row = -bal[fg.nb + s];
    row[fg.psvar(s)] += 1.0;
    prob.add_equality(row, 0.0);
  }

  auto box = [&](int var, double lo, double hi, const std::string& what) {
    VectorXd a = VectorXd::Zero(prob.num_vars);
    a[var] = 1.0;
    prob.add_linear(a, -lo, what + " lower");
    a[var] = -1.0;
    prob.add_linear(a, hi, what + " upper");
  };

  int load = 0;
  for (int b = 0; b < fg.nb; ++b) {
    net::Interval iv = spec.buses[b].voltage_bounds
                           ? *spec.buses[b].voltage_bounds
                           : bounds.state_voltage;
    double lo = std::max(0.0, iv.lo);
    if (spec.buses[b].has_cpl) {
      if (floor.size() > 0) lo = std::max(lo, floor[load]);
      ++load;
    }
    box(fg.wnode(b), lo * lo, iv.hi * iv.hi,
        "voltage at " + spec.buses[b].id);
  }
  const double ulo = std::max(0.0, bounds.setpoint.lo);
  for (int s = 0; s < fg.ns; ++s) {
    box(fg.wnode(fg.nb + s), ulo * ulo,
        bounds.setpoint.hi * bounds.setpoint.hi, "setpoint");
    box(fg.psvar(s), bounds.generation.lo, bounds.generation.hi,
        "generation");
  }

  const double imax = std::max(std::abs(bounds.state_current.lo),
                               std::abs(bounds.state_current.hi));
  for (int e = 0; e < fg.ne; ++e) {
    const auto [i, j] = fg.ends[e];
    VectorXd a = VectorXd::Zero(prob.num_vars);
    a[fg.wedge(e)] = 1.0;
    prob.add_linear(a, 0.0, "edge product sign");
    if (fg.is_line[e] && imax * imax < 1e12) {
      // i_e^2 = g^2 (W_i + W_j - 2 W_e) is linear in the W variables.
      VectorXd c = VectorXd::Zero(prob.num_vars);
      c[fg.wnode(i)] = -fg.g[e] * fg.g[e];
      c[fg.wnode(j)] = -fg.g[e] * fg.g[e];
      c[fg.wedge(e)] = 2.0 * fg.g[e] * fg.g[e];
      prob.add_linear(c, imax * imax, "current limit");
    }
    // || (2 W_e, W_i - W_j) || <= W_i + W_j.
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(2, prob.num_vars);
    G(0, fg.wedge(e)) = 2.0;
    G(1, fg.wnode(i)) = 1.0;
    G(1, fg.wnode(j)) = -1.0;
    VectorXd a2 = VectorXd::Zero(prob.num_vars);
    a2[fg.wnode(i)] = 1.0;
    a2[fg.wnode(j)] = 1.0;
    prob.add_soc(G, VectorXd::Zero(2), a2, 0.0, "edge cone");
  }

  auto sol = conic::solve(prob);
  SocpRaw raw;
  raw.message = sol.message;
  if (sol.status != conic::Status::optimal) return raw;
  raw.feasible = true;
  raw.u.resize(fg.ns);
  raw.ps.resize(fg.ns);
  for (int s = 0; s < fg.ns; ++s) {
    raw.u[s] = std::sqrt(std::max(0.0, sol.y[fg.wnode(fg.nb + s)]));
    raw.ps[s] = sol.y[fg.psvar(s)];
  }
  raw.vl.resize(m.nl);
  for (int j = 0; j < m.nl; ++j)
    raw.vl[j] = std::sqrt(std::max(0.0, sol.y[fg.wnode(m.load_bus[j])]));
  return raw;
}

// Scaled residual of the nodal power-flow equations at a candidate point.
double nodal_residual(const SystemMatrices& m, const VectorXd& u,
                      const VectorXd& vl, const VectorXd& ps) {
  VectorXd rs =
      (u.array() * (m.Y_ss * u + m.Y_sl * vl).array()).matrix() - ps;
  double scale = std::max(1.0, ps.lpNorm<Eigen::Infinity>());
  double r = rs.lpNorm<Eigen::Infinity>();
  if (m.nl > 0) {
    VectorXd rl = (vl.array() *
                   (m.Y_sl.transpose() * u + m.Y_ll * vl).array())
                      .matrix() -
                  m.cpl_power;
    scale = std::max(scale, m.cpl_power.lpNorm<Eigen::Infinity>());
    r = std::max(r, rl.lpNorm<Eigen::Infinity>());
  }
  return r / scale;
}

SynthesisResult solve_core(const NetworkSpec& net0, const SystemMatrices& m0,
                           const VectorXd& floor, const VectorXd& costs,
                           const net::Bounds& bounds,
                           const certify::Certificate* cert,
                           bool allow_min_setpoint) {
  if (costs.size() != m0.ns)
    throw SteadyStateError("cost vector has the wrong size");
  if (floor.size() > 0 && floor.size() != m0.nl)
    throw SteadyStateError("floor vector has the wrong size");

  // Solve the relaxation in per-unit for conditioning.
  const double V0 = net0.normalized ? 1.0 : net0.base_voltage;
  const double P0 = net0.normalized ? 1.0 : net0.base_power;
  const double I0 = P0 / V0;
  NetworkSpec pu = net::per_unit(net0);
  SystemMatrices mpu = net::build_dynamics(pu);
  VectorXd floor_pu = floor / V0;
  net::Bounds bpu = bounds;
  bpu.setpoint = {bounds.setpoint.lo / V0, bounds.setpoint.hi / V0};
  bpu.generation = {bounds.generation.lo / P0, bounds.generation.hi / P0};
  bpu.state_voltage = {bounds.state_voltage.lo / V0,
                       bounds.state_voltage.hi / V0};
  bpu.state_current = {bounds.state_current.lo / I0,
                       bounds.state_current.hi / I0};

  const bool min_setpoint = allow_min_setpoint && m0.ns == 1;
  auto raw = solve_socp(pu, mpu, floor_pu, costs, bpu, min_setpoint);
  if (!raw.feasible) {
    if (floor.size() > 0) {
      auto relaxed =
          solve_socp(pu, mpu, VectorXd(), costs, bpu, min_setpoint);
      if (relaxed.feasible)
        throw SteadyStateError(
            "synthesis infeasible: the certified voltage floors cannot be "
            "met within the given bounds (feasible without the floors)");
    }
    throw SteadyStateError("synthesis infeasible within the given bounds: " +
                           raw.message);
  }

  const bool exact = nodal_residual(mpu, raw.u, raw.vl, raw.ps) <= 1e-6;

  // Polish at the relaxed setpoints so the returned point satisfies the
  // nonlinear equations to solver precision.
  VectorXd u = raw.u * V0;
  VectorXd vl_init = raw.vl * V0;
  OperatingPoint op = power_flow(net0, m0, u, &vl_init);

  SynthesisResult result;
  result.point = op;
  result.objective = costs.dot(op.ps);
  bool within = true;
  const double vtol = 1e-6 * V0, ptol = 1e-6 * P0;
  for (int s = 0; s < m0.ns; ++s) {
    within = within && bounds.setpoint.contains(op.u[s], vtol) &&
             bounds.generation.contains(op.ps[s], ptol);
  }
  for (int b = 0; b < static_cast<int>(net0.buses.size()); ++b) {
    net::Interval iv = net0.buses[b].voltage_bounds
                           ? *net0.buses[b].voltage_bounds
                           : bounds.state_voltage;
    within = within && iv.contains(op.xe[m0.bus_state[b]], vtol);
  }
  for (int j = 0; j < static_cast<int>(floor.size()); ++j)
    within = within && op.vl[j] >= floor[j] - vtol;
  result.relaxation = exact ? Relaxation::exact
                            : (within ? Relaxation::refined
                                      : Relaxation::inexact);
  if (!within) result.relaxation = Relaxation::inexact;
  if (cert)
    result.verdict = certify::certify_point(*cert, m0, op.xe);
  else
    result.verdict =
        floor.size() == 0 ||
        ((op.vl - floor).array() >= -vtol).all();
  return result;
}

}  // namespace

SynthesisResult solve_synthesis(const SynthesisSpec& spec) {
  if (!spec.network || !spec.matrices)
    throw SteadyStateError("synthesis needs a network and its matrices");
  return solve_core(*spec.network, *spec.matrices, spec.floor, spec.costs,
                    spec.bounds, spec.certificate,
                    /*allow_min_setpoint=*/true);
}

OperatingPoint solve_opf(const NetworkSpec& network, const SystemMatrices& m,
                         const VectorXd& costs, const net::Bounds& bounds) {
  return solve_core(network, m, VectorXd(), costs, bounds, nullptr,
                    /*allow_min_setpoint=*/false)
      .point;
}

Algorithm1Result run_algorithm1(const NetworkSpec& spec) {
  using clock = std::chrono::steady_clock;
  Algorithm1Result out;
  SystemMatrices m = net::build_dynamics(spec);
  certify::OperatingBox box{net::operating_halfwidth(spec)};
  VectorXd h0 = spec.lpv_slope.size() > 0 ? spec.lpv_slope
                                          : certify::default_h0(spec);
  certify::Schedule sched;
  if (spec.fixed_beta > 0.0) {
    sched.fixed = true;
    sched.beta0 = spec.fixed_beta;
  }

  auto tic = clock::now();
  auto lap = [&tic] {
    auto now = clock::now();
    double s = std::chrono::duration<double>(now - tic).count();
    tic = now;
    return s;
  };
  auto rethrow = [](const char* step, const std::exception& e) {
    throw SteadyStateError(std::string(step) + ": " + e.what());
  };

  certify::CodesignResult step1;
  try {
    step1 = certify::codesign_linesearch(m, box, h0, sched);
  } catch (const std::exception& e) {
    rethrow("step 1 (co-design)", e);
  }
  out.timings.codesign = lap();
  out.timings.lmi_solves = step1.lmi_solves;
  out.timings.max_lmi_seconds = step1.max_solve_seconds;

  certify::Certificate& cert = out.certificate;
  cert.lpv = {h0, step1.beta};
  cert.sublevel = step1.set;
  cert.box = box;
  try {
    cert.dx_inf = certify::support_inf(step1.set.P, m.C1());
  } catch (const std::exception& e) {
    rethrow("step 2 (support function)", e);
  }
  out.timings.support = lap();
  try {
    cert.floor =
        certify::voltage_floor(cert.dx_inf, m.cpl_power, step1.beta, h0);
  } catch (const std::exception& e) {
    rethrow("step 3 (voltage floor)", e);
  }
  out.timings.floor = lap();
  cert.network_fingerprint = net::fingerprint(spec);

  SynthesisSpec ss;
  ss.network = &spec;
  ss.matrices = &m;
  ss.floor = cert.floor;
  ss.costs = spec.costs;
  ss.bounds = spec.bounds;
  ss.certificate = &cert;
  try {
    out.synthesis = solve_synthesis(ss);
  } catch (const std::exception& e) {
    rethrow("step 4 (synthesis)", e);
  }
  out.timings.synthesis = lap();
  return out;
}

}  // namespace dcroa::steady
