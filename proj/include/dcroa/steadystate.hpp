#pragma once

// Steady-state analysis and setpoint design: Newton power flow on the
// Kron-reduced nodal model, a branch-flow SOCP for optimal power flow, the
// same SOCP with certified voltage floors for stability-constrained
// synthesis, and the end-to-end pipeline (certify, support, floor,
// synthesize) with per-step timings.

#include "dcroa/certify.hpp"
#include "dcroa/network.hpp"

#include <stdexcept>
#include <string>

namespace dcroa::steady {

using Eigen::MatrixXd;
using Eigen::VectorXd;

class SteadyStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OperatingPoint {
  VectorXd u;   // source setpoints
  VectorXd vl;  // CPL-bus voltages
  VectorXd xe;  // full equilibrium state
  VectorXd ps;  // source power injections
};

// Solves the nodal power-flow equations at fixed setpoints u by damped
// Newton iteration on the CPL-bus voltages, initialized at nominal voltage
// (high-voltage branch), then recovers the full equilibrium state from the
// linear circuit. Throws on divergence or a nonpositive-voltage branch.
OperatingPoint power_flow(const net::NetworkSpec& spec,
                          const net::SystemMatrices& m, const VectorXd& u,
                          const VectorXd* vl_init = nullptr);

enum class Relaxation { exact, refined, inexact };

struct SynthesisSpec {
  const net::NetworkSpec* network = nullptr;
  const net::SystemMatrices* matrices = nullptr;
  VectorXd floor;  // per CPL bus; empty = unconstrained (plain OPF)
  VectorXd costs;  // per source, >= 0
  net::Bounds bounds;
  const certify::Certificate* certificate = nullptr;  // enables the verdict
};

struct SynthesisResult {
  OperatingPoint point;
  double objective = 0.0;  // c^T p_s at the returned point
  Relaxation relaxation = Relaxation::inexact;
  bool verdict = false;  // certificate check at the returned equilibrium
};

// Branch-flow SOCP in squared-voltage variables, followed by exactness
// verification against the nonlinear power-flow equations and, if needed, a
// Newton refinement at the relaxed setpoints. With a single source the
// objective switches from generation cost to minimizing the setpoint itself.
SynthesisResult solve_synthesis(const SynthesisSpec& spec);

// Generation-cost OPF: the synthesis problem without voltage floors.
OperatingPoint solve_opf(const net::NetworkSpec& network,
                         const net::SystemMatrices& m, const VectorXd& costs,
                         const net::Bounds& bounds);

struct StepTimings {
  double codesign = 0.0;   // step 1, seconds
  double support = 0.0;    // step 2
  double floor = 0.0;      // step 3
  double synthesis = 0.0;  // step 4
  int lmi_solves = 0;
  double max_lmi_seconds = 0.0;  // slowest single LMI solve in step 1
};

struct Algorithm1Result {
  certify::Certificate certificate;
  SynthesisResult synthesis;
  StepTimings timings;
};

// Full pipeline on one network: co-design line search, support-function
// infimum, voltage floor, stability-constrained synthesis. Uses the
// network's certification hints (h0 direction, fixed beta) when present.
Algorithm1Result run_algorithm1(const net::NetworkSpec& spec);

}  // namespace dcroa::steady
