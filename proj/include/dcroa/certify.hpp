#pragma once

// Region-of-attraction certification for the CPL microgrid model. The chain
// is: pick an LPV uncertainty interval H = [0, beta*h0], find a quadratic
// Lyapunov function P through the co-design LMI whose sub-level set covers
// the requested operating box, then turn the certificate into a linear
// voltage floor that any equilibrium must clear.

#include "dcroa/conic.hpp"
#include "dcroa/network.hpp"

#include <functional>
#include <string>

#include <json.hpp>

namespace dcroa::certify {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using net::SystemMatrices;

class CertifyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OperatingBox {
  VectorXd halfwidth;  // per-state, > 0
};

struct LpvStabilitySet {
  VectorXd h0;      // initial guess direction, > 0
  double beta = 0;  // scaling; H = [0, beta*h0]
};

struct SublevelSet {
  MatrixXd P;      // S = {dx: dx' P dx <= 1}
  VectorXd gamma;  // covering multipliers, P <= diag(gamma)
  double tau = 0;  // LMI S-procedure scalar
};

struct Certificate {
  LpvStabilitySet lpv;
  SublevelSet sublevel;
  OperatingBox box;
  VectorXd dx_inf;  // inf over S of C1 dx, <= 0
  VectorXd floor;   // x^{Ce}_-: minimal certified load-bus voltages
  std::string network_fingerprint;
};

// Residual dynamics around an equilibrium, dx' = D^-1 (A + B1 [h] C1) dx.
struct ShiftedDynamics {
  const SystemMatrices* matrices = nullptr;
  VectorXd xe;
  VectorXd h(const VectorXd& dx) const;      // h(x^e, dx), n_l entries
  VectorXd field(const VectorXd& dx) const;  // residual vector field
};
ShiftedDynamics shift_coordinates(const SystemMatrices& m, const VectorXd& xe);

// The stability LMI (P, tau variables; P-hat eliminated as P D^-1) as a
// feasibility problem. Variable layout: [vech(P); tau].
conic::Problem assemble_stability_lmi(const SystemMatrices& m, double beta,
                                      const VectorXd& h0);

// Largest beta with a feasible stability LMI, located by geometric growth
// and bisection. Returns the certifying P at beta*.
struct GevpResult {
  double beta = 0;
  MatrixXd P;
  bool at_cap = false;  // no CPL destabilization: feasible up to the cap
};
GevpResult gevp_bisection(const SystemMatrices& m, const VectorXd& h0,
                          double tol, double beta_cap = 1e6);

struct Schedule {
  double beta0 = 1.0;
  double factor = 1.2;
  double cap = 1e6;
  double bisect_rel = 1e-3;
  bool fixed = false;  // evaluate beta0 only (externally chosen beta)
};

struct CodesignResult {
  double beta = 0;
  SublevelSet set;
  int lmi_solves = 0;
  double max_solve_seconds = 0;
};
// Algorithm step 1: largest beta on the schedule such that the co-design
// problem (max logdet P with box covering) is feasible.
CodesignResult codesign_linesearch(const SystemMatrices& m,
                                   const OperatingBox& box, const VectorXd& h0,
                                   const Schedule& schedule);

// Smallest alpha with box subset of {dx: dx' P dx <= alpha}, by exact vertex
// enumeration (n <= 20).
double set_covering(const MatrixXd& P, const OperatingBox& box);

// Entry k: inf over the ellipsoid {dx' P dx <= 1} of row k of C1 times dx.
VectorXd support_inf(const MatrixXd& P, const MatrixXd& C1);

// x^{Ce}_-: positive root of the per-bus quadratic; v >= floor iff
// sup_h(v) <= beta*h0.
VectorXd voltage_floor(const VectorXd& dx_inf, const VectorXd& pl, double beta,
                       const VectorXd& h0);

// sup over the ellipsoid of h at load voltages v^e.
VectorXd sup_h(const VectorXd& ve, const VectorXd& dx_inf, const VectorXd& pl);

// Proposition-1 verdict for a candidate equilibrium state.
bool certify_point(const Certificate& cert, const SystemMatrices& m,
                   const VectorXd& xe);

// Default initial-guess direction when a network does not provide one:
// h0 = -pl / v_min^2 with v_min the lower steady-state voltage bound minus
// the voltage half-width, floored at 10% of nominal.
VectorXd default_h0(const net::NetworkSpec& spec);

// Steps 1-3 of the certification pipeline.
Certificate make_certificate(const SystemMatrices& m, const OperatingBox& box,
                             const VectorXd& pl, const VectorXd& h0,
                             const Schedule& schedule,
                             const std::string& fingerprint,
                             CodesignResult* step1 = nullptr);

nlohmann::json to_json(const Certificate& cert);
Certificate certificate_from_json(const nlohmann::json& doc);

}  // namespace dcroa::certify
