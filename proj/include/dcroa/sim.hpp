#pragma once

// Time-domain validation of the nonlinear model: integrate x' = f(x, u),
// classify trajectories against an equilibrium, trace the Lyapunov function
// along them, map the region of attraction on a 2-D grid, and locate the
// borderline (smallest convergent) setpoint by bisection.

#include "dcroa/network.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dcroa::sim {

using Eigen::MatrixXd;
using Eigen::VectorXd;

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Outcome : std::uint8_t { converged, diverged, undecided, failed };

struct SimOptions {
  enum class Integrator { rk4, adaptive };
  Integrator integrator = Integrator::adaptive;
  double step = 2e-6;     // fixed-step size (rk4)
  double rel_tol = 1e-8;  // adaptive local error control
  double t_max = 0.5;     // horizon, seconds
  double eps = 1e-3;      // convergence radius, state units
  double v_div = 1.0;     // divergence floor on load voltages, state units
  double hold = 0.0;      // time inside eps before declaring convergence;
                          // 0 means 5% of t_max
  bool record = true;     // keep all samples (false: endpoints only)
};

// Defaults scaled to the network's unit system: eps = 1e-3 p.u. and
// v_div = 1 V expressed in whatever units the states carry.
SimOptions default_options(const net::NetworkSpec& spec);

struct Trajectory {
  std::vector<double> t;
  std::vector<VectorXd> x;
  Outcome outcome = Outcome::undecided;
  double final_distance = 0.0;  // ||x(end) - xe||_inf
  std::string message;          // diagnostics for `failed`
};

// Integrates the model from x0 and classifies against xe: `diverged` once any
// load voltage drops to v_div (the CPL singularity guard), `converged` when
// ||x - xe||_inf stays within eps for the hold time, `undecided` at t_max,
// `failed` on step-size underflow (never misclassified).
Trajectory simulate(const net::SystemMatrices& m, const VectorXd& u,
                    const VectorXd& x0, const VectorXd& xe,
                    const SimOptions& opts);

struct LyapunovTrace {
  std::vector<double> t;
  std::vector<double> v;         // (x - xe)^T P (x - xe)
  double max_forward_diff = 0.0; // max (v[k+1]-v[k]) / max(v[0], tiny)
};

LyapunovTrace lyapunov_trace(const Trajectory& traj, const MatrixXd& P,
                             const VectorXd& xe);

// Simulates from every vertex of the box xe +/- halfwidth (2^n of them).
struct VertexSweep {
  int converged = 0;
  int total = 0;
  Outcome worst = Outcome::converged;  // most pessimistic outcome seen
  bool all_converged() const { return converged == total; }
};

VertexSweep vertex_sweep(const net::SystemMatrices& m, const VectorXd& u,
                         const VectorXd& xe, const VectorXd& halfwidth,
                         const SimOptions& opts, int jobs = 1);

// Classification map on an n1 x n2 grid over a window `span` times the box,
// centered at xe; only for two-state networks. cls is row-major in the first
// (current) axis: cls[i * n2 + j] pairs axis1[i] with axis2[j]. The boundary
// polyline collects midpoints of grid edges whose endpoints classify
// differently.
struct RoaGrid {
  VectorXd axis1, axis2;  // current and voltage sample positions
  std::vector<Outcome> cls;
  std::vector<std::pair<double, double>> boundary;
};

RoaGrid roa_grid_2d(const net::SystemMatrices& m, const VectorXd& u,
                    const VectorXd& xe, const VectorXd& halfwidth,
                    const SimOptions& opts, int n1 = 301, int n2 = 301,
                    double span = 3.0, int jobs = 1);

// Smallest setpoint (single-source network) for which the equilibrium exists
// and all four box vertices converge, located by bisection to width tol_u.
// Throws if no feasible point exists in [u_lo, u_hi].
double borderline_design(const net::NetworkSpec& spec,
                         const net::SystemMatrices& m,
                         const VectorXd& halfwidth, double u_lo, double u_hi,
                         const SimOptions& opts, double tol_u = 0.1);

// Conservativeness metric: |u_synth - u_border| / u_border.
double relative_difference(double u_synth, double u_border);

}  // namespace dcroa::sim
