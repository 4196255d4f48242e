#include "dcroa/sim.hpp"

#include "dcroa/steadystate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <thread>

namespace dcroa::sim {

SimOptions default_options(const net::NetworkSpec& spec) {
  SimOptions opts;
  if (spec.normalized) {
    opts.eps = 1e-3;
    opts.v_div = 1.0 / spec.base_voltage;
  } else {
    opts.eps = 1e-3 * spec.base_voltage;
    opts.v_div = 1.0;
  }
  return opts;
}

namespace {

// Dormand-Prince 5(4) tableau (FSAL).
constexpr double A21 = 1.0 / 5;
constexpr double A31 = 3.0 / 40, A32 = 9.0 / 40;
constexpr double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9;
constexpr double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187,
                 A53 = 64448.0 / 6561, A54 = -212.0 / 729;
constexpr double A61 = 9017.0 / 3168, A62 = -355.0 / 33,
                 A63 = 46732.0 / 5247, A64 = 49.0 / 176,
                 A65 = -5103.0 / 18656;
constexpr double B1c = 35.0 / 384, B3c = 500.0 / 1113, B4c = 125.0 / 192,
                 B5c = -2187.0 / 6784, B6c = 11.0 / 84;
constexpr double E1 = 35.0 / 384 - 5179.0 / 57600,
                 E3 = 500.0 / 1113 - 7571.0 / 16695,
                 E4 = 125.0 / 192 - 393.0 / 640,
                 E5 = -2187.0 / 6784 + 92097.0 / 339200,
                 E6 = 11.0 / 84 - 187.0 / 2100, E7 = -1.0 / 40;

struct Integrand {
  const net::SystemMatrices* m;
  const VectorXd* u;
  double v_guard;  // states with load voltages at/below this are off-model

  // false when x leaves the domain where the CPL term is defined.
  bool eval(const VectorXd& x, VectorXd* dx) const {
    if (m->nl > 0 && ((m->B1.transpose() * x).array() <= v_guard).any())
      return false;
    *dx = m->field(x, *u);
    return true;
  }
};

}  // namespace

Trajectory simulate(const net::SystemMatrices& m, const VectorXd& u,
                    const VectorXd& x0, const VectorXd& xe,
                    const SimOptions& opts) {
  if (m.nl > 0 && ((m.B1.transpose() * x0).array() <= 0.0).any())
    throw SimError("initial load-bus voltages must be positive");
  if (opts.t_max <= 0 || opts.eps <= 0 || opts.v_div <= 0)
    throw SimError("t_max, eps and v_div must be positive");

  const double hold = opts.hold > 0 ? opts.hold : 0.05 * opts.t_max;
  Integrand f{&m, &u, 1e-12 * opts.v_div};
  Trajectory traj;
  VectorXd x = x0;
  double t = 0.0;
  double t_inside = -1.0;  // entry time of the current stay within eps

  auto record = [&](double tt, const VectorXd& xx) {
    if (!opts.record && !traj.t.empty()) {
      traj.t.back() = tt;
      traj.x.back() = xx;
    } else {
      traj.t.push_back(tt);
      traj.x.push_back(xx);
    }
  };
  // Returns true once the trajectory is classified.
  auto classify = [&](double tt, const VectorXd& xx) {
    if (m.nl > 0 && ((m.B1.transpose() * xx).array() <= opts.v_div).any()) {
      traj.outcome = Outcome::diverged;
      return true;
    }
    const double dist = (xx - xe).lpNorm<Eigen::Infinity>();
    if (dist <= opts.eps) {
      if (t_inside < 0) t_inside = tt;
      if (tt - t_inside >= hold) {
        traj.outcome = Outcome::converged;
        return true;
      }
    } else {
      t_inside = -1.0;
    }
    return false;
  };

  record(t, x);
  bool done = classify(t, x);

  if (opts.integrator == SimOptions::Integrator::rk4) {
    if (opts.step <= 0) throw SimError("rk4 requires a positive step");
    VectorXd k1, k2, k3, k4;
    while (!done && t < opts.t_max) {
      const double h = std::min(opts.step, opts.t_max - t);
      bool ok = f.eval(x, &k1) && f.eval((x + 0.5 * h * k1).eval(), &k2) &&
                f.eval((x + 0.5 * h * k2).eval(), &k3) &&
                f.eval((x + h * k3).eval(), &k4);
      if (!ok) {
        // Fixed steps cannot shrink into the singularity; a stage at
        // non-positive load voltage means the solution left the model.
        traj.outcome = Outcome::diverged;
        break;
      }
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t += h;
      record(t, x);
      done = classify(t, x);
    }
  } else {
    const double h_max = std::min(opts.t_max / 100.0, 0.5 * hold);
    const double h_min = 1e-14 * opts.t_max;
    double h = std::min(1e-6 * opts.t_max, h_max);
    VectorXd k1, k2, k3, k4, k5, k6, k7, x_new;
    bool have_k1 = f.eval(x, &k1);
    if (!have_k1) {
      traj.outcome = Outcome::diverged;
      done = true;
    }
    while (!done && t < opts.t_max) {
      h = std::min(h, opts.t_max - t);
      bool ok =
          f.eval((x + h * (A21 * k1)).eval(), &k2) &&
          f.eval((x + h * (A31 * k1 + A32 * k2)).eval(), &k3) &&
          f.eval((x + h * (A41 * k1 + A42 * k2 + A43 * k3)).eval(), &k4) &&
          f.eval((x + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4)).eval(),
                 &k5) &&
          f.eval((x + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 +
                           A65 * k5))
                     .eval(),
                 &k6);
      double ratio = std::numeric_limits<double>::infinity();
      if (ok) {
        x_new = x + h * (B1c * k1 + B3c * k3 + B4c * k4 + B5c * k5 + B6c * k6);
        ok = f.eval(x_new, &k7);
        if (ok) {
          VectorXd err =
              h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
          ratio = 0.0;
          for (int i = 0; i < err.size(); ++i)
            ratio = std::max(ratio,
                             std::abs(err[i]) /
                                 (opts.rel_tol *
                                  (1.0 + std::max(std::abs(x[i]),
                                                  std::abs(x_new[i])))));
        }
      }
      if (ratio <= 1.0) {
        t += h;
        x = x_new;
        k1 = k7;  // first-same-as-last
        record(t, x);
        done = classify(t, x);
        h = std::min(h_max,
                     h * std::clamp(0.9 * std::pow(ratio + 1e-16, -0.2), 0.2,
                                    5.0));
      } else {
        h *= ok ? std::clamp(0.9 * std::pow(ratio, -0.2), 0.1, 0.5) : 0.25;
        if (h < h_min) {
          traj.outcome = Outcome::failed;
          traj.message = "step-size underflow";
          done = true;
        }
      }
    }
  }
  traj.final_distance = (x - xe).lpNorm<Eigen::Infinity>();
  return traj;
}

LyapunovTrace lyapunov_trace(const Trajectory& traj, const MatrixXd& P,
                             const VectorXd& xe) {
  LyapunovTrace out;
  out.t = traj.t;
  out.v.reserve(traj.x.size());
  for (const auto& x : traj.x) {
    VectorXd dx = x - xe;
    out.v.push_back(dx.dot(P * dx));
  }
  const double denom = std::max(out.v.empty() ? 0.0 : out.v.front(), 1e-30);
  for (size_t k = 0; k + 1 < out.v.size(); ++k)
    out.max_forward_diff =
        std::max(out.max_forward_diff, (out.v[k + 1] - out.v[k]) / denom);
  return out;
}

namespace {

// Runs fn(i) for i in [0, count) on `jobs` threads; fn must only write
// storage indexed by i, so the merged result is order-independent.
void parallel_for(int count, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, count));
  if (jobs == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (int w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace

VertexSweep vertex_sweep(const net::SystemMatrices& m, const VectorXd& u,
                         const VectorXd& xe, const VectorXd& halfwidth,
                         const SimOptions& opts, int jobs) {
  if (halfwidth.size() != m.n)
    throw SimError("half-width dimension mismatch");
  if (m.n > 24) throw SimError("vertex sweep capped at 24 states");
  const int count = 1 << m.n;
  std::vector<Outcome> out(count);
  SimOptions vopts = opts;
  vopts.record = false;
  parallel_for(count, jobs, [&](int mask) {
    VectorXd x0 = xe;
    for (int i = 0; i < m.n; ++i)
      x0[i] += (mask >> i) & 1 ? halfwidth[i] : -halfwidth[i];
    out[mask] = simulate(m, u, x0, xe, vopts).outcome;
  });
  VertexSweep sweep;
  sweep.total = count;
  for (Outcome o : out) {
    if (o == Outcome::converged) ++sweep.converged;
    // Severity order mirrors the enum: converged < diverged < undecided <
    // failed would be wrong -- rank explicitly.
    auto rank = [](Outcome v) {
      switch (v) {
        case Outcome::converged: return 0;
        case Outcome::undecided: return 1;
        case Outcome::diverged: return 2;
        case Outcome::failed: return 3;
      }
      return 3;
    };
    if (rank(o) > rank(sweep.worst)) sweep.worst = o;
  }
  return sweep;
}

RoaGrid roa_grid_2d(const net::SystemMatrices& m, const VectorXd& u,
                    const VectorXd& xe, const VectorXd& halfwidth,
                    const SimOptions& opts, int n1, int n2, double span,
                    int jobs) {
  if (m.n != 2 || m.nl != 1)
    throw SimError("the ROA map is defined for one-line, one-CPL networks");
  if (n1 < 2 || n2 < 2 || span <= 0) throw SimError("bad grid parameters");
  RoaGrid grid;
  grid.axis1 = VectorXd::LinSpaced(n1, xe[0] - span * halfwidth[0],
                                   xe[0] + span * halfwidth[0]);
  grid.axis2 = VectorXd::LinSpaced(n2, xe[1] - span * halfwidth[1],
                                   xe[1] + span * halfwidth[1]);
  grid.cls.assign(static_cast<size_t>(n1) * n2, Outcome::undecided);
  SimOptions gopts = opts;
  gopts.record = false;
  parallel_for(n1, jobs, [&](int i) {
    for (int j = 0; j < n2; ++j) {
      VectorXd x0(2);
      x0 << grid.axis1[i], grid.axis2[j];
      Outcome& cls = grid.cls[static_cast<size_t>(i) * n2 + j];
      if (x0[1] <= gopts.v_div) {
        cls = Outcome::diverged;  // at or below the floor before starting
        continue;
      }
      cls = simulate(m, u, x0, xe, gopts).outcome;
    }
  });
  auto conv = [&](int i, int j) {
    return grid.cls[static_cast<size_t>(i) * n2 + j] == Outcome::converged;
  };
  for (int i = 0; i < n1; ++i)
    for (int j = 0; j < n2; ++j) {
      if (i + 1 < n1 && conv(i, j) != conv(i + 1, j))
        grid.boundary.emplace_back(0.5 * (grid.axis1[i] + grid.axis1[i + 1]),
                                   grid.axis2[j]);
      if (j + 1 < n2 && conv(i, j) != conv(i, j + 1))
        grid.boundary.emplace_back(grid.axis1[i],
                                   0.5 * (grid.axis2[j] + grid.axis2[j + 1]));
    }
  return grid;
}

double borderline_design(const net::NetworkSpec& spec,
                         const net::SystemMatrices& m,
                         const VectorXd& halfwidth, double u_lo, double u_hi,
                         const SimOptions& opts, double tol_u) {
  if (m.ns != 1)
    throw SimError("borderline design is defined for single-source networks");
  if (!(u_lo < u_hi) || tol_u <= 0) throw SimError("bad bisection bracket");
  auto feasible = [&](double uval) {
    VectorXd u = VectorXd::Constant(1, uval);
    steady::OperatingPoint op;
    try {
      op = steady::power_flow(spec, m, u);
    } catch (const steady::SteadyStateError&) {
      return false;  // no equilibrium on the positive branch
    }
    // Vertices with non-positive load voltage cannot even start.
    VectorXd vfloor =
        m.B1.transpose() * op.xe - m.B1.cwiseAbs().transpose() * halfwidth;
    if ((vfloor.array() <= 0.0).any()) return false;
    auto sweep = vertex_sweep(m, u, op.xe, halfwidth, opts);
    return sweep.all_converged();
  };
  double lo = u_lo, hi = u_hi;
  if (!feasible(hi))
    throw SimError("no convergent setpoint at the top of the bracket");
  if (feasible(lo)) return lo;  // borderline is at or below the bracket
  while (hi - lo > tol_u) {
    const double mid = 0.5 * (lo + hi);
    (feasible(mid) ? hi : lo) = mid;
  }
  return hi;
}

double relative_difference(double u_synth, double u_border) {
  if (u_border <= 0) throw SimError("borderline input must be positive");
  return std::abs(u_synth - u_border) / u_border;
}

}  // namespace dcroa::sim
