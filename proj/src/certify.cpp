#include "dcroa/certify.hpp"

#include <chrono>
#include <cmath>

namespace dcroa::certify {

using conic::LmiBlock;
using conic::Problem;
using conic::Status;

namespace {

// vech layout for symmetric P: upper triangle scanned row-wise.
int vech_index(int i, int j, int n) {
  if (i > j) std::swap(i, j);
  return i * n - i * (i - 1) / 2 + (j - i);
}
int vech_size(int n) { return n * (n + 1) / 2; }

MatrixXd vech_to_matrix(const VectorXd& y, int n) {
  MatrixXd P(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) P(i, j) = P(j, i) = y[vech_index(i, j, n)];
  return P;
}

// Basis matrix S_ij (unit symmetric) mapped through the LMI: fills, for each
// vech variable, its coefficient matrices in the P-dependent blocks.
struct LmiLayout {
  int n, nl, nv;          // state dim, load dim, vech size
  int tau;                // variable index of tau
};

// Builds the Eq. 5b feasibility structure into `prob` (which must already
// have num_vars set and no blocks). Variables: [vech(P); extra...; tau at
// layout.tau]. Adds the -M block and the P >= 0 block.
void add_stability_blocks(Problem& prob, const SystemMatrices& m, double beta,
                          const VectorXd& h0, const LmiLayout& lay,
                          double p_logdet_weight) {
  const int n = lay.n, nl = lay.nl;
  const MatrixXd Dinv = m.Ddiag.cwiseInverse().asDiagonal();
  const MatrixXd DinvA = Dinv * m.A;
  const MatrixXd DinvB1 = Dinv * m.B1;
  const MatrixXd C1 = m.C1();

  // Both blocks are written in the solver's factored form: every coefficient
  // matrix of a vech(P) variable is a symmetrized outer product of two fixed
  // vectors, which lets the barrier evaluate gradients and Hessians through
  // small Gram matrices instead of dense congruences per variable.
  LmiBlock& pos = prob.add_block(n, "P");
  pos.F.clear();
  pos.logdet_weight = p_logdet_weight;
  pos.vecs = MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j)
      pos.terms.push_back({vech_index(i, j, n), i, j, i == j ? 0.5 : 1.0});

  // -M with M = [[PG + G^T P + P, P D^-1 B1 + (beta/2) C1^T [h0]],
  //              [..^T, -tau I]],  G = D^-1 A.
  // Column layout of the factor basis: e_x = [e_x; 0], w_x = [G^T e_x +
  // e_x / 2; B1^T D^-1 e_x], f_j = [0; e_j], g_j = [C1_j^T; 0]; then
  //   F_{vech(i,j)} = -sym(e_i w_j^T) - sym(e_j w_i^T)      (halved on diag)
  //   F_tau = sum_j [ -(beta/2) h0_j sym(g_j f_j^T) + sym(f_j f_j^T)/2 ].
  LmiBlock& lmi = prob.add_block(n + nl, "-M");
  lmi.F.clear();
  lmi.vecs = MatrixXd::Zero(n + nl, 2 * n + 2 * nl);
  const int wcol = n, fcol = 2 * n, gcol = 2 * n + nl;
  lmi.vecs.topLeftCorner(n, n).setIdentity();
  lmi.vecs.block(0, wcol, n, n) =
      DinvA.transpose() + 0.5 * MatrixXd::Identity(n, n);
  lmi.vecs.block(n, wcol, nl, n) = DinvB1.transpose();
  lmi.vecs.block(n, fcol, nl, nl).setIdentity();
  lmi.vecs.block(0, gcol, n, nl) = C1.transpose();
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      const int v = vech_index(i, j, n);
      lmi.terms.push_back({v, i, wcol + j, -1.0});
      if (i != j) lmi.terms.push_back({v, j, wcol + i, -1.0});
    }
  }
  for (int j = 0; j < nl; ++j) {
    lmi.terms.push_back({lay.tau, gcol + j, fcol + j, -0.5 * beta * h0[j]});
    lmi.terms.push_back({lay.tau, fcol + j, fcol + j, 0.5});
  }

  VectorXd tau_pos = VectorXd::Zero(prob.num_vars);
  tau_pos[lay.tau] = 1.0;
  prob.add_linear(tau_pos, 0.0, "tau");
}

}  // namespace

VectorXd ShiftedDynamics::h(const VectorXd& dx) const {
  const auto& m = *matrices;
  VectorXd v0 = m.C1() * xe;
  VectorXd v = v0 + m.C1() * dx;
  return (-m.cpl_power.array() / (v.array() * v0.array())).matrix();
}

VectorXd ShiftedDynamics::field(const VectorXd& dx) const {
  const auto& m = *matrices;
  VectorXd rhs = m.A * dx + m.B1 * (h(dx).asDiagonal() * (m.C1() * dx));
  return (rhs.array() / m.Ddiag.array()).matrix();
}

ShiftedDynamics shift_coordinates(const SystemMatrices& m, const VectorXd& xe) {
  if (((m.C1() * xe).array() <= 0.0).any())
    throw CertifyError("equilibrium load-bus voltages must be positive");
  return ShiftedDynamics{&m, xe};
}

conic::Problem assemble_stability_lmi(const SystemMatrices& m, double beta,
                                      const VectorXd& h0) {
  if (beta <= 0.0 || (h0.array() <= 0.0).any())
    throw CertifyError("beta and h0 must be positive");
  if (h0.size() != m.nl) throw CertifyError("h0 dimension mismatch");
  Problem prob;
  LmiLayout lay{m.n, m.nl, vech_size(m.n), vech_size(m.n)};
  prob.num_vars = lay.nv + 1;
  add_stability_blocks(prob, m, beta, h0, lay, 0.0);
  // The constraint set is a cone; pin the scale so phase I is well posed.
  VectorXd tr = VectorXd::Zero(prob.num_vars);
  for (int i = 0; i < m.n; ++i) tr[vech_index(i, i, m.n)] = -1.0;
  prob.add_linear(tr, static_cast<double>(m.n), "trace cap");
  return prob;
}

GevpResult gevp_bisection(const SystemMatrices& m, const VectorXd& h0,
                          double tol, double beta_cap) {
  auto feasible = [&](double beta, MatrixXd* P) {
    auto sol = conic::solve(assemble_stability_lmi(m, beta, h0));
    if (sol.status == Status::optimal && P) *P = vech_to_matrix(sol.y, m.n);
    return sol.status == Status::optimal;
  };
  GevpResult res;
  double lo = 0.0, hi = 0.0, probe = 1.0;
  MatrixXd P_lo;
  while (true) {
    if (probe > beta_cap) {
      if (lo == 0.0 && !feasible(beta_cap, &P_lo))
        throw CertifyError("stability LMI infeasible at every probed beta");
      res.beta = lo > 0.0 ? lo : beta_cap;
      res.P = P_lo;
      res.at_cap = true;
      return res;
    }
    if (feasible(probe, &P_lo)) {
      lo = probe;
      probe *= 2.0;
    } else {
      hi = probe;
      break;
    }
  }
  while (lo == 0.0) {
    probe /= 2.0;
    if (probe < 1e-9)
      throw CertifyError("stability LMI infeasible at every probed beta");
    if (feasible(probe, &P_lo)) lo = probe;
    else hi = probe;
  }
  while ((hi - lo) / lo > tol) {
    double mid = 0.5 * (lo + hi);
    MatrixXd P;
    if (feasible(mid, &P)) {
      lo = mid;
      P_lo = P;
    } else {
      hi = mid;
    }
  }
  res.beta = lo;
  res.P = P_lo;
  return res;
}

namespace {

struct CodesignSolve {
  bool feasible = false;
  SublevelSet set;
  double seconds = 0.0;
};

CodesignSolve solve_codesign(const SystemMatrices& m, const OperatingBox& box,
                             const VectorXd& h0, double beta,
                             const VectorXd* warm) {
  const int n = m.n;
  Problem prob;
  LmiLayout lay{n, m.nl, vech_size(n), vech_size(n) + n};
  prob.num_vars = lay.nv + n + 1;  // vech(P), gamma, tau
  add_stability_blocks(prob, m, beta, h0, lay, 1.0);

  LmiBlock& cover = prob.add_block(n, "diag(gamma) - P");
  cover.F.clear();
  cover.vecs = MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j)
      cover.terms.push_back({vech_index(i, j, n), i, j, i == j ? -0.5 : -1.0});
    cover.terms.push_back({lay.nv + i, i, i, 0.5});
  }
  VectorXd vertex = VectorXd::Zero(prob.num_vars);
  for (int i = 0; i < n; ++i)
    vertex[lay.nv + i] = -box.halfwidth[i] * box.halfwidth[i];
  prob.add_linear(vertex, 1.0, "vertex in ellipsoid");

  conic::Options opts;
  if (warm && warm->size() == prob.num_vars) opts.warm_start = *warm;
  auto t0 = std::chrono::steady_clock::now();
  auto sol = conic::solve(prob, opts);
  CodesignSolve out;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                    .count();
  if (sol.status != Status::optimal) return out;
  out.feasible = true;
  out.set.P = vech_to_matrix(sol.y.head(lay.nv), n);
  out.set.gamma = sol.y.segment(lay.nv, n);
  out.set.tau = sol.y[lay.tau];
  return out;
}

}  // namespace

CodesignResult codesign_linesearch(const SystemMatrices& m,
                                   const OperatingBox& box, const VectorXd& h0,
                                   const Schedule& schedule) {
  if ((box.halfwidth.array() <= 0.0).any())
    throw CertifyError("operating half-widths must be strictly positive");
  CodesignResult res;
  auto probe = [&](double beta) {
    auto s = solve_codesign(m, box, h0, beta, nullptr);
    ++res.lmi_solves;
    res.max_solve_seconds = std::max(res.max_solve_seconds, s.seconds);
    return s;
  };

  auto first = probe(schedule.beta0);
  if (schedule.fixed) {
    if (!first.feasible)
      throw CertifyError("co-design infeasible at the prescribed beta");
    res.beta = schedule.beta0;
    res.set = std::move(first.set);
    return res;
  }

  double lo = 0.0, hi = 0.0;
  if (first.feasible) {
    lo = schedule.beta0;
    res.set = std::move(first.set);
    double beta = schedule.beta0;
    while (true) {
      beta *= schedule.factor;
      if (beta > schedule.cap) {
        res.beta = lo;
        return res;  // feasible up to the cap
      }
      auto s = probe(beta);
      if (!s.feasible) {
        hi = beta;
        break;
      }
      lo = beta;
      res.set = std::move(s.set);
    }
  } else {
    // Probe downward; the largest feasible beta may be below the start.
    double beta = schedule.beta0;
    hi = beta;
    while (lo == 0.0) {
      beta /= schedule.factor;
      if (beta < 1e-9)
        throw CertifyError("co-design infeasible at all schedule points");
      auto s = probe(beta);
      if (s.feasible) {
        lo = beta;
        res.set = std::move(s.set);
      } else {
        hi = beta;
      }
    }
  }
  while ((hi - lo) / lo > schedule.bisect_rel) {
    double mid = 0.5 * (lo + hi);
    auto s = probe(mid);
    if (s.feasible) {
      lo = mid;
      res.set = std::move(s.set);
    } else {
      hi = mid;
    }
  }
  res.beta = lo;
  return res;
}

double set_covering(const MatrixXd& P, const OperatingBox& box) {
  const int n = static_cast<int>(P.rows());
  if (n > 20)
    throw CertifyError(
        "vertex enumeration capped at n = 20; use the diagonal-gamma path");
  double alpha = 0.0;
  VectorXd v = box.halfwidth;
  const std::uint64_t count = std::uint64_t{1} << n;
  for (std::uint64_t mask = 0; mask < count; ++mask) {
    for (int i = 0; i < n; ++i)
      v[i] = (mask >> i) & 1 ? box.halfwidth[i] : -box.halfwidth[i];
    alpha = std::max(alpha, v.dot(P * v));
  }
  return alpha;
}

VectorXd support_inf(const MatrixXd& P, const MatrixXd& C1) {
  Eigen::LLT<MatrixXd> llt(P);
  if (llt.info() != Eigen::Success)
    throw CertifyError("P must be positive definite");
  VectorXd out(C1.rows());
  for (int k = 0; k < C1.rows(); ++k) {
    VectorXd c = C1.row(k).transpose();
    out[k] = -std::sqrt(c.dot(llt.solve(c)));
  }
  return out;
}

VectorXd voltage_floor(const VectorXd& dx_inf, const VectorXd& pl, double beta,
                       const VectorXd& h0) {
  if ((pl.array() > 0.0).any())
    throw CertifyError("load powers must be non-positive");
  if (beta <= 0.0 || (h0.array() <= 0.0).any())
    throw CertifyError("beta * h0 must be positive");
  Eigen::ArrayXd disc =
      dx_inf.array() * dx_inf.array() - 4.0 * pl.array() / (beta * h0.array());
  return (0.5 * (-dx_inf.array() + disc.sqrt())).matrix();
}

VectorXd sup_h(const VectorXd& ve, const VectorXd& dx_inf, const VectorXd& pl) {
  Eigen::ArrayXd shifted = ve.array() + dx_inf.array();
  if ((shifted <= 0.0).any())
    throw CertifyError(
        "equilibrium too close to ellipsoid boundary: v + dx_inf must be > 0");
  return (-pl.array() / (shifted * ve.array())).matrix();
}

bool certify_point(const Certificate& cert, const SystemMatrices& m,
                   const VectorXd& xe) {
  VectorXd v = m.C1() * xe;
  return (v.array() >= cert.floor.array() - 1e-12).all();
}

VectorXd default_h0(const net::NetworkSpec& spec) {
  const double nominal = spec.normalized ? 1.0 : spec.base_voltage;
  double v_min = spec.bounds.state_voltage.lo - spec.halfwidth_voltage;
  v_min = std::max(v_min, 0.1 * nominal);
  VectorXd h0(spec.n_loads());
  int j = 0;
  for (const auto& b : spec.buses)
    if (b.has_cpl) h0[j++] = -b.cpl_power / (v_min * v_min);
  return h0;
}

Certificate make_certificate(const SystemMatrices& m, const OperatingBox& box,
                             const VectorXd& pl, const VectorXd& h0,
                             const Schedule& schedule,
                             const std::string& fingerprint,
                             CodesignResult* step1) {
  Certificate cert;
  auto res = codesign_linesearch(m, box, h0, schedule);
  if (step1) *step1 = res;
  cert.lpv = {h0, res.beta};
  cert.sublevel = res.set;
  cert.box = box;
  cert.dx_inf = support_inf(res.set.P, m.C1());
  cert.floor = voltage_floor(cert.dx_inf, pl, res.beta, h0);
  cert.network_fingerprint = fingerprint;
  return cert;
}

namespace {

nlohmann::json vec_json(const VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

VectorXd json_vec(const nlohmann::json& j) {
  VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[static_cast<int>(i)] = j.at(i);
  return v;
}

}  // namespace

nlohmann::json to_json(const Certificate& cert) {
  nlohmann::json doc;
  const int n = static_cast<int>(cert.sublevel.P.rows());
  std::vector<double> p(cert.sublevel.P.data(), cert.sublevel.P.data() + n * n);
  doc["P"] = {{"dim", n}, {"rows", p}};  // row-major == col-major: symmetric
  doc["beta"] = cert.lpv.beta;
  doc["h0"] = vec_json(cert.lpv.h0);
  doc["gamma"] = vec_json(cert.sublevel.gamma);
  doc["tau"] = cert.sublevel.tau;
  doc["box_halfwidth"] = vec_json(cert.box.halfwidth);
  doc["dx_inf"] = vec_json(cert.dx_inf);
  doc["floor"] = vec_json(cert.floor);
  doc["network"] = cert.network_fingerprint;
  return doc;
}

Certificate certificate_from_json(const nlohmann::json& doc) {
  Certificate cert;
  const int n = doc.at("P").at("dim");
  VectorXd flat = json_vec(doc.at("P").at("rows"));
  cert.sublevel.P = Eigen::Map<MatrixXd>(flat.data(), n, n);
  cert.lpv.beta = doc.at("beta");
  cert.lpv.h0 = json_vec(doc.at("h0"));
  cert.sublevel.gamma = json_vec(doc.at("gamma"));
  cert.sublevel.tau = doc.at("tau");
  cert.box.halfwidth = json_vec(doc.at("box_halfwidth"));
  cert.dx_inf = json_vec(doc.at("dx_inf"));
  cert.floor = json_vec(doc.at("floor"));
  cert.network_fingerprint = doc.value("network", std::string());
  return cert;
}

}  // namespace dcroa::certify
