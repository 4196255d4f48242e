#include "dcroa/conic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>

namespace dcroa::conic {

LmiBlock& Problem::add_block(int dim, std::string label) {
  LmiBlock blk;
  blk.F0 = MatrixXd::Zero(dim, dim);
  blk.F.assign(num_vars, MatrixXd::Zero(dim, dim));
  blk.label = std::move(label);
  blocks.push_back(std::move(blk));
  return blocks.back();
}

void Problem::add_linear(const VectorXd& a, double d, std::string label) {
  LmiBlock& blk = add_block(1, std::move(label));
  blk.F0(0, 0) = d;
  for (int i = 0; i < num_vars; ++i) blk.F[i](0, 0) = a[i];
}

void Problem::add_soc(const MatrixXd& G, const VectorXd& g, const VectorXd& a,
                      double d, std::string label) {
  // ||Gy+g|| <= a^T y + d  <=>  [[t, u^T],[u, t I]] >= 0 with t = a^T y + d,
  // u = Gy + g.
  const int r = static_cast<int>(G.rows());
  LmiBlock& blk = add_block(r + 1, std::move(label));
  blk.F0(0, 0) = d;
  blk.F0.col(0).tail(r) = g;
  blk.F0.row(0).tail(r) = g.transpose();
  blk.F0.bottomRightCorner(r, r).diagonal().setConstant(d);
  for (int i = 0; i < num_vars; ++i) {
    blk.F[i](0, 0) = a[i];
    blk.F[i].col(0).tail(r) = G.col(i);
    blk.F[i].row(0).tail(r) = G.col(i).transpose();
    blk.F[i].bottomRightCorner(r, r).diagonal().setConstant(a[i]);
  }
}

void Problem::add_equality(const VectorXd& a, double rhs) {
  Aeq.conservativeResize(Aeq.rows() + 1, num_vars);
  Aeq.row(Aeq.rows() - 1) = a.transpose();
  beq.conservativeResize(beq.size() + 1);
  beq[beq.size() - 1] = rhs;
}

namespace {

// Problem restated in reduced coordinates z, y = y0 + N z, with equalities
// removed. When the problem has no equalities this is the identity map.
struct Reduced {
  VectorXd y0;
  MatrixXd N;           // num_vars x m
  int m = 0;            // reduced dimension
  VectorXd b;           // reduced linear objective
  std::deque<LmiBlock> blocks;
  bool inconsistent = false;
};

MatrixXd block_value(const LmiBlock& blk, const VectorXd& z) {
  MatrixXd F = blk.F0;
  if (blk.factored()) {
    const int nv = static_cast<int>(blk.vecs.cols());
    MatrixXd C = MatrixXd::Zero(nv, nv);
    for (const auto& t : blk.terms) {
      C(t.p, t.q) += t.coeff * z[t.var];
      C(t.q, t.p) += t.coeff * z[t.var];
    }
    F.noalias() += blk.vecs * C * blk.vecs.transpose();
  } else {
    for (int j = 0; j < static_cast<int>(blk.F.size()); ++j)
      if (z[j] != 0.0) F += z[j] * blk.F[j];
  }
  if (blk.shift_var >= 0) F.diagonal().array() -= z[blk.shift_var];
  return F;
}

// Dense variable matrices of a factored block, for paths that need them
// (equality elimination).
std::vector<MatrixXd> materialize(const LmiBlock& blk, int num_vars) {
  if (!blk.factored()) return blk.F;
  const int d = static_cast<int>(blk.F0.rows());
  std::vector<MatrixXd> F(num_vars, MatrixXd::Zero(d, d));
  for (const auto& t : blk.terms) {
    const auto vp = blk.vecs.col(t.p);
    const auto vq = blk.vecs.col(t.q);
    F[t.var].noalias() += t.coeff * (vp * vq.transpose());
    F[t.var].noalias() += t.coeff * (vq * vp.transpose());
  }
  return F;
}

Reduced reduce(const Problem& prob) {
  Reduced red;
  const int n = prob.num_vars;
  if (prob.Aeq.rows() == 0) {
    red.y0 = VectorXd::Zero(n);
    red.N = MatrixXd::Identity(n, n);
    red.m = n;
    red.b = prob.b.size() ? prob.b : VectorXd::Zero(n);
    red.blocks = prob.blocks;  // identity map: keep factored forms intact
    return red;
  }
  {
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(prob.Aeq);
    red.y0 = cod.solve(prob.beq);
    if ((prob.Aeq * red.y0 - prob.beq).lpNorm<Eigen::Infinity>() >
        1e-9 * (1.0 + prob.beq.lpNorm<Eigen::Infinity>())) {
      red.inconsistent = true;
      return red;
    }
    Eigen::FullPivLU<MatrixXd> lu(prob.Aeq);
    red.N = lu.kernel();
    if (red.N.cols() == 0) red.N = MatrixXd::Zero(n, 0);
  }
  red.m = static_cast<int>(red.N.cols());
  red.b = prob.b.size() ? (red.N.transpose() * prob.b).eval()
                        : VectorXd::Zero(red.m);
  for (const auto& blk : prob.blocks) {
    LmiBlock rb;
    rb.logdet_weight = blk.logdet_weight;
    rb.label = blk.label;
    const std::vector<MatrixXd> Fdense = materialize(blk, n);
    rb.F0 = blk.F0;
    for (int i = 0; i < n; ++i)
      if (red.y0[i] != 0.0) rb.F0 += red.y0[i] * Fdense[i];
    rb.F.reserve(red.m);
    for (int j = 0; j < red.m; ++j) {
      MatrixXd Fj = MatrixXd::Zero(blk.F0.rows(), blk.F0.cols());
      for (int i = 0; i < n; ++i)
        if (red.N(i, j) != 0.0) Fj += red.N(i, j) * Fdense[i];
      rb.F.push_back(std::move(Fj));
    }
    red.blocks.push_back(std::move(rb));
  }
  return red;
}

double min_eig(const std::deque<LmiBlock>& blocks, const VectorXd& z) {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& blk : blocks) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(block_value(blk, z),
                                               Eigen::EigenvaluesOnly);
    lo = std::min(lo, es.eigenvalues().minCoeff());
  }
  return lo;
}

// Barrier-phase machinery shared by phases I and II. Minimizes
//   phi(z) = -c^T z - sum_k w_k logdet F_k(z)
// (w_k > 0) by damped Newton from a strictly feasible z.
struct Barrier {
  const std::deque<LmiBlock>* blocks;
  VectorXd c;
  VectorXd w;  // per-block barrier/objective weight

  // Returns false if z is not strictly feasible.
  bool eval(const VectorXd& z, double* phi, VectorXd* grad,
            MatrixXd* hess) const {
    const int m = static_cast<int>(z.size());
    double val = -c.dot(z);
    if (grad) *grad = -c;
    if (hess) hess->setZero(m, m);
    for (size_t k = 0; k < blocks->size(); ++k) {
      const auto& blk = (*blocks)[k];
      MatrixXd F = block_value(blk, z);
      Eigen::LLT<MatrixXd> llt(F);
      if (llt.info() != Eigen::Success) return false;
      const double wk = w[static_cast<int>(k)];
      double logdet = 0.0;
      for (int i = 0; i < F.rows(); ++i)
        logdet += std::log(llt.matrixL()(i, i));
      val -= 2.0 * wk * logdet;
      if (!grad) continue;
      const int kdim = static_cast<int>(F.rows());
      if (blk.factored()) {
        // With S = F^-1 and F_i a sum of rank-two symmetrized outer products
        // of columns of `vecs`, every trace reduces to entries of the Gram
        // matrices G1 = vecs^T S vecs and (for the shift variable) G2 =
        // vecs^T S^2 vecs:
        //   grad_i = -w tr(S F_i)       = -w sum 2 c G1(p, q)
        //   H_ij   =  w tr(S F_i S F_j) = w sum 2 c c' (G1(pp')G1(qq')
        //                                             + G1(pq')G1(qp')).
        const MatrixXd X = llt.matrixL().solve(blk.vecs);
        const MatrixXd G1 = X.transpose() * X;
        for (const auto& t : blk.terms)
          (*grad)[t.var] -= wk * 2.0 * t.coeff * G1(t.p, t.q);
        const int nt = static_cast<int>(blk.terms.size());
        for (int s = 0; s < nt; ++s) {
          const auto& ts = blk.terms[s];
          for (int u = 0; u < nt; ++u) {
            const auto& tu = blk.terms[u];
            if (ts.var < tu.var) continue;  // fill the lower triangle only
            (*hess)(ts.var, tu.var) +=
                wk * 2.0 * ts.coeff * tu.coeff *
                (G1(ts.p, tu.p) * G1(ts.q, tu.q) +
                 G1(ts.p, tu.q) * G1(ts.q, tu.p));
          }
        }
        if (blk.shift_var >= 0) {
          // Shift contributes -I, i.e. tr(S) to the gradient and S^2 terms
          // to the Hessian.
          const MatrixXd Linv =
              llt.matrixL().solve(MatrixXd::Identity(kdim, kdim));
          const MatrixXd S = Linv.transpose() * Linv;
          (*grad)[blk.shift_var] += wk * S.trace();
          (*hess)(blk.shift_var, blk.shift_var) += wk * S.squaredNorm();
          const MatrixXd Y = S * blk.vecs;
          const MatrixXd G2 = Y.transpose() * Y;
          for (const auto& t : blk.terms) {
            // shift_var is appended last, so this stays in the lower triangle
            (*hess)(blk.shift_var, t.var) -=
                wk * 2.0 * t.coeff * G2(t.p, t.q);
          }
        }
        continue;
      }
      // V_i = L^-1 F_i L^-T; grad_i = -w tr(S F_i) = -w tr(V_i);
      // H_ij = w tr(S F_i S F_j) = w <V_i, V_j>.
      MatrixXd G(m, kdim * kdim);
      for (int i = 0; i < m; ++i) {
        MatrixXd V = llt.matrixL().solve(blk.F[i]);
        MatrixXd Vt = V.transpose();
        V = llt.matrixL().solve(Vt).transpose();
        (*grad)[i] -= wk * V.trace();
        G.row(i) = Eigen::Map<const VectorXd>(V.data(), kdim * kdim);
      }
      hess->selfadjointView<Eigen::Lower>().rankUpdate(G, wk);
    }
    if (hess)
      hess->triangularView<Eigen::StrictlyUpper>() =
          hess->transpose().triangularView<Eigen::StrictlyUpper>();
    if (phi) *phi = val;
    return true;
  }

  // One centering run; returns Newton iterations used, or -1 on failure.
  int center(VectorXd& z, int budget, double decrement_tol = 1e-9) const {
    const bool trace = std::getenv("DCROA_CONIC_TRACE") != nullptr;
    double phi;
    VectorXd grad;
    MatrixXd hess;
    for (int it = 0; it < budget; ++it) {
      if (!eval(z, &phi, &grad, &hess)) return -1;
      Eigen::LDLT<MatrixXd> ldlt(hess);
      VectorXd dz = ldlt.solve(-grad);
      double lambda2 = -grad.dot(dz);
      if (!(lambda2 > 0)) {
        // Hessian lost definiteness numerically; regularize.
        hess.diagonal().array() +=
            1e-12 * (1.0 + hess.diagonal().cwiseAbs().maxCoeff());
        dz = hess.ldlt().solve(-grad);
        lambda2 = -grad.dot(dz);
        if (!(lambda2 > 0)) return it;
      }
      if (trace)
        std::fprintf(stderr, "  it=%d phi=%.6g lambda2=%.3g\n", it, phi,
                     lambda2);
      // Scale-relative floor: once the Newton decrement falls below the
      // round-off level of phi itself no further progress is representable
      // in double precision, so treat the point as centered.
      if (lambda2 / 2.0 < decrement_tol + 1e-14 * std::abs(phi)) return it;
      // Backtrack into the domain, then Armijo with a plain-decrease
      // fallback: near-singular Hessians give poor directions whose
      // predicted decrease is wildly optimistic.
      double alpha = 1.0;
      double phi_new;
      bool ok = false;
      for (int bt = 0; bt < 80 && !ok; ++bt) {
        VectorXd zn = z + alpha * dz;
        if (eval(zn, &phi_new, nullptr, nullptr) &&
            (phi_new <= phi - 0.01 * alpha * lambda2 ||
             (alpha < 1e-8 && phi_new < phi))) {
          z = zn;
          ok = true;
        }
        alpha *= 0.5;
      }
      if (!ok) {
        // Retry once along a regularized direction before giving up.
        MatrixXd hreg = hess;
        hreg.diagonal().array() +=
            1e-6 * (1.0 + hess.diagonal().cwiseAbs().maxCoeff());
        dz = hreg.ldlt().solve(-grad);
        alpha = 1.0;
        for (int bt = 0; bt < 80 && !ok; ++bt) {
          VectorXd zn = z + alpha * dz;
          if (eval(zn, &phi_new, nullptr, nullptr) && phi_new < phi) {
            z = zn;
            ok = true;
          }
          alpha *= 0.5;
        }
      }
      if (!ok) return it;  // stalled; caller decides
    }
    return budget;
  }
};

double nu_total(const std::deque<LmiBlock>& blocks) {
  double nu = 0.0;
  for (const auto& blk : blocks) nu += static_cast<double>(blk.F0.rows());
  return nu;
}

// Phase I: maximize s subject to F_k(z) - s I >= 0 and s <= s_cap, starting
// from an arbitrary z. Returns the best (z, s) found.
bool phase1(const Reduced& red, VectorXd& z, const Options& opts,
            int* iters_used) {
  const int m = red.m;
  const double s_cap = 1.0;
  // Extended problem in (z, s).
  std::deque<LmiBlock> blocks;
  for (const auto& blk : red.blocks) {
    LmiBlock eb;
    eb.F0 = blk.F0;
    if (blk.factored()) {
      eb.vecs = blk.vecs;
      eb.terms = blk.terms;
      eb.shift_var = m;  // subtract s I without materializing anything
    } else {
      eb.F = blk.F;
      eb.F.push_back(-MatrixXd::Identity(blk.F0.rows(), blk.F0.cols()));
    }
    blocks.push_back(std::move(eb));
  }
  {
    LmiBlock cap;  // s_cap - s >= 0
    cap.F0 = MatrixXd::Constant(1, 1, s_cap);
    cap.vecs = MatrixXd::Identity(1, 1);
    cap.terms.push_back({m, 0, 0, -0.5});
    blocks.push_back(std::move(cap));
  }
  // Keep the search bounded: without a box, maximizing s can push z to
  // infinity along directions where the blocks grow (no analytic center).
  const double R = 1e6 * (1.0 + z.lpNorm<Eigen::Infinity>());
  for (int i = 0; i < m; ++i) {
    LmiBlock box;  // diag(R - z_i, R + z_i) >= 0
    box.F0 = R * MatrixXd::Identity(2, 2);
    box.vecs = MatrixXd::Identity(2, 2);
    box.terms.push_back({i, 0, 0, -0.5});
    box.terms.push_back({i, 1, 1, 0.5});
    blocks.push_back(std::move(box));
  }
  VectorXd zs(m + 1);
  zs.head(m) = z;
  zs[m] = std::min(min_eig(red.blocks, z), s_cap) - 1.0;

  Barrier bar;
  bar.blocks = &blocks;
  bar.c = VectorXd::Zero(m + 1);
  bar.w = VectorXd::Ones(static_cast<int>(blocks.size()));
  const double nu = nu_total(blocks);
  double t = 1.0;
  int total = 0;
  while (true) {
    bar.c[m] = t;
    int used = bar.center(zs, opts.max_newton - total);
    if (used < 0) return false;
    total += used;
    if (iters_used) *iters_used = total;
    // Early exit once comfortably interior.
    if (zs[m] > std::max(1e-3 * s_cap, 100.0 * opts.feas_margin)) break;
    if (nu / t < 0.1 * opts.feas_margin) break;  // converged; s* at most s+nu/t
    if (total >= opts.max_newton) break;
    t *= opts.mu;
  }
  z = zs.head(m);
  return zs[m] > opts.feas_margin;
}

}  // namespace

Residuals check(const Problem& prob, const VectorXd& y) {
  Residuals r{std::numeric_limits<double>::infinity(), 0.0};
  for (const auto& blk : prob.blocks) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(block_value(blk, y),
                                               Eigen::EigenvaluesOnly);
    r.min_eigenvalue = std::min(r.min_eigenvalue, es.eigenvalues().minCoeff());
  }
  if (prob.Aeq.rows() > 0)
    r.equality_residual =
        (prob.Aeq * y - prob.beq).lpNorm<Eigen::Infinity>();
  return r;
}

Solution solve(const Problem& prob, const Options& opts) {
  Solution sol;
  Reduced red = reduce(prob);
  if (red.inconsistent) {
    sol.status = Status::infeasible;
    sol.message = "inconsistent equality constraints";
    return sol;
  }

  VectorXd z = VectorXd::Zero(red.m);
  bool feasible = false;
  if (opts.warm_start.size() == prob.num_vars) {
    // Project the warm start onto the equality manifold and accept it if it
    // is strictly interior.
    VectorXd zw =
        red.N.transpose() * (opts.warm_start - red.y0);  // N has orthonormal
    // columns only when there are no equalities; use least squares generally.
    if (prob.Aeq.rows() > 0)
      zw = red.N.colPivHouseholderQr().solve(opts.warm_start - red.y0);
    if (min_eig(red.blocks, zw) > opts.feas_margin) {
      z = zw;
      feasible = true;
    }
  }
  int iters = 0;
  if (!feasible) {
    if (min_eig(red.blocks, z) > opts.feas_margin) {
      feasible = true;
    } else {
      feasible = phase1(red, z, opts, &iters);
    }
  }
  sol.newton_iterations = iters;
  if (!feasible) {
    sol.status = Status::infeasible;
    sol.y = red.y0 + red.N * z;
    auto r = check(prob, sol.y);
    sol.min_eigenvalue = r.min_eigenvalue;
    sol.equality_residual = r.equality_residual;
    sol.message = "phase-I margin below threshold";
    return sol;
  }

  // Phase II central path. Objective blocks get weight t*w+1, plain
  // constraint blocks weight 1.
  Barrier bar;
  bar.blocks = &red.blocks;
  const int K = static_cast<int>(red.blocks.size());
  bar.w = VectorXd::Ones(K);
  const double nu = nu_total(red.blocks);
  const bool pure_feasibility =
      red.b.isZero(0) && std::all_of(red.blocks.begin(), red.blocks.end(),
                                     [](const LmiBlock& b) {
                                       return b.logdet_weight == 0.0;
                                     });
  if (!pure_feasibility) {
    double t = opts.t0;
    while (true) {
      bar.c = t * red.b;
      for (int k = 0; k < K; ++k)
        bar.w[k] = 1.0 + t * red.blocks[k].logdet_weight;
      int used = bar.center(z, opts.max_newton - sol.newton_iterations);
      if (used < 0) {
        sol.status = Status::numerical_error;
        sol.message = "lost feasibility during centering";
        break;
      }
      sol.newton_iterations += used;
      if (nu / t < opts.tol) {
        sol.status = Status::optimal;
        break;
      }
      if (sol.newton_iterations >= opts.max_newton) {
        sol.status = Status::max_iterations;
        sol.message = "Newton budget exhausted";
        break;
      }
      t *= opts.mu;
    }
  } else {
    // Nothing to optimize; center once for a well-conditioned interior point.
    bar.c = VectorXd::Zero(red.m);
    bar.center(z, std::min(100, opts.max_newton));
    sol.status = Status::optimal;
  }

  sol.y = red.y0 + red.N * z;
  auto r = check(prob, sol.y);
  sol.min_eigenvalue = r.min_eigenvalue;
  sol.equality_residual = r.equality_residual;
  sol.objective = prob.b.size() ? prob.b.dot(sol.y) : 0.0;
  for (const auto& blk : prob.blocks) {
    if (blk.logdet_weight == 0.0) continue;
    MatrixXd F = block_value(blk, sol.y);
    Eigen::LLT<MatrixXd> llt(F);
    if (llt.info() != Eigen::Success) continue;
    double logdet = 0.0;
    for (int i = 0; i < F.rows(); ++i)
      logdet += std::log(llt.matrixL()(i, i));
    sol.objective += 2.0 * blk.logdet_weight * logdet;
  }
  return sol;
}

}  // namespace dcroa::conic
