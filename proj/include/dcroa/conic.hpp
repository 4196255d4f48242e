#pragma once

// Small interior-point solver for linear matrix inequality problems of the
// form
//
//   maximize  b^T y + sum_k w_k logdet F_k(y)
//   s.t.      F_k(y) = F0_k + sum_i y_i Fi_k  >= 0        (k = 1..K)
//             Aeq y = beq,
//
// which covers the generalized eigenvalue, covering-ellipsoid and
// branch-flow problems used elsewhere. Second-order cone constraints are
// expressed as arrow-structured LMI blocks via add_soc(). The solver is a
// logarithmic-barrier path-following method: equalities are eliminated
// through a nullspace basis, a phase-I problem produces a strictly feasible
// start, and phase II follows the central path with damped Newton steps.

#include <Eigen/Dense>

#include <deque>
#include <string>
#include <vector>

namespace dcroa::conic {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct LmiBlock {
  MatrixXd F0;             // k x k
  std::vector<MatrixXd> F; // one k x k symmetric matrix per variable

  // Optional factored coefficient form. When `terms` is non-empty, F may be
  // left empty and the variable matrices are
  //   F_i = sum over terms with var == i of
  //         coeff * (vecs.col(p) vecs.col(q)^T + vecs.col(q) vecs.col(p)^T).
  // Barrier gradients and Hessians then cost O(#terms^2) via small Gram
  // matrices instead of O(vars * k^2) dense congruences, which is the
  // difference between seconds and minutes for the certification LMIs.
  struct Term {
    int var, p, q;
    double coeff;
  };
  MatrixXd vecs;  // k x nvec
  std::vector<Term> terms;
  int shift_var = -1;  // internal: extra variable with coefficient -I

  bool factored() const { return !terms.empty(); }

  double logdet_weight = 0.0;  // contribution of logdet F(y) to the objective
  std::string label;           // diagnostics only
};

struct Problem {
  int num_vars = 0;
  VectorXd b;      // linear objective, maximized; empty means zero
  std::deque<LmiBlock> blocks;  // deque: references from add_block stay valid
  MatrixXd Aeq;    // may have zero rows
  VectorXd beq;

  LmiBlock& add_block(int dim, std::string label = {});
  // a^T y + d >= 0
  void add_linear(const VectorXd& a, double d, std::string label = {});
  // || G y + g ||_2 <= a^T y + d
  void add_soc(const MatrixXd& G, const VectorXd& g, const VectorXd& a,
               double d, std::string label = {});
  void add_equality(const VectorXd& a, double rhs);
};

enum class Status { optimal, infeasible, max_iterations, numerical_error };

struct Options {
  double tol = 1e-8;          // duality-gap style stopping threshold
  double feas_margin = 1e-9;  // phase-I margin below which we declare infeasible
  double mu = 10.0;           // barrier parameter growth
  double t0 = 1.0;            // initial barrier parameter
  int max_newton = 4000;      // total Newton iteration budget
  VectorXd warm_start;        // used when strictly feasible, else ignored
};

struct Solution {
  Status status = Status::numerical_error;
  VectorXd y;
  double objective = 0.0;     // b^T y + sum w_k logdet F_k(y)
  double min_eigenvalue = 0.0;     // over all blocks at y
  double equality_residual = 0.0;  // ||Aeq y - beq||_inf
  int newton_iterations = 0;
  std::string message;
};

Solution solve(const Problem& prob, const Options& opts = {});

// Independent feasibility audit: smallest block eigenvalue and equality
// residual at y, computed directly from the problem data.
struct Residuals {
  double min_eigenvalue;
  double equality_residual;
};
Residuals check(const Problem& prob, const VectorXd& y);

}  // namespace dcroa::conic
