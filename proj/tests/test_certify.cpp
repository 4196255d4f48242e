#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dcroa/certify.hpp"
#include "dcroa/network.hpp"

#include <cmath>
#include <random>

using namespace dcroa;
using certify::OperatingBox;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// One-bus benchmark: R = 0.5 ohm, L = 1 mH, C = 0.5 mF, 300 W CPL.
net::NetworkSpec onebus() {
  nlohmann::json doc = {
      {"name", "onebus"},
      {"buses",
       {{{"id", "load"}, {"capacitance", 0.5e-3}, {"cpl_power", -300.0}}}},
      {"sources", {{{"id", "src"}}}},
      {"lines",
       {{{"from", "src"},
         {"to", "load"},
         {"resistance", 0.5},
         {"inductance", 1e-3}}}},
      {"base", {{"voltage", 60.0}, {"power", 300.0}}},
      {"bounds",
       {{"setpoint", {0.0, 1000.0}},
        {"generation", {0.0, 1e6}},
        {"state_voltage", {40.0, 1000.0}},
        {"state_current", {-1000.0, 1000.0}}}},
      {"operating_halfwidth", {{"current", 20.0}, {"voltage", 20.0}}}};
  return net::parse_network(doc);
}

// Hurwitz threshold of the one-bus LPV matrix by eigenvalue sampling.
double hurwitz_threshold_oracle(const net::SystemMatrices& m) {
  double lo = 0.0, hi = 10.0;
  auto stable = [&](double h) {
    MatrixXd Ah = m.A + h * m.B1 * m.C1();
    MatrixXd Ahat = m.Ddiag.cwiseInverse().asDiagonal() * Ah;
    return Eigen::EigenSolver<MatrixXd>(Ahat)
               .eigenvalues()
               .real()
               .maxCoeff() < 0.0;
  };
  REQUIRE(stable(lo));
  REQUIRE(!stable(hi));
  for (int it = 0; it < 60; ++it) {
    double mid = 0.5 * (lo + hi);
    (stable(mid) ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace

TEST_CASE("shifted dynamics reproduce the h definition") {
  auto m = net::build_dynamics(onebus());
  VectorXd xe(2);
  xe << 6.0, 60.0;  // current, load voltage
  auto shifted = certify::shift_coordinates(m, xe);
  VectorXd dx = VectorXd::Zero(2);
  dx[1] = -10.0;
  CHECK(shifted.h(dx)[0] == doctest::Approx(300.0 / (50.0 * 60.0)));
  // At dx = 0, h = -p/(v^2) and the residual field vanishes at equilibrium.
  CHECK(shifted.h(VectorXd::Zero(2))[0] ==
        doctest::Approx(300.0 / 3600.0));
}

TEST_CASE("shifted field equals the full field shifted by an equilibrium") {
  auto m = net::build_dynamics(onebus());
  // Equilibrium for u = 64.8 V: v = (u + sqrt(u^2 + 4 R p)) / 2.
  const double u = 64.8, R = 0.5, p = -300.0;
  const double v = 0.5 * (u + std::sqrt(u * u + 4 * R * p));
  VectorXd xe(2);
  xe << -p / v, v;  // line current = load power / voltage
  VectorXd uu(1);
  uu << u;
  CHECK(m.field(xe, uu).lpNorm<Eigen::Infinity>() < 1e-10);
  auto shifted = certify::shift_coordinates(m, xe);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> d(-10.0, 10.0);
  for (int trial = 0; trial < 50; ++trial) {
    VectorXd dx(2);
    dx << d(rng), d(rng);
    VectorXd lhs = shifted.field(dx);
    VectorXd rhs = m.field(xe + dx, uu);
    CHECK((lhs - rhs).lpNorm<Eigen::Infinity>() < 1e-12 * (1 + rhs.norm()));
  }
}

TEST_CASE("stability LMI block dimensions") {
  auto m = net::build_dynamics(onebus());
  VectorXd h0 = VectorXd::Ones(1);
  auto prob = certify::assemble_stability_lmi(m, 0.1, h0);
  REQUIRE(prob.blocks.size() >= 2);
  CHECK(prob.blocks[0].F0.rows() == m.n);
  CHECK(prob.blocks[1].F0.rows() == m.n + m.nl);
}

TEST_CASE("GEVP bisection matches the Hurwitz grid oracle") {
  auto m = net::build_dynamics(onebus());
  const double h_star = hurwitz_threshold_oracle(m);
  CHECK(h_star == doctest::Approx(0.25).epsilon(1e-6));  // min(RC/L, 1/R)
  VectorXd h0 = VectorXd::Ones(1);
  auto res = certify::gevp_bisection(m, h0, 1e-3);
  CHECK(res.beta == doctest::Approx(h_star).epsilon(0.02));
  // Lemma 1 shadow at the certified beta: random h in [0, beta*h0].
  MatrixXd Phat = res.P * m.Ddiag.cwiseInverse().asDiagonal();
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> d(0.0, res.beta);
  for (int trial = 0; trial < 100; ++trial) {
    MatrixXd Ah = m.A + d(rng) * m.B1 * m.C1();
    MatrixXd Q = Phat * Ah + Ah.transpose() * Phat.transpose() + res.P;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(Q, Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().maxCoeff() <= 1e-7);
  }
}

TEST_CASE("GEVP monotonicity and the no-CPL cap") {
  auto spec = onebus();
  auto m = net::build_dynamics(spec);
  VectorXd h0 = VectorXd::Ones(1);
  auto res = certify::gevp_bisection(m, h0, 1e-3);
  // Feasibility at beta implies feasibility at beta/2.
  auto half = conic::solve(
      certify::assemble_stability_lmi(m, res.beta / 2.0, h0));
  CHECK(half.status == conic::Status::optimal);
  // Vanishing load: the destabilization slope -p/v_min^2 vanishes with p,
  // so the bisection never finds an infeasible beta and reports the cap.
  auto free = spec;
  free.buses[0].cpl_power = -1e-9;
  auto mf = net::build_dynamics(free);
  auto capped =
      certify::gevp_bisection(mf, certify::default_h0(free), 1e-3, 1e4);
  CHECK(capped.at_cap);
}

TEST_CASE("co-design line search reproduces the benchmark certificate") {
  auto spec = onebus();
  auto m = net::build_dynamics(spec);
  OperatingBox box{net::operating_halfwidth(spec)};
  VectorXd h0 = VectorXd::Ones(1);
  auto res = certify::codesign_linesearch(m, box, h0, certify::Schedule{});
  CHECK(res.beta == doctest::Approx(0.2416527).epsilon(5e-3));
  // Cross-solver regression fixture for the max-log-det solution.
  MatrixXd P_ref(2, 2);
  P_ref << 0.0012588728096824472, 0.00030520899884459765,
      0.00030520899884459765, 0.0006307090215033759;
  CHECK((res.set.P - P_ref).cwiseAbs().maxCoeff() <
        0.02 * P_ref.cwiseAbs().maxCoeff());
  // Sub-level set invariants.
  CHECK(res.set.gamma.minCoeff() > 0.0);
  CHECK(res.set.gamma.dot(box.halfwidth.cwiseAbs2()) <= 1.0 + 1e-9);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(
      MatrixXd(res.set.gamma.asDiagonal()) - res.set.P,
      Eigen::EigenvaluesOnly);
  CHECK(es.eigenvalues().minCoeff() >= -1e-12);
  // All box vertices inside the ellipsoid (exhaustive, n = 2).
  CHECK(certify::set_covering(res.set.P, box) <= 1.0 + 1e-9);

  // Downstream floor: the certified voltage threshold is about 62.3 V.
  VectorXd dx_inf = certify::support_inf(res.set.P, m.C1());
  VectorXd pl(1);
  pl << -300.0;
  VectorXd floor = certify::voltage_floor(dx_inf, pl, res.beta, h0);
  CHECK(floor[0] == doctest::Approx(62.3).epsilon(0.008));
}

TEST_CASE("set covering oracle") {
  OperatingBox box{Eigen::Vector2d(1.0, 1.0)};
  CHECK(certify::set_covering(MatrixXd::Identity(2, 2), box) ==
        doctest::Approx(2.0));
  CHECK(certify::set_covering(Eigen::Vector2d(1.0, 4.0).asDiagonal(), box) ==
        doctest::Approx(5.0));
  // Random 4-D P against a dense grid over the box.
  std::mt19937 rng(3);
  std::normal_distribution<double> d;
  MatrixXd B(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) B(i, j) = d(rng);
  MatrixXd P = B * B.transpose() + MatrixXd::Identity(4, 4);
  OperatingBox box4{VectorXd::Constant(4, 0.7)};
  const double alpha = certify::set_covering(P, box4);
  double best = 0.0;
  const int g = 9;
  VectorXd v(4);
  for (int a = 0; a < g; ++a)
    for (int b = 0; b < g; ++b)
      for (int c = 0; c < g; ++c)
        for (int e = 0; e < g; ++e) {
          v << -0.7 + 1.4 * a / (g - 1), -0.7 + 1.4 * b / (g - 1),
              -0.7 + 1.4 * c / (g - 1), -0.7 + 1.4 * e / (g - 1);
          best = std::max(best, v.dot(P * v));
        }
  CHECK(best <= alpha * (1.0 + 1e-12));
  CHECK(alpha == doctest::Approx(best).epsilon(1e-3));
}

TEST_CASE("support function oracle") {
  CHECK(certify::support_inf(MatrixXd::Identity(3, 3),
                             MatrixXd::Identity(3, 3))(1) ==
        doctest::Approx(-1.0));
  const double a = 2.5;
  MatrixXd P = (1.0 / (a * a)) * MatrixXd::Identity(3, 3);
  MatrixXd C = MatrixXd::Zero(1, 3);
  C(0, 2) = 1.0;
  CHECK(certify::support_inf(P, C)(0) == doctest::Approx(-a));
  // Random 3-D P against dense boundary sampling of the ellipsoid.
  std::mt19937 rng(5);
  std::normal_distribution<double> d;
  MatrixXd B(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) B(i, j) = d(rng);
  P = B * B.transpose() + 0.5 * MatrixXd::Identity(3, 3);
  MatrixXd C1(2, 3);
  C1 << 1, 0, 0, 0, 0, 1;
  VectorXd inf = certify::support_inf(P, C1);
  Eigen::LLT<MatrixXd> llt(P);
  MatrixXd Linv = llt.matrixL().solve(MatrixXd::Identity(3, 3));
  VectorXd best = VectorXd::Constant(2, 1e9);
  const int g = 400;
  for (int a2 = 0; a2 < g; ++a2)
    for (int b2 = 0; b2 < g; ++b2) {
      const double th = M_PI * a2 / (g - 1), ph = 2 * M_PI * b2 / g;
      Eigen::Vector3d s(std::sin(th) * std::cos(ph),
                        std::sin(th) * std::sin(ph), std::cos(th));
      // Points with x' P x = 1 are x = L^-T s for unit s.
      Eigen::Vector3d x = Linv.transpose() * s;
      VectorXd val = C1 * x;
      best = best.cwiseMin(val);
    }
  CHECK((best - inf).lpNorm<Eigen::Infinity>() < 1e-4 * inf.cwiseAbs().maxCoeff());
  CHECK((inf.array() <= best.array() + 1e-12).all());
}

TEST_CASE("voltage floor degenerate forms") {
  VectorXd dx_inf(2), pl(2), h0(2);
  dx_inf << -3.0, 0.0;
  pl << 0.0, -4.0;
  h0 << 1.0, 1.0;
  VectorXd floor = certify::voltage_floor(dx_inf, pl, 1.0, h0);
  CHECK(floor[0] == doctest::Approx(3.0));   // p = 0: positivity floor only
  CHECK(floor[1] == doctest::Approx(2.0));   // dx_inf = 0: sqrt(-p/(b h0))
}

TEST_CASE("sup_h and the floor inequality are equivalent") {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> dv(0.1, 3.0), dp(0.05, 2.0);
  for (int trial = 0; trial < 10000; ++trial) {
    VectorXd dx_inf(1), pl(1), h0(1);
    dx_inf << -dv(rng);
    pl << -dp(rng);
    h0 << dp(rng);
    const double beta = dp(rng);
    VectorXd floor = certify::voltage_floor(dx_inf, pl, beta, h0);
    VectorXd ve(1);
    ve << -dx_inf[0] + dv(rng);
    const bool above = ve[0] >= floor[0];
    VectorXd sup = certify::sup_h(ve, dx_inf, pl);
    const bool bounded = sup[0] <= beta * h0[0] + 1e-12;
    CHECK(above == bounded);
  }
  // Binding at the floor itself.
  VectorXd dx_inf(1), pl(1), h0(1);
  dx_inf << -1.0;
  pl << -0.7;
  h0 << 0.9;
  VectorXd floor = certify::voltage_floor(dx_inf, pl, 1.3, h0);
  VectorXd sup = certify::sup_h(floor, dx_inf, pl);
  CHECK(sup[0] == doctest::Approx(1.3 * h0[0]));
  // Large v: sup_h vanishes.
  VectorXd big = VectorXd::Constant(1, 1e9);
  CHECK(certify::sup_h(big, dx_inf, pl)[0] < 1e-9);
  // Lemma 3 violation is reported.
  VectorXd bad = VectorXd::Constant(1, 0.5);
  CHECK_THROWS_AS(certify::sup_h(bad, dx_inf, pl), certify::CertifyError);
}

TEST_CASE("certificate verdicts and serialization round-trip") {
  auto spec = onebus();
  auto m = net::build_dynamics(spec);
  OperatingBox box{net::operating_halfwidth(spec)};
  VectorXd h0 = VectorXd::Ones(1);
  auto cert = certify::make_certificate(m, box, m.cpl_power, h0,
                                        certify::Schedule{},
                                        net::fingerprint(spec));
  const double u = 64.8, R = 0.5, p = -300.0;
  const double v = 0.5 * (u + std::sqrt(u * u + 4 * R * p));
  VectorXd xe(2);
  xe << -p / v, v;
  CHECK(certify::certify_point(cert, m, xe));
  VectorXd low = xe;
  low[1] = 55.0;
  CHECK(!certify::certify_point(cert, m, low));

  auto round = certify::certificate_from_json(certify::to_json(cert));
  CHECK((round.sublevel.P - cert.sublevel.P).cwiseAbs().maxCoeff() == 0.0);
  CHECK(round.lpv.beta == cert.lpv.beta);
  CHECK((round.floor - cert.floor).cwiseAbs().maxCoeff() == 0.0);
  CHECK(round.network_fingerprint == cert.network_fingerprint);
}

TEST_CASE("per-unit and SI certification agree") {
  auto spec = onebus();
  auto pu = net::per_unit(spec);
  auto m_si = net::build_dynamics(spec);
  auto m_pu = net::build_dynamics(pu);
  certify::OperatingBox box_si{net::operating_halfwidth(spec)};
  certify::OperatingBox box_pu{net::operating_halfwidth(pu)};
  VectorXd h0_si = certify::default_h0(spec);
  VectorXd h0_pu = certify::default_h0(pu);
  auto cert_si = certify::make_certificate(m_si, box_si, m_si.cpl_power,
                                           h0_si, {}, "si");
  auto cert_pu = certify::make_certificate(m_pu, box_pu, m_pu.cpl_power,
                                           h0_pu, {}, "pu");
  // The floor scales by the base voltage.
  CHECK(cert_si.floor[0] ==
        doctest::Approx(cert_pu.floor[0] * spec.base_voltage).epsilon(1e-2));
}

TEST_CASE("default h0 recipe") {
  auto spec = onebus();
  VectorXd h0 = certify::default_h0(spec);
  const double vmin = 40.0 - 20.0;  // lower state bound minus half-width
  CHECK(h0[0] == doctest::Approx(300.0 / (vmin * vmin)));
}
