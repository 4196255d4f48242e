#pragma once

// Network description and model assembly for DC microgrids with constant
// power loads. The dynamic model is the RLC averaged circuit
//
//   D x' = A x + B2 (u / Rs) + B1 (p_l / (C1 x)),   C1 = B1^T, C2 = B2^T
//
// with state x = [line currents; source-bus voltages; load-bus voltages].
// The steady-state model is the nodal conductance description
//
//   p_s = [u]  (Y_ss u + Y_sl v_l),
//   p_l = [v_l](Y_ls u + Y_ll v_l),
//
// where the Y blocks are obtained by Kron-eliminating buses without CPLs.

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace dcroa::net {

using Eigen::MatrixXd;
using Eigen::VectorXd;

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v, double tol = 0.0) const {
    return v >= lo - tol && v <= hi + tol;
  }
};

struct BusSpec {
  std::string id;
  double capacitance = 0.0;           // farads, > 0
  double shunt_conductance = 0.0;     // 1/R_shunt; 0 means no shunt
  bool has_source = false;
  double source_resistance = 0.0;     // ohms, > 0 iff has_source
  bool has_cpl = false;
  double cpl_power = 0.0;             // watts, <= 0
  std::optional<Interval> voltage_bounds;  // overrides the global bound
};

// An ideal source terminal: a voltage reference joined to the network by a
// line whose impedance absorbs the composite source resistance. Its voltage
// is the setpoint itself and it carries no state.
struct IdealSourceSpec {
  std::string id;
};

struct LineSpec {
  std::string from;
  std::string to;
  double resistance = 0.0;  // ohms, > 0
  double inductance = 0.0;  // henries, > 0
};

struct Bounds {
  Interval setpoint;        // U
  Interval generation;      // P_s
  Interval state_voltage;   // X^e, voltage rows
  Interval state_current;   // X^e, current rows
};

struct NetworkSpec {
  std::string name;
  std::vector<BusSpec> buses;
  std::vector<IdealSourceSpec> ideal_sources;
  std::vector<LineSpec> lines;
  double base_voltage = 1.0;  // V0
  double base_power = 1.0;    // p_l0
  bool normalized = false;    // true once per_unit() has been applied
  Bounds bounds;
  VectorXd costs;                  // one entry per source
  double halfwidth_current = 0.0;  // operating half-width, current states
  double halfwidth_voltage = 0.0;  // operating half-width, voltage states

  // Optional certification hints carried with the network: a per-CPL-bus
  // destabilization slope direction (units of conductance) and a fixed LPV
  // scaling. When absent (empty / 0) the pipeline derives defaults.
  VectorXd lpv_slope;       // h0 direction, one entry per CPL bus
  double fixed_beta = 0.0;  // > 0: certify at exactly this beta

  int n_buses() const { return static_cast<int>(buses.size()); }
  int n_lines() const { return static_cast<int>(lines.size()); }
  int n_states() const { return n_buses() + n_lines(); }
  int n_sources() const;
  int n_loads() const;  // buses with a CPL
};

// Assembled model matrices plus the index bookkeeping the rest of the
// pipeline needs to relate states, sources and loads back to the network.
struct SystemMatrices {
  MatrixXd A;      // n x n
  VectorXd Ddiag;  // n, diagonal of D (> 0)
  MatrixXd B1;     // n x n_l, C1 = B1^T
  MatrixXd B2;     // n x n_s, C2 = B2^T
  VectorXd source_resistance;  // n_s (1.0 for ideal sources)
  VectorXd cpl_power;          // n_l

  MatrixXd Y_ss, Y_sl, Y_ll;   // Kron-reduced conductance blocks

  int n = 0, nt = 0, nb = 0, ns = 0, nl = 0;
  std::vector<int> source_bus;       // bus index per source, -1 if ideal
  std::vector<int> load_bus;         // bus index per load column
  std::vector<int> bus_state;        // state row per bus
  std::vector<std::string> state_names;

  MatrixXd C1() const { return B1.transpose(); }
  MatrixXd C2() const { return B2.transpose(); }
  MatrixXd D() const { return Ddiag.asDiagonal(); }

  // Right-hand side of the dynamic model, x' = f(x).
  VectorXd field(const VectorXd& x, const VectorXd& u) const;
};

NetworkSpec parse_network(const nlohmann::json& doc);
NetworkSpec parse_network_file(const std::string& path);

// Normalizes to per-unit using base_voltage/base_power. Round-trips with
// to_si() to within 1e-12 relative.
NetworkSpec per_unit(const NetworkSpec& spec);
NetworkSpec to_si(const NetworkSpec& spec);

SystemMatrices build_dynamics(const NetworkSpec& spec);

struct ConductanceBlocks {
  MatrixXd Y_ss, Y_sl, Y_ll;
};
ConductanceBlocks build_conductance(const NetworkSpec& spec);

// Per-state operating half-width vector (currents then voltages).
VectorXd operating_halfwidth(const NetworkSpec& spec);

// Content fingerprint of the canonical JSON form, for pairing reports and
// certificates with the network they describe.
std::string fingerprint(const NetworkSpec& spec);
nlohmann::json to_json(const NetworkSpec& spec);

}  // namespace dcroa::net
