#include "dcroa/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>

namespace dcroa::net {

using nlohmann::json;

int NetworkSpec::n_sources() const {
  int n = static_cast<int>(ideal_sources.size());
  for (const auto& b : buses)
    if (b.has_source) ++n;
  return n;
}

int NetworkSpec::n_loads() const {
  int n = 0;
  for (const auto& b : buses)
    if (b.has_cpl) ++n;
  return n;
}

namespace {

double require_positive(const json& j, const std::string& key,
                        const std::string& ctx) {
  if (!j.contains(key))
    throw ParseError(ctx + ": missing required field '" + key + "'");
  double v = j.at(key).get<double>();
  if (!(v > 0.0) || !std::isfinite(v))
    throw ParseError(ctx + ": field '" + key + "' must be positive, got " +
                     std::to_string(v));
  return v;
}

Interval parse_interval(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 2)
    throw ParseError(ctx + ": expected a [lo, hi] pair");
  Interval iv{j.at(0).get<double>(), j.at(1).get<double>()};
  if (!(iv.lo <= iv.hi)) throw ParseError(ctx + ": empty interval");
  return iv;
}

void check_connected(const NetworkSpec& spec) {
  std::map<std::string, int> node_id;
  for (const auto& b : spec.buses) node_id[b.id] = static_cast<int>(node_id.size());
  for (const auto& s : spec.ideal_sources)
    node_id[s.id] = static_cast<int>(node_id.size());
  std::vector<std::vector<int>> adj(node_id.size());
  for (const auto& l : spec.lines) {
    int a = node_id.at(l.from), b = node_id.at(l.to);
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<bool> seen(node_id.size(), false);
  std::queue<int> q;
  q.push(0);
  seen[0] = true;
  while (!q.empty()) {
    int v = q.front();
    q.pop();
    for (int w : adj[v])
      if (!seen[w]) {
        seen[w] = true;
        q.push(w);
      }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw ParseError("network graph is not connected");
}

}  // namespace

NetworkSpec parse_network(const json& doc) {
  if (!doc.is_object()) throw ParseError("network document must be an object");
  NetworkSpec spec;
  spec.name = doc.value("name", std::string("network"));

  if (!doc.contains("buses") || !doc.at("buses").is_array() ||
      doc.at("buses").empty())
    throw ParseError("'buses' must be a non-empty array");

  std::set<std::string> ids;
  for (const auto& jb : doc.at("buses")) {
    BusSpec b;
    b.id = jb.value("id", std::string());
    if (b.id.empty()) throw ParseError("bus without id");
    if (!ids.insert(b.id).second)
      throw ParseError("duplicate node id '" + b.id + "'");
    const std::string ctx = "bus '" + b.id + "'";
    b.capacitance = require_positive(jb, "capacitance", ctx);
    if (jb.contains("shunt_resistance")) {
      double r = jb.at("shunt_resistance").get<double>();
      if (!(r > 0.0)) throw ParseError(ctx + ": shunt_resistance must be > 0");
      b.shunt_conductance = 1.0 / r;
    }
    if (jb.contains("source")) {
      b.has_source = true;
      b.source_resistance =
          require_positive(jb.at("source"), "resistance", ctx + " source");
    }
    if (jb.contains("cpl_power")) {
      b.has_cpl = true;
      b.cpl_power = jb.at("cpl_power").get<double>();
      if (b.cpl_power > 0.0)
        throw ParseError(ctx + ": cpl_power must be non-positive");
    }
    if (jb.contains("voltage_bounds"))
      b.voltage_bounds =
          parse_interval(jb.at("voltage_bounds"), ctx + " voltage_bounds");
    spec.buses.push_back(std::move(b));
  }

  if (doc.contains("sources")) {
    for (const auto& js : doc.at("sources")) {
      IdealSourceSpec s;
      s.id = js.value("id", std::string());
      if (s.id.empty()) throw ParseError("ideal source without id");
      if (!ids.insert(s.id).second)
        throw ParseError("duplicate node id '" + s.id + "'");
      spec.ideal_sources.push_back(std::move(s));
    }
  }

  if (!doc.contains("lines") || !doc.at("lines").is_array())
    throw ParseError("'lines' must be an array");
  for (const auto& jl : doc.at("lines")) {
    LineSpec l;
    l.from = jl.value("from", std::string());
    l.to = jl.value("to", std::string());
    const std::string ctx = "line " + l.from + "-" + l.to;
    if (l.from == l.to) throw ParseError(ctx + ": endpoints must be distinct");
    if (!ids.count(l.from) || !ids.count(l.to))
      throw ParseError(ctx + ": unknown endpoint");
    l.resistance = require_positive(jl, "resistance", ctx);
    l.inductance = require_positive(jl, "inductance", ctx);
    spec.lines.push_back(std::move(l));
  }
  check_connected(spec);

  if (doc.contains("base")) {
    spec.base_voltage = require_positive(doc.at("base"), "voltage", "base");
    spec.base_power = require_positive(doc.at("base"), "power", "base");
  }

  if (!doc.contains("bounds")) throw ParseError("missing 'bounds'");
  const auto& jb = doc.at("bounds");
  spec.bounds.setpoint = parse_interval(jb.at("setpoint"), "bounds.setpoint");
  spec.bounds.generation =
      parse_interval(jb.at("generation"), "bounds.generation");
  spec.bounds.state_voltage =
      parse_interval(jb.at("state_voltage"), "bounds.state_voltage");
  spec.bounds.state_current =
      parse_interval(jb.at("state_current"), "bounds.state_current");

  const int ns = spec.n_sources();
  if (ns == 0) throw ParseError("network has no sources");
  spec.costs = VectorXd::Ones(ns);
  if (doc.contains("costs")) {
    const auto& jc = doc.at("costs");
    if (jc.is_number()) {
      spec.costs.setConstant(jc.get<double>());
    } else {
      if (static_cast<int>(jc.size()) != ns)
        throw ParseError("'costs' must have one entry per source");
      for (int k = 0; k < ns; ++k) spec.costs[k] = jc.at(k).get<double>();
    }
    if ((spec.costs.array() < 0.0).any())
      throw ParseError("cost coefficients must be non-negative");
  }

  if (!doc.contains("operating_halfwidth"))
    throw ParseError("missing 'operating_halfwidth'");
  const auto& jh = doc.at("operating_halfwidth");
  spec.halfwidth_current = require_positive(jh, "current", "operating_halfwidth");
  spec.halfwidth_voltage = require_positive(jh, "voltage", "operating_halfwidth");

  if (doc.contains("certification")) {
    const auto& jc = doc.at("certification");
    if (jc.contains("h0")) {
      const auto& jh0 = jc.at("h0");
      if (static_cast<int>(jh0.size()) != spec.n_loads())
        throw ParseError("'certification.h0' must have one entry per CPL bus");
      spec.lpv_slope.resize(spec.n_loads());
      for (int k = 0; k < spec.n_loads(); ++k) {
        spec.lpv_slope[k] = jh0.at(k).get<double>();
        if (!(spec.lpv_slope[k] > 0.0))
          throw ParseError("'certification.h0' entries must be positive");
      }
    }
    if (jc.contains("beta")) {
      spec.fixed_beta = jc.at("beta").get<double>();
      if (!(spec.fixed_beta > 0.0))
        throw ParseError("'certification.beta' must be positive");
    }
  }

  spec.normalized = doc.value("per_unit", false);
  return spec;
}

NetworkSpec parse_network_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  return parse_network(doc);
}

namespace {

// scale.v: volts, scale.p: watts; derived impedance, current and time bases.
struct Scale {
  double v, p, z, i;
};

NetworkSpec rescale(const NetworkSpec& spec, const Scale& s, bool normalized) {
  NetworkSpec out = spec;
  out.normalized = normalized;
  for (auto& b : out.buses) {
    b.capacitance /= 1.0 / s.z;  // C in farads scales by 1/Z0 (time kept in s)
    b.shunt_conductance *= s.z;
    if (b.has_source) b.source_resistance /= s.z;
    b.cpl_power /= s.p;
    if (b.voltage_bounds) {
      b.voltage_bounds->lo /= s.v;
      b.voltage_bounds->hi /= s.v;
    }
  }
  for (auto& l : out.lines) {
    l.resistance /= s.z;
    l.inductance /= s.z;  // L carries ohm*s; time base is unchanged
  }
  auto iv = [](Interval& x, double d) {
    x.lo /= d;
    x.hi /= d;
  };
  iv(out.bounds.setpoint, s.v);
  iv(out.bounds.generation, s.p);
  iv(out.bounds.state_voltage, s.v);
  iv(out.bounds.state_current, s.i);
  out.halfwidth_current /= s.i;
  out.halfwidth_voltage /= s.v;
  out.lpv_slope *= s.z;  // -p/v^2 has units of conductance
  return out;
}

}  // namespace

NetworkSpec per_unit(const NetworkSpec& spec) {
  if (spec.normalized) return spec;
  if (!(spec.base_voltage > 0.0) || !(spec.base_power > 0.0))
    throw ParseError("per-unit conversion requires positive base values");
  Scale s{spec.base_voltage, spec.base_power,
          spec.base_voltage * spec.base_voltage / spec.base_power,
          spec.base_power / spec.base_voltage};
  return rescale(spec, s, true);
}

NetworkSpec to_si(const NetworkSpec& spec) {
  if (!spec.normalized) return spec;
  Scale s{1.0 / spec.base_voltage, 1.0 / spec.base_power,
          spec.base_power / (spec.base_voltage * spec.base_voltage),
          spec.base_voltage / spec.base_power};
  return rescale(spec, s, false);
}

VectorXd operating_halfwidth(const NetworkSpec& spec) {
  VectorXd dx(spec.n_states());
  dx.head(spec.n_lines()).setConstant(spec.halfwidth_current);
  dx.tail(spec.n_buses()).setConstant(spec.halfwidth_voltage);
  return dx;
}

SystemMatrices build_dynamics(const NetworkSpec& spec) {
  SystemMatrices m;
  m.nt = spec.n_lines();
  m.nb = spec.n_buses();
  m.n = m.nt + m.nb;
  m.ns = spec.n_sources();
  m.nl = spec.n_loads();

  // State order: line currents, then pure source buses, then the rest.
  std::vector<int> order;
  for (int b = 0; b < m.nb; ++b)
    if (spec.buses[b].has_source && !spec.buses[b].has_cpl) order.push_back(b);
  for (int b = 0; b < m.nb; ++b)
    if (!(spec.buses[b].has_source && !spec.buses[b].has_cpl))
      order.push_back(b);
  m.bus_state.assign(m.nb, -1);
  for (int k = 0; k < m.nb; ++k) m.bus_state[order[k]] = m.nt + k;

  std::map<std::string, int> bus_index, ideal_index;
  for (int b = 0; b < m.nb; ++b) bus_index[spec.buses[b].id] = b;
  for (size_t k = 0; k < spec.ideal_sources.size(); ++k)
    ideal_index[spec.ideal_sources[k].id] = static_cast<int>(k);

  m.A = MatrixXd::Zero(m.n, m.n);
  m.Ddiag = VectorXd::Zero(m.n);
  m.B1 = MatrixXd::Zero(m.n, m.nl);
  m.B2 = MatrixXd::Zero(m.n, m.ns);
  m.source_resistance = VectorXd::Ones(m.ns);
  m.cpl_power = VectorXd::Zero(m.nl);
  m.state_names.resize(m.n);

  // Sources: ideal terminals first (declaration order), then bus-attached
  // sources in bus order.
  const int n_ideal = static_cast<int>(spec.ideal_sources.size());
  std::vector<int> bus_source(m.nb, -1);
  {
    int k = n_ideal;
    for (int b = 0; b < m.nb; ++b)
      if (spec.buses[b].has_source) bus_source[b] = k++;
  }
  m.source_bus.assign(m.ns, -1);
  for (int b = 0; b < m.nb; ++b)
    if (bus_source[b] >= 0) m.source_bus[bus_source[b]] = b;

  // Lines: current convention is positive from `from` to `to`.
  for (int p = 0; p < m.nt; ++p) {
    const auto& l = spec.lines[p];
    m.Ddiag[p] = l.inductance;
    m.A(p, p) = -l.resistance;
    m.state_names[p] = "i(" + l.from + "-" + l.to + ")";
    for (int side = 0; side < 2; ++side) {
      const std::string& id = side == 0 ? l.from : l.to;
      const double sgn = side == 0 ? 1.0 : -1.0;  // +v_from - v_to
      if (auto it = bus_index.find(id); it != bus_index.end()) {
        int r = m.bus_state[it->second];
        m.A(p, r) += sgn;
        m.A(r, p) -= sgn;
      } else {
        // Ideal source terminal: its voltage is the setpoint itself.
        m.B2(p, ideal_index.at(id)) += sgn;
      }
    }
  }

  for (int b = 0; b < m.nb; ++b) {
    const auto& bus = spec.buses[b];
    int r = m.bus_state[b];
    m.Ddiag[r] = bus.capacitance;
    m.state_names[r] = "v(" + bus.id + ")";
    m.A(r, r) -= bus.shunt_conductance;
    if (bus.has_source) {
      m.A(r, r) -= 1.0 / bus.source_resistance;
      m.B2(r, bus_source[b]) = 1.0;
      m.source_resistance[bus_source[b]] = bus.source_resistance;
    }
  }

  int j = 0;
  for (int b = 0; b < m.nb; ++b) {
    if (!spec.buses[b].has_cpl) continue;
    m.B1(m.bus_state[b], j) = 1.0;
    m.cpl_power[j] = spec.buses[b].cpl_power;
    m.load_bus.push_back(b);
    ++j;
  }

  auto y = build_conductance(spec);
  m.Y_ss = std::move(y.Y_ss);
  m.Y_sl = std::move(y.Y_sl);
  m.Y_ll = std::move(y.Y_ll);
  return m;
}

VectorXd SystemMatrices::field(const VectorXd& x, const VectorXd& u) const {
  VectorXd rhs = A * x + B2 * (u.array() / source_resistance.array()).matrix();
  if (nl > 0) {
    VectorXd vl = B1.transpose() * x;
    rhs += B1 * (cpl_power.array() / vl.array()).matrix();
  }
  return (rhs.array() / Ddiag.array()).matrix();
}

ConductanceBlocks build_conductance(const NetworkSpec& spec) {
  // Node layout: source EMF terminals, CPL buses, then passive buses; the
  // passive group is eliminated by a Schur complement.
  const int nb = spec.n_buses();
  const int ns = spec.n_sources();
  const int n_ideal = static_cast<int>(spec.ideal_sources.size());

  std::map<std::string, int> node;  // network node -> index in full Y
  int idx = 0;
  for (const auto& s : spec.ideal_sources) node[s.id] = idx++;
  std::vector<int> bus_emf(nb, -1);
  for (int b = 0; b < nb; ++b)
    if (spec.buses[b].has_source) bus_emf[b] = idx++;
  (void)n_ideal;
  std::vector<int> load_node, passive_node;
  for (int b = 0; b < nb; ++b) {
    node[spec.buses[b].id] = idx;
    (spec.buses[b].has_cpl ? load_node : passive_node).push_back(idx);
    ++idx;
  }
  const int ntot = idx;
  const int nl = static_cast<int>(load_node.size());

  MatrixXd Y = MatrixXd::Zero(ntot, ntot);
  auto stamp = [&Y](int a, int b, double g) {
    Y(a, a) += g;
    Y(b, b) += g;
    Y(a, b) -= g;
    Y(b, a) -= g;
  };
  for (const auto& l : spec.lines)
    stamp(node.at(l.from), node.at(l.to), 1.0 / l.resistance);
  for (int b = 0; b < nb; ++b) {
    const auto& bus = spec.buses[b];
    if (bus.has_source)
      stamp(bus_emf[b], node.at(bus.id), 1.0 / bus.source_resistance);
    Y(node.at(bus.id), node.at(bus.id)) += bus.shunt_conductance;
  }

  // Partition and reduce.
  std::vector<int> keep;
  for (int k = 0; k < ns; ++k) keep.push_back(k);
  keep.insert(keep.end(), load_node.begin(), load_node.end());
  const int nk = static_cast<int>(keep.size());
  MatrixXd Yaa(nk, nk), Yap(nk, static_cast<int>(passive_node.size()));
  MatrixXd Ypp(passive_node.size(), passive_node.size());
  for (int i = 0; i < nk; ++i)
    for (int j2 = 0; j2 < nk; ++j2) Yaa(i, j2) = Y(keep[i], keep[j2]);
  for (int i = 0; i < nk; ++i)
    for (size_t j2 = 0; j2 < passive_node.size(); ++j2)
      Yap(i, static_cast<int>(j2)) = Y(keep[i], passive_node[j2]);
  for (size_t i = 0; i < passive_node.size(); ++i)
    for (size_t j2 = 0; j2 < passive_node.size(); ++j2)
      Ypp(static_cast<int>(i), static_cast<int>(j2)) =
          Y(passive_node[i], passive_node[j2]);

  MatrixXd Yred = Yaa;
  if (!passive_node.empty())
    Yred -= Yap * Ypp.ldlt().solve(Yap.transpose());

  ConductanceBlocks out;
  out.Y_ss = Yred.topLeftCorner(ns, ns);
  out.Y_sl = Yred.topRightCorner(ns, nl);
  out.Y_ll = Yred.bottomRightCorner(nl, nl);
  return out;
}

json to_json(const NetworkSpec& spec) {
  json doc;
  doc["name"] = spec.name;
  doc["per_unit"] = spec.normalized;
  doc["base"] = {{"voltage", spec.base_voltage}, {"power", spec.base_power}};
  json buses = json::array();
  for (const auto& b : spec.buses) {
    json jb{{"id", b.id}, {"capacitance", b.capacitance}};
    if (b.shunt_conductance > 0.0)
      jb["shunt_resistance"] = 1.0 / b.shunt_conductance;
    if (b.has_source) jb["source"] = {{"resistance", b.source_resistance}};
    if (b.has_cpl) jb["cpl_power"] = b.cpl_power;
    if (b.voltage_bounds)
      jb["voltage_bounds"] = {b.voltage_bounds->lo, b.voltage_bounds->hi};
    buses.push_back(std::move(jb));
  }
  doc["buses"] = std::move(buses);
  if (!spec.ideal_sources.empty()) {
    json srcs = json::array();
    for (const auto& s : spec.ideal_sources) srcs.push_back({{"id", s.id}});
    doc["sources"] = std::move(srcs);
  }
  json lines = json::array();
  for (const auto& l : spec.lines)
    lines.push_back({{"from", l.from},
                     {"to", l.to},
                     {"resistance", l.resistance},
                     {"inductance", l.inductance}});
  doc["lines"] = std::move(lines);
  doc["bounds"] = {
      {"setpoint", {spec.bounds.setpoint.lo, spec.bounds.setpoint.hi}},
      {"generation", {spec.bounds.generation.lo, spec.bounds.generation.hi}},
      {"state_voltage",
       {spec.bounds.state_voltage.lo, spec.bounds.state_voltage.hi}},
      {"state_current",
       {spec.bounds.state_current.lo, spec.bounds.state_current.hi}}};
  doc["costs"] = std::vector<double>(spec.costs.data(),
                                     spec.costs.data() + spec.costs.size());
  doc["operating_halfwidth"] = {{"current", spec.halfwidth_current},
                                {"voltage", spec.halfwidth_voltage}};
  if (spec.lpv_slope.size() > 0 || spec.fixed_beta > 0.0) {
    json jc;
    if (spec.lpv_slope.size() > 0)
      jc["h0"] = std::vector<double>(
          spec.lpv_slope.data(), spec.lpv_slope.data() + spec.lpv_slope.size());
    if (spec.fixed_beta > 0.0) jc["beta"] = spec.fixed_beta;
    doc["certification"] = std::move(jc);
  }
  return doc;
}

std::string fingerprint(const NetworkSpec& spec) {
  // FNV-1a over the canonical serialized form.
  const std::string s = to_json(spec).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace dcroa::net
