#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the library code it checks.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsse/grid_model.hpp"
#include "dsse/powerflow.hpp"

namespace oracle {

using dsse::Complex;

inline std::string fixture_path(const std::string& name) {
  return std::string(DSSE_DATA_DIR) + "/feeders/" + name + ".json";
}

inline dsse::FeederModel fixture(const std::string& name) { return dsse::load_feeder(fixture_path(name)); }

// Random radial feeder as feeder-file JSON. Bus 1 is the source, every bus is
// three-phase, impedances are decoupled and loads are light so the power
// flow always converges.
inline std::string random_tree_json(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> r(0.05, 0.4), x(0.1, 0.8), p(5e3, 60e3), pf(0.2, 0.6);
  std::bernoulli_distribution zi(0.25);
  std::vector<bool> is_load(static_cast<std::size_t>(n), false);
  std::ostringstream s;
  s << "{\"name\":\"tree\",\"buses\":[";
  for (int i = 0; i < n; ++i) {
    is_load[i] = i > 0 && !zi(rng);
    const char* kind = i == 0 ? "source" : (is_load[i] ? "load" : "zero_injection");
    s << (i ? "," : "") << "{\"id\":" << i + 1 << ",\"phases\":\"ABC\",\"kind\":\"" << kind
      << "\",\"base_voltage_v\":2400.0}";
  }
  s << "],\"branches\":[";
  for (int i = 1; i < n; ++i) {
    const int parent = std::uniform_int_distribution<int>(0, i - 1)(rng);
    const double rr = r(rng), xx = x(rng);
    s << (i > 1 ? "," : "") << "{\"from\":" << parent + 1 << ",\"to\":" << i + 1
      << ",\"phases\":\"ABC\",\"impedance\":[";
    for (int a = 0; a < 3; ++a) {
      s << (a ? "," : "") << "[";
      for (int b = 0; b < 3; ++b) s << (b ? "," : "") << "[" << (a == b ? rr : 0.0) << "," << (a == b ? xx : 0.0) << "]";
      s << "]";
    }
    s << "]}";
  }
  s << "],\"loads\":[";
  bool first = true;
  for (int i = 1; i < n; ++i) {
    if (!is_load[i]) continue;
    s << (first ? "" : ",") << "{\"bus\":" << i + 1 << ",\"phases\":\"ABC\",\"power\":[";
    for (int a = 0; a < 3; ++a) {
      const double pw = p(rng);
      s << (a ? "," : "") << "[" << pw << "," << pw * pf(rng) << "]";
    }
    s << "]}";
    first = false;
  }
  s << "]}";
  return s.str();
}

// --- graph oracles ---------------------------------------------------------

inline std::vector<std::vector<int>> edges_of(const dsse::FeederModel& m) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(m.num_buses()));
  for (const auto& br : m.branches()) {
    adj[static_cast<std::size_t>(br.from)].push_back(br.to);
    adj[static_cast<std::size_t>(br.to)].push_back(br.from);
  }
  return adj;
}

// Floyd-Warshall restricted to `allowed` (all buses when empty).
inline std::vector<std::vector<int>> all_pairs(const dsse::FeederModel& m, const std::vector<int>& allowed = {}) {
  const int n = m.num_buses();
  const int inf = std::numeric_limits<int>::max() / 4;
  std::vector<char> in(static_cast<std::size_t>(n), allowed.empty());
  for (int b : allowed) in[static_cast<std::size_t>(b)] = 1;
  std::vector<std::vector<int>> d(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), inf));
  for (int i = 0; i < n; ++i) d[i][i] = 0;
  for (const auto& br : m.branches())
    if (in[br.from] && in[br.to]) d[br.from][br.to] = d[br.to][br.from] = 1;
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  return d;
}

struct OraclePartition {
  std::vector<int> buses;
  int diameter = 0;
};

// Partitions by pairwise path inspection: two non-PMU buses share a
// partition iff the tree path between them has no PMU bus. Each class picks
// up its PMU neighbours; PMU-PMU edges and uncovered PMU buses are their own.
inline std::vector<OraclePartition> partitions(const dsse::FeederModel& m, const std::vector<int>& pmus,
                                               int min_depth = 2) {
  const int n = m.num_buses();
  const auto adj = edges_of(m);
  std::vector<char> is_pmu(static_cast<std::size_t>(n), 0);
  for (int p : pmus) is_pmu[static_cast<std::size_t>(p)] = 1;

  auto path = [&](int a, int b) {
    std::vector<int> prev(static_cast<std::size_t>(n), -2);
    std::vector<int> queue{a};
    prev[a] = -1;
    for (std::size_t q = 0; q < queue.size(); ++q)
      for (int v : adj[queue[q]])
        if (prev[v] == -2) {
          prev[v] = queue[q];
          queue.push_back(v);
        }
    std::vector<int> out;
    for (int v = b; v != -1; v = prev[v]) out.push_back(v);
    return out;
  };

  std::set<std::vector<int>> found;
  std::vector<char> covered(static_cast<std::size_t>(n), 0);
  for (int a = 0; a < n; ++a) {
    if (is_pmu[a]) continue;
    std::vector<int> cls;
    for (int b = 0; b < n; ++b) {
      if (is_pmu[b]) continue;
      const auto p = path(a, b);
      if (std::none_of(p.begin(), p.end(), [&](int v) { return is_pmu[v] != 0; })) cls.push_back(b);
    }
    std::set<int> members(cls.begin(), cls.end());
    for (int b : cls)
      for (int v : adj[b])
        if (is_pmu[v]) members.insert(v);
    found.insert(std::vector<int>(members.begin(), members.end()));
  }
  for (const auto& br : m.branches())
    if (is_pmu[br.from] && is_pmu[br.to]) found.insert({std::min(br.from, br.to), std::max(br.from, br.to)});
  for (const auto& part : found)
    for (int b : part) covered[b] = 1;
  for (int p : pmus)
    if (!covered[p]) found.insert({p});

  std::vector<OraclePartition> out;
  for (const auto& part : found) {
    OraclePartition op{part, 0};
    if (part.size() > 1) {
      const auto d = all_pairs(m, part);
      int diam = 0;
      for (int i : part)
        for (int j : part) diam = std::max(diam, d[i][j]);
      op.diameter = std::max(diam, min_depth);
    }
    out.push_back(op);
  }
  return out;
}

// --- power-flow oracle -----------------------------------------------------

// Nodal admittance matrix over complex state indices.
inline Eigen::MatrixXcd ybus(const dsse::FeederModel& m) {
  const int n = m.state_size();
  Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& br : m.branches()) {
    const Eigen::MatrixXcd yb = br.impedance.inverse();
    const auto ph = br.phases.phases();
    for (std::size_t a = 0; a < ph.size(); ++a)
      for (std::size_t b = 0; b < ph.size(); ++b) {
        const int fa = m.state_index(br.from, ph[a]), fb = m.state_index(br.from, ph[b]);
        const int ta = m.state_index(br.to, ph[a]), tb = m.state_index(br.to, ph[b]);
        const Complex y = yb(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        Y(fa, fb) += y;
        Y(ta, tb) += y;
        Y(fa, tb) -= y;
        Y(ta, fb) -= y;
      }
  }
  return Y;
}

// Newton-Raphson on the rectangular current-mismatch equations with a
// finite-difference Jacobian. Returns complex voltages in state order.
inline std::vector<Complex> newton_power_flow(const dsse::FeederModel& m, const dsse::BusPowers& loads,
                                              double tol = 1e-10, int max_iter = 50) {
  const int n = m.state_size();
  const Eigen::MatrixXcd Y = ybus(m);
  std::vector<Complex> s(static_cast<std::size_t>(n));
  std::vector<char> slack(static_cast<std::size_t>(n), 0);
  Eigen::VectorXcd V(n);
  for (const auto& bus : m.buses())
    for (dsse::Phase p : bus.phases.phases()) {
      const int k = m.state_index(bus.index, p);
      // Slack reference convention is shared with the library; the rest is not.
      V(k) = dsse::slack_voltage(bus, p);
      s[k] = loads[bus.index][static_cast<std::size_t>(p)];
      slack[k] = bus.index == m.source();
    }

  std::vector<int> free;
  for (int k = 0; k < n; ++k)
    if (!slack[k]) free.push_back(k);
  const int u = static_cast<int>(free.size());

  auto residual = [&](const Eigen::VectorXcd& v) {
    const Eigen::VectorXcd inj = Y * v;
    Eigen::VectorXd r(2 * u);
    for (int i = 0; i < u; ++i) {
      const int k = free[i];
      const Complex f = inj(k) + std::conj(s[k] / v(k));
      r(2 * i) = f.real();
      r(2 * i + 1) = f.imag();
    }
    return r;
  };
  auto set = [&](Eigen::VectorXcd& v, const Eigen::VectorXd& x) {
    for (int i = 0; i < u; ++i) v(free[i]) = Complex(x(2 * i), x(2 * i + 1));
  };
  Eigen::VectorXd x(2 * u);
  for (int i = 0; i < u; ++i) {
    x(2 * i) = V(free[i]).real();
    x(2 * i + 1) = V(free[i]).imag();
  }
  for (int it = 0; it < max_iter; ++it) {
    set(V, x);
    const Eigen::VectorXd r = residual(V);
    Eigen::MatrixXd J(2 * u, 2 * u);
    for (int c = 0; c < 2 * u; ++c) {
      const double h = 1e-6 * std::max(1.0, std::abs(x(c)));
      Eigen::VectorXd xp = x, xm = x;
      xp(c) += h;
      xm(c) -= h;
      Eigen::VectorXcd vp = V, vm = V;
      set(vp, xp);
      set(vm, xm);
      J.col(c) = (residual(vp) - residual(vm)) / (2 * h);
    }
    const Eigen::VectorXd dx = J.fullPivLu().solve(-r);
    x += dx;
    if (dx.cwiseAbs().maxCoeff() < tol * 2400.0) break;
  }
  set(V, x);
  return std::vector<Complex>(V.data(), V.data() + n);
}

// --- numerics --------------------------------------------------------------

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central difference of a scalar function along coordinate c.
inline double central_difference(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                 Eigen::Index c, double h) {
  const double x0 = x(c);
  x(c) = x0 + h;
  const double fp = f(x);
  x(c) = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2 * h);
}

}  // namespace oracle
