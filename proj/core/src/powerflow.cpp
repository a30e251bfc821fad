#include "dsse/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace dsse {

Eigen::VectorXd StateVector::to_real() const {
  Eigen::VectorXd x(2 * size());
  for (int i = 0; i < size(); ++i) {
    x(2 * i) = values[static_cast<std::size_t>(i)].real();
    x(2 * i + 1) = values[static_cast<std::size_t>(i)].imag();
  }
  return x;
}

StateVector StateVector::from_real(const Eigen::VectorXd& x) {
  StateVector s;
  s.values.resize(static_cast<std::size_t>(x.size() / 2));
  for (int i = 0; i < s.size(); ++i) s[i] = {x(2 * i), x(2 * i + 1)};
  return s;
}

Complex slack_voltage(const Bus& bus, Phase phase) {
  constexpr double kShift = 2.0 * std::numbers::pi / 3.0;
  const double angle = phase == Phase::A ? 0.0 : phase == Phase::B ? -kShift : kShift;
  return std::polar(bus.base_voltage, angle);
}

StateVector flat_state(const FeederModel& model) {
  StateVector s;
  s.values.resize(static_cast<std::size_t>(model.state_size()));
  for (const Bus& b : model.buses())
    for (Phase p : b.phases.phases()) s[model.state_index(b.index, p)] = slack_voltage(b, p);
  return s;
}

double default_tolerance(const FeederModel& model) {
  double base = 0.0;
  for (const Bus& b : model.buses()) base = std::max(base, b.base_voltage);
  return 1e-8 * base;
}

PowerFlowResult solve_power_flow(const FeederModel& model, const BusPowers& loads) {
  return solve_power_flow(model, loads, default_tolerance(model), kDefaultPowerFlowIterations);
}

PowerFlowResult solve_power_flow(const FeederModel& model, const BusPowers& loads,
                                 double tolerance, int max_iter) {
  if (!(tolerance > 0.0))
    throw PowerFlowError(PowerFlowError::Kind::invalid_argument, "tolerance must be positive");
  if (static_cast<int>(loads.size()) != model.num_buses())
    throw PowerFlowError(PowerFlowError::Kind::invalid_load, "load table has wrong bus count");
  for (const Bus& b : model.buses())
    for (Phase p : kAllPhases) {
      const Complex s = loads[static_cast<std::size_t>(b.index)][static_cast<std::size_t>(p)];
      if (s != Complex{} && !b.phases.contains(p))
        throw PowerFlowError(PowerFlowError::Kind::invalid_load,
                             "load on phase " + std::string(1, phase_letter(p)) +
                                 " which is absent at bus " + std::to_string(b.label));
    }

  const int n = model.num_buses();
  const auto& order = model.bfs_order();
  PowerFlowResult result;
  result.state = flat_state(model);
  StateVector& v = result.state;

  // Current flowing from parent into each bus through its supply branch.
  std::vector<std::array<Complex, 3>> down(static_cast<std::size_t>(n));

  for (int iter = 1; iter <= max_iter; ++iter) {
    for (auto& d : down) d = {};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const int bus = *it;
      const Bus& b = model.bus(bus);
      auto& acc = down[static_cast<std::size_t>(bus)];
      for (Phase p : b.phases.phases()) {
        const Complex s = loads[static_cast<std::size_t>(bus)][static_cast<std::size_t>(p)];
        if (s != Complex{}) acc[static_cast<std::size_t>(p)] += std::conj(s / v[model.state_index(bus, p)]);
      }
      const int parent = model.parent(bus);
      if (parent >= 0) {
        auto& up = down[static_cast<std::size_t>(parent)];
        for (Phase p : b.phases.phases()) up[static_cast<std::size_t>(p)] += acc[static_cast<std::size_t>(p)];
      }
    }

    double mismatch = 0.0;
    for (int bus : order) {
      const int parent = model.parent(bus);
      if (parent < 0) continue;
      const Branch& br = model.branch(model.parent_branch(bus));
      const auto phases = br.phases.phases();
      const int np = static_cast<int>(phases.size());
      Eigen::VectorXcd current(np);
      for (int k = 0; k < np; ++k)
        current(k) = down[static_cast<std::size_t>(bus)][static_cast<std::size_t>(phases[static_cast<std::size_t>(k)])];
      const Eigen::VectorXcd drop = br.impedance * current;
      for (int k = 0; k < np; ++k) {
        const Phase p = phases[static_cast<std::size_t>(k)];
        const Complex updated = v[model.state_index(parent, p)] - drop(k);
        Complex& old = v[model.state_index(bus, p)];
        mismatch = std::max(mismatch, std::abs(updated - old));
        old = updated;
      }
    }
    result.iterations = iter;
    result.max_mismatch = mismatch;
    if (mismatch <= tolerance) {
      result.branch_currents.assign(static_cast<std::size_t>(model.num_branches()), {});
      for (const Branch& br : model.branches())
        result.branch_currents[static_cast<std::size_t>(br.index)] = branch_current(model, v, br);
      return result;
    }
  }
  throw PowerFlowError(PowerFlowError::Kind::non_convergence,
                       "power flow did not converge in " + std::to_string(max_iter) +
                           " iterations (last mismatch " + std::to_string(result.max_mismatch) + " V)",
                       result.max_mismatch);
}

std::vector<double> voltage_magnitudes(const StateVector& state) {
  std::vector<double> out(state.values.size());
  std::transform(state.values.begin(), state.values.end(), out.begin(),
                 [](const Complex& c) { return std::abs(c); });
  return out;
}

std::vector<double> voltage_magnitudes_pu(const FeederModel& model, const StateVector& state) {
  std::vector<double> out(static_cast<std::size_t>(model.state_size()));
  for (const Bus& b : model.buses())
    for (Phase p : b.phases.phases()) {
      const int i = model.state_index(b.index, p);
      out[static_cast<std::size_t>(i)] = std::abs(state[i]) / b.base_voltage;
    }
  return out;
}

std::array<Complex, 3> branch_current(const FeederModel& model, const StateVector& state,
                                      const Branch& branch) {
  const auto phases = branch.phases.phases();
  const int np = static_cast<int>(phases.size());
  Eigen::VectorXcd dv(np);
  for (int k = 0; k < np; ++k) {
    const Phase p = phases[static_cast<std::size_t>(k)];
    dv(k) = state[model.state_index(branch.from, p)] - state[model.state_index(branch.to, p)];
  }
  const Eigen::VectorXcd i = branch.admittance * dv;
  std::array<Complex, 3> out{};
  for (int k = 0; k < np; ++k) out[static_cast<std::size_t>(phases[static_cast<std::size_t>(k)])] = i(k);
  return out;
}

BusPowers bus_consumption(const FeederModel& model, const StateVector& state) {
  BusPowers inflow(static_cast<std::size_t>(model.num_buses()), {Complex{}, Complex{}, Complex{}});
  for (const Branch& br : model.branches()) {
    const auto i = branch_current(model, state, br);
    for (Phase p : br.phases.phases()) {
      const auto k = static_cast<std::size_t>(p);
      inflow[static_cast<std::size_t>(br.to)][k] += i[k];
      inflow[static_cast<std::size_t>(br.from)][k] -= i[k];
    }
  }
  BusPowers out(inflow.size(), {Complex{}, Complex{}, Complex{}});
  for (const Bus& b : model.buses())
    for (Phase p : b.phases.phases()) {
      const auto k = static_cast<std::size_t>(p);
      out[static_cast<std::size_t>(b.index)][k] =
          state[model.state_index(b.index, p)] * std::conj(inflow[static_cast<std::size_t>(b.index)][k]);
    }
  return out;
}

}  // namespace dsse
