#pragma once

#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "dsse/grid_model.hpp"

namespace dsse {

/// Complex bus voltages, one entry per (bus, phase) in the feeder's state
/// layout (bus-major, phase-minor; see FeederModel::state_index).
struct StateVector {
  std::vector<Complex> values;

  int size() const { return static_cast<int>(values.size()); }
  Complex& operator[](int i) { return values[static_cast<std::size_t>(i)]; }
  const Complex& operator[](int i) const { return values[static_cast<std::size_t>(i)]; }

  /// Rectangular real vector [re0, im0, re1, im1, ...].
  Eigen::VectorXd to_real() const;
  static StateVector from_real(const Eigen::VectorXd& x);
};

/// Balanced set at base voltage with angles 0, -120, +120 degrees.
Complex slack_voltage(const Bus& bus, Phase phase);

/// Every bus at its balanced nominal phasor.
StateVector flat_state(const FeederModel& model);

struct PowerFlowResult {
  StateVector state;
  std::vector<std::array<Complex, 3>> branch_currents;  // [branch][phase], from -> to
  int iterations = 0;
  double max_mismatch = 0.0;  // volts
};

class PowerFlowError : public std::runtime_error {
 public:
  enum class Kind { non_convergence, invalid_load, invalid_argument };
  PowerFlowError(Kind kind, const std::string& what, double last_mismatch = 0.0)
      : std::runtime_error(what), kind_(kind), last_mismatch_(last_mismatch) {}
  Kind kind() const { return kind_; }
  double last_mismatch() const { return last_mismatch_; }

 private:
  Kind kind_;
  double last_mismatch_;
};

/// 1e-8 of the largest bus base voltage.
double default_tolerance(const FeederModel& model);
inline constexpr int kDefaultPowerFlowIterations = 100;

/// Backward/forward sweep for constant-power loads.
///
/// Each iteration sums downstream load currents into branch currents, then
/// walks from the source applying the series voltage drops. Stops when the
/// largest voltage change of an iteration falls below `tolerance` volts.
PowerFlowResult solve_power_flow(const FeederModel& model, const BusPowers& loads,
                                 double tolerance, int max_iter = kDefaultPowerFlowIterations);
PowerFlowResult solve_power_flow(const FeederModel& model, const BusPowers& loads);

std::vector<double> voltage_magnitudes(const StateVector& state);
/// Magnitudes divided by each bus's base voltage, in state order.
std::vector<double> voltage_magnitudes_pu(const FeederModel& model, const StateVector& state);

/// Power drawn from the network at every (bus, phase) implied by `state`:
/// V * conj(sum of branch currents flowing into the bus).
BusPowers bus_consumption(const FeederModel& model, const StateVector& state);

/// Complex current from `from` to `to` on each phase of the branch.
std::array<Complex, 3> branch_current(const FeederModel& model, const StateVector& state,
                                      const Branch& branch);

}  // namespace dsse
