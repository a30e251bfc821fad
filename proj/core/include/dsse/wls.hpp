#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "dsse/grid_model.hpp"
#include "dsse/measurements.hpp"
#include "dsse/powerflow.hpp"

namespace dsse {

struct WlsConfig {
  double tolerance = 1e-7;  // max |dx| per unit of bus base voltage
  int max_iter = 50;
  bool flat_start = true;
  double max_condition = 1e12;  // of the Jacobi-scaled gain matrix
  int max_halvings = 4;
};

struct WlsReport {
  StateVector x_hat;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  double gain_condition = 0.0;
  std::vector<double> objective_history;  // J at the start point and after every step
};

class WlsError : public std::runtime_error {
 public:
  enum class Code { unobservable, non_converged };
  WlsError(Code code, const std::string& what, std::optional<WlsReport> last = std::nullopt)
      : std::runtime_error(what), code_(code), last_(std::move(last)) {}
  Code code() const { return code_; }
  const std::optional<WlsReport>& last() const { return last_; }

 private:
  Code code_;
  std::optional<WlsReport> last_;
};

/// [z - h(x)]^T R^-1 [z - h(x)].
double objective(const FeederModel& model, const MeasurementSet& z, const StateVector& x);

/// G = H^T R^-1 H at x.
Eigen::MatrixXd gain_matrix(const FeederModel& model, const MeasurementSet& z, const StateVector& x);

struct GainCheck {
  bool observable = false;
  double condition = 0.0;  // inf when the factorization fails
};

/// Factorizes the Jacobi-scaled gain matrix at x and estimates its condition.
GainCheck check_gain(const Eigen::MatrixXd& gain, double max_condition = WlsConfig{}.max_condition);
GainCheck check_observability(const FeederModel& model, const MeasurementSet& z, const StateVector& x,
                              double max_condition = WlsConfig{}.max_condition);

/// Gauss-Newton weighted least squares in rectangular voltage coordinates.
///
/// Each iteration solves G dx = H^T R^-1 (z - h(x)) with G and H evaluated at
/// the current iterate, halving the step (up to max_halvings times) until the
/// objective does not increase. Throws WlsError(unobservable) when the gain
/// matrix cannot be factorized or its condition estimate exceeds the bound,
/// and WlsError(non_converged) when max_iter is exhausted.
WlsReport estimate(const FeederModel& model, const MeasurementSet& z, const WlsConfig& config = {},
                   const StateVector* start = nullptr);

}  // namespace dsse
