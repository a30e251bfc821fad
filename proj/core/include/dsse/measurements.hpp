#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dsse/grid_model.hpp"
#include "dsse/powerflow.hpp"

namespace dsse {

enum class MeasKind : std::uint8_t { v_real, v_imag, i_real, i_imag, p_injection, q_injection };
enum class NoiseKind : std::uint8_t {
  pmu_voltage,
  pmu_current,
  smart_meter_power,
  pseudo_power,
  zero_injection
};

std::string_view to_string(MeasKind kind);
std::string_view to_string(NoiseKind kind);
MeasKind parse_meas_kind(std::string_view text);

/// Maximum errors per measurement class. Magnitudes and powers are relative
/// fractions; the PMU angle is absolute radians. Noise is Gaussian with
/// sigma = max_error / 3.
struct NoiseModel {
  double pmu_magnitude = 0.01;
  double pmu_angle = 0.01;
  double smart_meter = 0.02;
  double pseudo = 0.5;
  double zero_injection = 1e-5;  // fraction of the feeder power base
};

struct NoiseClass {
  NoiseKind kind;
  double max_error;
};
NoiseClass noise_class(NoiseKind kind, const NoiseModel& noise);

/// One row of z. Bus rows use a bus index as locus, current rows a branch
/// index. Current rows measure the from -> to current and are anchored at
/// the PMU bus that reports them. Injection rows are signed as power drawn
/// from the network (a load reads positive).
struct Measurement {
  MeasKind kind = MeasKind::v_real;
  NoiseKind noise = NoiseKind::pmu_voltage;
  int locus = 0;
  Phase phase = Phase::A;
  int anchor_bus = 0;
  double value = 0.0;
  double variance = 0.0;
};

bool is_current(MeasKind kind);
bool is_injection(MeasKind kind);

/// Ordered measurement vector z with its diagonal covariance R.
///
/// Row order produced by plan_measurements: PMU voltages (PMU buses
/// ascending, phases A..C, real then imaginary), PMU branch currents (PMU
/// buses ascending, incident branches ascending, phases, real then imag),
/// load-bus injections (buses ascending, phases, P then Q), zero-injection
/// bus rows (buses ascending, phases, P then Q).
struct MeasurementSet {
  std::vector<Measurement> rows;
  NoiseModel noise;
  double power_base = 0.0;  // VA, reference for zero-injection noise

  int size() const { return static_cast<int>(rows.size()); }
  Eigen::VectorXd values() const;
  Eigen::VectorXd variances() const;
  /// Same rows with values and variances cleared.
  MeasurementSet as_template() const;
  /// Removes the listed row positions.
  MeasurementSet without_rows(std::vector<int> positions) const;
};

class MeasurementError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Builds the measurement template (values unset). `pmu_buses` and
/// `metered_loads` are bus indices; unmetered load phases become pseudo rows.
/// Phases of a load bus that carry no load are zero-injection rows.
MeasurementSet plan_measurements(const FeederModel& model, const std::vector<int>& pmu_buses,
                                 const std::vector<int>& metered_loads, double pseudo_noise,
                                 const NoiseModel& base_noise = {});

/// Precompiled h(x) and its Jacobian for one template. State vectors are
/// rectangular reals as produced by StateVector::to_real().
class MeasurementFunction {
 public:
  MeasurementFunction(const FeederModel& model, const MeasurementSet& set);

  int rows() const { return static_cast<int>(rows_.size()); }
  int cols() const { return cols_; }
  Eigen::VectorXd evaluate(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const;
  /// Evaluates into preallocated storage.
  void evaluate(const Eigen::VectorXd& x, Eigen::VectorXd& h) const;
  void jacobian(const Eigen::VectorXd& x, Eigen::MatrixXd& H) const;

 private:
  struct Term {
    int state;  // complex state index
    Complex coeff;
  };
  struct Row {
    MeasKind kind;
    int state = -1;  // voltage or injection bus state index
    int first = 0;   // current terms in terms_[first, first + count)
    int count = 0;
  };
  std::vector<Row> rows_;
  std::vector<Term> terms_;
  int cols_ = 0;
};

Eigen::VectorXd measurement_function(const FeederModel& model, const MeasurementSet& set,
                                     const StateVector& x);
Eigen::MatrixXd jacobian_rows(const FeederModel& model, const MeasurementSet& set,
                              const StateVector& x);

enum class Synthesis { noisy, noiseless };

/// Fills values with h(x_true) plus Gaussian noise (one standard normal draw
/// per row, in row order) and variances with the class sigma squared.
MeasurementSet synthesize(const FeederModel& model, const MeasurementSet& templ,
                          const StateVector& x_true, std::uint64_t seed,
                          Synthesis mode = Synthesis::noisy);
MeasurementSet synthesize(const FeederModel& model, const MeasurementSet& templ,
                          const StateVector& x_true, std::mt19937_64& rng,
                          Synthesis mode = Synthesis::noisy);

/// Class standard deviation of every row evaluated at x_true.
Eigen::VectorXd class_sigmas(const FeederModel& model, const MeasurementSet& templ,
                             const StateVector& x_true);

/// Columnar text: header "kind,locus,phase,value,variance". Bus loci are
/// written as bus ids, branch loci as "from-to" bus ids.
void write_measurements(std::ostream& out, const FeederModel& model, const MeasurementSet& set);
MeasurementSet read_measurements(std::istream& in, const FeederModel& model);

}  // namespace dsse
