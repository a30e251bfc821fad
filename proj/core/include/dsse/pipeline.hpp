#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dsse/grid_model.hpp"
#include "dsse/masked_nn.hpp"
#include "dsse/measurements.hpp"
#include "dsse/topology.hpp"
#include "dsse/wls.hpp"

namespace dsse {

/// Synthetic daily load curves. Sample i sits at hour (i mod steps_per_day)
/// * 24 / steps_per_day; every load is scaled by
///   scale * (1 + amplitude * cos(2 pi (hour - peak_hour) / 24)) * exp(sigma n - sigma^2 / 2)
/// with n standard normal, one draw per load and sample.
struct LoadProfileConfig {
  int samples = 10000;
  std::uint64_t seed = 1;
  double peak_hour = 19.0;
  double amplitude = 0.3;
  double noise_sigma = 0.05;
  int steps_per_day = 96;
  double scale = 1.0;
};

/// Independent stream seed for (seed, index, stream), via splitmix64.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream = 0);

double profile_shape(const LoadProfileConfig& config, int sample);
BusPowers sample_loads(const FeederModel& model, const LoadProfileConfig& config, int sample, int attempt = 0);

/// Column-sample measurement values/variances in template order, with
/// per-unit magnitude labels in state order.
struct Dataset {
  std::string feeder;
  MeasurementSet templ;
  Eigen::MatrixXd values;
  Eigen::MatrixXd variances;
  Eigen::MatrixXd labels;
  int resampled = 0;  // load draws redrawn after power-flow failure
  std::uint64_t config_hash = 0;

  int size() const { return static_cast<int>(labels.cols()); }
  MeasurementSet sample(int i) const;
  /// Embedded features of the selected samples, columns in `indices` order.
  Eigen::MatrixXd features(const InputLayout& layout, const std::vector<int>& indices) const;
  Eigen::MatrixXd label_columns(const std::vector<int>& indices) const;
};

/// Hash of everything that determines a dataset's content.
std::uint64_t dataset_hash(const FeederModel& model, const LoadProfileConfig& profile, const MeasurementSet& templ,
                           std::uint64_t noise_seed);

/// Draw loads, solve the power flow, record magnitudes, synthesize z. Sample
/// i uses seeds derived from (profile.seed, i) for its loads and
/// (noise_seed, i) for its measurement noise, so any thread count yields the
/// same data. threads <= 0 picks the hardware concurrency.
Dataset generate_dataset(const FeederModel& model, const LoadProfileConfig& profile, const MeasurementSet& templ,
                         std::uint64_t noise_seed, int threads = 0);

/// Binary layout (little-endian): magic "DSSEDSET", u32 version, u64 config
/// hash, u32 resampled, u32 template JSON length + bytes, u32 rows, u32
/// state size, u32 samples, then values, variances and labels as f64
/// column-major.
void write_dataset(std::ostream& out, const Dataset& data, const FeederModel& model);
Dataset read_dataset(std::istream& in, const FeederModel& model);

std::string template_to_json(const MeasurementSet& templ, const FeederModel& model);
MeasurementSet template_from_json(const std::string& text, const FeederModel& model);
/// Buses carrying PMU voltage rows in a template.
std::vector<int> template_pmu_buses(const MeasurementSet& templ);

struct Scenario {
  std::string name;
  std::vector<int> pmu_buses;      // bus ids
  std::vector<int> metered_buses;  // bus ids with smart meters
  double pseudo_noise = 0.3;
  bool remove_until_unobservable = false;
};

/// Pseudo rows removed last-first in template order until the gain matrix
/// at the nominal power-flow state stops being factorizable. Returns the
/// removed positions; throws if removing every pseudo row keeps it regular.
std::vector<int> plan_pseudo_removal(const FeederModel& model, const MeasurementSet& templ);

struct ScenarioSetup {
  MeasurementSet templ;
  std::vector<int> removed_rows;  // positions in the full template
};
ScenarioSetup setup_scenario(const FeederModel& model, const Scenario& scenario);

enum class EstimatorKind { wls, pawnn, p2n2 };
std::string_view to_string(EstimatorKind kind);
EstimatorKind parse_estimator(std::string_view text);

struct BenchRow {
  std::string scenario;
  std::string estimator;
  double nu = 0.0;           // NaN when the estimator failed
  double mean_time_s = 0.0;  // per test sample
  std::string status;        // ok, unobservable, non_converged, partial
  int samples = 0;
  int failures = 0;
  long long params = 0;  // trainable parameters, 0 for WLS
};

struct MagnitudeTrace {
  std::string scenario;
  std::string estimator;
  std::vector<int> samples;  // dataset indices
  Eigen::MatrixXd truth;     // state_size x samples, per unit
  Eigen::MatrixXd estimate;
};

struct BenchConfig {
  std::vector<EstimatorKind> estimators{EstimatorKind::wls, EstimatorKind::pawnn, EstimatorKind::p2n2};
  TrainConfig train;
  int block_width = kDefaultBlockWidth;
  double train_fraction = 0.9;
  std::uint64_t split_seed = 1;
  int trace_samples = 96;
  WlsConfig wls;
};

struct ScenarioResult {
  std::vector<BenchRow> rows;
  std::vector<MagnitudeTrace> traces;
  std::optional<MaskedNetwork> pawnn;
  std::optional<MaskedNetwork> p2n2;
  InputLayout layout;
};

/// Trains the network estimators on the train split and scores every
/// estimator on the shared test split. Only the estimate call is timed.
ScenarioResult run_scenario(const FeederModel& model, const Scenario& scenario, const Dataset& data,
                            const BenchConfig& config);

/// Bench suite file (JSON): feeder path (relative to the suite file),
/// profile, noise_seed, block_width, train settings, estimators, scenarios.
struct Suite {
  std::filesystem::path feeder;
  LoadProfileConfig profile;
  std::uint64_t noise_seed = 1;
  BenchConfig bench;
  std::vector<Scenario> scenarios;
};
Suite load_suite(const std::filesystem::path& path);
Suite parse_suite(const std::string& text, const std::filesystem::path& base_dir);
/// Applies a `--seed` override to every seeded stage.
void reseed(Suite& suite, std::uint64_t seed);

/// Generation config (JSON): {"profile": {...}, "noise_seed": n, "scenario": {...}}.
struct GenerateConfig {
  LoadProfileConfig profile;
  std::uint64_t noise_seed = 1;
  Scenario scenario;
};
GenerateConfig parse_generate_config(const std::string& text);
TrainConfig parse_train_config(const std::string& text);

// Reporting.
std::string format_table(const std::vector<BenchRow>& rows);
void write_summary_csv(std::ostream& out, const std::vector<BenchRow>& rows);
std::vector<BenchRow> read_summary_csv(std::istream& in);
/// Columns: sample,bus,phase,true_pu,estimate_pu.
void write_trace_csv(std::ostream& out, const MagnitudeTrace& trace, const FeederModel& model);
/// summary.csv, summary.txt and trace_<scenario>_<estimator>.csv under dir.
void write_report(const std::filesystem::path& dir, const std::vector<BenchRow>& rows,
                  const std::vector<MagnitudeTrace>& traces, const FeederModel& model);

}  // namespace dsse
