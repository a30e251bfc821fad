#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dsse/grid_model.hpp"
#include "dsse/measurements.hpp"
#include "dsse/topology.hpp"

namespace dsse {

class NetworkError : public std::runtime_error {
 public:
  enum class Kind { template_mismatch, shape, divergence, empty, checkpoint };
  NetworkError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Where each measurement row lands in the per-bus input block. Rows go to
/// their anchor bus (the PMU side for branch currents) and take that bus's
/// next free channel in template order. Width is the largest per-bus count.
class InputLayout {
 public:
  InputLayout() = default;
  InputLayout(const FeederModel& model, const MeasurementSet& templ);

  int num_buses() const { return num_buses_; }
  int width() const { return width_; }  // channels per bus
  int size() const { return num_buses_ * width_; }
  /// Feature index of every template row.
  const std::vector<int>& slots() const { return slots_; }
  const MeasurementSet& templ() const { return templ_; }

  /// Throws NetworkError(template_mismatch) when row kinds, loci or phases
  /// differ from the template.
  void check(const MeasurementSet& z) const;
  Eigen::VectorXd embed(const MeasurementSet& z) const;
  /// Embeds a raw value vector already in template order.
  void embed_values(const Eigen::Ref<const Eigen::VectorXd>& values, Eigen::Ref<Eigen::VectorXd> out) const;

 private:
  MeasurementSet templ_;
  std::vector<int> slots_;
  int num_buses_ = 0;
  int width_ = 1;
};

Eigen::VectorXd embed_input(const MeasurementSet& z, const InputLayout& layout);

/// Trainable tensors. weights[t - 1] maps layer t - 1 units (input features
/// for t = 1) to layer t units; unit f of bus b sits at row b * F + f.
/// head_w holds one F-wide row per (bus, phase) output in state order.
struct Parameters {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Eigen::MatrixXd head_w;
  Eigen::VectorXd head_b;

  Eigen::Index size() const;
  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
  void set_zero();
};

/// Fixed affine maps around the trainable part: inputs are standardized per
/// feature, outputs are mean + scale * raw.
struct Normalization {
  Eigen::VectorXd in_mean, in_scale;
  Eigen::VectorXd out_mean, out_scale;
};

class MaskedNetwork {
 public:
  MaskedNetwork() = default;
  /// He-style initialization with fan-in counted over unmasked entries.
  MaskedNetwork(MaskPlan plan, int input_width, std::uint64_t seed, double leaky_slope = 0.01);

  const MaskPlan& plan() const { return plan_; }
  int input_width() const { return input_width_; }
  int input_size() const { return plan_.num_buses * input_width_; }
  int output_size() const { return static_cast<int>(head_bus_.size()); }
  double leaky_slope() const { return slope_; }
  const Parameters& params() const { return params_; }
  const Normalization& normalization() const { return norm_; }
  /// Unit-level mask of layer t (1-based).
  const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& mask(int t) const {
    return masks_[static_cast<std::size_t>(t - 1)];
  }

  void set_params(Parameters p);  // masks are re-applied
  void set_normalization(Normalization n);
  /// Fits the normalization to training features (columns are samples) and labels.
  void fit_normalization(const Eigen::MatrixXd& features, const Eigen::MatrixXd& labels);
  void apply_masks(Parameters& p) const;

  /// Estimated magnitudes (per unit, state order) for one sample or a batch
  /// of column samples.
  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& X) const;

  /// Sum over the batch of squared magnitude errors, plus its gradient with
  /// masked weight entries exactly 0.
  double loss_and_gradients(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, Parameters& grad) const;
  double loss(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const;

 private:
  using BoolMat = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
  void build_masks();

  MaskPlan plan_;
  int input_width_ = 0;
  double slope_ = 0.01;
  std::vector<BoolMat> masks_;
  std::vector<int> head_bus_;  // bus of each output row
  Parameters params_;
  Normalization norm_;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 64;
  int max_epochs = 300;
  int patience = 20;
  std::uint64_t seed = 1;
  double train_fraction = 0.9;       // of the full dataset, see make_split
  double validation_fraction = 0.1;  // carved from the training part
  double leaky_slope = 0.01;
};

struct TrainResult {
  MaskedNetwork network;
  std::vector<double> train_loss;  // mean per-sample loss per epoch
  std::vector<double> val_loss;
  int best_epoch = 0;
};

/// ADAM on minibatches with early stopping on validation loss. Returns the
/// parameters of the best validation epoch. Features and labels are column
/// samples; the call is deterministic per config.seed.
TrainResult train(const MaskPlan& plan, int input_width, const Eigen::MatrixXd& features,
                  const Eigen::MatrixXd& labels, const TrainConfig& config);

struct EvalReport {
  double nu = 0.0;              // mean over samples of ||v_hat - v_true||^2
  std::vector<double> per_bus;  // same, restricted to each bus's phases
  int samples = 0;
};

EvalReport evaluate(const MaskedNetwork& net, const Eigen::MatrixXd& features, const Eigen::MatrixXd& labels,
                    const FeederModel& model);
/// nu of arbitrary estimates against labels (both per unit, column samples).
EvalReport score(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& labels, const FeederModel& model);

struct Split {
  std::vector<int> train;
  std::vector<int> test;
};
/// Seeded shuffle of 0..count-1; the first round(fraction * count) go to train.
Split make_split(int count, double train_fraction, std::uint64_t seed);

/// Checkpoint: JSON with the plan fingerprint, PMU bus ids, measurement
/// template, normalization and parameters. Loading rebuilds the plan from
/// the feeder and rejects a fingerprint mismatch.
struct Checkpoint {
  MaskedNetwork network;
  InputLayout layout;
  std::vector<int> pmu_labels;
};
void save_checkpoint(std::ostream& out, const Checkpoint& ckpt, const FeederModel& model);
Checkpoint load_checkpoint(std::istream& in, const FeederModel& model);

}  // namespace dsse
