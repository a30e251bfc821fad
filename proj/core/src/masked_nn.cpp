#include "dsse/masked_nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace dsse {

// ---------------------------------------------------------------- input layout

InputLayout::InputLayout(const FeederModel& model, const MeasurementSet& templ)
    : templ_(templ.as_template()), num_buses_(model.num_buses()) {
  std::vector<int> used(static_cast<std::size_t>(num_buses_), 0);
  std::vector<int> bus_of;
  for (const Measurement& m : templ_.rows) {
    if (m.anchor_bus < 0 || m.anchor_bus >= num_buses_)
      throw NetworkError(NetworkError::Kind::template_mismatch, "measurement anchored outside the feeder");
    bus_of.push_back(m.anchor_bus);
    slots_.push_back(used[static_cast<std::size_t>(m.anchor_bus)]++);
  }
  width_ = std::max(1, used.empty() ? 1 : *std::max_element(used.begin(), used.end()));
  for (std::size_t i = 0; i < slots_.size(); ++i) slots_[i] += bus_of[i] * width_;
}

void InputLayout::check(const MeasurementSet& z) const {
  if (z.size() != templ_.size())
    throw NetworkError(NetworkError::Kind::template_mismatch,
                       "measurement set has " + std::to_string(z.size()) + " rows, template has " +
                           std::to_string(templ_.size()));
  for (int i = 0; i < z.size(); ++i) {
    const Measurement& a = z.rows[static_cast<std::size_t>(i)];
    const Measurement& b = templ_.rows[static_cast<std::size_t>(i)];
    if (a.kind != b.kind || a.locus != b.locus || a.phase != b.phase)
      throw NetworkError(NetworkError::Kind::template_mismatch,
                         "row " + std::to_string(i) + " does not match the training template");
  }
}

void InputLayout::embed_values(const Eigen::Ref<const Eigen::VectorXd>& values,
                               Eigen::Ref<Eigen::VectorXd> out) const {
  out.setZero();
  for (std::size_t i = 0; i < slots_.size(); ++i) out(slots_[i]) = values(static_cast<Eigen::Index>(i));
}

Eigen::VectorXd InputLayout::embed(const MeasurementSet& z) const {
  check(z);
  Eigen::VectorXd out(size());
  embed_values(z.values(), out);
  return out;
}

Eigen::VectorXd embed_input(const MeasurementSet& z, const InputLayout& layout) { return layout.embed(z); }

// ---------------------------------------------------------------- parameters

Eigen::Index Parameters::size() const {
  Eigen::Index n = head_w.size() + head_b.size();
  for (const auto& w : weights) n += w.size();
  for (const auto& b : biases) n += b.size();
  return n;
}

namespace {

template <class P, class F>
void for_each_block(P& p, F&& f) {
  for (auto& w : p.weights) f(w.data(), w.size());
  for (auto& b : p.biases) f(b.data(), b.size());
  f(p.head_w.data(), p.head_w.size());
  f(p.head_b.data(), p.head_b.size());
}

}  // namespace

Eigen::VectorXd Parameters::flatten() const {
  Eigen::VectorXd flat(size());
  Eigen::Index at = 0;
  for_each_block(*this, [&](const double* data, Eigen::Index n) {
    flat.segment(at, n) = Eigen::Map<const Eigen::VectorXd>(data, n);
    at += n;
  });
  return flat;
}

void Parameters::assign(const Eigen::VectorXd& flat) {
  if (flat.size() != size()) throw NetworkError(NetworkError::Kind::shape, "flat parameter size mismatch");
  Eigen::Index at = 0;
  for_each_block(*this, [&](double* data, Eigen::Index n) {
    Eigen::Map<Eigen::VectorXd>(data, n) = flat.segment(at, n);
    at += n;
  });
}

void Parameters::set_zero() {
  for_each_block(*this, [](double* data, Eigen::Index n) { Eigen::Map<Eigen::VectorXd>(data, n).setZero(); });
}

// ---------------------------------------------------------------- network

namespace {

double leaky(double z, double slope) { return z > 0.0 ? z : slope * z; }

}  // namespace

MaskedNetwork::MaskedNetwork(MaskPlan plan, int input_width, std::uint64_t seed, double leaky_slope)
    : plan_(std::move(plan)), input_width_(input_width), slope_(leaky_slope) {
  if (input_width_ < 1) throw NetworkError(NetworkError::Kind::shape, "input width must be at least 1");
  if (plan_.depth < 1 || static_cast<int>(plan_.masks.size()) != plan_.depth)
    throw NetworkError(NetworkError::Kind::shape, "mask plan has no layers");
  build_masks();

  const int n = plan_.num_buses, f = plan_.block_width;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 1; t <= plan_.depth; ++t) {
    const BoolMat& m = masks_[static_cast<std::size_t>(t - 1)];
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m.rows(), m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const auto fan_in = m.row(r).count();
      const double sd = fan_in > 0 ? std::sqrt(2.0 / static_cast<double>(fan_in)) : 0.0;
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        if (m(r, c)) w(r, c) = sd * normal(rng);
    }
    params_.weights.push_back(std::move(w));
    params_.biases.push_back(Eigen::VectorXd::Zero(n * f));
  }
  const int s = output_size();
  params_.head_w.resize(s, f);
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < f; ++c) params_.head_w(r, c) = normal(rng) / std::sqrt(static_cast<double>(f));
  params_.head_b = Eigen::VectorXd::Zero(s);

  norm_.in_mean = Eigen::VectorXd::Zero(input_size());
  norm_.in_scale = Eigen::VectorXd::Ones(input_size());
  norm_.out_mean = Eigen::VectorXd::Zero(s);
  norm_.out_scale = Eigen::VectorXd::Ones(s);
}

void MaskedNetwork::build_masks() {
  const int n = plan_.num_buses, f = plan_.block_width;
  masks_.clear();
  for (int t = 1; t <= plan_.depth; ++t) {
    const BoolMatrix& bus_mask = plan_.masks[static_cast<std::size_t>(t - 1)];
    const int cw = t == 1 ? input_width_ : f;
    BoolMat m = BoolMat::Constant(n * f, n * cw, false);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (bus_mask(i, j)) m.block(i * f, j * cw, f, cw).setConstant(true);
    masks_.push_back(std::move(m));
  }
  head_bus_.clear();
  for (int b = 0; b < n; ++b)
    for (int k = 0; k < plan_.bus_outputs[static_cast<std::size_t>(b)]; ++k) head_bus_.push_back(b);
}

void MaskedNetwork::apply_masks(Parameters& p) const {
  for (std::size_t t = 0; t < masks_.size(); ++t)
    p.weights[t] = masks_[t].select(p.weights[t], Eigen::MatrixXd::Zero(p.weights[t].rows(), p.weights[t].cols()));
}

void MaskedNetwork::set_params(Parameters p) {
  if (p.weights.size() != params_.weights.size() || p.biases.size() != params_.biases.size() ||
      p.size() != params_.size())
    throw NetworkError(NetworkError::Kind::shape, "parameter shapes do not match the plan");
  for (std::size_t t = 0; t < p.weights.size(); ++t)
    if (p.weights[t].rows() != params_.weights[t].rows() || p.weights[t].cols() != params_.weights[t].cols())
      throw NetworkError(NetworkError::Kind::shape, "weight shape mismatch at layer " + std::to_string(t + 1));
  apply_masks(p);
  params_ = std::move(p);
}

void MaskedNetwork::set_normalization(Normalization n) {
  if (n.in_mean.size() != input_size() || n.in_scale.size() != input_size() || n.out_mean.size() != output_size() ||
      n.out_scale.size() != output_size())
    throw NetworkError(NetworkError::Kind::shape, "normalization shape mismatch");
  norm_ = std::move(n);
}

void MaskedNetwork::fit_normalization(const Eigen::MatrixXd& features, const Eigen::MatrixXd& labels) {
  if (features.cols() == 0) throw NetworkError(NetworkError::Kind::empty, "no samples to fit normalization");
  auto moments = [](const Eigen::MatrixXd& m, Eigen::VectorXd& mean, Eigen::VectorXd& sd) {
    mean = m.rowwise().mean();
    sd = ((m.colwise() - mean).array().square().rowwise().sum() / static_cast<double>(m.cols())).sqrt();
  };
  Eigen::VectorXd sd;
  moments(features, norm_.in_mean, sd);
  norm_.in_scale = sd.unaryExpr([](double s) { return s > 0.0 ? 1.0 / s : 1.0; });
  moments(labels, norm_.out_mean, sd);
  norm_.out_scale = sd.cwiseMax(1e-4);
}

namespace {

struct Trace {
  std::vector<Eigen::MatrixXd> z;  // pre-activations, layers 1..T
  std::vector<Eigen::MatrixXd> k;  // activations, k[0] = normalized input
};

}  // namespace

Eigen::MatrixXd MaskedNetwork::forward_batch(const Eigen::MatrixXd& X) const {
  if (X.rows() != input_size()) throw NetworkError(NetworkError::Kind::shape, "feature size mismatch");
  const int f = plan_.block_width;
  std::vector<Eigen::MatrixXd> k;
  k.reserve(static_cast<std::size_t>(plan_.depth) + 1);
  k.push_back(((X.colwise() - norm_.in_mean).array().colwise() * norm_.in_scale.array()).matrix());
  for (int t = 1; t <= plan_.depth; ++t) {
    Eigen::MatrixXd z = params_.weights[static_cast<std::size_t>(t - 1)] * k.back();
    z.colwise() += params_.biases[static_cast<std::size_t>(t - 1)];
    k.push_back(z.unaryExpr([s = slope_](double v) { return leaky(v, s); }));
  }
  Eigen::MatrixXd out(output_size(), X.cols());
  for (int r = 0; r < output_size(); ++r) {
    const int b = head_bus_[static_cast<std::size_t>(r)];
    const auto& kt = k[static_cast<std::size_t>(plan_.exit_layer[static_cast<std::size_t>(b)])];
    out.row(r) = params_.head_w.row(r) * kt.middleRows(b * f, f);
  }
  out.colwise() += params_.head_b;
  out = ((out.array().colwise() * norm_.out_scale.array()).colwise() + norm_.out_mean.array()).matrix();
  return out;
}

Eigen::VectorXd MaskedNetwork::forward(const Eigen::VectorXd& x) const { return forward_batch(x); }

double MaskedNetwork::loss(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  return (forward_batch(X) - Y).squaredNorm();
}

double MaskedNetwork::loss_and_gradients(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, Parameters& grad) const {
  if (X.cols() == 0) throw NetworkError(NetworkError::Kind::empty, "empty batch");
  if (X.rows() != input_size() || Y.rows() != output_size() || Y.cols() != X.cols())
    throw NetworkError(NetworkError::Kind::shape, "batch shape mismatch");
  const int f = plan_.block_width;
  const auto T = static_cast<std::size_t>(plan_.depth);

  Trace tr;
  tr.k.push_back(((X.colwise() - norm_.in_mean).array().colwise() * norm_.in_scale.array()).matrix());
  for (std::size_t t = 0; t < T; ++t) {
    Eigen::MatrixXd z = params_.weights[t] * tr.k.back();
    z.colwise() += params_.biases[t];
    tr.k.push_back(z.unaryExpr([s = slope_](double v) { return leaky(v, s); }));
    tr.z.push_back(std::move(z));
  }
  Eigen::MatrixXd raw(output_size(), X.cols());
  for (int r = 0; r < output_size(); ++r) {
    const int b = head_bus_[static_cast<std::size_t>(r)];
    raw.row(r) = params_.head_w.row(r) * tr.k[static_cast<std::size_t>(plan_.exit_layer[static_cast<std::size_t>(b)])].middleRows(b * f, f);
  }
  raw.colwise() += params_.head_b;
  const Eigen::MatrixXd err =
      ((raw.array().colwise() * norm_.out_scale.array()).colwise() + norm_.out_mean.array()).matrix() - Y;
  const double value = err.squaredNorm();

  grad = params_;
  grad.set_zero();
  // d loss / d raw
  const Eigen::MatrixXd d_raw = ((2.0 * err.array()).colwise() * norm_.out_scale.array()).matrix();
  grad.head_b = d_raw.rowwise().sum();
  std::vector<Eigen::MatrixXd> dk(T + 1);
  for (std::size_t t = 1; t <= T; ++t) dk[t] = Eigen::MatrixXd::Zero(tr.k[t].rows(), tr.k[t].cols());
  for (int r = 0; r < output_size(); ++r) {
    const int b = head_bus_[static_cast<std::size_t>(r)];
    const auto t = static_cast<std::size_t>(plan_.exit_layer[static_cast<std::size_t>(b)]);
    grad.head_w.row(r) = d_raw.row(r) * tr.k[t].middleRows(b * f, f).transpose();
    dk[t].middleRows(b * f, f) += params_.head_w.row(r).transpose() * d_raw.row(r);
  }
  for (std::size_t t = T; t >= 1; --t) {
    const Eigen::MatrixXd dz =
        dk[t].cwiseProduct(tr.z[t - 1].unaryExpr([s = slope_](double v) { return v > 0.0 ? 1.0 : s; }));
    grad.weights[t - 1] = masks_[t - 1].select(dz * tr.k[t - 1].transpose(),
                                               Eigen::MatrixXd::Zero(dz.rows(), tr.k[t - 1].rows()));
    grad.biases[t - 1] = dz.rowwise().sum();
    if (t > 1) dk[t - 1] += params_.weights[t - 1].transpose() * dz;
  }
  return value;
}

// ---------------------------------------------------------------- training

Split make_split(int count, double train_fraction, std::uint64_t seed) {
  if (count < 0 || !(train_fraction >= 0.0 && train_fraction <= 1.0))
    throw std::invalid_argument("split needs count >= 0 and fraction in [0, 1]");
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * count));
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return s;
}

namespace {

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<int>& cols, std::size_t first, std::size_t last) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(last - first));
  for (std::size_t i = first; i < last; ++i) out.col(static_cast<Eigen::Index>(i - first)) = m.col(cols[i]);
  return out;
}

}  // namespace

TrainResult train(const MaskPlan& plan, int input_width, const Eigen::MatrixXd& features,
                  const Eigen::MatrixXd& labels, const TrainConfig& config) {
  if (features.cols() == 0) throw NetworkError(NetworkError::Kind::empty, "no training samples");
  if (features.cols() != labels.cols()) throw NetworkError(NetworkError::Kind::shape, "feature/label count mismatch");
  if (config.batch_size < 1 || config.max_epochs < 0 || config.patience < 1)
    throw std::invalid_argument("batch size and patience must be positive");

  // Validation samples come out of the training part; the caller keeps the test part.
  const auto count = static_cast<int>(features.cols());
  Split split = make_split(count, count < 2 ? 1.0 : 1.0 - config.validation_fraction, config.seed ^ 0x5bd1e995ull);
  if (split.test.empty()) split.test = split.train;
  const Eigen::MatrixXd Xv = gather(features, split.test, 0, split.test.size());
  const Eigen::MatrixXd Yv = gather(labels, split.test, 0, split.test.size());

  TrainResult result;
  result.network = MaskedNetwork(plan, input_width, config.seed, config.leaky_slope);
  MaskedNetwork& net = result.network;
  net.fit_normalization(gather(features, split.train, 0, split.train.size()),
                        gather(labels, split.train, 0, split.train.size()));

  Parameters best = net.params();
  double best_val = net.loss(Xv, Yv) / static_cast<double>(Xv.cols());
  result.best_epoch = 0;

  Eigen::VectorXd theta = net.params().flatten();
  Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(theta.size());
  Parameters grad, work = net.params();
  std::mt19937_64 rng(config.seed + 1);
  std::vector<int> order = split.train;
  long long step = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(config.batch_size));
      const double l = net.loss_and_gradients(gather(features, order, first, last), gather(labels, order, first, last), grad);
      if (!std::isfinite(l))
        throw NetworkError(NetworkError::Kind::divergence,
                           "training loss is not finite at epoch " + std::to_string(epoch));
      epoch_loss += l;
      ++step;
      const Eigen::VectorXd g = grad.flatten();
      m = config.beta1 * m + (1.0 - config.beta1) * g;
      v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      theta.array() -= config.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config.epsilon);
      work.assign(theta);
      net.set_params(work);
      theta = net.params().flatten();  // masked entries back to exact zero
    }
    result.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    const double val = net.loss(Xv, Yv) / static_cast<double>(Xv.cols());
    if (!std::isfinite(val))
      throw NetworkError(NetworkError::Kind::divergence, "validation loss is not finite at epoch " + std::to_string(epoch));
    result.val_loss.push_back(val);
    if (val < best_val) {
      best_val = val;
      best = net.params();
      result.best_epoch = epoch;
    } else if (epoch - result.best_epoch >= config.patience) {
      break;
    }
  }
  net.set_params(best);
  return result;
}

EvalReport score(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& labels, const FeederModel& model) {
  if (labels.cols() == 0) throw NetworkError(NetworkError::Kind::empty, "empty test set");
  if (estimates.rows() != labels.rows() || estimates.cols() != labels.cols() || labels.rows() != model.state_size())
    throw NetworkError(NetworkError::Kind::shape, "estimate/label shape mismatch");
  EvalReport rep;
  rep.samples = static_cast<int>(labels.cols());
  const Eigen::VectorXd sq = (estimates - labels).array().square().rowwise().sum() / static_cast<double>(rep.samples);
  rep.nu = sq.sum();
  for (const Bus& b : model.buses()) rep.per_bus.push_back(sq.segment(model.state_offset(b.index), b.phases.size()).sum());
  return rep;
}

EvalReport evaluate(const MaskedNetwork& net, const Eigen::MatrixXd& features, const Eigen::MatrixXd& labels,
                    const FeederModel& model) {
  if (features.cols() == 0) throw NetworkError(NetworkError::Kind::empty, "empty test set");
  return score(net.forward_batch(features), labels, model);
}

}  // namespace dsse
