#include "dsse/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "dsse/powerflow.hpp"

namespace dsse {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ index) ^ stream);
}

double profile_shape(const LoadProfileConfig& config, int sample) {
  const double hour = static_cast<double>(sample % config.steps_per_day) * 24.0 / config.steps_per_day;
  return config.scale * (1.0 + config.amplitude * std::cos(2.0 * std::numbers::pi * (hour - config.peak_hour) / 24.0));
}

BusPowers sample_loads(const FeederModel& model, const LoadProfileConfig& config, int sample, int attempt) {
  std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(sample), 1 + static_cast<std::uint64_t>(attempt)));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double shape = profile_shape(config, sample);
  const double s = config.noise_sigma;
  BusPowers out(static_cast<std::size_t>(model.num_buses()), {Complex{}, Complex{}, Complex{}});
  for (const Load& ld : model.loads()) {
    const double factor = shape * std::exp(s * normal(rng) - 0.5 * s * s);
    const auto phases = ld.phases.phases();
    for (std::size_t k = 0; k < phases.size(); ++k)
      out[static_cast<std::size_t>(ld.bus)][static_cast<std::size_t>(phases[k])] += factor * ld.power[k];
  }
  return out;
}

MeasurementSet Dataset::sample(int i) const {
  MeasurementSet z = templ;
  for (int r = 0; r < z.size(); ++r) {
    z.rows[static_cast<std::size_t>(r)].value = values(r, i);
    z.rows[static_cast<std::size_t>(r)].variance = variances(r, i);
  }
  return z;
}

Eigen::MatrixXd Dataset::features(const InputLayout& layout, const std::vector<int>& indices) const {
  Eigen::MatrixXd out(layout.size(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t k = 0; k < indices.size(); ++k)
    layout.embed_values(values.col(indices[k]), out.col(static_cast<Eigen::Index>(k)));
  return out;
}

Eigen::MatrixXd Dataset::label_columns(const std::vector<int>& indices) const {
  Eigen::MatrixXd out(labels.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t k = 0; k < indices.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = labels.col(indices[k]);
  return out;
}

namespace {

struct Fnv {
  std::uint64_t h = 1469598103934665603ull;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ull;
    }
  }
  void str(const std::string& s) { bytes(s.data(), s.size()); }
  template <class T>
  void pod(T v) { bytes(&v, sizeof v); }
};

}  // namespace

std::uint64_t dataset_hash(const FeederModel& model, const LoadProfileConfig& profile, const MeasurementSet& templ,
                           std::uint64_t noise_seed) {
  Fnv f;
  f.str(serialize_feeder(model));
  f.pod(profile.samples);
  f.pod(profile.seed);
  f.pod(profile.peak_hour);
  f.pod(profile.amplitude);
  f.pod(profile.noise_sigma);
  f.pod(profile.steps_per_day);
  f.pod(profile.scale);
  f.str(template_to_json(templ, model));
  f.pod(noise_seed);
  return f.h;
}

Dataset generate_dataset(const FeederModel& model, const LoadProfileConfig& profile, const MeasurementSet& templ,
                         std::uint64_t noise_seed, int threads) {
  if (profile.samples < 1) throw std::invalid_argument("profile needs at least one sample");
  if (profile.steps_per_day < 1) throw std::invalid_argument("steps_per_day must be positive");
  const int m = profile.samples;
  Dataset data;
  data.feeder = model.name();
  data.templ = templ.as_template();
  data.values.resize(templ.size(), m);
  data.variances.resize(templ.size(), m);
  data.labels.resize(model.state_size(), m);
  data.config_hash = dataset_hash(model, profile, data.templ, noise_seed);

  constexpr int kMaxAttempts = 20;
  const double tol = default_tolerance(model);

  int workers = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min(workers, m);
  std::vector<int> resampled(static_cast<std::size_t>(workers), 0);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));

  auto work = [&](int w) {
    try {
      for (int i = w; i < m; i += workers) {
        PowerFlowResult pf;
        for (int attempt = 0;; ++attempt) {
          try {
            pf = solve_power_flow(model, sample_loads(model, profile, i, attempt), tol);
            break;
          } catch (const PowerFlowError& e) {
            if (e.kind() != PowerFlowError::Kind::non_convergence || attempt + 1 >= kMaxAttempts) throw;
            ++resampled[static_cast<std::size_t>(w)];
          }
        }
        const MeasurementSet z =
            synthesize(model, data.templ, pf.state, derive_seed(noise_seed, static_cast<std::uint64_t>(i)));
        for (int r = 0; r < z.size(); ++r) {
          data.values(r, i) = z.rows[static_cast<std::size_t>(r)].value;
          data.variances(r, i) = z.rows[static_cast<std::size_t>(r)].variance;
        }
        const auto mags = voltage_magnitudes_pu(model, pf.state);
        for (std::size_t s = 0; s < mags.size(); ++s) data.labels(static_cast<Eigen::Index>(s), i) = mags[s];
      }
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };

  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (int r : resampled) data.resampled += r;
  return data;
}

std::vector<int> plan_pseudo_removal(const FeederModel& model, const MeasurementSet& templ) {
  const PowerFlowResult pf = solve_power_flow(model, model.nominal_loads());
  const MeasurementSet z = synthesize(model, templ, pf.state, 0, Synthesis::noiseless);
  const Eigen::MatrixXd H = jacobian_rows(model, z, pf.state);
  const Eigen::VectorXd sqrt_w = z.variances().cwiseInverse().cwiseSqrt();
  const Eigen::MatrixXd A = sqrt_w.asDiagonal() * H;

  std::vector<char> keep(static_cast<std::size_t>(z.size()), 1);
  std::vector<int> removed;
  for (int i = z.size() - 1; i >= 0; --i) {
    if (z.rows[static_cast<std::size_t>(i)].noise != NoiseKind::pseudo_power) continue;
    keep[static_cast<std::size_t>(i)] = 0;
    removed.push_back(i);
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(A.cols(), A.cols());
    for (int r = 0; r < z.size(); ++r)
      if (keep[static_cast<std::size_t>(r)]) G.selfadjointView<Eigen::Lower>().rankUpdate(A.row(r).transpose());
    if (!check_gain(Eigen::MatrixXd(G.selfadjointView<Eigen::Lower>())).observable) {
      std::sort(removed.begin(), removed.end());
      return removed;
    }
  }
  throw MeasurementError("the plan stays observable with every pseudo measurement removed");
}

ScenarioSetup setup_scenario(const FeederModel& model, const Scenario& scenario) {
  ScenarioSetup s;
  const MeasurementSet full = plan_measurements(model, model.indices_of(scenario.pmu_buses),
                                                model.indices_of(scenario.metered_buses), scenario.pseudo_noise);
  if (scenario.remove_until_unobservable) {
    s.removed_rows = plan_pseudo_removal(model, full);
    s.templ = full.without_rows(s.removed_rows);
  } else {
    s.templ = full;
  }
  return s;
}

std::string_view to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::wls: return "wls";
    case EstimatorKind::pawnn: return "pawnn";
    case EstimatorKind::p2n2: return "p2n2";
  }
  return "?";
}

EstimatorKind parse_estimator(std::string_view text) {
  for (EstimatorKind k : {EstimatorKind::wls, EstimatorKind::pawnn, EstimatorKind::p2n2})
    if (to_string(k) == text) return k;
  throw std::invalid_argument("unknown estimator \"" + std::string(text) + "\"");
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds(Clock::duration d) { return std::chrono::duration<double>(d).count(); }

MagnitudeTrace make_trace(const std::string& scenario, EstimatorKind kind, const std::vector<int>& test,
                          const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimate, int count) {
  MagnitudeTrace t;
  t.scenario = scenario;
  t.estimator = std::string(to_string(kind));
  const int n = std::min<int>(count, static_cast<int>(test.size()));
  t.samples.assign(test.begin(), test.begin() + n);
  t.truth = truth.leftCols(n);
  t.estimate = estimate.leftCols(n);
  return t;
}

}  // namespace

ScenarioResult run_scenario(const FeederModel& model, const Scenario& scenario, const Dataset& data,
                            const BenchConfig& config) {
  if (data.size() < 2) throw std::invalid_argument("dataset needs at least two samples");
  ScenarioResult result;
  const Split split = make_split(data.size(), config.train_fraction, config.split_seed);
  if (split.test.empty() || split.train.empty()) throw std::invalid_argument("train/test split leaves a side empty");
  const Eigen::MatrixXd truth = data.label_columns(split.test);
  result.layout = InputLayout(model, data.templ);

  for (EstimatorKind kind : config.estimators) {
    BenchRow row;
    row.scenario = scenario.name;
    row.estimator = std::string(to_string(kind));
    row.samples = static_cast<int>(split.test.size());

    if (kind == EstimatorKind::wls) {
      Eigen::MatrixXd est = Eigen::MatrixXd::Constant(truth.rows(), truth.cols(), std::numeric_limits<double>::quiet_NaN());
      Clock::duration total{};
      int unobservable = 0, non_converged = 0;
      for (std::size_t k = 0; k < split.test.size(); ++k) {
        const MeasurementSet z = data.sample(split.test[k]);
        const auto t0 = Clock::now();
        try {
          const WlsReport rep = estimate(model, z, config.wls);
          total += Clock::now() - t0;
          const auto mags = voltage_magnitudes_pu(model, rep.x_hat);
          for (std::size_t s = 0; s < mags.size(); ++s) est(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) = mags[s];
        } catch (const WlsError& e) {
          total += Clock::now() - t0;
          (e.code() == WlsError::Code::unobservable ? unobservable : non_converged)++;
        }
      }
      row.failures = unobservable + non_converged;
      row.mean_time_s = seconds(total) / static_cast<double>(split.test.size());
      if (row.failures == 0) {
        row.status = "ok";
        row.nu = score(est, truth, model).nu;
        result.traces.push_back(make_trace(scenario.name, kind, split.test, truth, est, config.trace_samples));
      } else if (row.failures == row.samples) {
        row.status = unobservable > 0 ? "unobservable" : "non_converged";
        row.nu = std::numeric_limits<double>::quiet_NaN();
      } else {
        // nu over the samples that produced an estimate
        std::vector<Eigen::Index> ok;
        for (Eigen::Index c = 0; c < est.cols(); ++c)
          if (!std::isnan(est(0, c))) ok.push_back(c);
        row.status = "partial";
        row.nu = score(est(Eigen::all, ok), truth(Eigen::all, ok), model).nu;
      }
    } else {
      const MaskPlan plan =
          build_mask_plan(model, partition_at_pmus(model, template_pmu_buses(data.templ)), config.block_width,
                          kind == EstimatorKind::pawnn ? PlanKind::pawnn : PlanKind::p2n2);
      const TrainResult trained = train(plan, result.layout.width(), data.features(result.layout, split.train),
                                        data.label_columns(split.train), config.train);
      const MaskedNetwork& net = trained.network;
      row.params = plan_params(plan, result.layout.width()).total;

      Eigen::MatrixXd est(truth.rows(), truth.cols());
      Eigen::VectorXd x(result.layout.size());
      Clock::duration total{};
      for (std::size_t k = 0; k < split.test.size(); ++k) {
        const auto col = data.values.col(split.test[k]);
        const auto t0 = Clock::now();
        result.layout.embed_values(col, x);
        est.col(static_cast<Eigen::Index>(k)) = net.forward(x);
        total += Clock::now() - t0;
      }
      row.mean_time_s = seconds(total) / static_cast<double>(split.test.size());
      row.nu = score(est, truth, model).nu;
      row.status = est.allFinite() ? "ok" : "non_finite";
      result.traces.push_back(make_trace(scenario.name, kind, split.test, truth, est, config.trace_samples));
      (kind == EstimatorKind::pawnn ? result.pawnn : result.p2n2) = net;
    }
    result.rows.push_back(row);
  }
  return result;
}

// ---------------------------------------------------------------- config files

namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw std::invalid_argument("unknown key \"" + it.key() + "\" in " + where);
  }
}

LoadProfileConfig parse_profile(const json& j) {
  reject_unknown(j, {"samples", "seed", "peak_hour", "amplitude", "noise_sigma", "steps_per_day", "scale"}, "profile");
  LoadProfileConfig p;
  p.samples = j.value("samples", p.samples);
  p.seed = j.value("seed", p.seed);
  p.peak_hour = j.value("peak_hour", p.peak_hour);
  p.amplitude = j.value("amplitude", p.amplitude);
  p.noise_sigma = j.value("noise_sigma", p.noise_sigma);
  p.steps_per_day = j.value("steps_per_day", p.steps_per_day);
  p.scale = j.value("scale", p.scale);
  if (p.samples < 1 || p.steps_per_day < 1 || p.noise_sigma < 0.0 || p.scale < 0.0)
    throw std::invalid_argument("profile values out of range");
  return p;
}

Scenario parse_scenario(const json& j) {
  reject_unknown(j, {"name", "pmu_buses", "metered_buses", "pseudo_noise", "remove_until_unobservable"}, "scenario");
  Scenario s;
  s.name = j.value("name", std::string("scenario"));
  s.pmu_buses = j.at("pmu_buses").get<std::vector<int>>();
  s.metered_buses = j.value("metered_buses", std::vector<int>{});
  s.pseudo_noise = j.value("pseudo_noise", s.pseudo_noise);
  s.remove_until_unobservable = j.value("remove_until_unobservable", false);
  return s;
}

TrainConfig parse_train(const json& j) {
  reject_unknown(j,
                 {"learning_rate", "beta1", "beta2", "epsilon", "batch_size", "max_epochs", "patience", "seed",
                  "train_fraction", "validation_fraction", "leaky_slope"},
                 "train");
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  return c;
}

template <class F>
auto with_json_errors(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

}  // namespace

Suite parse_suite(const std::string& text, const std::filesystem::path& base_dir) {
  return with_json_errors([&] {
    const json j = json::parse(text);
    reject_unknown(j,
                   {"feeder", "profile", "noise_seed", "block_width", "train_fraction", "split_seed", "trace_samples",
                    "train", "estimators", "scenarios"},
                   "suite");
    Suite s;
    s.feeder = base_dir / j.at("feeder").get<std::string>();
    if (j.contains("profile")) s.profile = parse_profile(j.at("profile"));
    s.noise_seed = j.value("noise_seed", s.noise_seed);
    s.bench.block_width = j.value("block_width", s.bench.block_width);
    s.bench.train_fraction = j.value("train_fraction", s.bench.train_fraction);
    s.bench.split_seed = j.value("split_seed", s.bench.split_seed);
    s.bench.trace_samples = j.value("trace_samples", s.bench.trace_samples);
    if (j.contains("train")) s.bench.train = parse_train(j.at("train"));
    if (j.contains("estimators")) {
      s.bench.estimators.clear();
      for (const auto& e : j.at("estimators")) s.bench.estimators.push_back(parse_estimator(e.get<std::string>()));
    }
    for (const auto& sc : j.at("scenarios")) s.scenarios.push_back(parse_scenario(sc));
    if (s.scenarios.empty()) throw std::invalid_argument("suite lists no scenarios");
    return s;
  });
}

Suite load_suite(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open suite file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_suite(ss.str(), path.parent_path());
}

void reseed(Suite& suite, std::uint64_t seed) {
  suite.profile.seed = derive_seed(seed, 0, 0);
  suite.noise_seed = derive_seed(seed, 0, 1);
  suite.bench.split_seed = derive_seed(seed, 0, 2);
  suite.bench.train.seed = derive_seed(seed, 0, 3);
}

GenerateConfig parse_generate_config(const std::string& text) {
  return with_json_errors([&] {
    const json j = json::parse(text);
    reject_unknown(j, {"profile", "noise_seed", "scenario"}, "generate config");
    GenerateConfig g;
    if (j.contains("profile")) g.profile = parse_profile(j.at("profile"));
    g.noise_seed = j.value("noise_seed", g.noise_seed);
    g.scenario = parse_scenario(j.at("scenario"));
    return g;
  });
}

TrainConfig parse_train_config(const std::string& text) {
  return with_json_errors([&] { return parse_train(json::parse(text)); });
}

}  // namespace dsse
