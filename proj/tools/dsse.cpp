// dsse: dataset generation, training, estimation, benchmarking and mask export.
//
// Exit codes: 0 success, 1 other failure, 2 invalid input, 3 unobservable
// (WLS), 4 non-convergence.

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "dsse/grid_model.hpp"
#include "dsse/masked_nn.hpp"
#include "dsse/measurements.hpp"
#include "dsse/pipeline.hpp"
#include "dsse/powerflow.hpp"
#include "dsse/topology.hpp"
#include "dsse/wls.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kInvalid = 2, kUnobservable = 3, kNonConvergence = 4 };

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

void print_magnitudes(const dsse::FeederModel& model, const Eigen::VectorXd& v) {
  std::cout << "bus,phase,magnitude_pu\n" << std::setprecision(8);
  for (const dsse::Bus& b : model.buses())
    for (dsse::Phase p : b.phases.phases())
      std::cout << b.label << ',' << dsse::phase_letter(p) << ',' << v(model.state_index(b.index, p)) << '\n';
}

struct GenerateArgs {
  std::string feeder, config, out, measurements_out;
  int threads = 0;
  int sample = 0;
};

int run_generate(const GenerateArgs& a, std::optional<std::uint64_t> seed) {
  const dsse::FeederModel model = dsse::load_feeder(a.feeder);
  dsse::GenerateConfig cfg = dsse::parse_generate_config(slurp(a.config));
  if (seed) {
    cfg.profile.seed = dsse::derive_seed(*seed, 0, 0);
    cfg.noise_seed = dsse::derive_seed(*seed, 0, 1);
  }
  const dsse::ScenarioSetup setup = dsse::setup_scenario(model, cfg.scenario);
  const dsse::Dataset data = dsse::generate_dataset(model, cfg.profile, setup.templ, cfg.noise_seed, a.threads);
  auto out = open_out(a.out, std::ios::binary);
  dsse::write_dataset(out, data, model);
  std::cout << "wrote " << data.size() << " samples x " << data.templ.size() << " rows to " << a.out
            << " (config hash " << std::hex << data.config_hash << std::dec << ", " << data.resampled
            << " resampled draws)\n";
  if (!setup.removed_rows.empty()) std::cout << "removed " << setup.removed_rows.size() << " pseudo rows\n";
  if (!a.measurements_out.empty()) {
    if (a.sample < 0 || a.sample >= data.size()) throw std::invalid_argument("--sample out of range");
    auto m = open_out(a.measurements_out);
    dsse::write_measurements(m, model, data.sample(a.sample));
  }
  return kOk;
}

struct TrainArgs {
  std::string feeder, dataset, kind = "p2n2", config, out;
  int width = dsse::kDefaultBlockWidth;
  double train_fraction = 0.9;
};

int run_train(const TrainArgs& a, std::optional<std::uint64_t> seed) {
  const dsse::FeederModel model = dsse::load_feeder(a.feeder);
  std::ifstream in(a.dataset, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open " + a.dataset);
  const dsse::Dataset data = dsse::read_dataset(in, model);
  dsse::TrainConfig tc = a.config.empty() ? dsse::TrainConfig{} : dsse::parse_train_config(slurp(a.config));
  if (seed) tc.seed = *seed;

  const std::vector<int> pmus = dsse::template_pmu_buses(data.templ);
  const dsse::MaskPlan plan =
      dsse::build_mask_plan(model, dsse::partition_at_pmus(model, pmus), a.width, dsse::parse_plan_kind(a.kind));
  const dsse::InputLayout layout(model, data.templ);
  const dsse::Split split = dsse::make_split(data.size(), a.train_fraction, tc.seed);
  const dsse::TrainResult res =
      dsse::train(plan, layout.width(), data.features(layout, split.train), data.label_columns(split.train), tc);

  dsse::Checkpoint ckpt{res.network, layout, {}};
  for (int b : pmus) ckpt.pmu_labels.push_back(model.bus(b).label);
  auto out = open_out(a.out);
  dsse::save_checkpoint(out, ckpt, model);
  std::cout << "trained " << a.kind << " (" << dsse::plan_params(plan, layout.width()).total << " parameters), best epoch "
            << res.best_epoch << " of " << res.val_loss.size() << '\n';
  if (!split.test.empty()) {
    const auto rep = dsse::evaluate(res.network, data.features(layout, split.test), data.label_columns(split.test), model);
    std::cout << "test nu " << rep.nu << " over " << rep.samples << " samples\n";
  }
  return kOk;
}

struct EstimateArgs {
  std::string feeder, measurements, checkpoint;
  bool wls = false;
};

int run_estimate(const EstimateArgs& a) {
  const dsse::FeederModel model = dsse::load_feeder(a.feeder);
  std::ifstream in(a.measurements);
  if (!in) throw std::invalid_argument("cannot open " + a.measurements);
  dsse::MeasurementSet z = dsse::read_measurements(in, model);
  if (a.wls == !a.checkpoint.empty()) throw std::invalid_argument("pass exactly one of --wls or --checkpoint");
  if (a.wls) {
    const auto rep = dsse::estimate(model, z);
    const auto mags = dsse::voltage_magnitudes_pu(model, rep.x_hat);
    print_magnitudes(model, Eigen::Map<const Eigen::VectorXd>(mags.data(), static_cast<Eigen::Index>(mags.size())));
    std::cerr << "wls converged in " << rep.iterations << " iterations, objective " << rep.objective << '\n';
    return kOk;
  }
  std::ifstream cin_(a.checkpoint);
  if (!cin_) throw std::invalid_argument("cannot open " + a.checkpoint);
  const dsse::Checkpoint ckpt = dsse::load_checkpoint(cin_, model);
  print_magnitudes(model, ckpt.network.forward(ckpt.layout.embed(z)));
  return kOk;
}

struct BenchArgs {
  std::string suite, out;
  int threads = 0;
};

int run_bench(const BenchArgs& a, std::optional<std::uint64_t> seed) {
  dsse::Suite suite = dsse::load_suite(a.suite);
  if (seed) dsse::reseed(suite, *seed);
  const dsse::FeederModel model = dsse::load_feeder(suite.feeder.string());
  std::filesystem::create_directories(a.out);
  std::vector<dsse::BenchRow> rows;
  std::vector<dsse::MagnitudeTrace> traces;
  for (const dsse::Scenario& sc : suite.scenarios) {
    const dsse::ScenarioSetup setup = dsse::setup_scenario(model, sc);
    const std::uint64_t hash = dsse::dataset_hash(model, suite.profile, setup.templ, suite.noise_seed);
    std::ostringstream name;
    name << "dataset-" << std::hex << std::setw(16) << std::setfill('0') << hash << ".bin";
    const auto path = std::filesystem::path(a.out) / name.str();
    dsse::Dataset data;
    if (std::ifstream cached{path, std::ios::binary}) {
      data = dsse::read_dataset(cached, model);
    } else {
      data = dsse::generate_dataset(model, suite.profile, setup.templ, suite.noise_seed, a.threads);
      auto f = open_out(path.string(), std::ios::binary);
      dsse::write_dataset(f, data, model);
    }
    std::cerr << "scenario " << sc.name << ": " << data.size() << " samples, " << data.templ.size() << " rows";
    if (!setup.removed_rows.empty()) std::cerr << ", " << setup.removed_rows.size() << " pseudo rows removed";
    std::cerr << '\n';
    auto res = dsse::run_scenario(model, sc, data, suite.bench);
    rows.insert(rows.end(), res.rows.begin(), res.rows.end());
    traces.insert(traces.end(), res.traces.begin(), res.traces.end());
  }
  dsse::write_report(a.out, rows, traces, model);
  std::cout << dsse::format_table(rows);
  return kOk;
}

struct MasksArgs {
  std::string feeder, kind = "p2n2", out;
  std::vector<int> pmus;
  int width = dsse::kDefaultBlockWidth;
  int input_width = 1;
};

int run_masks(const MasksArgs& a) {
  const dsse::FeederModel model = dsse::load_feeder(a.feeder);
  const auto parts = dsse::partition_at_pmus(model, model.indices_of(a.pmus));
  const dsse::MaskPlan plan = dsse::build_mask_plan(model, parts, a.width, dsse::parse_plan_kind(a.kind));
  if (a.out.empty()) {
    dsse::write_mask_plan(std::cout, plan, model);
  } else {
    auto out = open_out(a.out);
    dsse::write_mask_plan(out, plan, model);
  }
  const dsse::ParamCount pc = dsse::count_params(plan, a.input_width);
  std::cerr << "partitions:";
  for (const auto& p : parts) {
    std::cerr << " {";
    for (std::size_t i = 0; i < p.buses.size(); ++i) std::cerr << (i ? "," : "") << model.bus(p.buses[i]).label;
    std::cerr << "}:" << p.diameter;
  }
  std::cerr << "\nlayers " << plan.depth << ", parameters pawnn " << pc.pawnn_params << ", p2n2 " << pc.p2n2_params
            << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distribution system state estimation: WLS and topology-masked networks"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Seed for every random stage");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Generate a Monte Carlo dataset");
  gen->add_option("--feeder", ga.feeder, "Feeder JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--config", ga.config, "Generation config JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", ga.out, "Dataset output path")->required();
  gen->add_option("--threads", ga.threads, "Worker threads (0 = all cores)");
  gen->add_option("--measurements-out", ga.measurements_out, "Also write one sample's measurements as CSV");
  gen->add_option("--sample", ga.sample, "Sample index for --measurements-out");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a PAWNN or P2N2 network");
  tr->add_option("--feeder", ta.feeder, "Feeder JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--dataset", ta.dataset, "Dataset file")->required()->check(CLI::ExistingFile);
  tr->add_option("--kind", ta.kind, "pawnn or p2n2")->check(CLI::IsMember({"pawnn", "p2n2"}));
  tr->add_option("--config", ta.config, "Training config JSON")->check(CLI::ExistingFile);
  tr->add_option("--width", ta.width, "Hidden channels per bus")->check(CLI::PositiveNumber);
  tr->add_option("--train-fraction", ta.train_fraction, "Share of samples used for training");
  tr->add_option("--out", ta.out, "Checkpoint output path")->required();

  EstimateArgs ea;
  auto* est = app.add_subcommand("estimate", "Estimate voltage magnitudes from a measurement CSV");
  est->add_option("--feeder", ea.feeder, "Feeder JSON")->required()->check(CLI::ExistingFile);
  est->add_option("--measurements", ea.measurements, "Measurement CSV")->required()->check(CLI::ExistingFile);
  est->add_flag("--wls", ea.wls, "Use weighted least squares");
  est->add_option("--checkpoint", ea.checkpoint, "Use a trained network checkpoint")->check(CLI::ExistingFile);

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Run a scenario suite and write the report");
  bench->add_option("--suite", ba.suite, "Suite JSON")->required()->check(CLI::ExistingFile);
  bench->add_option("--out", ba.out, "Report directory")->required();
  bench->add_option("--threads", ba.threads, "Dataset generation threads (0 = all cores)");

  MasksArgs ma;
  auto* masks = app.add_subcommand("masks", "Export the layer masks for a PMU placement");
  masks->add_option("--feeder", ma.feeder, "Feeder JSON")->required()->check(CLI::ExistingFile);
  masks->add_option("--pmu", ma.pmus, "PMU bus ids")->required();
  masks->add_option("--kind", ma.kind, "pawnn or p2n2")->check(CLI::IsMember({"pawnn", "p2n2"}));
  masks->add_option("--width", ma.width, "Hidden channels per bus")->check(CLI::PositiveNumber);
  masks->add_option("--input-width", ma.input_width, "Input channels per bus, for the parameter count");
  masks->add_option("--out", ma.out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help and version requests exit 0; usage errors count as invalid input.
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInvalid;
  }

  try {
    if (*gen) return run_generate(ga, seed);
    if (*tr) return run_train(ta, seed);
    if (*est) return run_estimate(ea);
    if (*bench) return run_bench(ba, seed);
    if (*masks) return run_masks(ma);
  } catch (const dsse::WlsError& e) {
    const bool unobservable = e.code() == dsse::WlsError::Code::unobservable;
    std::cerr << "error: " << (unobservable ? "unobservable: " : "not converged: ") << e.what() << '\n';
    return unobservable ? kUnobservable : kNonConvergence;
  } catch (const dsse::PowerFlowError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == dsse::PowerFlowError::Kind::non_convergence ? kNonConvergence : kInvalid;
  } catch (const dsse::NetworkError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == dsse::NetworkError::Kind::divergence ? kNonConvergence : kInvalid;
  } catch (const dsse::FeederError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
