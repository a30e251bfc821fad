#include <numeric>
#include <string>

#include <benchmark/benchmark.h>

#include "dsse/pipeline.hpp"

using namespace dsse;

namespace {

FeederModel feeder(int which) {
  return load_feeder(std::string(DSSE_DATA_DIR) + (which == 0 ? "/feeders/six_bus.json" : "/feeders/thirteen_node.json"));
}

std::vector<int> pmus(const FeederModel& m) {
  return m.num_buses() == 6 ? m.indices_of({4}) : m.indices_of({650, 671});
}

void PowerFlow(benchmark::State& state) {
  const FeederModel m = feeder(static_cast<int>(state.range(0)));
  const BusPowers loads = m.nominal_loads();
  for (auto _ : state) benchmark::DoNotOptimize(solve_power_flow(m, loads));
}
BENCHMARK(PowerFlow)->Arg(0)->Arg(1);

void WlsEstimate(benchmark::State& state) {
  const FeederModel m = feeder(static_cast<int>(state.range(0)));
  const StateVector x = solve_power_flow(m, m.nominal_loads()).state;
  const MeasurementSet z = synthesize(m, plan_measurements(m, pmus(m), {}, 0.3), x, 1);
  for (auto _ : state) benchmark::DoNotOptimize(estimate(m, z));
}
BENCHMARK(WlsEstimate)->Arg(0)->Arg(1);

void NetworkForward(benchmark::State& state) {
  const FeederModel m = feeder(static_cast<int>(state.range(0)));
  const MeasurementSet templ = plan_measurements(m, pmus(m), {}, 0.3);
  const InputLayout layout(m, templ);
  const auto kind = state.range(1) ? PlanKind::p2n2 : PlanKind::pawnn;
  const MaskedNetwork net(build_mask_plan(m, partition_at_pmus(m, pmus(m)), kDefaultBlockWidth, kind), layout.width(), 1);
  const StateVector x = solve_power_flow(m, m.nominal_loads()).state;
  const MeasurementSet z = synthesize(m, templ, x, 1);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(layout.embed(z)));
}
BENCHMARK(NetworkForward)->Args({0, 0})->Args({0, 1})->Args({1, 0})->Args({1, 1});

void GenerateDataset(benchmark::State& state) {
  const FeederModel m = feeder(static_cast<int>(state.range(0)));
  const MeasurementSet templ = plan_measurements(m, pmus(m), {}, 0.3);
  LoadProfileConfig profile;
  profile.samples = 100;
  for (auto _ : state) benchmark::DoNotOptimize(generate_dataset(m, profile, templ, 1, 1));
  state.SetItemsProcessed(state.iterations() * profile.samples);
}
BENCHMARK(GenerateDataset)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void TrainEpoch(benchmark::State& state) {
  const FeederModel m = feeder(0);
  const MeasurementSet templ = plan_measurements(m, pmus(m), {}, 0.3);
  LoadProfileConfig profile;
  profile.samples = 1000;
  const Dataset data = generate_dataset(m, profile, templ, 1, 1);
  const InputLayout layout(m, templ);
  std::vector<int> idx(static_cast<std::size_t>(data.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const Eigen::MatrixXd X = data.features(layout, idx), Y = data.label_columns(idx);
  const MaskPlan plan = build_mask_plan(m, partition_at_pmus(m, pmus(m)));
  TrainConfig cfg;
  cfg.max_epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(plan, layout.width(), X, Y, cfg));
}
BENCHMARK(TrainEpoch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
