#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "dsse/topology.hpp"
#include "oracles.hpp"

using namespace dsse;

namespace {


std::vector<int> labels(const FeederModel& m, const std::vector<int>& idx) {
  std::vector<int> out;
  for (int i : idx) out.push_back(m.bus(i).label);
  std::sort(out.begin(), out.end());
  return out;
}

// Brute-force evaluation of the pruning rule from oracle partitions.
void expect_plan_matches_rule(const FeederModel& m, const std::vector<int>& pmus, const MaskPlan& plan) {
  const auto parts = oracle::partitions(m, pmus);
  const BoolMatrix adj = adjacency_pattern(m);
  const int n = m.num_buses();
  int depth = 1;
  for (const auto& p : parts) depth = std::max(depth, p.diameter);
  ASSERT_EQ(plan.depth, depth);
  for (int t = 1; t <= depth; ++t)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        bool shared = false;
        for (const auto& p : parts)
          if (p.diameter >= t && std::count(p.buses.begin(), p.buses.end(), i) &&
              std::count(p.buses.begin(), p.buses.end(), j))
            shared = true;
        const bool expected = i == j || (adj(i, j) && (t == 1 || shared));
        ASSERT_EQ(plan.masks[t - 1](i, j), expected) << "t=" << t << " i=" << i << " j=" << j;
      }
  for (int b = 0; b < n; ++b) {
    int exit = 1;
    for (const auto& p : parts)
      if (std::count(p.buses.begin(), p.buses.end(), b)) exit = std::max(exit, p.diameter);
    EXPECT_EQ(plan.exit_layer[b], exit);
  }
}

FeederModel star(int leaves) {
  std::string text = R"({"buses":[{"id":1,"phases":"A","kind":"source","base_voltage_v":2400})";
  for (int k = 0; k < leaves; ++k)
    text += R"(,{"id":)" + std::to_string(k + 2) + R"(,"phases":"A","kind":"zero_injection","base_voltage_v":2400})";
  text += R"(],"branches":[)";
  for (int k = 0; k < leaves; ++k)
    text += std::string(k ? "," : "") + R"({"from":1,"to":)" + std::to_string(k + 2) +
            R"(,"phases":"A","impedance":[[[0.1,0.2]]]})";
  return parse_feeder(text + "]}");
}

}  // namespace

TEST(Partition, SixBus) {
  const FeederModel m = oracle::fixture("six_bus");
  const auto parts = partition_at_pmus(m, {m.index_of(4)});
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(labels(m, parts[0].buses), (std::vector<int>{1, 2, 3, 4}));
  EXPECT_EQ(labels(m, parts[1].buses), (std::vector<int>{4, 5}));
  EXPECT_EQ(labels(m, parts[2].buses), (std::vector<int>{4, 6}));
  EXPECT_EQ(parts[0].diameter, 3);
  EXPECT_EQ(parts[1].diameter, 2);
  EXPECT_EQ(parts[2].diameter, 2);
  for (const auto& p : parts) EXPECT_EQ(labels(m, p.pmu_buses), (std::vector<int>{4}));
}

TEST(Partition, ThirteenNodeHandEnumeration) {
  const FeederModel m = oracle::fixture("thirteen_node");
  const auto parts = partition_at_pmus(m, m.indices_of({650, 671}));
  std::map<std::vector<int>, int> got;
  for (const auto& p : parts) got[labels(m, p.buses)] = p.diameter;
  const std::map<std::vector<int>, int> expected{
      {{632, 633, 634, 645, 646, 650, 671}, 4},  // 634-633-632-645-646
      {{671, 680}, 2},
      {{611, 652, 671, 684}, 2},
      {{671, 675, 692}, 2},
  };
  EXPECT_EQ(got, expected);
}

TEST(Partition, PmuEverywhere) {
  const FeederModel m = oracle::fixture("thirteen_node");
  std::vector<int> all(13);
  std::iota(all.begin(), all.end(), 0);
  const auto parts = partition_at_pmus(m, all, 1);
  EXPECT_EQ(parts.size(), 12u);
  for (const auto& p : parts) {
    EXPECT_EQ(p.buses.size(), 2u);
    EXPECT_LE(p.diameter, 1);
  }
  for (const auto& p : partition_at_pmus(m, all)) EXPECT_EQ(p.diameter, kMinPartitionDepth);
}

TEST(Partition, SingleBus) {
  const FeederModel m = parse_feeder(R"({"buses":[{"id":1,"phases":"A","kind":"source","base_voltage_v":2400}]})");
  const auto parts = partition_at_pmus(m, {0});
  ASSERT_EQ(parts.size(), 1u);
  EXPECT_EQ(parts[0].buses, std::vector<int>{0});
  EXPECT_EQ(parts[0].diameter, 0);
  EXPECT_EQ(induced_diameter(m, {0}), 0);
}

TEST(Property, PartitionsMatchOracleOnRandomTrees) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 30)(rng);
    const FeederModel m = parse_feeder(oracle::random_tree_json(rng, n));
    std::vector<int> pmus;
    for (int b = 0; b < n; ++b)
      if (std::bernoulli_distribution(0.2)(rng)) pmus.push_back(b);
    if (pmus.empty()) pmus.push_back(std::uniform_int_distribution<int>(0, n - 1)(rng));
    const auto parts = partition_at_pmus(m, pmus);
    const auto ref = oracle::partitions(m, pmus);
    std::map<std::vector<int>, int> got, want;
    for (const auto& p : parts) got[p.buses] = p.diameter;
    for (const auto& p : ref) want[p.buses] = p.diameter;
    ASSERT_EQ(got, want) << "trial " << trial;
    ASSERT_EQ(parts.size(), ref.size());
    expect_plan_matches_rule(m, pmus, build_mask_plan(m, parts, 2));
  }
}

TEST(Mask, SixBusFigure) {
  const FeederModel m = oracle::fixture("six_bus");
  const MaskPlan plan = build_mask_plan(m, partition_at_pmus(m, {m.index_of(4)}), 1);
  ASSERT_EQ(plan.depth, 3);
  EXPECT_EQ(plan.masks[0], adjacency_pattern(m));
  EXPECT_EQ(plan.masks[1], adjacency_pattern(m));
  BoolMatrix expected = adjacency_pattern(m);
  for (auto [a, b] : {std::pair{4, 5}, {4, 6}, {5, 4}, {6, 4}}) expected(m.index_of(a), m.index_of(b)) = false;
  EXPECT_EQ(plan.masks[2], expected);
  const std::vector<int> exits{3, 3, 3, 3, 2, 2};
  for (int b = 1; b <= 6; ++b) EXPECT_EQ(plan.exit_layer[m.index_of(b)], exits[b - 1]);
}

TEST(Mask, PawnnUsesAdjacencyEverywhere) {
  const FeederModel m = oracle::fixture("thirteen_node");
  const auto parts = partition_at_pmus(m, m.indices_of({650, 671}));
  const MaskPlan p = build_mask_plan(m, parts, 4, PlanKind::pawnn);
  EXPECT_EQ(p.depth, 4);
  for (const auto& mask : p.masks) EXPECT_EQ(mask, adjacency_pattern(m));
  for (int e : p.exit_layer) EXPECT_EQ(e, p.depth);
  const MaskPlan u = unpruned(build_mask_plan(m, parts, 4));
  EXPECT_EQ(u.kind, PlanKind::pawnn);
  EXPECT_EQ(u.masks, p.masks);
  EXPECT_EQ(u.exit_layer, p.exit_layer);
  EXPECT_EQ(u.fingerprint(), p.fingerprint());
}

TEST(Mask, StarWithHubPmu) {
  const FeederModel m = star(5);
  const MaskPlan plan = build_mask_plan(m, partition_at_pmus(m, {0}), 1);
  EXPECT_EQ(plan.depth, 2);
  for (int b = 1; b <= 5; ++b) EXPECT_EQ(plan.exit_layer[b], 2);
  EXPECT_EQ(plan.masks[1], adjacency_pattern(m));
  expect_plan_matches_rule(m, {0}, plan);
  const ParamCount c = count_params(plan, 2);
  EXPECT_EQ(c.p2n2_params, c.pawnn_params);
}

TEST(Params, SixBusHandCount) {
  const FeederModel m = oracle::fixture("six_bus");
  const MaskPlan plan = build_mask_plan(m, partition_at_pmus(m, {m.index_of(4)}), 1);
  const ParamCount c = count_params(plan, 1);
  // Every PAWNN layer: 16 unit-to-unit weights, 6 biases; 6 heads of 3 + 3.
  ASSERT_EQ(c.pawnn.layers.size(), 3u);
  for (const auto& l : c.pawnn.layers) {
    EXPECT_EQ(l.blocks, 16);
    EXPECT_EQ(l.weights, 16);
    EXPECT_EQ(l.biases, 6);
  }
  EXPECT_EQ(c.pawnn_params, 3 * 22 + 6 * 6);
  // Layer 2 -> 3 drops four connections; buses 5 and 6 read out after layer 2.
  EXPECT_EQ(c.pawnn.layers[2].weights - c.p2n2.layers[2].weights, 4);
  EXPECT_EQ(c.pawnn.layers[0].weights, c.p2n2.layers[0].weights);
  EXPECT_EQ(c.pawnn.layers[1].weights, c.p2n2.layers[1].weights);
  EXPECT_EQ(c.pawnn.readout_blocks, (std::vector<int>{0, 0, 6}));
  EXPECT_EQ(c.p2n2.readout_blocks, (std::vector<int>{0, 2, 4}));
  EXPECT_EQ(c.pawnn.readout_params[2] - c.p2n2.readout_params[2], 2 * 6);
  EXPECT_EQ(c.p2n2_params, c.pawnn_params - 4);
  EXPECT_EQ(c.pawnn_params, 102);
}

TEST(Params, WidthScaling) {
  const FeederModel m = oracle::fixture("six_bus");
  const MaskPlan plan = build_mask_plan(m, partition_at_pmus(m, {m.index_of(4)}), 8);
  const PlanParams p = plan_params(plan, 5);
  EXPECT_EQ(p.layers[0].weights, 16 * 8 * 5);
  EXPECT_EQ(p.layers[1].weights, 16 * 64);
  EXPECT_EQ(p.layers[2].weights, 12 * 64);
  EXPECT_EQ(p.total, 16 * 40 + 16 * 64 + 12 * 64 + 3 * 6 * 8 + 6 * (8 * 3 + 3));
}

TEST(Property, PrunedNeverLarger) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 30)(rng);
    const FeederModel m = parse_feeder(oracle::random_tree_json(rng, n));
    std::vector<int> pmus{std::uniform_int_distribution<int>(0, n - 1)(rng)};
    if (n > 3) pmus.push_back(std::uniform_int_distribution<int>(0, n - 1)(rng));
    const ParamCount c = count_params(build_mask_plan(m, partition_at_pmus(m, pmus), 3), 4);
    EXPECT_LE(c.p2n2_params, c.pawnn_params);
  }
}

TEST(Export, RoundTrip) {
  const FeederModel m = oracle::fixture("thirteen_node");
  for (PlanKind kind : {PlanKind::p2n2, PlanKind::pawnn}) {
    const MaskPlan plan = build_mask_plan(m, partition_at_pmus(m, m.indices_of({650, 671})), 4, kind);
    std::stringstream ss;
    write_mask_plan(ss, plan, m);
    const MaskPlan back = read_mask_plan(ss, m);
    EXPECT_EQ(back.kind, plan.kind);
    EXPECT_EQ(back.depth, plan.depth);
    EXPECT_EQ(back.block_width, plan.block_width);
    EXPECT_EQ(back.masks, plan.masks);
    EXPECT_EQ(back.exit_layer, plan.exit_layer);
    EXPECT_EQ(back.bus_outputs, plan.bus_outputs);
    EXPECT_EQ(back.fingerprint(), plan.fingerprint());
  }
}

TEST(Export, Format) {
  const FeederModel m = oracle::fixture("six_bus");
  std::stringstream ss;
  write_mask_plan(ss, build_mask_plan(m, partition_at_pmus(m, {m.index_of(4)}), 1), m);
  const std::string text = ss.str();
  EXPECT_EQ(text.rfind("kind p2n2\nbuses 6\nlayers 3\nblock_width 1\n", 0), 0u);
  EXPECT_NE(text.find("layer,from,to\n"), std::string::npos);
  EXPECT_NE(text.find("3,3,4\n"), std::string::npos);
  EXPECT_EQ(text.find("3,4,5\n"), std::string::npos);
  EXPECT_NE(text.find("5,2,3\n"), std::string::npos);
}

TEST(Export, RejectsGarbage) {
  const FeederModel m = oracle::fixture("six_bus");
  std::stringstream bad("kind banana\n");
  EXPECT_ANY_THROW(read_mask_plan(bad, m));
  EXPECT_ANY_THROW(parse_plan_kind("dense"));
}

TEST(Fingerprint, DistinguishesPlans) {
  const FeederModel m = oracle::fixture("six_bus");
  const auto a = build_mask_plan(m, partition_at_pmus(m, {m.index_of(4)}), 8);
  const auto b = build_mask_plan(m, partition_at_pmus(m, {m.index_of(3)}), 8);
  const auto c = build_mask_plan(m, partition_at_pmus(m, {m.index_of(4)}), 4);
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  EXPECT_NE(a.fingerprint(), c.fingerprint());
  EXPECT_EQ(a.fingerprint(), build_mask_plan(m, partition_at_pmus(m, {m.index_of(4)}), 8).fingerprint());
}
