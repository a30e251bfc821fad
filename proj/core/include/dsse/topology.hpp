#pragma once

#include <cstdint>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "dsse/grid_model.hpp"

namespace dsse {

/// A PMU-bounded piece of the feeder: one connected component left after
/// deleting the PMU buses, plus the PMU buses it touches. Two adjacent PMU
/// buses form a partition of their own.
struct Partition {
  std::vector<int> buses;      // ascending bus indices
  std::vector<int> pmu_buses;  // subset of `buses`
  int diameter = 0;            // layers needed to resolve the partition
};

/// Depth floor for multi-bus partitions. With it the 6-bus example resolves
/// its single-edge partitions after two layers and the four-bus chain after
/// three.
inline constexpr int kMinPartitionDepth = 2;

/// Longest shortest path (in hops) of the subgraph induced by `buses`.
int induced_diameter(const FeederModel& model, const std::vector<int>& buses);

/// Per-partition depth: max(induced hop diameter, min_depth) for partitions
/// with two or more buses, 0 for a lone bus.
std::vector<int> partition_diameters(const std::vector<Partition>& partitions, const FeederModel& model,
                                     int min_depth = kMinPartitionDepth);

/// Vertex-cut partitioning at the PMU buses. Partitions are sorted by their
/// bus lists and carry diameters from partition_diameters().
std::vector<Partition> partition_at_pmus(const FeederModel& model, const std::vector<int>& pmu_buses,
                                         int min_depth = kMinPartitionDepth);

enum class PlanKind { pawnn, p2n2 };
std::string_view to_string(PlanKind kind);
PlanKind parse_plan_kind(std::string_view text);

/// Layer sparsity at bus granularity plus early-exit routing.
///
/// masks[t - 1](i, j) allows the F x F block feeding bus i's units at layer t
/// from bus j's units at layer t - 1 (the input features for t = 1).
/// exit_layer[b] (1-based) is the hidden layer bus b is read out from.
struct MaskPlan {
  PlanKind kind = PlanKind::p2n2;
  int num_buses = 0;
  int depth = 0;
  int block_width = 8;
  std::vector<BoolMatrix> masks;
  std::vector<int> exit_layer;
  std::vector<int> bus_outputs;  // phases per bus

  std::uint64_t fingerprint() const;
};

inline constexpr int kDefaultBlockWidth = 8;

/// P2N2: a bus pair (i, j) stays connected at layer t iff the buses are
/// adjacent and some partition containing both has diameter >= t; the
/// diagonal is always kept. PAWNN: every layer uses the adjacency pattern and
/// every bus exits at the last layer.
MaskPlan build_mask_plan(const FeederModel& model, const std::vector<Partition>& partitions,
                         int block_width = kDefaultBlockWidth, PlanKind kind = PlanKind::p2n2);

/// PAWNN counterpart of a plan: same depth and width, no pruning, all exits at the end.
MaskPlan unpruned(const MaskPlan& plan);

struct LayerParams {
  long long blocks = 0;   // allowed bus pairs
  long long weights = 0;
  long long biases = 0;
};

struct PlanParams {
  std::vector<LayerParams> layers;        // hidden layers 1..T
  std::vector<int> readout_blocks;        // buses read out after layer t (index t - 1)
  std::vector<long long> readout_params;  // readout weights + biases drawn from layer t
  long long total = 0;
};

struct ParamCount {
  long long pawnn_params = 0;
  long long p2n2_params = 0;
  PlanParams pawnn;
  PlanParams p2n2;
};

/// Counts unmasked weights and biases of the plan and of its unpruned
/// counterpart. Layer 1 blocks are F x input_width, later blocks F x F; each
/// bus owns F biases per layer and a linear readout of F x phases + phases.
ParamCount count_params(const MaskPlan& plan, int input_width);
PlanParams plan_params(const MaskPlan& plan, int input_width);

/// Text export:
///   kind <pawnn|p2n2> / buses N / layers T / block_width F
///   mask  then "layer,from,to" lines (bus ids; `to` receives from `from`)
///   exit  then "bus,exit_layer,outputs" lines
void write_mask_plan(std::ostream& out, const MaskPlan& plan, const FeederModel& model);
MaskPlan read_mask_plan(std::istream& in, const FeederModel& model);

}  // namespace dsse
