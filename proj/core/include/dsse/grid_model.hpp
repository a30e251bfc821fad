#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace dsse {

using Complex = std::complex<double>;

enum class Phase : std::uint8_t { A = 0, B = 1, C = 2 };

inline constexpr std::array<Phase, 3> kAllPhases{Phase::A, Phase::B, Phase::C};

char phase_letter(Phase p);

/// Non-empty subset of {A, B, C}. Iteration order is always A, B, C.
class PhaseSet {
 public:
  constexpr PhaseSet() = default;
  static PhaseSet from_string(std::string_view letters);
  static constexpr PhaseSet abc() { return PhaseSet(0b111); }
  static constexpr PhaseSet single(Phase p) {
    return PhaseSet(static_cast<std::uint8_t>(1u << static_cast<unsigned>(p)));
  }

  constexpr bool contains(Phase p) const {
    return (bits_ >> static_cast<unsigned>(p)) & 1u;
  }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr int size() const {
    return ((bits_ >> 0) & 1) + ((bits_ >> 1) & 1) + ((bits_ >> 2) & 1);
  }
  constexpr PhaseSet with(Phase p) const {
    return PhaseSet(static_cast<std::uint8_t>(bits_ | (1u << static_cast<unsigned>(p))));
  }
  constexpr bool is_subset_of(PhaseSet other) const {
    return (bits_ & ~other.bits_) == 0;
  }
  /// Position of `p` among the present phases, or -1.
  int position(Phase p) const;
  std::vector<Phase> phases() const;
  std::string to_string() const;
  constexpr std::uint8_t bits() const { return bits_; }

  friend constexpr bool operator==(PhaseSet, PhaseSet) = default;

 private:
  explicit constexpr PhaseSet(std::uint8_t bits) : bits_(bits) {}
  std::uint8_t bits_ = 0;
};

enum class BusKind { source, load, zero_injection, junction };

std::string_view to_string(BusKind kind);
std::optional<BusKind> parse_bus_kind(std::string_view text);

struct Bus {
  int index = 0;  // contiguous 0..N-1
  int label = 0;  // id as written in the feeder file
  PhaseSet phases;
  BusKind kind = BusKind::load;
  double base_voltage = 0.0;  // line-to-neutral volts
};

struct Branch {
  int index = 0;
  int from = 0;  // bus index
  int to = 0;    // bus index
  PhaseSet phases;
  Eigen::MatrixXcd impedance;   // ohms, |phases| x |phases|
  Eigen::MatrixXcd admittance;  // inverse of impedance
};

/// Constant-power demand, one entry per phase of `phases` (in A, B, C order).
struct Load {
  int bus = 0;
  PhaseSet phases;
  std::vector<Complex> power;  // watts + j vars
};

/// Per-bus, per-phase complex power indexed as [bus][phase].
using BusPowers = std::vector<std::array<Complex, 3>>;

class FeederError : public std::runtime_error {
 public:
  enum class Kind {
    parse,
    unknown_key,
    duplicate_id,
    unknown_bus,
    cycle,
    disconnected,
    phase_mismatch,
    multiple_sources,
    no_source,
    bad_impedance,
    bad_load,
    bad_kind,
  };
  FeederError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::string_view to_string(FeederError::Kind kind);

/// Validated, immutable three-phase radial feeder.
class FeederModel {
 public:
  /// Validates every invariant; throws FeederError naming the first violation.
  /// Bus `index` fields are reassigned to the position in `buses`.
  static FeederModel build(std::string name, std::vector<Bus> buses,
                           std::vector<Branch> branches, std::vector<Load> loads);

  const std::string& name() const { return name_; }
  int num_buses() const { return static_cast<int>(buses_.size()); }
  int num_branches() const { return static_cast<int>(branches_.size()); }
  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const std::vector<Load>& loads() const { return loads_; }
  const Bus& bus(int index) const { return buses_.at(static_cast<std::size_t>(index)); }
  const Branch& branch(int index) const {
    return branches_.at(static_cast<std::size_t>(index));
  }
  int source() const { return source_; }

  /// Bus index for a file label; throws FeederError(unknown_bus).
  int index_of(int label) const;
  std::vector<int> indices_of(const std::vector<int>& labels) const;

  /// Neighbouring bus indices.
  const std::vector<int>& neighbours(int bus) const { return adjacency_.at(static_cast<std::size_t>(bus)); }
  /// Branch indices touching `bus`, ascending.
  const std::vector<int>& incident_branches(int bus) const {
    return incident_.at(static_cast<std::size_t>(bus));
  }
  /// Tree rooted at the source: parent bus (-1 at source) and the branch to it.
  int parent(int bus) const { return parent_.at(static_cast<std::size_t>(bus)); }
  int parent_branch(int bus) const { return parent_branch_.at(static_cast<std::size_t>(bus)); }
  /// Buses in breadth-first order from the source.
  const std::vector<int>& bfs_order() const { return bfs_order_; }

  bool has_load(int bus) const;
  /// Nominal loads from the file as [bus][phase].
  BusPowers nominal_loads() const;
  /// Sum of |S| over all nominal load phases (VA).
  double power_base() const;

  // State layout: one complex entry per (bus, phase), bus-major, phase-minor.
  int state_size() const { return state_size_; }
  int state_offset(int bus) const { return state_offset_.at(static_cast<std::size_t>(bus)); }
  /// Complex-entry index of (bus, phase); -1 when the phase is absent.
  int state_index(int bus, Phase phase) const;

 private:
  FeederModel() = default;

  std::string name_;
  std::vector<Bus> buses_;
  std::vector<Branch> branches_;
  std::vector<Load> loads_;
  int source_ = 0;
  std::vector<std::vector<int>> adjacency_;
  std::vector<std::vector<int>> incident_;
  std::vector<int> parent_;
  std::vector<int> parent_branch_;
  std::vector<int> bfs_order_;
  std::vector<int> state_offset_;
  int state_size_ = 0;
};

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// (i, j) true iff i == j or a branch joins buses i and j.
BoolMatrix adjacency_pattern(const FeederModel& model);

/// Hop count of the unique tree path between two bus indices.
int graph_distance(const FeederModel& model, int a, int b);

/// Hop distances from `start` to every bus (BFS over the tree).
std::vector<int> distances_from(const FeederModel& model, int start);

// Feeder file I/O (JSON, see README for the schema).
FeederModel load_feeder(const std::string& path);
FeederModel parse_feeder(std::string_view text);
std::string serialize_feeder(const FeederModel& model);

}  // namespace dsse
