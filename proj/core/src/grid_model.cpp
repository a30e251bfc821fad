#include "dsse/grid_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <sstream>
#include <unordered_map>

#include <Eigen/LU>

namespace dsse {

char phase_letter(Phase p) { return "ABC"[static_cast<int>(p)]; }

PhaseSet PhaseSet::from_string(std::string_view letters) {
  std::uint8_t bits = 0;
  for (char c : letters) {
    int bit = -1;
    switch (c) {
      case 'A': case 'a': bit = 0; break;
      case 'B': case 'b': bit = 1; break;
      case 'C': case 'c': bit = 2; break;
      default:
        throw FeederError(FeederError::Kind::parse,
                          "invalid phase letter '" + std::string(1, c) + "'");
    }
    if (bits & (1u << bit)) {
      throw FeederError(FeederError::Kind::parse,
                        "repeated phase letter in \"" + std::string(letters) + "\"");
    }
    bits |= static_cast<std::uint8_t>(1u << bit);
  }
  if (bits == 0) throw FeederError(FeederError::Kind::parse, "empty phase set");
  return PhaseSet(bits);
}

int PhaseSet::position(Phase p) const {
  if (!contains(p)) return -1;
  int pos = 0;
  for (unsigned b = 0; b < static_cast<unsigned>(p); ++b) pos += (bits_ >> b) & 1u;
  return pos;
}

std::vector<Phase> PhaseSet::phases() const {
  std::vector<Phase> out;
  for (Phase p : kAllPhases)
    if (contains(p)) out.push_back(p);
  return out;
}

std::string PhaseSet::to_string() const {
  std::string s;
  for (Phase p : kAllPhases)
    if (contains(p)) s.push_back(phase_letter(p));
  return s;
}

std::string_view to_string(BusKind kind) {
  switch (kind) {
    case BusKind::source: return "source";
    case BusKind::load: return "load";
    case BusKind::zero_injection: return "zero_injection";
    case BusKind::junction: return "junction";
  }
  return "?";
}

std::optional<BusKind> parse_bus_kind(std::string_view text) {
  if (text == "source") return BusKind::source;
  if (text == "load") return BusKind::load;
  if (text == "zero_injection") return BusKind::zero_injection;
  if (text == "junction") return BusKind::junction;
  return std::nullopt;
}

std::string_view to_string(FeederError::Kind kind) {
  using K = FeederError::Kind;
  switch (kind) {
    case K::parse: return "parse";
    case K::unknown_key: return "unknown_key";
    case K::duplicate_id: return "duplicate_id";
    case K::unknown_bus: return "unknown_bus";
    case K::cycle: return "cycle";
    case K::disconnected: return "disconnected";
    case K::phase_mismatch: return "phase_mismatch";
    case K::multiple_sources: return "multiple_sources";
    case K::no_source: return "no_source";
    case K::bad_impedance: return "bad_impedance";
    case K::bad_load: return "bad_load";
    case K::bad_kind: return "bad_kind";
  }
  return "?";
}

namespace {

[[noreturn]] void fail(FeederError::Kind kind, const std::string& msg) {
  throw FeederError(kind, std::string(to_string(kind)) + ": " + msg);
}

int find_root(std::vector<int>& parent, int x) {
  while (parent[static_cast<std::size_t>(x)] != x) {
    auto& p = parent[static_cast<std::size_t>(x)];
    p = parent[static_cast<std::size_t>(p)];
    x = p;
  }
  return x;
}

}  // namespace

FeederModel FeederModel::build(std::string name, std::vector<Bus> buses,
                               std::vector<Branch> branches, std::vector<Load> loads) {
  FeederModel m;
  m.name_ = std::move(name);
  const int n = static_cast<int>(buses.size());
  if (n == 0) fail(FeederError::Kind::no_source, "feeder has no buses");

  std::unordered_map<int, int> seen;
  int source = -1;
  for (int i = 0; i < n; ++i) {
    Bus& b = buses[static_cast<std::size_t>(i)];
    b.index = i;
    if (!seen.emplace(b.label, i).second)
      fail(FeederError::Kind::duplicate_id, "bus id " + std::to_string(b.label) + " repeated");
    if (b.phases.empty())
      fail(FeederError::Kind::phase_mismatch, "bus " + std::to_string(b.label) + " has no phases");
    if (!(b.base_voltage > 0.0) || !std::isfinite(b.base_voltage))
      fail(FeederError::Kind::parse,
           "bus " + std::to_string(b.label) + " base voltage must be positive");
    if (b.kind == BusKind::source) {
      if (source >= 0)
        fail(FeederError::Kind::multiple_sources,
             "buses " + std::to_string(buses[static_cast<std::size_t>(source)].label) + " and " +
                 std::to_string(b.label) + " are both sources");
      source = i;
    }
  }
  if (source < 0) fail(FeederError::Kind::no_source, "no source bus");

  auto label = [&](int idx) { return std::to_string(buses[static_cast<std::size_t>(idx)].label); };

  std::vector<int> uf(static_cast<std::size_t>(n));
  std::iota(uf.begin(), uf.end(), 0);
  for (std::size_t k = 0; k < branches.size(); ++k) {
    Branch& br = branches[k];
    br.index = static_cast<int>(k);
    if (br.from < 0 || br.from >= n || br.to < 0 || br.to >= n)
      fail(FeederError::Kind::unknown_bus, "branch " + std::to_string(k) + " endpoint out of range");
    const std::string tag = "branch " + label(br.from) + "-" + label(br.to);
    if (br.from == br.to) fail(FeederError::Kind::cycle, tag + " is a self-loop");
    if (br.phases.empty() ||
        !br.phases.is_subset_of(buses[static_cast<std::size_t>(br.from)].phases) ||
        !br.phases.is_subset_of(buses[static_cast<std::size_t>(br.to)].phases))
      fail(FeederError::Kind::phase_mismatch,
           tag + " phases " + br.phases.to_string() + " not carried by both endpoints");
    const int np = br.phases.size();
    if (br.impedance.rows() != np || br.impedance.cols() != np)
      fail(FeederError::Kind::bad_impedance, tag + " impedance must be " + std::to_string(np) +
                                                 "x" + std::to_string(np));
    if (!br.impedance.allFinite()) fail(FeederError::Kind::bad_impedance, tag + " non-finite impedance");
    const double scale = br.impedance.cwiseAbs().maxCoeff();
    if ((br.impedance - br.impedance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      fail(FeederError::Kind::bad_impedance, tag + " impedance matrix is not symmetric");
    for (int p = 0; p < np; ++p)
      if (!(br.impedance(p, p).real() > 0.0))
        fail(FeederError::Kind::bad_impedance, tag + " diagonal resistance must be positive");
    br.admittance = br.impedance.inverse();

    const int ra = find_root(uf, br.from);
    const int rb = find_root(uf, br.to);
    if (ra == rb) fail(FeederError::Kind::cycle, tag + " closes a loop");
    uf[static_cast<std::size_t>(ra)] = rb;
  }
  for (int i = 0; i < n; ++i)
    if (find_root(uf, i) != find_root(uf, source))
      fail(FeederError::Kind::disconnected, "bus " + label(i) + " is not connected to the source");

  std::vector<int> load_count(static_cast<std::size_t>(n), 0);
  for (const Load& ld : loads) {
    if (ld.bus < 0 || ld.bus >= n) fail(FeederError::Kind::unknown_bus, "load on unknown bus");
    const Bus& b = buses[static_cast<std::size_t>(ld.bus)];
    const std::string tag = "load at bus " + std::to_string(b.label);
    if (ld.phases.empty() || !ld.phases.is_subset_of(b.phases))
      fail(FeederError::Kind::phase_mismatch,
           tag + " phases " + ld.phases.to_string() + " not present at bus");
    if (static_cast<int>(ld.power.size()) != ld.phases.size())
      fail(FeederError::Kind::bad_load, tag + " needs one [p, q] pair per phase");
    for (const Complex& s : ld.power)
      if (!std::isfinite(s.real()) || !std::isfinite(s.imag()))
        fail(FeederError::Kind::bad_load, tag + " has non-finite power");
    if (b.kind != BusKind::load)
      fail(FeederError::Kind::bad_load,
           tag + " but the bus kind is " + std::string(to_string(b.kind)));
    ++load_count[static_cast<std::size_t>(ld.bus)];
  }
  for (const Bus& b : buses)
    if (b.kind == BusKind::load && load_count[static_cast<std::size_t>(b.index)] == 0)
      fail(FeederError::Kind::bad_kind, "load bus " + std::to_string(b.label) + " has no load");

  m.buses_ = std::move(buses);
  m.branches_ = std::move(branches);
  m.loads_ = std::move(loads);
  m.source_ = source;

  m.adjacency_.assign(static_cast<std::size_t>(n), {});
  m.incident_.assign(static_cast<std::size_t>(n), {});
  for (const Branch& br : m.branches_) {
    m.adjacency_[static_cast<std::size_t>(br.from)].push_back(br.to);
    m.adjacency_[static_cast<std::size_t>(br.to)].push_back(br.from);
    m.incident_[static_cast<std::size_t>(br.from)].push_back(br.index);
    m.incident_[static_cast<std::size_t>(br.to)].push_back(br.index);
  }
  for (auto& adj : m.adjacency_) std::sort(adj.begin(), adj.end());

  m.parent_.assign(static_cast<std::size_t>(n), -1);
  m.parent_branch_.assign(static_cast<std::size_t>(n), -1);
  std::vector<bool> visited(static_cast<std::size_t>(n), false);
  std::queue<int> q;
  q.push(source);
  visited[static_cast<std::size_t>(source)] = true;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    m.bfs_order_.push_back(u);
    for (int bi : m.incident_[static_cast<std::size_t>(u)]) {
      const Branch& br = m.branches_[static_cast<std::size_t>(bi)];
      const int v = br.from == u ? br.to : br.from;
      if (visited[static_cast<std::size_t>(v)]) continue;
      visited[static_cast<std::size_t>(v)] = true;
      m.parent_[static_cast<std::size_t>(v)] = u;
      m.parent_branch_[static_cast<std::size_t>(v)] = bi;
      q.push(v);
    }
  }

  for (const Bus& b : m.buses_) {
    if (b.index == source) continue;
    const Branch& up = m.branches_[static_cast<std::size_t>(m.parent_branch_[static_cast<std::size_t>(b.index)])];
    if (up.phases != b.phases)
      fail(FeederError::Kind::phase_mismatch,
           "bus " + std::to_string(b.label) + " phases " + b.phases.to_string() +
               " differ from its supply branch phases " + up.phases.to_string());
  }

  m.state_offset_.resize(static_cast<std::size_t>(n));
  int offset = 0;
  for (const Bus& b : m.buses_) {
    m.state_offset_[static_cast<std::size_t>(b.index)] = offset;
    offset += b.phases.size();
  }
  m.state_size_ = offset;
  return m;
}

int FeederModel::index_of(int label) const {
  for (const Bus& b : buses_)
    if (b.label == label) return b.index;
  throw FeederError(FeederError::Kind::unknown_bus, "unknown_bus: no bus with id " + std::to_string(label));
}

std::vector<int> FeederModel::indices_of(const std::vector<int>& labels) const {
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) out.push_back(index_of(l));
  return out;
}

bool FeederModel::has_load(int bus) const {
  return std::any_of(loads_.begin(), loads_.end(), [bus](const Load& l) { return l.bus == bus; });
}

BusPowers FeederModel::nominal_loads() const {
  BusPowers out(buses_.size(), {Complex{}, Complex{}, Complex{}});
  for (const Load& ld : loads_) {
    int k = 0;
    for (Phase p : ld.phases.phases())
      out[static_cast<std::size_t>(ld.bus)][static_cast<std::size_t>(p)] +=
          ld.power[static_cast<std::size_t>(k++)];
  }
  return out;
}

double FeederModel::power_base() const {
  double total = 0.0;
  for (const Load& ld : loads_)
    for (const Complex& s : ld.power) total += std::abs(s);
  return total;
}

int FeederModel::state_index(int bus, Phase phase) const {
  const int pos = buses_.at(static_cast<std::size_t>(bus)).phases.position(phase);
  return pos < 0 ? -1 : state_offset_[static_cast<std::size_t>(bus)] + pos;
}

BoolMatrix adjacency_pattern(const FeederModel& model) {
  const int n = model.num_buses();
  BoolMatrix pattern = BoolMatrix::Constant(n, n, false);
  for (int i = 0; i < n; ++i) pattern(i, i) = true;
  for (const Branch& br : model.branches()) {
    pattern(br.from, br.to) = true;
    pattern(br.to, br.from) = true;
  }
  return pattern;
}

std::vector<int> distances_from(const FeederModel& model, int start) {
  const int n = model.num_buses();
  if (start < 0 || start >= n)
    throw FeederError(FeederError::Kind::unknown_bus, "unknown_bus: bus index " + std::to_string(start));
  std::vector<int> dist(static_cast<std::size_t>(n), -1);
  std::queue<int> q;
  dist[static_cast<std::size_t>(start)] = 0;
  q.push(start);
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v : model.neighbours(u)) {
      if (dist[static_cast<std::size_t>(v)] >= 0) continue;
      dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
      q.push(v);
    }
  }
  return dist;
}

int graph_distance(const FeederModel& model, int a, int b) {
  for (int id : {a, b})
    if (id < 0 || id >= model.num_buses())
      throw FeederError(FeederError::Kind::unknown_bus, "unknown_bus: bus index " + std::to_string(id));
  if (a == b) return 0;
  return distances_from(model, a)[static_cast<std::size_t>(b)];
}

}  // namespace dsse
