#include "dsse/topology.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dsse {

int induced_diameter(const FeederModel& model, const std::vector<int>& buses) {
  if (buses.size() < 2) return 0;
  std::vector<char> inside(static_cast<std::size_t>(model.num_buses()), 0);
  for (int b : buses) inside[static_cast<std::size_t>(b)] = 1;
  int best = 0;
  std::vector<int> dist(static_cast<std::size_t>(model.num_buses()));
  for (int s : buses) {
    std::fill(dist.begin(), dist.end(), -1);
    std::queue<int> q;
    dist[static_cast<std::size_t>(s)] = 0;
    q.push(s);
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      best = std::max(best, dist[static_cast<std::size_t>(u)]);
      for (int v : model.neighbours(u)) {
        if (!inside[static_cast<std::size_t>(v)] || dist[static_cast<std::size_t>(v)] >= 0) continue;
        dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
        q.push(v);
      }
    }
  }
  return best;
}

std::vector<int> partition_diameters(const std::vector<Partition>& partitions, const FeederModel& model,
                                     int min_depth) {
  std::vector<int> out;
  out.reserve(partitions.size());
  for (const Partition& p : partitions) {
    const int hops = induced_diameter(model, p.buses);
    out.push_back(p.buses.size() < 2 ? 0 : std::max(hops, min_depth));
  }
  return out;
}

std::vector<Partition> partition_at_pmus(const FeederModel& model, const std::vector<int>& pmu_buses,
                                         int min_depth) {
  const int n = model.num_buses();
  std::vector<char> is_pmu(static_cast<std::size_t>(n), 0);
  for (int b : pmu_buses) {
    if (b < 0 || b >= n) throw std::invalid_argument("PMU bus index out of range");
    is_pmu[static_cast<std::size_t>(b)] = 1;
  }

  std::vector<Partition> parts;
  std::vector<int> component(static_cast<std::size_t>(n), -1);
  for (int start = 0; start < n; ++start) {
    if (is_pmu[static_cast<std::size_t>(start)] || component[static_cast<std::size_t>(start)] >= 0) continue;
    const int id = static_cast<int>(parts.size());
    std::set<int> members;
    std::set<int> boundary;
    std::queue<int> q;
    component[static_cast<std::size_t>(start)] = id;
    q.push(start);
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      members.insert(u);
      for (int v : model.neighbours(u)) {
        if (is_pmu[static_cast<std::size_t>(v)]) {
          boundary.insert(v);
        } else if (component[static_cast<std::size_t>(v)] < 0) {
          component[static_cast<std::size_t>(v)] = id;
          q.push(v);
        }
      }
    }
    members.insert(boundary.begin(), boundary.end());
    parts.push_back({{members.begin(), members.end()}, {boundary.begin(), boundary.end()}, 0});
  }
  for (const Branch& br : model.branches()) {
    if (is_pmu[static_cast<std::size_t>(br.from)] && is_pmu[static_cast<std::size_t>(br.to)]) {
      const int a = std::min(br.from, br.to), b = std::max(br.from, br.to);
      parts.push_back({{a, b}, {a, b}, 0});
    }
  }
  // A PMU bus with no neighbours (single-bus feeder) is its own partition.
  for (int b = 0; b < n; ++b)
    if (is_pmu[static_cast<std::size_t>(b)] && model.neighbours(b).empty()) parts.push_back({{b}, {b}, 0});

  std::sort(parts.begin(), parts.end(),
            [](const Partition& x, const Partition& y) { return x.buses < y.buses; });
  const auto diam = partition_diameters(parts, model, min_depth);
  for (std::size_t i = 0; i < parts.size(); ++i) parts[i].diameter = diam[i];
  return parts;
}

std::string_view to_string(PlanKind kind) { return kind == PlanKind::pawnn ? "pawnn" : "p2n2"; }

PlanKind parse_plan_kind(std::string_view text) {
  if (text == "pawnn") return PlanKind::pawnn;
  if (text == "p2n2") return PlanKind::p2n2;
  throw std::invalid_argument("plan kind must be pawnn or p2n2, got \"" + std::string(text) + "\"");
}

std::uint64_t MaskPlan::fingerprint() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int k = 0; k < 8; ++k) {
      h ^= (v >> (8 * k)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  mix(static_cast<std::uint64_t>(kind));
  mix(static_cast<std::uint64_t>(num_buses));
  mix(static_cast<std::uint64_t>(depth));
  mix(static_cast<std::uint64_t>(block_width));
  for (const BoolMatrix& m : masks)
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) mix(m(i, j) ? 1u : 0u);
  for (int e : exit_layer) mix(static_cast<std::uint64_t>(e));
  for (int o : bus_outputs) mix(static_cast<std::uint64_t>(o));
  return h;
}

MaskPlan build_mask_plan(const FeederModel& model, const std::vector<Partition>& partitions, int block_width,
                         PlanKind kind) {
  if (block_width < 1) throw std::invalid_argument("block width must be at least 1");
  const int n = model.num_buses();
  MaskPlan plan;
  plan.kind = kind;
  plan.num_buses = n;
  plan.block_width = block_width;
  plan.exit_layer.assign(static_cast<std::size_t>(n), 0);
  int depth = 1;
  for (const Partition& p : partitions) {
    depth = std::max(depth, p.diameter);
    for (int b : p.buses)
      plan.exit_layer[static_cast<std::size_t>(b)] = std::max(plan.exit_layer[static_cast<std::size_t>(b)], p.diameter);
  }
  plan.depth = depth;
  for (int& e : plan.exit_layer) e = std::max(e, 1);
  for (const Bus& b : model.buses()) plan.bus_outputs.push_back(b.phases.size());

  const BoolMatrix adjacency = adjacency_pattern(model);
  if (kind == PlanKind::pawnn) {
    plan.masks.assign(static_cast<std::size_t>(depth), adjacency);
    std::fill(plan.exit_layer.begin(), plan.exit_layer.end(), depth);
    return plan;
  }

  // Deepest unresolved partition shared by each adjacent pair.
  Eigen::MatrixXi shared_depth = Eigen::MatrixXi::Zero(n, n);
  for (const Partition& p : partitions)
    for (int i : p.buses)
      for (int j : p.buses) shared_depth(i, j) = std::max(shared_depth(i, j), p.diameter);

  for (int t = 1; t <= depth; ++t) {
    BoolMatrix mask = BoolMatrix::Constant(n, n, false);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        mask(i, j) = adjacency(i, j) && (i == j || t == 1 || shared_depth(i, j) >= t);
    plan.masks.push_back(std::move(mask));
  }
  return plan;
}

MaskPlan unpruned(const MaskPlan& plan) {
  MaskPlan out = plan;
  out.kind = PlanKind::pawnn;
  if (!plan.masks.empty()) out.masks.assign(plan.masks.size(), plan.masks.front());
  std::fill(out.exit_layer.begin(), out.exit_layer.end(), plan.depth);
  return out;
}

PlanParams plan_params(const MaskPlan& plan, int input_width) {
  PlanParams out;
  const long long f = plan.block_width;
  for (int t = 1; t <= plan.depth; ++t) {
    LayerParams lp;
    lp.blocks = plan.masks[static_cast<std::size_t>(t - 1)].count();
    lp.weights = lp.blocks * f * (t == 1 ? input_width : f);
    lp.biases = static_cast<long long>(plan.num_buses) * f;
    out.total += lp.weights + lp.biases;
    out.layers.push_back(lp);
  }
  out.readout_blocks.assign(static_cast<std::size_t>(plan.depth), 0);
  out.readout_params.assign(static_cast<std::size_t>(plan.depth), 0);
  for (int b = 0; b < plan.num_buses; ++b) {
    const auto t = static_cast<std::size_t>(plan.exit_layer[static_cast<std::size_t>(b)] - 1);
    const long long outputs = plan.bus_outputs[static_cast<std::size_t>(b)];
    out.readout_blocks[t] += 1;
    out.readout_params[t] += f * outputs + outputs;
    out.total += f * outputs + outputs;
  }
  return out;
}

ParamCount count_params(const MaskPlan& plan, int input_width) {
  ParamCount c;
  c.p2n2 = plan_params(plan, input_width);
  c.pawnn = plan_params(unpruned(plan), input_width);
  c.p2n2_params = c.p2n2.total;
  c.pawnn_params = c.pawnn.total;
  return c;
}

void write_mask_plan(std::ostream& out, const MaskPlan& plan, const FeederModel& model) {
  out << "kind " << to_string(plan.kind) << '\n'
      << "buses " << plan.num_buses << '\n'
      << "layers " << plan.depth << '\n'
      << "block_width " << plan.block_width << '\n'
      << "mask\nlayer,from,to\n";
  for (int t = 1; t <= plan.depth; ++t) {
    const BoolMatrix& m = plan.masks[static_cast<std::size_t>(t - 1)];
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j)
        if (m(i, j)) out << t << ',' << model.bus(j).label << ',' << model.bus(i).label << '\n';
  }
  out << "exit\nbus,exit_layer,outputs\n";
  for (int b = 0; b < plan.num_buses; ++b)
    out << model.bus(b).label << ',' << plan.exit_layer[static_cast<std::size_t>(b)] << ','
        << plan.bus_outputs[static_cast<std::size_t>(b)] << '\n';
}

MaskPlan read_mask_plan(std::istream& in, const FeederModel& model) {
  MaskPlan plan;
  std::string line, key;
  auto expect = [&](const char* name) {
    if (!std::getline(in, line)) throw std::runtime_error("mask plan truncated before " + std::string(name));
    std::stringstream ss(line);
    ss >> key;
    if (key != name) throw std::runtime_error("mask plan: expected '" + std::string(name) + "', got '" + key + "'");
    std::string value;
    ss >> value;
    return value;
  };
  plan.kind = parse_plan_kind(expect("kind"));
  plan.num_buses = std::stoi(expect("buses"));
  plan.depth = std::stoi(expect("layers"));
  plan.block_width = std::stoi(expect("block_width"));
  if (plan.num_buses != model.num_buses()) throw std::runtime_error("mask plan bus count does not match feeder");
  expect("mask");
  std::getline(in, line);  // column header
  plan.masks.assign(static_cast<std::size_t>(plan.depth), BoolMatrix::Constant(plan.num_buses, plan.num_buses, false));
  while (std::getline(in, line) && line != "exit") {
    int t = 0, from = 0, to = 0;
    char c1 = 0, c2 = 0;
    std::stringstream ss(line);
    if (!(ss >> t >> c1 >> from >> c2 >> to) || t < 1 || t > plan.depth)
      throw std::runtime_error("mask plan: bad triplet '" + line + "'");
    plan.masks[static_cast<std::size_t>(t - 1)](model.index_of(to), model.index_of(from)) = true;
  }
  std::getline(in, line);  // column header
  plan.exit_layer.assign(static_cast<std::size_t>(plan.num_buses), 0);
  plan.bus_outputs.assign(static_cast<std::size_t>(plan.num_buses), 0);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int bus = 0, exit = 0, outputs = 0;
    char c1 = 0, c2 = 0;
    std::stringstream ss(line);
    if (!(ss >> bus >> c1 >> exit >> c2 >> outputs)) throw std::runtime_error("mask plan: bad exit row '" + line + "'");
    const int b = model.index_of(bus);
    plan.exit_layer[static_cast<std::size_t>(b)] = exit;
    plan.bus_outputs[static_cast<std::size_t>(b)] = outputs;
  }
  return plan;
}

}  // namespace dsse
