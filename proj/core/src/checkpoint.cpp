#include <algorithm>
#include <cstdio>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "dsse/masked_nn.hpp"
#include "dsse/pipeline.hpp"

namespace dsse {

namespace {

using nlohmann::json;

constexpr int kCheckpointVersion = 1;

NetworkError bad(const std::string& what) { return NetworkError(NetworkError::Kind::checkpoint, what); }

NoiseKind parse_noise_kind(const std::string& text) {
  for (NoiseKind k : {NoiseKind::pmu_voltage, NoiseKind::pmu_current, NoiseKind::smart_meter_power,
                      NoiseKind::pseudo_power, NoiseKind::zero_injection})
    if (to_string(k) == text) return k;
  throw bad("unknown noise class \"" + text + "\"");
}

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec(const json& j, Eigen::Index expected, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != expected) throw bad(std::string("wrong size for ") + what);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), expected);
}

json mat(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Eigen::VectorXd row = m.row(r).transpose();
    rows.push_back(vec(row));
  }
  return rows;
}

Eigen::MatrixXd mat(const json& j, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) throw bad(std::string("wrong rows for ") + what);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) m.row(r) = vec(j[static_cast<std::size_t>(r)], cols, what).transpose();
  return m;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string template_to_json(const MeasurementSet& templ, const FeederModel& model) {
  json rows = json::array();
  for (const Measurement& m : templ.rows) {
    std::string locus;
    if (is_current(m.kind)) {
      const Branch& br = model.branch(m.locus);
      locus = std::to_string(model.bus(br.from).label) + "-" + std::to_string(model.bus(br.to).label);
    } else {
      locus = std::to_string(model.bus(m.locus).label);
    }
    rows.push_back({std::string(to_string(m.kind)), locus, std::string(1, phase_letter(m.phase)),
                    model.bus(m.anchor_bus).label, std::string(to_string(m.noise))});
  }
  json j = {{"power_base", templ.power_base},
            {"noise",
             {{"pmu_magnitude", templ.noise.pmu_magnitude},
              {"pmu_angle", templ.noise.pmu_angle},
              {"smart_meter", templ.noise.smart_meter},
              {"pseudo", templ.noise.pseudo},
              {"zero_injection", templ.noise.zero_injection}}},
            {"rows", rows}};
  return j.dump();
}

MeasurementSet template_from_json(const std::string& text, const FeederModel& model) {
  try {
    const json j = json::parse(text);
    MeasurementSet templ;
    templ.power_base = j.at("power_base").get<double>();
    const json& nz = j.at("noise");
    templ.noise = {nz.at("pmu_magnitude").get<double>(), nz.at("pmu_angle").get<double>(),
                   nz.at("smart_meter").get<double>(), nz.at("pseudo").get<double>(),
                   nz.at("zero_injection").get<double>()};
    for (const json& r : j.at("rows")) {
      Measurement m;
      m.kind = parse_meas_kind(r.at(0).get<std::string>());
      const std::string locus = r.at(1).get<std::string>();
      if (is_current(m.kind)) {
        const auto dash = locus.find('-', 1);
        if (dash == std::string::npos) throw bad("branch locus must be from-to");
        const int from = model.index_of(std::stoi(locus.substr(0, dash)));
        const int to = model.index_of(std::stoi(locus.substr(dash + 1)));
        m.locus = -1;
        for (const Branch& br : model.branches())
          if (br.from == from && br.to == to) m.locus = br.index;
        if (m.locus < 0) throw bad("template names unknown branch " + locus);
      } else {
        m.locus = model.index_of(std::stoi(locus));
      }
      const PhaseSet ps = PhaseSet::from_string(r.at(2).get<std::string>());
      if (ps.size() != 1) throw bad("template row needs exactly one phase");
      m.phase = ps.phases().front();
      m.anchor_bus = model.index_of(r.at(3).get<int>());
      m.noise = parse_noise_kind(r.at(4).get<std::string>());
      templ.rows.push_back(m);
    }
    return templ;
  } catch (const json::exception& e) {
    throw bad(std::string("malformed measurement template: ") + e.what());
  }
}

std::vector<int> template_pmu_buses(const MeasurementSet& templ) {
  std::vector<int> out;
  for (const Measurement& m : templ.rows)
    if (m.noise == NoiseKind::pmu_voltage && (out.empty() || out.back() != m.locus)) out.push_back(m.locus);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt, const FeederModel& model) {
  const MaskedNetwork& net = ckpt.network;
  const MaskPlan& plan = net.plan();
  json j;
  j["format"] = "dsse-checkpoint";
  j["version"] = kCheckpointVersion;
  j["feeder"] = model.name();
  j["plan_hash"] = hex(plan.fingerprint());
  j["plan"] = {{"kind", std::string(to_string(plan.kind))},
               {"block_width", plan.block_width},
               {"depth", plan.depth},
               {"pmu_buses", ckpt.pmu_labels}};
  j["input_width"] = net.input_width();
  j["leaky_slope"] = net.leaky_slope();

  j["template"] = json::parse(template_to_json(ckpt.layout.templ(), model));

  const Normalization& n = net.normalization();
  j["normalization"] = {{"in_mean", vec(n.in_mean)},
                        {"in_scale", vec(n.in_scale)},
                        {"out_mean", vec(n.out_mean)},
                        {"out_scale", vec(n.out_scale)}};
  const Parameters& p = net.params();
  json weights = json::array(), biases = json::array();
  for (const auto& w : p.weights) weights.push_back(mat(w));
  for (const auto& b : p.biases) biases.push_back(vec(b));
  j["parameters"] = {{"weights", weights}, {"biases", biases}, {"head_w", mat(p.head_w)}, {"head_b", vec(p.head_b)}};
  out << j.dump(1) << '\n';
}

Checkpoint load_checkpoint(std::istream& in, const FeederModel& model) {
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw bad(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format") != "dsse-checkpoint") throw bad("not a dsse checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) throw bad("unsupported checkpoint version");

    Checkpoint ckpt;
    ckpt.pmu_labels = j.at("plan").at("pmu_buses").get<std::vector<int>>();
    const PlanKind kind = parse_plan_kind(j.at("plan").at("kind").get<std::string>());
    const int width = j.at("plan").at("block_width").get<int>();
    const MaskPlan plan = build_mask_plan(model, partition_at_pmus(model, model.indices_of(ckpt.pmu_labels)), width, kind);
    if (hex(plan.fingerprint()) != j.at("plan_hash").get<std::string>())
      throw bad("checkpoint plan hash does not match the plan rebuilt from feeder \"" + model.name() + "\"");

    const MeasurementSet templ = template_from_json(j.at("template").dump(), model);
    ckpt.layout = InputLayout(model, templ);
    const int input_width = j.at("input_width").get<int>();
    if (input_width != ckpt.layout.width()) throw bad("input width does not match the template layout");

    MaskedNetwork net(plan, input_width, 0, j.at("leaky_slope").get<double>());
    Normalization n;
    const json& jn = j.at("normalization");
    n.in_mean = vec(jn.at("in_mean"), net.input_size(), "in_mean");
    n.in_scale = vec(jn.at("in_scale"), net.input_size(), "in_scale");
    n.out_mean = vec(jn.at("out_mean"), net.output_size(), "out_mean");
    n.out_scale = vec(jn.at("out_scale"), net.output_size(), "out_scale");
    net.set_normalization(std::move(n));

    Parameters p = net.params();
    const json& jp = j.at("parameters");
    if (jp.at("weights").size() != p.weights.size() || jp.at("biases").size() != p.biases.size())
      throw bad("layer count does not match the plan");
    for (std::size_t t = 0; t < p.weights.size(); ++t) {
      p.weights[t] = mat(jp.at("weights")[t], p.weights[t].rows(), p.weights[t].cols(), "weights");
      p.biases[t] = vec(jp.at("biases")[t], p.biases[t].size(), "biases");
    }
    p.head_w = mat(jp.at("head_w"), p.head_w.rows(), p.head_w.cols(), "head_w");
    p.head_b = vec(jp.at("head_b"), p.head_b.size(), "head_b");
    net.set_params(std::move(p));
    ckpt.network = std::move(net);
    return ckpt;
  } catch (const json::exception& e) {
    throw bad(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace dsse
