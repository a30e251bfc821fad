// Feeder description files.
//
// {
//   "name": "six_bus",
//   "buses":    [{"id": 1, "phases": "ABC", "kind": "source", "base_voltage_v": 2400.0}],
//   "branches": [{"from": 1, "to": 2, "phases": "ABC",
//                 "impedance": [[[r, x], [r, x], [r, x]], ...]}],
//   "loads":    [{"bus": 3, "phases": "AB", "power": [[p_w, q_var], [p_w, q_var]]}]
// }
//
// "impedance" is the full |phases| x |phases| series matrix in ohms, one
// [r_ohm, x_ohm] pair per phase pair. Keys not listed here are rejected.

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dsse/grid_model.hpp"

namespace dsse {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw FeederError(FeederError::Kind::parse, "parse: " + where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key))
      throw FeederError(FeederError::Kind::unknown_key, "unknown_key: \"" + key + "\" in " + where);
}

template <typename T>
T field(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key))
    throw FeederError(FeederError::Kind::parse, std::string("parse: missing \"") + key + "\" in " + where);
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FeederError(FeederError::Kind::parse,
                      std::string("parse: bad \"") + key + "\" in " + where + ": " + e.what());
  }
}

Complex pair_to_complex(const json& pair, const std::string& where) {
  if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number())
    throw FeederError(FeederError::Kind::parse, "parse: expected [real, imag] pair in " + where);
  return {pair[0].get<double>(), pair[1].get<double>()};
}

json complex_to_pair(Complex c) { return json::array({c.real(), c.imag()}); }

}  // namespace

FeederModel parse_feeder(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw FeederError(FeederError::Kind::parse, std::string("parse: ") + e.what());
  }
  check_keys(doc, {"name", "buses", "branches", "loads"}, "feeder");
  const std::string name = doc.value("name", std::string("feeder"));
  if (!doc.contains("buses") || !doc["buses"].is_array())
    throw FeederError(FeederError::Kind::parse, "parse: \"buses\" must be an array");

  std::vector<Bus> buses;
  std::map<int, int> index_of;
  for (const json& jb : doc["buses"]) {
    const std::string where = "bus #" + std::to_string(buses.size());
    check_keys(jb, {"id", "phases", "kind", "base_voltage_v"}, where);
    Bus b;
    b.label = field<int>(jb, "id", where);
    b.phases = PhaseSet::from_string(field<std::string>(jb, "phases", where));
    const auto kind_text = field<std::string>(jb, "kind", where);
    const auto kind = parse_bus_kind(kind_text);
    if (!kind) throw FeederError(FeederError::Kind::bad_kind, "bad_kind: unknown bus kind \"" + kind_text + "\"");
    b.kind = *kind;
    b.base_voltage = field<double>(jb, "base_voltage_v", where);
    b.index = static_cast<int>(buses.size());
    if (!index_of.emplace(b.label, b.index).second)
      throw FeederError(FeederError::Kind::duplicate_id,
                        "duplicate_id: bus id " + std::to_string(b.label) + " repeated");
    buses.push_back(b);
  }
  auto resolve = [&](int label, const std::string& where) {
    auto it = index_of.find(label);
    if (it == index_of.end())
      throw FeederError(FeederError::Kind::unknown_bus,
                        "unknown_bus: " + where + " references bus " + std::to_string(label));
    return it->second;
  };

  std::vector<Branch> branches;
  if (doc.contains("branches")) {
    for (const json& jb : doc.at("branches")) {
      const std::string where = "branch #" + std::to_string(branches.size());
      check_keys(jb, {"from", "to", "phases", "impedance"}, where);
      Branch br;
      br.from = resolve(field<int>(jb, "from", where), where);
      br.to = resolve(field<int>(jb, "to", where), where);
      br.phases = PhaseSet::from_string(field<std::string>(jb, "phases", where));
      const json& z = jb.at("impedance");
      const int np = br.phases.size();
      if (!z.is_array() || static_cast<int>(z.size()) != np)
        throw FeederError(FeederError::Kind::bad_impedance,
                          "bad_impedance: " + where + " impedance must have " + std::to_string(np) + " rows");
      br.impedance.resize(np, np);
      for (int r = 0; r < np; ++r) {
        const json& row = z[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<int>(row.size()) != np)
          throw FeederError(FeederError::Kind::bad_impedance,
                            "bad_impedance: " + where + " impedance row " + std::to_string(r) + " has wrong length");
        for (int c = 0; c < np; ++c) br.impedance(r, c) = pair_to_complex(row[static_cast<std::size_t>(c)], where);
      }
      branches.push_back(std::move(br));
    }
  }

  std::vector<Load> loads;
  if (doc.contains("loads")) {
    for (const json& jl : doc.at("loads")) {
      const std::string where = "load #" + std::to_string(loads.size());
      check_keys(jl, {"bus", "phases", "power"}, where);
      Load ld;
      ld.bus = resolve(field<int>(jl, "bus", where), where);
      ld.phases = PhaseSet::from_string(field<std::string>(jl, "phases", where));
      const json& pw = jl.at("power");
      if (!pw.is_array()) throw FeederError(FeederError::Kind::bad_load, "bad_load: " + where + " power must be a list");
      for (const json& pq : pw) ld.power.push_back(pair_to_complex(pq, where));
      loads.push_back(std::move(ld));
    }
  }
  return FeederModel::build(name, std::move(buses), std::move(branches), std::move(loads));
}

FeederModel load_feeder(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FeederError(FeederError::Kind::parse, "parse: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_feeder(ss.str());
}

std::string serialize_feeder(const FeederModel& model) {
  json doc;
  doc["name"] = model.name();
  json buses = json::array();
  for (const Bus& b : model.buses())
    buses.push_back({{"id", b.label},
                     {"phases", b.phases.to_string()},
                     {"kind", std::string(to_string(b.kind))},
                     {"base_voltage_v", b.base_voltage}});
  doc["buses"] = std::move(buses);

  json branches = json::array();
  for (const Branch& br : model.branches()) {
    json z = json::array();
    for (int r = 0; r < br.impedance.rows(); ++r) {
      json row = json::array();
      for (int c = 0; c < br.impedance.cols(); ++c) row.push_back(complex_to_pair(br.impedance(r, c)));
      z.push_back(std::move(row));
    }
    branches.push_back({{"from", model.bus(br.from).label},
                        {"to", model.bus(br.to).label},
                        {"phases", br.phases.to_string()},
                        {"impedance", std::move(z)}});
  }
  doc["branches"] = std::move(branches);

  json loads = json::array();
  for (const Load& ld : model.loads()) {
    json pw = json::array();
    for (const Complex& s : ld.power) pw.push_back(complex_to_pair(s));
    loads.push_back({{"bus", model.bus(ld.bus).label}, {"phases", ld.phases.to_string()}, {"power", std::move(pw)}});
  }
  doc["loads"] = std::move(loads);
  return doc.dump(2) + "\n";
}

}  // namespace dsse
