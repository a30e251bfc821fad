#include "dsse/measurements.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace dsse {

std::string_view to_string(MeasKind kind) {
  switch (kind) {
    case MeasKind::v_real: return "v_real";
    case MeasKind::v_imag: return "v_imag";
    case MeasKind::i_real: return "i_real";
    case MeasKind::i_imag: return "i_imag";
    case MeasKind::p_injection: return "p_injection";
    case MeasKind::q_injection: return "q_injection";
  }
  return "?";
}

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::pmu_voltage: return "pmu_voltage";
    case NoiseKind::pmu_current: return "pmu_current";
    case NoiseKind::smart_meter_power: return "smart_meter_power";
    case NoiseKind::pseudo_power: return "pseudo_power";
    case NoiseKind::zero_injection: return "zero_injection";
  }
  return "?";
}

MeasKind parse_meas_kind(std::string_view text) {
  for (MeasKind k : {MeasKind::v_real, MeasKind::v_imag, MeasKind::i_real, MeasKind::i_imag,
                     MeasKind::p_injection, MeasKind::q_injection})
    if (to_string(k) == text) return k;
  throw MeasurementError("unknown measurement kind \"" + std::string(text) + "\"");
}

NoiseClass noise_class(NoiseKind kind, const NoiseModel& noise) {
  switch (kind) {
    case NoiseKind::pmu_voltage:
    case NoiseKind::pmu_current: return {kind, noise.pmu_magnitude};
    case NoiseKind::smart_meter_power: return {kind, noise.smart_meter};
    case NoiseKind::pseudo_power: return {kind, noise.pseudo};
    case NoiseKind::zero_injection: return {kind, noise.zero_injection};
  }
  return {kind, 0.0};
}

bool is_current(MeasKind kind) { return kind == MeasKind::i_real || kind == MeasKind::i_imag; }
bool is_injection(MeasKind kind) {
  return kind == MeasKind::p_injection || kind == MeasKind::q_injection;
}

Eigen::VectorXd MeasurementSet::values() const {
  Eigen::VectorXd v(size());
  for (int i = 0; i < size(); ++i) v(i) = rows[static_cast<std::size_t>(i)].value;
  return v;
}

Eigen::VectorXd MeasurementSet::variances() const {
  Eigen::VectorXd v(size());
  for (int i = 0; i < size(); ++i) v(i) = rows[static_cast<std::size_t>(i)].variance;
  return v;
}

MeasurementSet MeasurementSet::as_template() const {
  MeasurementSet out = *this;
  for (auto& r : out.rows) r.value = r.variance = 0.0;
  return out;
}

MeasurementSet MeasurementSet::without_rows(std::vector<int> positions) const {
  std::sort(positions.begin(), positions.end());
  MeasurementSet out;
  out.noise = noise;
  out.power_base = power_base;
  for (int i = 0; i < size(); ++i)
    if (!std::binary_search(positions.begin(), positions.end(), i))
      out.rows.push_back(rows[static_cast<std::size_t>(i)]);
  return out;
}

MeasurementSet plan_measurements(const FeederModel& model, const std::vector<int>& pmu_buses,
                                 const std::vector<int>& metered_loads, double pseudo_noise,
                                 const NoiseModel& base_noise) {
  if (pmu_buses.empty()) throw MeasurementError("at least one PMU bus is required");
  for (int b : pmu_buses)
    if (b < 0 || b >= model.num_buses())
      throw MeasurementError("invalid PMU bus index " + std::to_string(b));
  for (int b : metered_loads)
    if (b < 0 || b >= model.num_buses() || model.bus(b).kind != BusKind::load)
      throw MeasurementError("metered bus index " + std::to_string(b) + " is not a load bus");
  if (!(pseudo_noise > 0.0)) throw MeasurementError("pseudo noise must be positive");

  const std::set<int> pmus(pmu_buses.begin(), pmu_buses.end());
  const std::set<int> metered(metered_loads.begin(), metered_loads.end());

  MeasurementSet set;
  set.noise = base_noise;
  set.noise.pseudo = pseudo_noise;
  set.power_base = model.power_base();

  auto add = [&](MeasKind kind, NoiseKind noise, int locus, Phase p, int anchor) {
    Measurement m;
    m.kind = kind;
    m.noise = noise;
    m.locus = locus;
    m.phase = p;
    m.anchor_bus = anchor;
    set.rows.push_back(m);
  };

  for (int b : pmus)
    for (Phase p : model.bus(b).phases.phases()) {
      add(MeasKind::v_real, NoiseKind::pmu_voltage, b, p, b);
      add(MeasKind::v_imag, NoiseKind::pmu_voltage, b, p, b);
    }
  for (int b : pmus)
    for (int br : model.incident_branches(b))
      for (Phase p : model.branch(br).phases.phases()) {
        add(MeasKind::i_real, NoiseKind::pmu_current, br, p, b);
        add(MeasKind::i_imag, NoiseKind::pmu_current, br, p, b);
      }

  for (const Bus& bus : model.buses()) {
    if (bus.kind != BusKind::load) continue;
    PhaseSet loaded;
    for (const Load& ld : model.loads())
      if (ld.bus == bus.index)
        for (Phase p : ld.phases.phases())
          loaded = loaded.with(p);
    const NoiseKind cls = metered.count(bus.index) ? NoiseKind::smart_meter_power : NoiseKind::pseudo_power;
    for (Phase p : bus.phases.phases()) {
      const NoiseKind k = loaded.contains(p) ? cls : NoiseKind::zero_injection;
      add(MeasKind::p_injection, k, bus.index, p, bus.index);
      add(MeasKind::q_injection, k, bus.index, p, bus.index);
    }
  }
  for (const Bus& bus : model.buses()) {
    if (bus.kind != BusKind::zero_injection) continue;
    for (Phase p : bus.phases.phases()) {
      add(MeasKind::p_injection, NoiseKind::zero_injection, bus.index, p, bus.index);
      add(MeasKind::q_injection, NoiseKind::zero_injection, bus.index, p, bus.index);
    }
  }
  return set;
}

MeasurementFunction::MeasurementFunction(const FeederModel& model, const MeasurementSet& set)
    : cols_(2 * model.state_size()) {
  // Current from -> to on branch `br`, phase `p`, as terms in the complex state.
  auto branch_terms = [&](int br, Phase p, double sign) {
    const Branch& b = model.branch(br);
    const int row = b.phases.position(p);
    if (row < 0) throw MeasurementError("phase not carried by branch");
    for (Phase q : b.phases.phases()) {
      const Complex y = sign * b.admittance(row, b.phases.position(q));
      terms_.push_back({model.state_index(b.from, q), y});
      terms_.push_back({model.state_index(b.to, q), -y});
    }
  };

  rows_.reserve(set.rows.size());
  for (const Measurement& m : set.rows) {
    Row r{m.kind};
    switch (m.kind) {
      case MeasKind::v_real:
      case MeasKind::v_imag:
        r.state = model.state_index(m.locus, m.phase);
        if (r.state < 0) throw MeasurementError("voltage row on absent phase");
        break;
      case MeasKind::i_real:
      case MeasKind::i_imag:
        if (m.locus < 0 || m.locus >= model.num_branches()) throw MeasurementError("current row on unknown branch");
        r.first = static_cast<int>(terms_.size());
        branch_terms(m.locus, m.phase, 1.0);
        r.count = static_cast<int>(terms_.size()) - r.first;
        break;
      case MeasKind::p_injection:
      case MeasKind::q_injection:
        r.state = model.state_index(m.locus, m.phase);
        if (r.state < 0) throw MeasurementError("injection row on absent phase");
        r.first = static_cast<int>(terms_.size());
        for (int br : model.incident_branches(m.locus)) {
          const Branch& b = model.branch(br);
          if (!b.phases.contains(m.phase)) continue;
          branch_terms(br, m.phase, b.to == m.locus ? 1.0 : -1.0);
        }
        r.count = static_cast<int>(terms_.size()) - r.first;
        break;
    }
    rows_.push_back(r);
  }
}

Eigen::VectorXd MeasurementFunction::evaluate(const Eigen::VectorXd& x) const {
  Eigen::VectorXd h(rows());
  evaluate(x, h);
  return h;
}

Eigen::MatrixXd MeasurementFunction::jacobian(const Eigen::VectorXd& x) const {
  Eigen::MatrixXd H(rows(), cols_);
  jacobian(x, H);
  return H;
}

void MeasurementFunction::evaluate(const Eigen::VectorXd& x, Eigen::VectorXd& h) const {
  h.resize(rows());
  for (int i = 0; i < rows(); ++i) {
    const Row& r = rows_[static_cast<std::size_t>(i)];
    double a = 0.0, b = 0.0;  // real and imaginary part of the row current
    for (int t = r.first; t < r.first + r.count; ++t) {
      const Term& term = terms_[static_cast<std::size_t>(t)];
      const double e = x(2 * term.state), f = x(2 * term.state + 1);
      a += term.coeff.real() * e - term.coeff.imag() * f;
      b += term.coeff.imag() * e + term.coeff.real() * f;
    }
    switch (r.kind) {
      case MeasKind::v_real: h(i) = x(2 * r.state); break;
      case MeasKind::v_imag: h(i) = x(2 * r.state + 1); break;
      case MeasKind::i_real: h(i) = a; break;
      case MeasKind::i_imag: h(i) = b; break;
      case MeasKind::p_injection: h(i) = x(2 * r.state) * a + x(2 * r.state + 1) * b; break;
      case MeasKind::q_injection: h(i) = x(2 * r.state + 1) * a - x(2 * r.state) * b; break;
    }
  }
}

void MeasurementFunction::jacobian(const Eigen::VectorXd& x, Eigen::MatrixXd& H) const {
  H.setZero(rows(), cols_);
  for (int i = 0; i < rows(); ++i) {
    const Row& r = rows_[static_cast<std::size_t>(i)];
    if (r.kind == MeasKind::v_real) {
      H(i, 2 * r.state) = 1.0;
      continue;
    }
    if (r.kind == MeasKind::v_imag) {
      H(i, 2 * r.state + 1) = 1.0;
      continue;
    }
    double a = 0.0, b = 0.0;
    for (int t = r.first; t < r.first + r.count; ++t) {
      const Term& term = terms_[static_cast<std::size_t>(t)];
      const double e = x(2 * term.state), f = x(2 * term.state + 1);
      a += term.coeff.real() * e - term.coeff.imag() * f;
      b += term.coeff.imag() * e + term.coeff.real() * f;
    }
    // da/de = Re c, da/df = -Im c, db/de = Im c, db/df = Re c
    double wa = 0.0, wb = 0.0;  // weights of da and db in this row
    switch (r.kind) {
      case MeasKind::i_real: wa = 1.0; break;
      case MeasKind::i_imag: wb = 1.0; break;
      case MeasKind::p_injection: {
        const double e = x(2 * r.state), f = x(2 * r.state + 1);
        wa = e;
        wb = f;
        H(i, 2 * r.state) += a;
        H(i, 2 * r.state + 1) += b;
        break;
      }
      case MeasKind::q_injection: {
        const double e = x(2 * r.state), f = x(2 * r.state + 1);
        wa = f;
        wb = -e;
        H(i, 2 * r.state) += -b;
        H(i, 2 * r.state + 1) += a;
        break;
      }
      default: break;
    }
    for (int t = r.first; t < r.first + r.count; ++t) {
      const Term& term = terms_[static_cast<std::size_t>(t)];
      H(i, 2 * term.state) += wa * term.coeff.real() + wb * term.coeff.imag();
      H(i, 2 * term.state + 1) += -wa * term.coeff.imag() + wb * term.coeff.real();
    }
  }
}

Eigen::VectorXd measurement_function(const FeederModel& model, const MeasurementSet& set,
                                     const StateVector& x) {
  return MeasurementFunction(model, set).evaluate(x.to_real());
}

Eigen::MatrixXd jacobian_rows(const FeederModel& model, const MeasurementSet& set,
                              const StateVector& x) {
  return MeasurementFunction(model, set).jacobian(x.to_real());
}

namespace {

// Rectangular sigmas of a phasor whose magnitude and angle carry independent
// errors, by first-order propagation.
std::pair<double, double> rectangular_sigmas(Complex phasor, double sigma_mag, double sigma_ang) {
  const double m = std::abs(phasor);
  const double th = std::arg(phasor);
  const double c = std::cos(th), s = std::sin(th);
  const double var_re = c * c * sigma_mag * sigma_mag + m * m * s * s * sigma_ang * sigma_ang;
  const double var_im = s * s * sigma_mag * sigma_mag + m * m * c * c * sigma_ang * sigma_ang;
  return {std::sqrt(var_re), std::sqrt(var_im)};
}

}  // namespace

Eigen::VectorXd class_sigmas(const FeederModel& model, const MeasurementSet& templ,
                             const StateVector& x_true) {
  const NoiseModel& nm = templ.noise;
  const double power_base = templ.power_base > 0.0 ? templ.power_base : 1.0;
  const double zi_sigma = nm.zero_injection * power_base / 3.0;
  const BusPowers consumption = bus_consumption(model, x_true);
  std::vector<std::array<Complex, 3>> currents;
  currents.reserve(static_cast<std::size_t>(model.num_branches()));
  for (const Branch& br : model.branches()) currents.push_back(branch_current(model, x_true, br));

  Eigen::VectorXd sigma(templ.size());
  for (int i = 0; i < templ.size(); ++i) {
    const Measurement& m = templ.rows[static_cast<std::size_t>(i)];
    const auto ph = static_cast<std::size_t>(m.phase);
    double s = 0.0;
    switch (m.noise) {
      case NoiseKind::pmu_voltage:
      case NoiseKind::pmu_current: {
        Complex phasor;
        if (m.noise == NoiseKind::pmu_voltage) {
          phasor = x_true[model.state_index(m.locus, m.phase)];
        } else {
          phasor = currents[static_cast<std::size_t>(m.locus)][ph];
          const double floor = 1e-3 * power_base / model.bus(m.anchor_bus).base_voltage;
          if (std::abs(phasor) < floor) phasor = std::polar(floor, std::arg(phasor));
        }
        const auto [sr, si] =
            rectangular_sigmas(phasor, nm.pmu_magnitude * std::abs(phasor) / 3.0, nm.pmu_angle / 3.0);
        s = (m.kind == MeasKind::v_real || m.kind == MeasKind::i_real) ? sr : si;
        break;
      }
      case NoiseKind::smart_meter_power:
      case NoiseKind::pseudo_power: {
        const Complex sp = consumption[static_cast<std::size_t>(m.locus)][ph];
        const double ref = m.kind == MeasKind::p_injection ? std::abs(sp.real()) : std::abs(sp.imag());
        s = std::max(noise_class(m.noise, nm).max_error * ref / 3.0, zi_sigma);
        break;
      }
      case NoiseKind::zero_injection: s = zi_sigma; break;
    }
    sigma(i) = s;
  }
  return sigma;
}

MeasurementSet synthesize(const FeederModel& model, const MeasurementSet& templ,
                          const StateVector& x_true, std::uint64_t seed, Synthesis mode) {
  std::mt19937_64 rng(seed);
  return synthesize(model, templ, x_true, rng, mode);
}

MeasurementSet synthesize(const FeederModel& model, const MeasurementSet& templ,
                          const StateVector& x_true, std::mt19937_64& rng, Synthesis mode) {
  const Eigen::VectorXd h = measurement_function(model, templ, x_true);
  const Eigen::VectorXd sigma = class_sigmas(model, templ, x_true);
  std::normal_distribution<double> normal(0.0, 1.0);
  MeasurementSet out = templ;
  for (int i = 0; i < out.size(); ++i) {
    Measurement& m = out.rows[static_cast<std::size_t>(i)];
    const double eps = normal(rng);
    m.value = mode == Synthesis::noisy ? h(i) + sigma(i) * eps : h(i);
    // Degenerate classes still need a positive weight in R.
    const double floor = 1e-12 * std::max(std::abs(h(i)), 1.0);
    m.variance = std::max(sigma(i), floor) * std::max(sigma(i), floor);
  }
  return out;
}

void write_measurements(std::ostream& out, const FeederModel& model, const MeasurementSet& set) {
  out << "kind,locus,phase,value,variance\n";
  const auto old_precision = out.precision(17);
  for (const Measurement& m : set.rows) {
    out << to_string(m.kind) << ',';
    if (is_current(m.kind)) {
      const Branch& br = model.branch(m.locus);
      out << model.bus(br.from).label << '-' << model.bus(br.to).label;
    } else {
      out << model.bus(m.locus).label;
    }
    out << ',' << phase_letter(m.phase) << ',' << m.value << ',' << m.variance << '\n';
  }
  out.precision(old_precision);
}

MeasurementSet read_measurements(std::istream& in, const FeederModel& model) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("kind,locus,phase,value,variance", 0) != 0)
    throw MeasurementError("measurement file must start with header kind,locus,phase,value,variance");
  MeasurementSet set;
  set.power_base = model.power_base();
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string kind, locus, phase, value, variance;
    if (!std::getline(ss, kind, ',') || !std::getline(ss, locus, ',') || !std::getline(ss, phase, ',') ||
        !std::getline(ss, value, ',') || !std::getline(ss, variance))
      throw MeasurementError("malformed measurement line " + std::to_string(lineno));
    Measurement m;
    m.kind = parse_meas_kind(kind);
    const PhaseSet ps = PhaseSet::from_string(phase);
    if (ps.size() != 1) throw MeasurementError("line " + std::to_string(lineno) + ": one phase expected");
    m.phase = ps.phases().front();
    try {
      m.value = std::stod(value);
      m.variance = std::stod(variance);
    } catch (const std::exception&) {
      throw MeasurementError("line " + std::to_string(lineno) + ": bad number");
    }
    if (is_current(m.kind)) {
      const auto dash = locus.find('-', 1);
      if (dash == std::string::npos) throw MeasurementError("line " + std::to_string(lineno) + ": branch locus must be from-to");
      const int from = model.index_of(std::stoi(locus.substr(0, dash)));
      const int to = model.index_of(std::stoi(locus.substr(dash + 1)));
      m.locus = -1;
      for (const Branch& br : model.branches())
        if (br.from == from && br.to == to) m.locus = br.index;
      if (m.locus < 0) throw MeasurementError("line " + std::to_string(lineno) + ": no branch " + locus);
      m.noise = NoiseKind::pmu_current;
      m.anchor_bus = from;
    } else {
      m.locus = model.index_of(std::stoi(locus));
      m.anchor_bus = m.locus;
      m.noise = is_injection(m.kind) ? NoiseKind::pseudo_power : NoiseKind::pmu_voltage;
    }
    if (!(m.variance > 0.0)) throw MeasurementError("line " + std::to_string(lineno) + ": variance must be positive");
    set.rows.push_back(m);
  }
  return set;
}

}  // namespace dsse
