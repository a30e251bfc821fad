#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "dsse/pipeline.hpp"

namespace dsse {

namespace {

std::string number(double v, int precision) {
  if (std::isnan(v)) return "-";
  std::ostringstream ss;
  ss << std::setprecision(precision) << v;
  return ss.str();
}

}  // namespace

std::string format_table(const std::vector<BenchRow>& rows) {
  const std::vector<std::string> header{"scenario", "estimator", "nu", "mean_time_s", "status", "samples", "failures", "params"};
  std::vector<std::vector<std::string>> cells{header};
  for (const BenchRow& r : rows)
    cells.push_back({r.scenario, r.estimator, number(r.nu, 6), number(r.mean_time_s, 4), r.status,
                     std::to_string(r.samples), std::to_string(r.failures), std::to_string(r.params)});
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c)
      out << (c ? "  " : "") << std::left << std::setw(static_cast<int>(width[c])) << cells[i][c];
    out << '\n';
    if (i == 0) {
      for (std::size_t c = 0; c < width.size(); ++c) out << (c ? "  " : "") << std::string(width[c], '-');
      out << '\n';
    }
  }
  return out.str();
}

void write_summary_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "scenario,estimator,nu,mean_time_s,status,samples,failures,params\n";
  out << std::setprecision(17);
  for (const BenchRow& r : rows)
    out << r.scenario << ',' << r.estimator << ',' << (std::isnan(r.nu) ? std::string("nan") : number(r.nu, 17)) << ','
        << r.mean_time_s << ',' << r.status << ',' << r.samples << ',' << r.failures << ',' << r.params << '\n';
}

std::vector<BenchRow> read_summary_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("scenario,estimator,nu,mean_time_s,status", 0) != 0)
    throw std::runtime_error("summary file has an unexpected header");
  std::vector<BenchRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[8];
    for (auto& field : f)
      if (!std::getline(ss, field, ',')) throw std::runtime_error("malformed summary row: " + line);
    BenchRow r;
    r.scenario = f[0];
    r.estimator = f[1];
    r.nu = f[2] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[2]);
    r.mean_time_s = std::stod(f[3]);
    r.status = f[4];
    r.samples = std::stoi(f[5]);
    r.failures = std::stoi(f[6]);
    r.params = std::stoll(f[7]);
    rows.push_back(r);
  }
  return rows;
}

void write_trace_csv(std::ostream& out, const MagnitudeTrace& trace, const FeederModel& model) {
  out << "sample,bus,phase,true_pu,estimate_pu\n" << std::setprecision(10);
  for (std::size_t k = 0; k < trace.samples.size(); ++k)
    for (const Bus& b : model.buses())
      for (Phase p : b.phases.phases()) {
        const int s = model.state_index(b.index, p);
        out << trace.samples[k] << ',' << b.label << ',' << phase_letter(p) << ','
            << trace.truth(s, static_cast<Eigen::Index>(k)) << ',' << trace.estimate(s, static_cast<Eigen::Index>(k))
            << '\n';
      }
}

void write_report(const std::filesystem::path& dir, const std::vector<BenchRow>& rows,
                  const std::vector<MagnitudeTrace>& traces, const FeederModel& model) {
  std::filesystem::create_directories(dir);
  auto open = [](const std::filesystem::path& p) {
    std::ofstream f(p);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    return f;
  };
  {
    auto f = open(dir / "summary.csv");
    write_summary_csv(f, rows);
  }
  {
    auto f = open(dir / "summary.txt");
    f << format_table(rows);
  }
  for (const MagnitudeTrace& t : traces) {
    auto f = open(dir / ("trace_" + t.scenario + "_" + t.estimator + ".csv"));
    write_trace_csv(f, t, model);
  }
}

}  // namespace dsse
