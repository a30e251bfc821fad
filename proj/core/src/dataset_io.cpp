#include <cstring>
#include <istream>
#include <ostream>

#include "dsse/pipeline.hpp"

namespace dsse {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'S', 'E', 'D', 'S', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("dataset file truncated");
  return v;
}

void put_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Eigen::MatrixXd get_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
    throw std::runtime_error("dataset file truncated");
  return m;
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& data, const FeederModel& model) {
  const std::string templ = template_to_json(data.templ, model);
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, data.config_hash);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.resampled));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(templ.size()));
  out.write(templ.data(), static_cast<std::streamsize>(templ.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.values.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.labels.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.labels.cols()));
  put_matrix(out, data.values);
  put_matrix(out, data.variances);
  put_matrix(out, data.labels);
  if (!out) throw std::runtime_error("failed to write dataset");
}

Dataset read_dataset(std::istream& in, const FeederModel& model) {
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("not a dsse dataset file");
  if (get<std::uint32_t>(in) != kVersion) throw std::runtime_error("unsupported dataset version");
  Dataset data;
  data.feeder = model.name();
  data.config_hash = get<std::uint64_t>(in);
  data.resampled = static_cast<int>(get<std::uint32_t>(in));
  std::string templ(get<std::uint32_t>(in), '\0');
  if (!in.read(templ.data(), static_cast<std::streamsize>(templ.size()))) throw std::runtime_error("dataset file truncated");
  data.templ = template_from_json(templ, model);
  const auto rows = static_cast<Eigen::Index>(get<std::uint32_t>(in));
  const auto states = static_cast<Eigen::Index>(get<std::uint32_t>(in));
  const auto samples = static_cast<Eigen::Index>(get<std::uint32_t>(in));
  if (rows != data.templ.size()) throw std::runtime_error("dataset row count disagrees with its template");
  if (states != model.state_size()) throw std::runtime_error("dataset was generated for a different feeder");
  data.values = get_matrix(in, rows, samples);
  data.variances = get_matrix(in, rows, samples);
  data.labels = get_matrix(in, states, samples);
  return data;
}

}  // namespace dsse
