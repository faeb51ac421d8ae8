#include "kmpc/trace.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace kmpc {

namespace {

std::string fmt_full(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

SimTrace SimTrace::segment(Eigen::Index begin, Eigen::Index len) const {
  require(begin >= 0 && len >= 0 && begin + len <= samples(),
          "trace segment out of range");
  SimTrace out;
  out.rate = rate;
  out.t = t.segment(begin, len);
  out.channels = channels.middleRows(begin, len);
  if (has_input()) out.input = input.segment(begin, len);
  return out;
}

void SimTrace::validate() const {
  require(rate > 0.0, "trace rate must be positive");
  require(t.size() == channels.rows(), "time and channel lengths differ");
  if (has_input())
    require(input.size() == t.size(), "input and channel lengths differ");
  const double dt = 1.0 / rate;
  for (Eigen::Index i = 1; i < t.size(); ++i) {
    const double gap = t[i] - t[i - 1];
    require(gap > 0.0 && std::abs(gap - dt) < 1e-9 * std::max(1.0, std::abs(t[i])),
            "time stamps must increase uniformly at 1/rate");
  }
}

double SampledSignal::at(double t) const {
  if (empty()) return 0.0;
  auto idx = static_cast<Eigen::Index>(std::floor(t * rate + 1e-9));
  if (idx < 0) idx = 0;
  if (idx >= values.size()) idx = values.size() - 1;
  return values[idx];
}

void write_trace_csv(const SimTrace& trace, const std::filesystem::path& path) {
  trace.validate();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());

  os << "t";
  for (Eigen::Index c = 0; c < trace.channel_count(); ++c) os << ",ch" << c;
  if (trace.has_input()) os << ",u";
  os << "\n";
  for (Eigen::Index i = 0; i < trace.samples(); ++i) {
    os << fmt_full(trace.t[i]);
    for (Eigen::Index c = 0; c < trace.channel_count(); ++c)
      os << ',' << fmt_full(trace.channels(i, c));
    if (trace.has_input()) os << ',' << fmt_full(trace.input[i]);
    os << "\n";
  }
  os.flush();
  if (!os) throw std::runtime_error("write failed: " + path.string());

  nlohmann::json meta{{"rate", trace.rate},
                      {"samples", trace.samples()},
                      {"channels", trace.channel_count()},
                      {"has_input", trace.has_input()}};
  std::ofstream ms(path.string() + ".meta.json");
  ms << meta.dump(2) << "\n";
}

SimTrace read_trace_csv(const std::filesystem::path& path) {
  std::ifstream ms(path.string() + ".meta.json");
  if (!ms) throw std::runtime_error("missing sidecar: " + path.string() + ".meta.json");
  nlohmann::json meta = nlohmann::json::parse(ms);

  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  std::string header;
  std::getline(is, header);
  const bool with_input = header.size() >= 2 && header.substr(header.size() - 2) == ",u";

  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  require(n > 0, "empty trace file: " + path.string());
  const auto cols = static_cast<Eigen::Index>(rows[0].size());
  const Eigen::Index n_ch = cols - 1 - (with_input ? 1 : 0);
  require(n_ch >= 1, "trace file has no channels: " + path.string());

  SimTrace trace;
  trace.rate = meta.at("rate").get<double>();
  trace.t.resize(n);
  trace.channels.resize(n, n_ch);
  if (with_input) trace.input.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    require(static_cast<Eigen::Index>(rows[i].size()) == cols, "ragged trace row");
    trace.t[i] = rows[i][0];
    for (Eigen::Index c = 0; c < n_ch; ++c) trace.channels(i, c) = rows[i][1 + c];
    if (with_input) trace.input[i] = rows[i][cols - 1];
  }
  trace.validate();
  return trace;
}

}  // namespace kmpc
