#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "recall/errors.hpp"
#include "recall/metrics/metrics.hpp"

namespace recall::runner {

namespace fs = std::filesystem;

/// Shortest decimal text that parses back to the same double.
inline std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a temporary so readers never see a half-written file.
inline void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, p);
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream ss;
  for (unsigned int k = 0; k < len; ++k) ss << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[k]);
  return ss.str();
}

/// Long format: one row per (checkpoint, task). `task_id` is the suite id
/// of the task at that sequence position.
inline std::string eval_log_csv(const metrics::EvalLog& log, const std::vector<int>& task_ids) {
  if (static_cast<int>(task_ids.size()) != log.tasks) throw ContractError("eval log csv: one task id per sequence slot");
  std::string out = "step,task_id,success_rate\n";
  for (const auto& c : log.checkpoints)
    for (std::size_t k = 0; k < c.success.size(); ++k)
      out += std::to_string(c.step) + "," + std::to_string(task_ids[k]) + "," + fmt(c.success[k]) + "\n";
  return out;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  cells.push_back(cur);
  return cells;
}

/// Inverse of eval_log_csv. Rows of one step must list the sequence's
/// tasks in order.
inline metrics::EvalLog parse_eval_log_csv(const std::string& text, const std::vector<int>& task_ids,
                                           std::int64_t steps_per_task) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || split(line) != std::vector<std::string>{"step", "task_id", "success_rate"})
    throw StructuralError("eval log csv: bad header");
  metrics::EvalLog log;
  log.tasks = static_cast<int>(task_ids.size());
  log.steps_per_task = steps_per_task;
  std::size_t slot = 0;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != 3) throw StructuralError("eval log csv: row " + std::to_string(row) + " needs 3 columns");
    std::int64_t step = 0;
    int id = 0;
    double p = 0.0;
    try {
      step = std::stoll(cells[0]);
      id = std::stoi(cells[1]);
      p = std::stod(cells[2]);
    } catch (const std::exception&) {
      throw StructuralError("eval log csv: row " + std::to_string(row) + " is not numeric");
    }
    if (slot == 0) log.checkpoints.push_back({step, {}});
    auto& c = log.checkpoints.back();
    if (c.step != step || id != task_ids[slot])
      throw StructuralError("eval log csv: row " + std::to_string(row) + " out of order");
    c.success.push_back(p);
    slot = (slot + 1) % task_ids.size();
  }
  if (slot != 0) throw StructuralError("eval log csv: last checkpoint is incomplete");
  log.validate();
  return log;
}

/// Square matrix as CSV with a header row and column of task ids; missing
/// cells are left blank.
inline std::string matrix_csv(const std::vector<std::optional<double>>& m, const std::vector<int>& ids) {
  std::string out = "first\\second";
  for (int id : ids) out += "," + std::to_string(id);
  out += "\n";
  for (std::size_t r = 0; r < ids.size(); ++r) {
    out += std::to_string(ids[r]);
    for (std::size_t c = 0; c < ids.size(); ++c) out += "," + fmt(m[r * ids.size() + c]);
    out += "\n";
  }
  return out;
}

/// Left-aligned text table.
inline std::string aligned(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (width.size() <= k) width.push_back(0);
      width[k] = std::max(width[k], r[k].size());
    }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t k = 0; k < r.size(); ++k) {
      line += r[k];
      if (k + 1 < r.size()) line += std::string(width[k] - r[k].size() + 2, ' ');
    }
    out += line + "\n";
  }
  return out;
}

struct Series {
  std::string label;
  std::vector<std::int64_t> steps;
  std::vector<double> values;
};

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

/// Standalone SVG line chart with y fixed to [0, 1]. Dashed verticals mark
/// task boundaries.
inline std::string svg_chart(const std::string& title, const std::vector<Series>& series, std::int64_t x_max,
                             std::int64_t boundary_every) {
  constexpr double W = 720, H = 420, L = 60, R = 170, T = 40, B = 50;
  const double pw = W - L - R, ph = H - T - B;
  const double xm = static_cast<double>(std::max<std::int64_t>(x_max, 1));
  auto X = [&](double s) { return L + pw * s / xm; };
  auto Y = [&](double v) { return T + ph * (1.0 - v); };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << L + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
    << "</text>\n";
  for (int k = 0; k <= 5; ++k) {
    const double v = k / 5.0;
    o << "<line x1=\"" << L << "\" y1=\"" << Y(v) << "\" x2=\"" << L + pw << "\" y2=\"" << Y(v)
      << "\" stroke=\"#e0e0e0\"/>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << Y(v) + 4 << "\" text-anchor=\"end\">" << std::setprecision(1) << v
      << std::setprecision(2) << "</text>\n";
  }
  if (boundary_every > 0)
    for (std::int64_t b = boundary_every; b < x_max; b += boundary_every)
      o << "<line x1=\"" << X(static_cast<double>(b)) << "\" y1=\"" << T << "\" x2=\"" << X(static_cast<double>(b))
        << "\" y2=\"" << T + ph << "\" stroke=\"#999\" stroke-dasharray=\"4,4\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double s = xm * k / 4.0;
    o << "<text x=\"" << X(s) << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">"
      << static_cast<std::int64_t>(std::llround(s)) << "</text>\n";
  }
  o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">environment steps</text>\n";
  o << "<text x=\"16\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << T + ph / 2
    << ")\">success rate</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = palette[k % 10];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.steps.size(); ++i)
      o << (i ? " " : "") << X(static_cast<double>(s.steps[i])) << "," << Y(std::clamp(s.values[i], 0.0, 1.0));
    o << "\"/>\n";
    const double ly = T + 10 + 18.0 * static_cast<double>(k);
    o << "<line x1=\"" << L + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << L + pw + 32 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << L + pw + 38 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace recall::runner
