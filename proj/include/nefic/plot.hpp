// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_PLOT_HPP_
#define NEFIC_PLOT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nefic/common.hpp"

namespace nefic {

// ---------------------------------------------------------------------------
// Minimal CSV table: comma-separated, first row is the header, no quoting
// (none of our writers emit commas inside cells).
// ---------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return int(i);
    return -1;
  }
  int require_col(const std::string& name) const {
    const int c = col(name);
    NEFIC_CHECK(c >= 0, ParseError, "csv: missing column '", name, "'");
    return c;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream is(path);
  NEFIC_CHECK(is.good(), IoError, "cannot read csv '", path, "'");
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      t.header = split_csv_line(line);
      first = false;
    } else {
      t.rows.push_back(split_csv_line(line));
    }
  }
  NEFIC_CHECK(!t.header.empty(), ParseError, "csv '", path, "' is empty");
  return t;
}

// Extracts an RD curve (bpp, quality) from a table. When a `lambda_id` or
// `lambda_r` column is present, rows are grouped by it and averaged (the
// shape of a per-image sweep); otherwise every row is one point.
inline std::vector<std::pair<double, double>> curve_from_table(
    const CsvTable& t, const std::string& x_col, const std::string& y_col) {
  const int xc = t.require_col(x_col);
  const int yc = t.require_col(y_col);
  int group = t.col("lambda_id");
  if (group < 0) group = t.col("lambda_r");
  std::vector<std::pair<double, double>> pts;
  if (group < 0) {
    for (const auto& r : t.rows)
      pts.emplace_back(std::stod(r[size_t(xc)]), std::stod(r[size_t(yc)]));
  } else {
    std::map<std::string, std::pair<std::pair<double, double>, int64_t>> acc;
    for (const auto& r : t.rows) {
      auto& a = acc[r[size_t(group)]];
      a.first.first += std::stod(r[size_t(xc)]);
      a.first.second += std::stod(r[size_t(yc)]);
      a.second += 1;
    }
    for (const auto& [key, a] : acc)
      pts.emplace_back(a.first.first / double(a.second),
                       a.first.second / double(a.second));
  }
  std::sort(pts.begin(), pts.end());
  return pts;
}

// ---------------------------------------------------------------------------
// SVG line charts: one chart per file, one polyline per labeled series.
// ---------------------------------------------------------------------------

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (x, y)
};

namespace detail {

inline std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

inline const char* series_color(size_t i) {
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                   "#ff7f0e", "#9467bd", "#8c564b",
                                   "#17becf", "#7f7f7f"};
  return kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
}

}  // namespace detail

// Writes a single SVG line chart. Axis ranges are fitted to the data with a
// small margin; degenerate (constant) ranges are padded so the geometry
// stays finite.
inline void write_line_chart(const std::string& path, const std::string& title,
                             const std::string& x_label,
                             const std::string& y_label,
                             const std::vector<Series>& series) {
  NEFIC_CHECK(!series.empty(), ConfigError, "chart '", title,
              "' has no series");
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  NEFIC_CHECK(x0 <= x1, ConfigError, "chart '", title, "' has no points");
  auto pad = [](double& lo, double& hi) {
    if (hi - lo < 1e-12) {
      const double p = std::max(1.0, std::abs(lo)) * 0.1;
      lo -= p;
      hi += p;
    } else {
      const double p = (hi - lo) * 0.05;
      lo -= p;
      hi += p;
    }
  };
  pad(x0, x1);
  pad(y0, y1);

  const double W = 640, H = 480, ml = 70, mr = 20, mt = 40, mb = 55;
  const double pw = W - ml - mr, ph = H - mt - mb;
  auto sx = [&](double x) { return ml + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return mt + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
     << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H
     << "\">\n";
  os << "<rect width=\"" << W << "\" height=\"" << H
     << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"16\">"
     << title << "</text>\n";

  // Axes, grid and ticks.
  os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw
     << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n";
  const int kTicks = 5;
  for (int i = 0; i <= kTicks; ++i) {
    const double fx = x0 + (x1 - x0) * double(i) / kTicks;
    const double fy = y0 + (y1 - y0) * double(i) / kTicks;
    os << "<line x1=\"" << sx(fx) << "\" y1=\"" << mt + ph << "\" x2=\""
       << sx(fx) << "\" y2=\"" << mt + ph + 5
       << "\" stroke=\"#333\"/>\n";
    os << "<text x=\"" << sx(fx) << "\" y=\"" << mt + ph + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << detail::fmt_tick(fx) << "</text>\n";
    os << "<line x1=\"" << ml - 5 << "\" y1=\"" << sy(fy) << "\" x2=\"" << ml
       << "\" y2=\"" << sy(fy) << "\" stroke=\"#333\"/>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << sy(fy) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << detail::fmt_tick(fy) << "</text>\n";
    if (i > 0 && i < kTicks) {
      os << "<line x1=\"" << sx(fx) << "\" y1=\"" << mt << "\" x2=\""
         << sx(fx) << "\" y2=\"" << mt + ph
         << "\" stroke=\"#eee\"/>\n";
      os << "<line x1=\"" << ml << "\" y1=\"" << sy(fy) << "\" x2=\""
         << ml + pw << "\" y2=\"" << sy(fy) << "\" stroke=\"#eee\"/>\n";
    }
  }
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"13\">"
     << x_label << "</text>\n";
  os << "<text x=\"18\" y=\"" << mt + ph / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"13\" transform=\"rotate(-90 18 "
     << mt + ph / 2 << ")\">" << y_label << "</text>\n";

  // Series polylines, markers, legend.
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = detail::series_color(si);
    os << "<polyline fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : s.points) os << sx(x) << "," << sy(y) << " ";
    os << "\"/>\n";
    for (const auto& [x, y] : s.points)
      os << "<circle cx=\"" << sx(x) << "\" cy=\"" << sy(y)
         << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const double ly = mt + 16 + 18 * double(si);
    os << "<line x1=\"" << ml + pw - 150 << "\" y1=\"" << ly << "\" x2=\""
       << ml + pw - 126 << "\" y2=\"" << ly << "\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << ml + pw - 120 << "\" y=\"" << ly + 4
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.label
       << "</text>\n";
  }
  os << "</svg>\n";

  std::ofstream f(path);
  NEFIC_CHECK(f.good(), IoError, "cannot write chart '", path, "'");
  f << os.str();
}

}  // namespace nefic

#endif  // NEFIC_PLOT_HPP_
