#pragma once

// CSV tables and hand-written SVG line charts.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ots/cli/config.hpp"

namespace ots::cli {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) { rows.push_back(std::move(row)); }
};

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

/// Shortest text that parses back to the same double.
inline std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string render_csv(const CsvTable& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + csv_field(r[i]);
    out += '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
  return out;
}

/// Splits CSV text back into rows (quoted fields supported).
inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (ch == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
    } else {
      field += ch;
    }
  }
  if (!field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  if (!rows.empty()) {
    t.header = rows.front();
    t.rows.assign(rows.begin() + 1, rows.end());
  }
  return t;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// SVG

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log2_x = false;
  std::optional<std::pair<double, double>> y_range;  // default: data range
  std::vector<Series> series;
};

namespace detail {

inline std::string esc(const std::string& s) {
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

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  if (std::abs(v - std::round(v)) < 1e-9 && std::abs(v) < 1e9) std::snprintf(buf, sizeof buf, "%.0f", v);
  else std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline std::vector<double> nice_ticks(double lo, double hi, int target = 5) {
  if (hi <= lo) return {lo};
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> ticks;
  for (double v = std::ceil(lo / step) * step; v <= hi + step * 1e-9; v += step) ticks.push_back(v);
  return ticks;
}

}  // namespace detail

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> colors{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  return colors;
}

/// 640x400 chart: plot area inset 70/20/30/60 (left/right/top/bottom),
/// polyline per series with circle markers, legend at the top right.
inline std::string render_svg(const Chart& c) {
  const double w = 640, h = 400, left = 70, right = 20, top = 30, bottom = 60;
  const double pw = w - left - right, ph = h - top - bottom;
  auto tx = [&](double x) { return c.log2_x ? std::log2(std::max(x, 1e-12)) : x; };

  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : c.series)
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, tx(x));
      xmax = std::max(xmax, tx(x));
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (c.y_range) std::tie(ymin, ymax) = *c.y_range;
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1;
  if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
  if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
  auto px = [&](double x) { return left + (tx(x) - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << detail::esc(c.title)
    << "</text>\n";
  o << "<path d=\"M" << left << ' ' << top << " V" << top + ph << " H" << left + pw
    << "\" stroke=\"black\" fill=\"none\"/>\n";

  std::vector<double> xticks;
  if (c.log2_x) {
    for (double e = std::ceil(xmin); e <= xmax + 1e-9; e += 1.0) xticks.push_back(std::exp2(e));
  } else {
    xticks = detail::nice_ticks(xmin, xmax);
  }
  for (double v : xticks) {
    const double x = px(v);
    o << "<path d=\"M" << detail::num(x) << ' ' << top + ph << " v5\" stroke=\"black\"/>";
    o << "<text x=\"" << detail::num(x) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
      << detail::tick_label(v) << "</text>\n";
  }
  for (double v : detail::nice_ticks(ymin, ymax)) {
    const double y = py(v);
    o << "<path d=\"M" << left - 5 << ' ' << detail::num(y) << " h5\" stroke=\"black\"/>";
    o << "<path d=\"M" << left << ' ' << detail::num(y) << " h" << pw << "\" stroke=\"#dddddd\"/>";
    o << "<text x=\"" << left - 8 << "\" y=\"" << detail::num(y + 4) << "\" text-anchor=\"end\">"
      << detail::tick_label(v) << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 15 << "\" text-anchor=\"middle\">"
    << detail::esc(c.x_label) << "</text>\n";
  o << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << detail::esc(c.y_label) << "</text>\n";

  for (std::size_t i = 0; i < c.series.size(); ++i) {
    const auto& s = c.series[i];
    const std::string& color = palette()[i % palette().size()];
    auto pts = s.points;
    std::sort(pts.begin(), pts.end());
    if (!pts.empty()) {
      o << "<path d=\"";
      for (std::size_t k = 0; k < pts.size(); ++k)
        o << (k ? " L" : "M") << detail::num(px(pts[k].first)) << ' ' << detail::num(py(pts[k].second));
      o << "\" stroke=\"" << color << "\" stroke-width=\"2\" fill=\"none\"/>\n";
      for (const auto& [x, y] : pts)
        o << "<circle cx=\"" << detail::num(px(x)) << "\" cy=\"" << detail::num(py(y)) << "\" r=\"3\" fill=\""
          << color << "\"/>\n";
    }
    const double ly = top + 10 + 16.0 * static_cast<double>(i);
    o << "<path d=\"M" << left + pw - 150 << ' ' << ly << " h20\" stroke=\"" << color
      << "\" stroke-width=\"2\"/><text x=\"" << left + pw - 124 << "\" y=\"" << ly + 4 << "\">"
      << detail::esc(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace ots::cli
