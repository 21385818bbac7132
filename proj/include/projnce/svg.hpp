#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "projnce/errors.hpp"

namespace projnce::svg {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> err;  // optional; drawn as a band of +-err around y
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  double width = 720.0;
  double height = 440.0;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Round step from the 1-2-5 ladder giving about `target` intervals.
inline double nice_step(double span, int target) {
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double f = raw / mag;
  const double pick = f < 1.5 ? 1.0 : (f < 3.5 ? 2.0 : (f < 7.5 ? 5.0 : 10.0));
  return pick * mag;
}

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                           "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace detail

/// Standalone SVG line chart with axes, labels, a legend and optional error
/// bands. Output depends only on the arguments.
inline std::string line_chart(const ChartSpec& spec, const std::vector<Series>& series) {
  using detail::num;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0;
  double y0 = x0, y1 = -x0;
  auto tx = [&](double x) { return spec.log_x ? std::log10(x) : x; };
  for (const auto& s : series) {
    if (s.x.size() != s.y.size() || (!s.err.empty() && s.err.size() != s.y.size())) {
      throw DimensionError("svg series '" + s.name + "' has mismatched lengths");
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      if (spec.log_x && !(s.x[i] > 0.0)) throw DomainError("log axis needs positive x");
      const double e = s.err.empty() || !std::isfinite(s.err[i]) ? 0.0 : s.err[i];
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, s.y[i] - e);
      y1 = std::max(y1, s.y[i] + e);
    }
  }
  if (!std::isfinite(x0)) {
    x0 = 0.0;
    x1 = 1.0;
    y0 = 0.0;
    y1 = 1.0;
  }
  if (x1 == x0) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double ystep = detail::nice_step(y1 - y0, 5);
  y0 = std::floor(y0 / ystep) * ystep;
  y1 = std::ceil(y1 / ystep) * ystep;

  const double left = 70, right = 170, top = 40, bottom = 55;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;
  auto px = [&](double x) { return left + (tx(x) - x0) / (x1 - x0) * pw; };
  auto pxt = [&](double t) { return left + (t - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (y1 - y) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(spec.width) << "\" height=\""
     << num(spec.height) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(left + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
     << detail::escape(spec.title) << "</text>\n";

  // grid and ticks
  for (double y = y0; y <= y1 + 0.5 * ystep; y += ystep) {
    os << "<line x1=\"" << num(left) << "\" y1=\"" << num(py(y)) << "\" x2=\"" << num(left + pw)
       << "\" y2=\"" << num(py(y)) << "\" stroke=\"#e0e0e0\"/>\n";
    os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(py(y) + 4)
       << "\" text-anchor=\"end\">" << detail::tick_label(std::abs(y) < 1e-12 ? 0.0 : y)
       << "</text>\n";
  }
  std::vector<double> xticks;
  if (spec.log_x) {
    for (double e = std::floor(x0); e <= std::ceil(x1); e += 1.0) {
      if (e >= x0 - 1e-9 && e <= x1 + 1e-9) xticks.push_back(e);
    }
    if (xticks.size() < 2) xticks = {x0, x1};
  } else {
    const double step = detail::nice_step(x1 - x0, 6);
    for (double x = std::ceil(x0 / step) * step; x <= x1 + 1e-9 * step; x += step) {
      xticks.push_back(x);
    }
  }
  for (double t : xticks) {
    const double label = spec.log_x ? std::pow(10.0, t) : t;
    os << "<line x1=\"" << num(pxt(t)) << "\" y1=\"" << num(top + ph) << "\" x2=\"" << num(pxt(t))
       << "\" y2=\"" << num(top + ph + 5) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(pxt(t)) << "\" y=\"" << num(top + ph + 18)
       << "\" text-anchor=\"middle\">" << detail::tick_label(label) << "</text>\n";
  }
  os << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw)
     << "\" height=\"" << num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(spec.height - 12)
     << "\" text-anchor=\"middle\">" << detail::escape(spec.x_label) << "</text>\n";
  os << "<text transform=\"translate(18," << num(top + ph / 2)
     << ") rotate(-90)\" text-anchor=\"middle\">" << detail::escape(spec.y_label) << "</text>\n";

  constexpr std::size_t kColors = std::size(detail::kPalette);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& se = series[s];
    const char* color = detail::kPalette[s % kColors];
    std::vector<std::size_t> pts;
    for (std::size_t i = 0; i < se.x.size(); ++i) {
      if (std::isfinite(se.y[i])) pts.push_back(i);
    }
    if (pts.empty()) continue;
    if (!se.err.empty() && pts.size() > 1) {
      os << "<polygon fill=\"" << color << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
      for (std::size_t i : pts) {
        os << num(px(se.x[i])) << ',' << num(py(se.y[i] + (std::isfinite(se.err[i]) ? se.err[i] : 0.0)))
           << ' ';
      }
      for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
        const std::size_t i = *it;
        os << num(px(se.x[i])) << ',' << num(py(se.y[i] - (std::isfinite(se.err[i]) ? se.err[i] : 0.0)))
           << ' ';
      }
      os << "\"/>\n";
    }
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i : pts) os << num(px(se.x[i])) << ',' << num(py(se.y[i])) << ' ';
    os << "\"/>\n";
    for (std::size_t i : pts) {
      os << "<circle cx=\"" << num(px(se.x[i])) << "\" cy=\"" << num(py(se.y[i]))
         << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
    }
    const double ly = top + 14 + 20.0 * static_cast<double>(s);
    const double lx = left + pw + 15;
    os << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(lx + 24)
       << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(lx + 30) << "\" y=\"" << num(ly + 4) << "\">"
       << detail::escape(se.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace projnce::svg
