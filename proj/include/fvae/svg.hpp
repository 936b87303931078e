#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "fvae/error.hpp"

namespace fvae {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

namespace svg_detail {

inline const char* palette(size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  return colors[i % 8];
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace svg_detail

// Self-contained SVG line chart; byte-reproducible for identical data.
inline std::string line_chart_svg(const std::string& title,
                                  const std::string& x_label,
                                  const std::string& y_label,
                                  const std::vector<Series>& series,
                                  int width = 760, int height = 420) {
  using svg_detail::num;
  using svg_detail::palette;
  using svg_detail::tick;
  const double ml = 64, mr = 140, mt = 40, mb = 48;
  const double pw = width - ml - mr, ph = height - mt - mb;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool any = false;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!any) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        any = true;
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ml + pw * (x - xmin) / (xmax - xmin); };
  auto py = [&](double y) { return mt + ph * (1.0 - (y - ymin) / (ymax - ymin)); };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"15\">" << title << "</text>\n";

  for (int i = 0; i <= 4; ++i) {
    const double fy = ymin + (ymax - ymin) * i / 4.0;
    const double yy = py(fy);
    out << "<line x1=\"" << num(ml) << "\" y1=\"" << num(yy) << "\" x2=\""
        << num(ml + pw) << "\" y2=\"" << num(yy)
        << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << num(ml - 6) << "\" y=\"" << num(yy + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">" << tick(fy) << "</text>\n";
    const double fx = xmin + (xmax - xmin) * i / 4.0;
    out << "<text x=\"" << num(px(fx)) << "\" y=\"" << num(mt + ph + 18)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">" << tick(fx) << "</text>\n";
  }
  out << "<line x1=\"" << num(ml) << "\" y1=\"" << num(mt) << "\" x2=\""
      << num(ml) << "\" y2=\"" << num(mt + ph)
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  out << "<line x1=\"" << num(ml) << "\" y1=\"" << num(mt + ph) << "\" x2=\""
      << num(ml + pw) << "\" y2=\"" << num(mt + ph)
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">" << x_label << "</text>\n";
  out << "<text x=\"16\" y=\"" << height / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\" transform=\"rotate(-90 16 " << height / 2 << ")\">"
      << y_label << "</text>\n";

  for (size_t s = 0; s < series.size(); ++s) {
    std::ostringstream pts;
    for (size_t i = 0; i < series[s].x.size(); ++i) {
      if (!std::isfinite(series[s].x[i]) || !std::isfinite(series[s].y[i]))
        continue;
      pts << num(px(series[s].x[i])) << ',' << num(py(series[s].y[i])) << ' ';
    }
    out << "<polyline fill=\"none\" stroke=\"" << palette(s)
        << "\" stroke-width=\"1.5\" points=\"" << pts.str() << "\"/>\n";
    const double ly = mt + 16.0 * static_cast<double>(s);
    out << "<line x1=\"" << num(ml + pw + 8) << "\" y1=\"" << num(ly)
        << "\" x2=\"" << num(ml + pw + 28) << "\" y2=\"" << num(ly)
        << "\" stroke=\"" << palette(s) << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << num(ml + pw + 32) << "\" y=\"" << num(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << series[s].label
        << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

// Grouped bar chart: values[group][series].
inline std::string bar_chart_svg(const std::string& title,
                                 const std::vector<std::string>& group_labels,
                                 const std::vector<std::string>& series_labels,
                                 const std::vector<std::vector<double>>& values,
                                 int width = 760, int height = 420) {
  using svg_detail::num;
  using svg_detail::palette;
  using svg_detail::tick;
  if (values.size() != group_labels.size())
    throw Error("bar_chart_svg: group count mismatch");
  const double ml = 64, mr = 140, mt = 40, mb = 48;
  const double pw = width - ml - mr, ph = height - mt - mb;
  double vmax = 0.0;
  for (const auto& g : values)
    for (double v : g) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;
  vmax *= 1.05;

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"15\">" << title << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fy = vmax * i / 4.0;
    const double yy = mt + ph * (1.0 - fy / vmax);
    out << "<line x1=\"" << num(ml) << "\" y1=\"" << num(yy) << "\" x2=\""
        << num(ml + pw) << "\" y2=\"" << num(yy)
        << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << num(ml - 6) << "\" y=\"" << num(yy + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">" << tick(fy) << "</text>\n";
  }

  const size_t groups = values.size();
  const size_t nseries = series_labels.size();
  const double group_w = pw / static_cast<double>(groups);
  const double bar_w = group_w * 0.8 / static_cast<double>(nseries);
  for (size_t gi = 0; gi < groups; ++gi) {
    for (size_t si = 0; si < nseries && si < values[gi].size(); ++si) {
      const double x = ml + group_w * static_cast<double>(gi) + group_w * 0.1 +
                       bar_w * static_cast<double>(si);
      const double h = ph * values[gi][si] / vmax;
      out << "<rect x=\"" << num(x) << "\" y=\"" << num(mt + ph - h)
          << "\" width=\"" << num(bar_w * 0.92) << "\" height=\"" << num(h)
          << "\" fill=\"" << palette(si) << "\"/>\n";
    }
    out << "<text x=\"" << num(ml + group_w * (static_cast<double>(gi) + 0.5))
        << "\" y=\"" << num(mt + ph + 18)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">" << group_labels[gi] << "</text>\n";
  }
  for (size_t si = 0; si < nseries; ++si) {
    const double ly = mt + 16.0 * static_cast<double>(si);
    out << "<rect x=\"" << num(ml + pw + 8) << "\" y=\"" << num(ly - 8)
        << "\" width=\"12\" height=\"12\" fill=\"" << palette(si) << "\"/>\n";
    out << "<text x=\"" << num(ml + pw + 26) << "\" y=\"" << num(ly + 2)
        << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << series_labels[si] << "</text>\n";
  }
  out << "<line x1=\"" << num(ml) << "\" y1=\"" << num(mt + ph) << "\" x2=\""
      << num(ml + pw) << "\" y2=\"" << num(mt + ph)
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  out << "</svg>\n";
  return out.str();
}

}  // namespace fvae
