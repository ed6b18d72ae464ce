#include "stgat/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "stgat/errors.hpp"

namespace stgat::svg {

namespace {

constexpr int kWidth = 720, kHeight = 420;
constexpr int kLeft = 70, kRight = 30, kTop = 50, kBottom = 50;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

void write_line_plot(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<Series>& series) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (!std::isfinite(xmin)) {  // nothing to draw
    xmin = 0.0; xmax = 1.0; ymin = 0.0; ymax = 1.0;
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) {
    return kLeft + (x - xmin) / (xmax - xmin) * (kWidth - kLeft - kRight);
  };
  auto py = [&](double y) {
    return kHeight - kBottom -
           (y - ymin) / (ymax - ymin) * (kHeight - kTop - kBottom);
  };

  std::ofstream out(path);
  if (!out) throw DataError("cannot write plot: " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth
      << "' height='" << kHeight << "' font-family='sans-serif'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<text x='" << kWidth / 2 << "' y='24' text-anchor='middle' "
      << "font-size='16'>" << title << "</text>\n";

  // axes and gridlines with 5 ticks per side
  for (int i = 0; i <= 5; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 5.0;
    const double fy = ymin + (ymax - ymin) * i / 5.0;
    out << "<line x1='" << num(px(fx)) << "' y1='" << kTop << "' x2='"
        << num(px(fx)) << "' y2='" << kHeight - kBottom
        << "' stroke='#eeeeee'/>\n";
    out << "<line x1='" << kLeft << "' y1='" << num(py(fy)) << "' x2='"
        << kWidth - kRight << "' y2='" << num(py(fy))
        << "' stroke='#eeeeee'/>\n";
    out << "<text x='" << num(px(fx)) << "' y='" << kHeight - kBottom + 18
        << "' text-anchor='middle' font-size='11'>" << num(fx) << "</text>\n";
    out << "<text x='" << kLeft - 8 << "' y='" << num(py(fy) + 4)
        << "' text-anchor='end' font-size='11'>" << num(fy) << "</text>\n";
  }
  out << "<line x1='" << kLeft << "' y1='" << kHeight - kBottom << "' x2='"
      << kWidth - kRight << "' y2='" << kHeight - kBottom
      << "' stroke='black'/>\n";
  out << "<line x1='" << kLeft << "' y1='" << kTop << "' x2='" << kLeft
      << "' y2='" << kHeight - kBottom << "' stroke='black'/>\n";
  out << "<text x='" << kWidth / 2 << "' y='" << kHeight - 12
      << "' text-anchor='middle' font-size='12'>" << x_label << "</text>\n";
  out << "<text x='16' y='" << kHeight / 2
      << "' text-anchor='middle' font-size='12' transform='rotate(-90 16 "
      << kHeight / 2 << ")'>" << y_label << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % (sizeof(kPalette) / sizeof(*kPalette))];
    out << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' "
        << "points='";
    for (const auto& [x, y] : series[s].points) {
      out << num(px(x)) << ',' << num(py(y)) << ' ';
    }
    out << "'/>\n";
    if (!series[s].label.empty()) {
      const int ly = kTop + 16 * static_cast<int>(s);
      out << "<line x1='" << kWidth - kRight - 130 << "' y1='" << ly
          << "' x2='" << kWidth - kRight - 110 << "' y2='" << ly
          << "' stroke='" << color << "' stroke-width='2'/>\n";
      out << "<text x='" << kWidth - kRight - 104 << "' y='" << ly + 4
          << "' font-size='11'>" << series[s].label << "</text>\n";
    }
  }
  out << "</svg>\n";
  if (!out) throw DataError("plot write failed: " + path);
}

}  // namespace stgat::svg
