#pragma once

#include <string>
#include <utility>
#include <vector>

namespace stgat::svg {

// Dependency-free static SVG line plots for the report bundle.
struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

void write_line_plot(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<Series>& series);

}  // namespace stgat::svg
