#pragma once

#include <string>
#include <vector>

namespace forge {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Line chart as a standalone SVG document. Non-finite points are skipped.
std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series);

}  // namespace forge
