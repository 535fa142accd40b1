#pragma once

#include <string>
#include <vector>

namespace chiefray {

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<double> x;
  std::vector<double> y;
  int highlight = -1;  // index drawn with a ring marker, -1 for none
};

// Static SVG line chart with axes and tick labels.
std::string render_svg(const LinePlot& plot, int width = 640, int height = 400);

}  // namespace chiefray
