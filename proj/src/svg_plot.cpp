#include "chiefray/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "chiefray/error.hpp"

namespace chiefray {

namespace {

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::string tick(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Round step of roughly span / 5.
double nice_step(double span) {
  if (!(span > 0.0)) return 1.0;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  return (r < 1.5 ? 1.0 : r < 3.5 ? 2.0 : r < 7.5 ? 5.0 : 10.0) * mag;
}

}  // namespace

std::string render_svg(const LinePlot& plot, int width, int height) {
  if (plot.x.size() != plot.y.size()) throw Error(ErrorCode::kInvalidArgument, "x and y differ in length");
  const double left = 70, right = 20, top = 40, bottom = 55;
  const double pw = width - left - right, ph = height - top - bottom;

  double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  if (!plot.x.empty()) {
    x0 = *std::min_element(plot.x.begin(), plot.x.end());
    x1 = *std::max_element(plot.x.begin(), plot.x.end());
    y0 = *std::min_element(plot.y.begin(), plot.y.end());
    y1 = *std::max_element(plot.y.begin(), plot.y.end());
  }
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) {
    const double pad = std::max(std::abs(y0) * 0.05, 1e-9);
    y0 -= pad;
    y1 += pad;
  } else {
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
  }
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + (y1 - y) / (y1 - y0) * ph; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << num(width / 2.0) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(plot.title)
    << "</text>\n";

  const double xs = nice_step(x1 - x0), ys = nice_step(y1 - y0);
  for (double t = std::ceil(x0 / xs) * xs; t <= x1 + 1e-9 * xs; t += xs) {
    s << "<line x1=\"" << num(sx(t)) << "\" y1=\"" << num(top) << "\" x2=\"" << num(sx(t)) << "\" y2=\""
      << num(top + ph) << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << num(sx(t)) << "\" y=\"" << num(top + ph + 16) << "\" text-anchor=\"middle\">" << tick(t)
      << "</text>\n";
  }
  for (double t = std::ceil(y0 / ys) * ys; t <= y1 + 1e-9 * ys; t += ys) {
    s << "<line x1=\"" << num(left) << "\" y1=\"" << num(sy(t)) << "\" x2=\"" << num(left + pw) << "\" y2=\""
      << num(sy(t)) << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << num(left - 6) << "\" y=\"" << num(sy(t) + 4) << "\" text-anchor=\"end\">" << tick(t)
      << "</text>\n";
  }
  s << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  s << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(height - 12.0) << "\" text-anchor=\"middle\">"
    << escape(plot.x_label) << "</text>\n";
  s << "<text transform=\"translate(16," << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(plot.y_label) << "</text>\n";

  if (!plot.x.empty()) {
    s << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < plot.x.size(); ++i) s << (i ? " " : "") << num(sx(plot.x[i])) << "," << num(sy(plot.y[i]));
    s << "\"/>\n";
    for (std::size_t i = 0; i < plot.x.size(); ++i)
      s << "<circle cx=\"" << num(sx(plot.x[i])) << "\" cy=\"" << num(sy(plot.y[i])) << "\" r=\"2.5\" fill=\"#1f77b4\"/>\n";
    if (plot.highlight >= 0 && static_cast<std::size_t>(plot.highlight) < plot.x.size()) {
      const auto h = static_cast<std::size_t>(plot.highlight);
      s << "<circle cx=\"" << num(sx(plot.x[h])) << "\" cy=\"" << num(sy(plot.y[h]))
        << "\" r=\"7\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace chiefray
