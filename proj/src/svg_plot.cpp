#include "scarceops/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace scarceops {

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                          "#bcbd22", "#17becf", "#aec7e8", "#ffbb78"};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

std::string render_latent_svg(const std::vector<LatentSeries>& series,
                              int width, int height) {
  float lo_x = 0, hi_x = 1, lo_y = 0, hi_y = 1;
  bool first = true;
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      if (first) {
        lo_x = hi_x = p[0];
        lo_y = hi_y = p[1];
        first = false;
      }
      lo_x = std::min(lo_x, p[0]);
      hi_x = std::max(hi_x, p[0]);
      lo_y = std::min(lo_y, p[1]);
      hi_y = std::max(hi_y, p[1]);
    }
    if (first) {
      lo_x = hi_x = s.mean[0];
      lo_y = hi_y = s.mean[1];
      first = false;
    }
    lo_x = std::min(lo_x, s.mean[0]);
    hi_x = std::max(hi_x, s.mean[0]);
    lo_y = std::min(lo_y, s.mean[1]);
    hi_y = std::max(hi_y, s.mean[1]);
  }
  if (hi_x - lo_x < 1e-6f) hi_x = lo_x + 1.0f;
  if (hi_y - lo_y < 1e-6f) hi_y = lo_y + 1.0f;

  const double margin = 48;
  const double legend_w = 170;
  const double plot_w = width - 2 * margin - legend_w;
  const double plot_h = height - 2 * margin;
  auto sx = [&](double x) {
    return margin + (x - lo_x) / (hi_x - lo_x) * plot_w;
  };
  auto sy = [&](double y) {
    // SVG y grows downward
    return margin + (hi_y - y) / (hi_y - lo_y) * plot_h;
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  svg << "<rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  svg << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\""
      << plot_w << "\" height=\"" << plot_h
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
  // axis range labels
  svg << "<text x=\"" << margin << "\" y=\"" << height - margin + 20
      << "\" font-size=\"11\">" << fmt(lo_x) << "</text>\n";
  svg << "<text x=\"" << margin + plot_w - 24 << "\" y=\""
      << height - margin + 20 << "\" font-size=\"11\">" << fmt(hi_x)
      << "</text>\n";
  svg << "<text x=\"" << 6 << "\" y=\"" << margin + 10
      << "\" font-size=\"11\">" << fmt(hi_y) << "</text>\n";
  svg << "<text x=\"" << 6 << "\" y=\"" << margin + plot_h
      << "\" font-size=\"11\">" << fmt(lo_y) << "</text>\n";

  for (size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kPalette[i % (sizeof(kPalette) / sizeof(*kPalette))];
    for (const auto& p : s.points)
      svg << "<circle class=\"point\" cx=\"" << fmt(sx(p[0])) << "\" cy=\""
          << fmt(sy(p[1])) << "\" r=\"2\" fill=\"" << color
          << "\" fill-opacity=\"0.45\"/>\n";
    const double mx = sx(s.mean[0]), my = sy(s.mean[1]);
    svg << "<path class=\"mean-marker\" d=\"M " << fmt(mx - 6) << " "
        << fmt(my) << " L " << fmt(mx) << " " << fmt(my - 6) << " L "
        << fmt(mx + 6) << " " << fmt(my) << " L " << fmt(mx) << " "
        << fmt(my + 6) << " Z\" fill=\"" << color
        << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  }

  const double lx = width - margin - legend_w + 12;
  double ly = margin + 8;
  svg << "<text x=\"" << lx << "\" y=\"" << ly
      << "\" font-size=\"13\" font-weight=\"bold\">datasets</text>\n";
  ly += 10;
  for (size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % (sizeof(kPalette) / sizeof(*kPalette))];
    ly += 18;
    svg << "<rect x=\"" << lx << "\" y=\"" << ly - 10
        << "\" width=\"12\" height=\"12\" fill=\"" << color << "\"/>\n";
    svg << "<text class=\"legend-entry\" x=\"" << lx + 18 << "\" y=\"" << ly
        << "\" font-size=\"12\">" << series[i].label << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace scarceops
