#pragma once

#include <array>
#include <string>
#include <vector>

namespace scarceops {

struct LatentSeries {
  std::string label;
  std::vector<std::array<float, 2>> points;  // per-image fingerprints
  std::array<float, 2> mean{0.0f, 0.0f};     // dataset mean embedding
};

// Scatter of per-image fingerprints colored by dataset with one mean marker
// per series and a legend. Raw latent coordinates, linear axes.
std::string render_latent_svg(const std::vector<LatentSeries>& series,
                              int width = 880, int height = 640);

}  // namespace scarceops
