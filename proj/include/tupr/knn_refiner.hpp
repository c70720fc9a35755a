#pragma once

#include <span>
#include <vector>

#include "tupr/range_projection.hpp"

namespace tupr {

struct KnnConfig {
  int k = 5;
  int window = 5;
  double sigma = 1.0;
  double range_cutoff = 1.0;
  bool weighted = true;  // false: every surviving neighbor casts one vote

  void validate() const;
};

/// A foreground point found inside the pixel window around a query point.
struct WindowNeighbor {
  double range_gap = 0.0;  // |range(neighbor) - range(query)|
  std::uint32_t point = 0;
  std::uint32_t pixel = 0;
};

/// Foreground points of the valid pixels inside the `window` x `window` box
/// centred on the query's pixel (no horizontal wrap), ordered by
/// (range_gap, point index), truncated to `k`. `scratch` is reused storage.
void nearest_window_neighbors(const RangeImage& img, std::size_t query, int window, int k,
                              std::vector<WindowNeighbor>& scratch);

/// Windowed KNN label refinement over all points (range-difference ranking,
/// cutoff filter, Gaussian-weighted hard-label vote, ties to the smaller class id).
std::vector<ClassId> knn_refine(const RangeImage& img, std::span<const ClassId> pixel_labels,
                                const KnnConfig& cfg, int num_classes);

}  // namespace tupr
