#include "tupr/knn_refiner.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tupr {

void KnnConfig::validate() const {
  if (k < 1) throw UsageError("knn: k must be >= 1");
  if (window < 1 || window % 2 == 0) throw UsageError("knn: window must be odd and >= 1");
  if (!(sigma > 0.0)) throw UsageError("knn: sigma must be > 0");
  if (!(range_cutoff > 0.0)) throw UsageError("knn: range_cutoff must be > 0");
}

void nearest_window_neighbors(const RangeImage& img, std::size_t query, int window, int k,
                              std::vector<WindowNeighbor>& scratch) {
  scratch.clear();
  const int half = window / 2;
  const auto [u0, v0] = img.point_pixel[query];
  const double r0 = img.point_range[query];
  const int v_lo = std::max(0, v0 - half), v_hi = std::min(img.height - 1, v0 + half);
  const int u_lo = std::max(0, u0 - half), u_hi = std::min(img.width - 1, u0 + half);
  for (int v = v_lo; v <= v_hi; ++v) {
    for (int u = u_lo; u <= u_hi; ++u) {
      const std::size_t px = img.pixel_at(u, v);
      const auto fg = img.fg_index[px];
      if (fg == kNoPoint) continue;
      const auto idx = static_cast<std::uint32_t>(fg);
      scratch.push_back({std::abs(static_cast<double>(img.point_range[idx]) - r0), idx,
                         static_cast<std::uint32_t>(px)});
    }
  }
  const auto order = [](const WindowNeighbor& a, const WindowNeighbor& b) {
    return a.range_gap != b.range_gap ? a.range_gap < b.range_gap : a.point < b.point;
  };
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k), scratch.size());
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(keep),
                    scratch.end(), order);
  scratch.resize(keep);
}

std::vector<ClassId> knn_refine(const RangeImage& img, std::span<const ClassId> pixel_labels,
                                const KnnConfig& cfg, int num_classes) {
  cfg.validate();
  if (pixel_labels.size() != img.pixel_count())
    throw DataError("knn: " + std::to_string(pixel_labels.size()) + " pixel labels for " +
                    std::to_string(img.pixel_count()) + " pixels");

  const double inv_two_sigma2 = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  std::vector<ClassId> out(img.point_count());
  std::vector<WindowNeighbor> neighbors;
  std::vector<double> votes(static_cast<std::size_t>(num_classes));

  for (std::size_t i = 0; i < img.point_count(); ++i) {
    const ClassId own = pixel_labels[img.pixel_of(i)];
    nearest_window_neighbors(img, i, cfg.window, cfg.k, neighbors);
    std::fill(votes.begin(), votes.end(), 0.0);
    bool any = false;
    for (const auto& nb : neighbors) {
      if (nb.range_gap > cfg.range_cutoff) continue;
      const ClassId label = pixel_labels[nb.pixel];
      if (label >= num_classes)
        throw DataError("knn: pixel label " + std::to_string(label) + " outside 0..C-1");
      votes[label] += cfg.weighted ? std::exp(-nb.range_gap * nb.range_gap * inv_two_sigma2) : 1.0;
      any = true;
    }
    if (!any) {
      out[i] = own;
      continue;
    }
    // First maximum wins, so ties resolve to the smaller class id.
    out[i] = static_cast<ClassId>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }
  return out;
}

}  // namespace tupr
