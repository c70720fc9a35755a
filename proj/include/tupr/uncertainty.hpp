#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tupr/coarse.hpp"
#include "tupr/range_projection.hpp"

namespace tupr {

inline constexpr int kGeometryFeatures = 5;  // x, y, z, range, remission

enum class PoolReason : std::uint8_t { Boundary, Background, Both };
const char* to_string(PoolReason reason) noexcept;

/// Which side of the cutoff a background point must fall on to be selected.
enum class BackgroundRule { Far, Near };

struct SelectionConfig {
  std::size_t boundary_budget = 8192;
  double c_u = 1.0;
  std::size_t n_u = 4096;
  int agg_k = 5;
  int agg_window = 5;
  std::uint64_t seed = 0;
  BackgroundRule background_rule = BackgroundRule::Far;
  DistanceMode distance_mode = DistanceMode::Range;

  void validate() const;
};

/// Uncertain points with their refiner inputs.
struct UncertainPointSet {
  std::size_t feature_dim = 0;          // 5 + C
  std::vector<std::uint32_t> indices;   // point indices, unique
  std::vector<PoolReason> reason;
  std::vector<double> features;         // size() * feature_dim, row-major
  std::vector<ClassId> coarse_label;

  std::size_t size() const noexcept { return indices.size(); }
  bool empty() const noexcept { return indices.empty(); }
  std::span<const double> feature(std::size_t entry) const {
    return std::span(features).subspan(entry * feature_dim, feature_dim);
  }
};

/// Feature vectors (x, y, z, range, remission, aggregated class probabilities)
/// for the listed points. The class part averages the probability vectors of the
/// point's own pixel and of the agg_k - 1 window pixels whose foreground range is
/// closest to the point's range.
std::vector<double> aggregate_features(const RangeImage& img, const CoarseSegmentation& seg,
                                       const SelectionConfig& cfg,
                                       std::span<const std::uint32_t> points);
/// Same, for every point of the image.
std::vector<double> aggregate_features(const RangeImage& img, const CoarseSegmentation& seg,
                                       const SelectionConfig& cfg);

/// Up to boundary_budget points taken from pixels in ascending top-2 margin order.
std::vector<std::uint32_t> select_boundary(const RangeImage& img, const CoarseSegmentation& seg,
                                           const SelectionConfig& cfg);

/// Background points on the configured side of the c_u distance cutoff.
std::vector<std::uint32_t> select_background(const RangeImage& img, const SelectionConfig& cfg);

/// Deduplicated union of both selections with features and current labels.
UncertainPointSet build_pool(const RangeImage& img, const CoarseSegmentation& seg,
                             const SelectionConfig& cfg, std::span<const ClassId> current_labels);

/// n_u entries drawn uniformly without replacement (all entries when fewer).
UncertainPointSet sample_training_batch(const UncertainPointSet& pool, std::size_t n_u,
                                        std::uint64_t seed);

/// Text dump, one line per entry: `point_index reason margin distance`.
void write_pool_dump(const UncertainPointSet& pool, const RangeImage& img,
                     const CoarseSegmentation& seg, const std::filesystem::path& path);

}  // namespace tupr
