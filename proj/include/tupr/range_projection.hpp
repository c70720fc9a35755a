#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tupr/common.hpp"
#include "tupr/kitti_io.hpp"

namespace tupr {

struct ProjectionConfig {
  int width = 2048;
  int height = 64;
  double fov_up_deg = 3.0;
  double fov_down_deg = -25.0;

  void validate() const;
};

struct PixelCoord {
  std::int32_t u = 0;  // column
  std::int32_t v = 0;  // row
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

inline constexpr std::int32_t kNoPoint = -1;
inline constexpr int kRangeChannels = 5;

/// Range image plus the point<->pixel bookkeeping needed to go back to points.
///
/// Each valid pixel stores (x, y, z, range, remission) of its foreground point,
/// the point with the smallest range among those projecting there (lowest index
/// on ties). Every point keeps its pixel and range, and a copy of its attributes
/// so later stages can build per-point features.
struct RangeImage {
  int width = 0;
  int height = 0;
  std::vector<float> channels;          // height * width * 5, row-major
  std::vector<std::uint8_t> valid;      // height * width
  std::vector<std::int32_t> fg_index;   // height * width, kNoPoint when empty
  std::vector<Point> points;            // per point
  std::vector<PixelCoord> point_pixel;  // per point
  std::vector<float> point_range;       // per point
  std::vector<std::uint8_t> is_foreground;

  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width) * height; }
  std::size_t point_count() const noexcept { return points.size(); }
  std::size_t pixel_of(std::size_t point) const noexcept {
    return static_cast<std::size_t>(point_pixel[point].v) * width + point_pixel[point].u;
  }
  std::size_t pixel_at(int u, int v) const noexcept {
    return static_cast<std::size_t>(v) * width + u;
  }
  /// Foreground point of the pixel that `point` projects to.
  std::size_t foreground_of(std::size_t point) const noexcept {
    return static_cast<std::size_t>(fg_index[pixel_of(point)]);
  }
  std::span<const float> pixel_channels(std::size_t pixel) const {
    return std::span(channels).subspan(pixel * kRangeChannels, kRangeChannels);
  }
};

/// Pixel of a point under the spherical projection (clamped to the image).
PixelCoord project_point(const Point& p, double range, const ProjectionConfig& cfg);

RangeImage project(const PointCloud& cloud, const ProjectionConfig& cfg);

enum class DistanceMode { Range, Euclidean };

/// Distance between a background point and the foreground point of its pixel.
double background_distance(const RangeImage& img, std::size_t point,
                           DistanceMode mode = DistanceMode::Range);

/// Per-point labels copied from the pixel each point projects to.
std::vector<ClassId> back_project_labels(const RangeImage& img, std::span<const ClassId> pixel_labels,
                                         ClassId ignore_class = 0);

/// Points grouped by pixel (CSR layout, point indices ascending within a pixel).
struct PixelPoints {
  std::vector<std::uint32_t> offsets;  // pixel_count + 1
  std::vector<std::uint32_t> points;

  std::span<const std::uint32_t> of(std::size_t pixel) const {
    return std::span(points).subspan(offsets[pixel], offsets[pixel + 1] - offsets[pixel]);
  }
};
PixelPoints group_points_by_pixel(const RangeImage& img);

/// 16-bit binary PGM of the range channel in millimeters (0 = empty pixel).
void write_range_pgm(const RangeImage& img, const std::filesystem::path& path);

}  // namespace tupr
