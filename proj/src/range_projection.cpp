#include "tupr/range_projection.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "tupr/simd/kernels.hpp"

namespace tupr {

void ProjectionConfig::validate() const {
  if (width < 1 || height < 1) throw UsageError("projection: width and height must be >= 1");
  if (!(fov_up_deg > fov_down_deg)) throw UsageError("projection: fov_up must exceed fov_down");
}

PixelCoord project_point(const Point& p, double range, const ProjectionConfig& cfg) {
  constexpr double kDeg = std::numbers::pi / 180.0;
  const double fov_down = cfg.fov_down_deg * kDeg;
  const double fov = (cfg.fov_up_deg - cfg.fov_down_deg) * kDeg;
  const double yaw = std::atan2(static_cast<double>(p.y), static_cast<double>(p.x));
  const double pitch = std::asin(std::clamp(static_cast<double>(p.z) / range, -1.0, 1.0));

  const double u = std::floor(0.5 * (1.0 - yaw / std::numbers::pi) * cfg.width);
  const double v = std::floor((1.0 - (pitch - fov_down) / fov) * cfg.height);
  return {static_cast<std::int32_t>(std::clamp(u, 0.0, cfg.width - 1.0)),
          static_cast<std::int32_t>(std::clamp(v, 0.0, cfg.height - 1.0))};
}

RangeImage project(const PointCloud& cloud, const ProjectionConfig& cfg) {
  cfg.validate();
  const std::size_t n = cloud.size();
  if (n == 0) throw DataError("projection: empty point cloud");

  RangeImage img;
  img.width = cfg.width;
  img.height = cfg.height;
  img.points = cloud.points;
  img.point_range.resize(n);
  simd::point_ranges(img.points, img.point_range);

  img.point_pixel.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(img.point_range[i] > 1e-6f))
      throw DataError("projection: point " + std::to_string(i) + " lies at the origin");
    img.point_pixel[i] = project_point(img.points[i], img.point_range[i], cfg);
  }

  // Deterministic reduction: ascending point order with a strict comparison keeps
  // the lowest index among equal minimal ranges.
  const std::size_t pixels = img.pixel_count();
  img.fg_index.assign(pixels, kNoPoint);
  for (std::size_t i = 0; i < n; ++i) {
    auto& fg = img.fg_index[img.pixel_of(i)];
    if (fg == kNoPoint || img.point_range[i] < img.point_range[static_cast<std::size_t>(fg)])
      fg = static_cast<std::int32_t>(i);
  }

  img.valid.assign(pixels, 0);
  img.channels.assign(pixels * kRangeChannels, 0.0f);
  img.is_foreground.assign(n, 0);
  for (std::size_t px = 0; px < pixels; ++px) {
    const auto fg = img.fg_index[px];
    if (fg == kNoPoint) continue;
    const auto idx = static_cast<std::size_t>(fg);
    const Point& p = img.points[idx];
    img.valid[px] = 1;
    img.is_foreground[idx] = 1;
    float* ch = img.channels.data() + px * kRangeChannels;
    ch[0] = p.x;
    ch[1] = p.y;
    ch[2] = p.z;
    ch[3] = img.point_range[idx];
    ch[4] = p.remission;
  }
  return img;
}

double background_distance(const RangeImage& img, std::size_t point, DistanceMode mode) {
  if (point >= img.point_count())
    throw UsageError("background_distance: point index " + std::to_string(point) + " out of range");
  if (img.is_foreground[point])
    throw UsageError("background_distance: point " + std::to_string(point) + " is a foreground point");
  const std::size_t fg = img.foreground_of(point);
  if (mode == DistanceMode::Range)
    return std::abs(static_cast<double>(img.point_range[point]) -
                    static_cast<double>(img.point_range[fg]));
  const Point& a = img.points[point];
  const Point& b = img.points[fg];
  const double dx = static_cast<double>(a.x) - b.x;
  const double dy = static_cast<double>(a.y) - b.y;
  const double dz = static_cast<double>(a.z) - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

std::vector<ClassId> back_project_labels(const RangeImage& img, std::span<const ClassId> pixel_labels,
                                         ClassId ignore_class) {
  if (pixel_labels.size() != img.pixel_count())
    throw DataError("back projection: " + std::to_string(pixel_labels.size()) +
                    " pixel labels for a " + std::to_string(img.height) + "x" +
                    std::to_string(img.width) + " image");
  std::vector<ClassId> out(img.point_count());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t px = img.pixel_of(i);
    out[i] = img.valid[px] ? pixel_labels[px] : ignore_class;
  }
  return out;
}

PixelPoints group_points_by_pixel(const RangeImage& img) {
  PixelPoints g;
  g.offsets.assign(img.pixel_count() + 1, 0);
  for (std::size_t i = 0; i < img.point_count(); ++i) ++g.offsets[img.pixel_of(i) + 1];
  for (std::size_t px = 0; px < img.pixel_count(); ++px) g.offsets[px + 1] += g.offsets[px];
  g.points.resize(img.point_count());
  std::vector<std::uint32_t> cursor(g.offsets.begin(), g.offsets.end() - 1);
  for (std::size_t i = 0; i < img.point_count(); ++i)
    g.points[cursor[img.pixel_of(i)]++] = static_cast<std::uint32_t>(i);
  return g;
}

void write_range_pgm(const RangeImage& img, const std::filesystem::path& path) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n65535\n";
  const std::size_t header = out.size();
  out.resize(header + 2 * img.pixel_count());
  for (std::size_t px = 0; px < img.pixel_count(); ++px) {
    std::uint16_t mm = 0;
    if (img.valid[px]) {
      const double r = std::round(static_cast<double>(img.channels[px * kRangeChannels + 3]) * 1000.0);
      mm = static_cast<std::uint16_t>(std::clamp(r, 1.0, 65535.0));
    }
    out[header + 2 * px] = static_cast<char>(mm >> 8);
    out[header + 2 * px + 1] = static_cast<char>(mm & 0xFF);
  }
  write_text_atomic(path, out);
}

}  // namespace tupr
