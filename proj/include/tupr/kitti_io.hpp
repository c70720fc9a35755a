#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tupr/common.hpp"

namespace tupr {

struct Point {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
  float remission = 0.0f;

  friend bool operator==(const Point&, const Point&) = default;
};

struct PointCloud {
  std::vector<Point> points;
  std::optional<std::vector<ClassId>> labels;
  std::string scan_id;

  std::size_t size() const noexcept { return points.size(); }
  bool has_labels() const noexcept { return labels.has_value(); }
};

/// Raw semantic id <-> train id mapping.
class ClassMap {
 public:
  /// The Semantic-KITTI learning map (20 train classes, 0 = unlabeled).
  static ClassMap semantic_kitti();
  /// Reads a JSON document with keys num_classes, ignore_class, learning_map,
  /// learning_map_inv and labels.
  static ClassMap load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  ClassMap(int num_classes, ClassId ignore_class, std::map<std::uint16_t, ClassId> raw_to_train,
           std::map<ClassId, std::uint16_t> train_to_raw, std::vector<std::string> names);

  ClassId to_train(std::uint16_t raw) const noexcept;
  /// Throws DataError for ids without an inverse mapping.
  std::uint16_t to_raw(ClassId train) const;

  int num_classes() const noexcept { return num_classes_; }
  ClassId ignore_class() const noexcept { return ignore_; }
  const std::string& name(ClassId c) const { return names_.at(c); }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  int num_classes_;
  ClassId ignore_;
  std::map<std::uint16_t, ClassId> raw_to_train_;
  std::map<ClassId, std::uint16_t> train_to_raw_;
  std::vector<std::string> names_;
};

// Binary Semantic-KITTI point files: little-endian float32 x, y, z, remission.
PointCloud read_point_cloud(const std::filesystem::path& path);
PointCloud decode_point_cloud(std::span<const std::byte> bytes);
std::vector<std::byte> encode_point_cloud(std::span<const Point> points);
void write_point_cloud(std::span<const Point> points, const std::filesystem::path& path);

// Label files: one little-endian u32 per point, semantic id in the lower 16 bits.
std::vector<ClassId> read_labels(const std::filesystem::path& path, const ClassMap& map);
std::vector<ClassId> decode_labels(std::span<const std::byte> bytes, const ClassMap& map);
std::vector<std::byte> encode_labels(std::span<const ClassId> labels, const ClassMap& map);
void write_labels(std::span<const ClassId> labels, const ClassMap& map,
                  const std::filesystem::path& path);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

// ---------------------------------------------------------------------------
// Synthetic scenes: a simulated rotating scanner at the origin, looking at a
// ground plane and axis-aligned primitives.

enum class ShapeKind { Ground, Box, Cylinder, Wall };

struct ScannerModel {
  int rings = 64;
  int azimuth_steps = 2048;
  double fov_up_deg = 3.0;
  double fov_down_deg = -25.0;
  double sensor_height = 1.73;  // ground plane sits at z = -sensor_height
};

struct SyntheticSceneSpec {
  std::uint64_t seed = 0;
  double ground_extent = 50.0;  // max range, meters
  bool ground = true;
  int boxes = 6;
  int cylinders = 8;
  int walls = 3;
  double noise_sigma = 0.02;
  std::map<ShapeKind, ClassId> class_assignment = {
      {ShapeKind::Ground, 9}, {ShapeKind::Box, 1}, {ShapeKind::Cylinder, 18}, {ShapeKind::Wall, 13}};
  ScannerModel scanner;
};

struct BoxShape {
  std::array<double, 3> min;
  std::array<double, 3> max;
};

struct CylinderShape {
  double cx, cy, radius, z_min, z_max;
};

struct WallShape {
  // Vertical rectangle spanning the segment (x0,y0)-(x1,y1) in the xy plane.
  double x0, y0, x1, y1, z_min, z_max;
};

struct SceneLayout {
  std::vector<BoxShape> boxes;
  std::vector<CylinderShape> cylinders;
  std::vector<WallShape> walls;
};

/// Places primitives for `spec`; deterministic under spec.seed.
SceneLayout place_objects(const SyntheticSceneSpec& spec);
/// Ray-casts `layout` with the scanner of `spec`. Every point carries the class of
/// the shape it hit.
PointCloud render_scene(const SyntheticSceneSpec& spec, const SceneLayout& layout);
PointCloud generate_scene(const SyntheticSceneSpec& spec);

}  // namespace tupr
