#include "tupr/kitti_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "tupr/rng.hpp"

namespace tupr {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts need byte swapping");

namespace {

template <typename T>
T load_le(const std::byte* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void store_le(std::byte* p, T v) {
  std::memcpy(p, &v, sizeof(T));
}

}  // namespace

// ---------------------------------------------------------------------------
// ClassMap

ClassMap::ClassMap(int num_classes, ClassId ignore_class,
                   std::map<std::uint16_t, ClassId> raw_to_train,
                   std::map<ClassId, std::uint16_t> train_to_raw, std::vector<std::string> names)
    : num_classes_(num_classes),
      ignore_(ignore_class),
      raw_to_train_(std::move(raw_to_train)),
      train_to_raw_(std::move(train_to_raw)),
      names_(std::move(names)) {
  if (num_classes_ < 1) throw DataError("class map: num_classes must be >= 1");
  if (ignore_ >= num_classes_) throw DataError("class map: ignore_class out of range");
  for (const auto& [raw, train] : raw_to_train_) {
    if (train >= num_classes_)
      throw DataError("class map: raw id " + std::to_string(raw) + " maps outside 0..C-1");
  }
  for (const auto& [train, raw] : train_to_raw_) {
    if (train >= num_classes_)
      throw DataError("class map: inverse entry " + std::to_string(train) + " outside 0..C-1");
  }
  if (names_.size() < static_cast<std::size_t>(num_classes_)) {
    for (auto i = names_.size(); i < static_cast<std::size_t>(num_classes_); ++i)
      names_.push_back("class-" + std::to_string(i));
  }
}

ClassMap ClassMap::semantic_kitti() {
  std::map<std::uint16_t, ClassId> learning = {
      {0, 0},    {1, 0},    {10, 1},   {11, 2},   {13, 5},   {15, 3},   {16, 5},   {18, 4},
      {20, 5},   {30, 6},   {31, 7},   {32, 8},   {40, 9},   {44, 10},  {48, 11},  {49, 12},
      {50, 13},  {51, 14},  {52, 0},   {60, 9},   {70, 15},  {71, 16},  {72, 17},  {80, 18},
      {81, 19},  {99, 0},   {252, 1},  {253, 7},  {254, 6},  {255, 8},  {256, 5},  {257, 5},
      {258, 4},  {259, 5}};
  std::map<ClassId, std::uint16_t> inverse = {
      {0, 0},   {1, 10},  {2, 11},  {3, 15},  {4, 18},  {5, 20},  {6, 30},
      {7, 31},  {8, 32},  {9, 40},  {10, 44}, {11, 48}, {12, 49}, {13, 50},
      {14, 51}, {15, 70}, {16, 71}, {17, 72}, {18, 80}, {19, 81}};
  std::vector<std::string> names = {
      "unlabeled", "car",      "bicycle",      "motorcycle", "truck",
      "other-vehicle", "person", "bicyclist",  "motorcyclist", "road",
      "parking",   "sidewalk", "other-ground", "building",   "fence",
      "vegetation", "trunk",   "terrain",      "pole",       "traffic-sign"};
  return ClassMap(20, 0, std::move(learning), std::move(inverse), std::move(names));
}

ClassMap ClassMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open class map " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
    const int c = doc.at("num_classes").get<int>();
    const auto ignore = doc.value("ignore_class", 0);
    std::map<std::uint16_t, ClassId> fwd;
    for (const auto& [k, v] : doc.at("learning_map").items())
      fwd[static_cast<std::uint16_t>(std::stoul(k))] = v.get<ClassId>();
    std::map<ClassId, std::uint16_t> inv;
    for (const auto& [k, v] : doc.at("learning_map_inv").items())
      inv[static_cast<ClassId>(std::stoul(k))] = v.get<std::uint16_t>();
    std::vector<std::string> names;
    if (doc.contains("labels")) names = doc.at("labels").get<std::vector<std::string>>();
    return ClassMap(c, static_cast<ClassId>(ignore), std::move(fwd), std::move(inv),
                    std::move(names));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("class map " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument&) {
    throw DataError("class map " + path.string() + ": non-numeric id key");
  }
}

void ClassMap::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json doc;
  doc["num_classes"] = num_classes_;
  doc["ignore_class"] = ignore_;
  doc["labels"] = names_;
  nlohmann::ordered_json fwd = nlohmann::ordered_json::object();
  for (const auto& [raw, train] : raw_to_train_) fwd[std::to_string(raw)] = train;
  doc["learning_map"] = fwd;
  nlohmann::ordered_json inv = nlohmann::ordered_json::object();
  for (const auto& [train, raw] : train_to_raw_) inv[std::to_string(train)] = raw;
  doc["learning_map_inv"] = inv;
  write_text_atomic(path, doc.dump(2) + "\n");
}

ClassId ClassMap::to_train(std::uint16_t raw) const noexcept {
  const auto it = raw_to_train_.find(raw);
  return it == raw_to_train_.end() ? ignore_ : it->second;
}

std::uint16_t ClassMap::to_raw(ClassId train) const {
  const auto it = train_to_raw_.find(train);
  if (train >= num_classes_ || it == train_to_raw_.end())
    throw DataError("train id " + std::to_string(train) + " has no raw id");
  return it->second;
}

// ---------------------------------------------------------------------------
// File helpers

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::byte> bytes(size);
  in.seekg(0);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size)))
    throw DataError("short read on " + path.string());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

// ---------------------------------------------------------------------------
// Points and labels

PointCloud decode_point_cloud(std::span<const std::byte> bytes) {
  constexpr std::size_t kRecord = 4 * sizeof(float);
  if (bytes.size() % kRecord != 0)
    throw DataError("truncated point file: " + std::to_string(bytes.size()) +
                    " bytes is not a multiple of 16");
  PointCloud cloud;
  const std::size_t n = bytes.size() / kRecord;
  cloud.points.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::byte* rec = bytes.data() + i * kRecord;
    Point p{load_le<float>(rec), load_le<float>(rec + 4), load_le<float>(rec + 8),
            load_le<float>(rec + 12)};
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) ||
        !std::isfinite(p.remission))
      throw DataError("non-finite value at point " + std::to_string(i));
    cloud.points[i] = p;
  }
  return cloud;
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
  try {
    auto cloud = decode_point_cloud(read_file_bytes(path));
    cloud.scan_id = path.stem().string();
    return cloud;
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<std::byte> encode_point_cloud(std::span<const Point> points) {
  std::vector<std::byte> out(points.size() * 16);
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::byte* rec = out.data() + i * 16;
    store_le(rec, points[i].x);
    store_le(rec + 4, points[i].y);
    store_le(rec + 8, points[i].z);
    store_le(rec + 12, points[i].remission);
  }
  return out;
}

void write_point_cloud(std::span<const Point> points, const std::filesystem::path& path) {
  write_file_atomic(path, encode_point_cloud(points));
}

std::vector<ClassId> decode_labels(std::span<const std::byte> bytes, const ClassMap& map) {
  if (bytes.size() % 4 != 0)
    throw DataError("truncated label file: " + std::to_string(bytes.size()) +
                    " bytes is not a multiple of 4");
  std::vector<ClassId> labels(bytes.size() / 4);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto word = load_le<std::uint32_t>(bytes.data() + 4 * i);
    labels[i] = map.to_train(static_cast<std::uint16_t>(word & 0xFFFFu));
  }
  return labels;
}

std::vector<ClassId> read_labels(const std::filesystem::path& path, const ClassMap& map) {
  try {
    return decode_labels(read_file_bytes(path), map);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<std::byte> encode_labels(std::span<const ClassId> labels, const ClassMap& map) {
  std::vector<std::byte> out(labels.size() * 4);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= map.num_classes())
      throw DataError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                      " is outside 0..C-1");
    store_le<std::uint32_t>(out.data() + 4 * i, map.to_raw(labels[i]));
  }
  return out;
}

void write_labels(std::span<const ClassId> labels, const ClassMap& map,
                  const std::filesystem::path& path) {
  write_file_atomic(path, encode_labels(labels, map));
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  ShapeKind kind = ShapeKind::Ground;
};

void hit_box(const BoxShape& b, const std::array<double, 3>& d, Hit& best) {
  double t0 = 0.0, t1 = best.t;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (0.0 < b.min[a] || 0.0 > b.max[a]) return;
      continue;
    }
    double ta = b.min[a] / d[a], tb = b.max[a] / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return;
  }
  if (t0 > 0.0 && t0 < best.t) best = {t0, ShapeKind::Box};
}

void hit_cylinder(const CylinderShape& c, const std::array<double, 3>& d, Hit& best) {
  // Side surface only; the sensor is never inside a cylinder.
  const double a = d[0] * d[0] + d[1] * d[1];
  if (a < 1e-15) return;
  const double b = -2.0 * (d[0] * c.cx + d[1] * c.cy);
  const double cc = c.cx * c.cx + c.cy * c.cy - c.radius * c.radius;
  const double disc = b * b - 4.0 * a * cc;
  if (disc < 0.0) return;
  const double t = (-b - std::sqrt(disc)) / (2.0 * a);
  if (t <= 0.0 || t >= best.t) return;
  const double z = t * d[2];
  if (z < c.z_min || z > c.z_max) return;
  best = {t, ShapeKind::Cylinder};
}

void hit_wall(const WallShape& w, const std::array<double, 3>& d, Hit& best) {
  // Solve t*(dx,dy) = p0 + s*(p1-p0) for s in [0,1].
  const double ex = w.x1 - w.x0, ey = w.y1 - w.y0;
  const double det = d[0] * (-ey) - d[1] * (-ex);
  if (std::abs(det) < 1e-12) return;
  const double t = (w.x0 * (-ey) - w.y0 * (-ex)) / det;
  const double s = (d[0] * w.y0 - d[1] * w.x0) / det;
  if (t <= 0.0 || t >= best.t || s < 0.0 || s > 1.0) return;
  const double z = t * d[2];
  if (z < w.z_min || z > w.z_max) return;
  best = {t, ShapeKind::Wall};
}

double remission_mean(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Ground: return 0.25;
    case ShapeKind::Box: return 0.55;
    case ShapeKind::Cylinder: return 0.40;
    case ShapeKind::Wall: return 0.70;
  }
  return 0.5;
}

}  // namespace

SceneLayout place_objects(const SyntheticSceneSpec& spec) {
  if (spec.boxes < 0 || spec.cylinders < 0 || spec.walls < 0)
    throw UsageError("scene spec: object counts must be >= 0");
  if (!(spec.ground_extent > 0.0)) throw UsageError("scene spec: ground_extent must be > 0");

  Rng rng(hash_key(spec.seed, 0x5CE7E));
  const double ground_z = -spec.scanner.sensor_height;
  const double r_max = 0.8 * spec.ground_extent;
  auto polar = [&](double r_lo) {
    const double r = rng.uniform(std::min(r_lo, r_max), r_max);
    const double phi = rng.uniform(-std::numbers::pi, std::numbers::pi);
    return std::pair{r * std::cos(phi), r * std::sin(phi)};
  };

  SceneLayout layout;
  for (int i = 0; i < spec.boxes; ++i) {
    const auto [cx, cy] = polar(5.0);
    const double hx = rng.uniform(0.8, 2.4), hy = rng.uniform(0.8, 1.2);
    const double h = rng.uniform(1.3, 2.2);
    layout.boxes.push_back({{cx - hx, cy - hy, ground_z}, {cx + hx, cy + hy, ground_z + h}});
  }
  for (int i = 0; i < spec.cylinders; ++i) {
    const auto [cx, cy] = polar(3.0);
    layout.cylinders.push_back(
        {cx, cy, rng.uniform(0.1, 0.35), ground_z, ground_z + rng.uniform(3.0, 7.0)});
  }
  for (int i = 0; i < spec.walls; ++i) {
    const auto [cx, cy] = polar(12.0);
    const double len = rng.uniform(6.0, 20.0);
    const double yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double dx = 0.5 * len * std::cos(yaw), dy = 0.5 * len * std::sin(yaw);
    layout.walls.push_back(
        {cx - dx, cy - dy, cx + dx, cy + dy, ground_z, ground_z + rng.uniform(4.0, 10.0)});
  }
  return layout;
}

PointCloud render_scene(const SyntheticSceneSpec& spec, const SceneLayout& layout) {
  if (!spec.ground && layout.boxes.empty() && layout.cylinders.empty() && layout.walls.empty())
    throw UsageError("scene spec is empty: no ground and no objects");
  const auto& sc = spec.scanner;
  if (sc.rings < 1 || sc.azimuth_steps < 1 || !(sc.fov_up_deg > sc.fov_down_deg))
    throw UsageError("scene spec: invalid scanner model");

  const double ground_z = -sc.sensor_height;
  const double fov = (sc.fov_up_deg - sc.fov_down_deg) * kDeg;
  Rng rng(hash_key(spec.seed, 0x5CA7));

  PointCloud cloud;
  cloud.scan_id = "synthetic-" + std::to_string(spec.seed);
  std::vector<ClassId> labels;
  cloud.points.reserve(static_cast<std::size_t>(sc.rings) * sc.azimuth_steps);
  labels.reserve(cloud.points.capacity());

  for (int ring = 0; ring < sc.rings; ++ring) {
    // Ring centers coincide with the row centers of a matching range image.
    const double pitch = sc.fov_up_deg * kDeg - (ring + 0.5) * fov / sc.rings;
    const double cp = std::cos(pitch), sp = std::sin(pitch);
    for (int step = 0; step < sc.azimuth_steps; ++step) {
      const double yaw = std::numbers::pi - (step + 0.5) * 2.0 * std::numbers::pi / sc.azimuth_steps;
      const std::array<double, 3> d{cp * std::cos(yaw), cp * std::sin(yaw), sp};

      Hit best;
      best.t = spec.ground_extent;
      bool hit = false;
      if (spec.ground && d[2] < 0.0) {
        const double t = ground_z / d[2];
        if (t < best.t) {
          best = {t, ShapeKind::Ground};
          hit = true;
        }
      }
      const double before = best.t;
      for (const auto& b : layout.boxes) hit_box(b, d, best);
      for (const auto& c : layout.cylinders) hit_cylinder(c, d, best);
      for (const auto& w : layout.walls) hit_wall(w, d, best);
      hit = hit || best.t < before;
      // Draws are made for every ray so the stream does not depend on hits.
      const double noise = std::clamp(rng.normal(), -3.0, 3.0) * spec.noise_sigma;
      const double refl = rng.normal();
      if (!hit) continue;

      const double t = best.t + noise;
      if (t <= 1e-3) continue;
      const double rem = std::clamp(remission_mean(best.kind) + 0.12 * refl, 0.0, 1.0);
      cloud.points.push_back({static_cast<float>(t * d[0]), static_cast<float>(t * d[1]),
                              static_cast<float>(t * d[2]), static_cast<float>(rem)});
      labels.push_back(spec.class_assignment.at(best.kind));
    }
  }
  cloud.labels = std::move(labels);
  return cloud;
}

PointCloud generate_scene(const SyntheticSceneSpec& spec) {
  return render_scene(spec, place_objects(spec));
}

}  // namespace tupr
