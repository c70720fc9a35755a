#include "tupr/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "tupr/rng.hpp"

namespace tupr {

const char* to_string(PoolReason reason) noexcept {
  switch (reason) {
    case PoolReason::Boundary: return "boundary";
    case PoolReason::Background: return "background";
    case PoolReason::Both: return "both";
  }
  return "?";
}

void SelectionConfig::validate() const {
  if (!(c_u > 0.0)) throw UsageError("selection: c_u must be > 0");
  if (n_u < 1) throw UsageError("selection: n_u must be >= 1");
  if (agg_k < 1) throw UsageError("selection: agg_k must be >= 1");
  if (agg_window < 1 || agg_window % 2 == 0) throw UsageError("selection: agg_window must be odd");
}

namespace {

struct Candidate {
  double gap;
  std::uint32_t point;
  std::uint32_t pixel;
};

void aggregate_one(const RangeImage& img, const CoarseSegmentation& seg, const SelectionConfig& cfg,
                   std::size_t point, std::vector<Candidate>& scratch, std::vector<double>& acc,
                   double* out) {
  const auto nc = static_cast<std::size_t>(seg.num_classes);
  const std::size_t own_px = img.pixel_of(point);
  const double r0 = img.point_range[point];
  const int half = cfg.agg_window / 2;
  const auto [u0, v0] = img.point_pixel[point];

  scratch.clear();
  for (int v = std::max(0, v0 - half); v <= std::min(img.height - 1, v0 + half); ++v)
    for (int u = std::max(0, u0 - half); u <= std::min(img.width - 1, u0 + half); ++u) {
      const std::size_t px = img.pixel_at(u, v);
      const auto fg = img.fg_index[px];
      if (px == own_px || fg == kNoPoint) continue;
      const auto idx = static_cast<std::uint32_t>(fg);
      scratch.push_back({std::abs(static_cast<double>(img.point_range[idx]) - r0), idx,
                         static_cast<std::uint32_t>(px)});
    }
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(cfg.agg_k) - 1, scratch.size());
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(keep),
                    scratch.end(), [](const Candidate& a, const Candidate& b) {
                      return a.gap != b.gap ? a.gap < b.gap : a.point < b.point;
                    });

  std::fill(acc.begin(), acc.end(), 0.0);
  auto add = [&](std::size_t px) {
    const auto vec = seg.at(px);
    for (std::size_t c = 0; c < nc; ++c) acc[c] += vec[c];
  };
  add(own_px);
  for (std::size_t j = 0; j < keep; ++j) add(scratch[j].pixel);
  double sum = 0.0;
  for (double a : acc) sum += a;

  const Point& p = img.points[point];
  out[0] = p.x;
  out[1] = p.y;
  out[2] = p.z;
  out[3] = img.point_range[point];
  out[4] = p.remission;
  for (std::size_t c = 0; c < nc; ++c) out[kGeometryFeatures + c] = acc[c] / sum;
}

}  // namespace

std::vector<double> aggregate_features(const RangeImage& img, const CoarseSegmentation& seg,
                                       const SelectionConfig& cfg,
                                       std::span<const std::uint32_t> points) {
  cfg.validate();
  check_compatible(seg, img);
  const std::size_t dim = kGeometryFeatures + static_cast<std::size_t>(seg.num_classes);
  std::vector<double> features(points.size() * dim);
  std::vector<Candidate> scratch;
  std::vector<double> acc(static_cast<std::size_t>(seg.num_classes));
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i] >= img.point_count())
      throw DataError("aggregate_features: point index " + std::to_string(points[i]) + " out of range");
    aggregate_one(img, seg, cfg, points[i], scratch, acc, features.data() + i * dim);
  }
  return features;
}

std::vector<double> aggregate_features(const RangeImage& img, const CoarseSegmentation& seg,
                                       const SelectionConfig& cfg) {
  std::vector<std::uint32_t> all(img.point_count());
  std::iota(all.begin(), all.end(), 0u);
  return aggregate_features(img, seg, cfg, all);
}

std::vector<std::uint32_t> select_boundary(const RangeImage& img, const CoarseSegmentation& seg,
                                           const SelectionConfig& cfg) {
  check_compatible(seg, img);
  std::vector<std::uint32_t> picked;
  if (cfg.boundary_budget == 0) return picked;

  const auto margin = top2_margin(seg);
  std::vector<std::uint32_t> pixels;
  for (std::size_t px = 0; px < img.pixel_count(); ++px)
    if (img.valid[px]) pixels.push_back(static_cast<std::uint32_t>(px));
  std::stable_sort(pixels.begin(), pixels.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return margin[a] < margin[b]; });

  const PixelPoints groups = group_points_by_pixel(img);
  const std::size_t budget = std::min(cfg.boundary_budget, img.point_count());
  picked.reserve(budget);

  std::size_t i = 0;
  while (i < pixels.size() && picked.size() < budget) {
    std::size_t end = i;
    std::size_t stratum_points = 0;
    while (end < pixels.size() && margin[pixels[end]] == margin[pixels[i]]) {
      stratum_points += groups.of(pixels[end]).size();
      ++end;
    }
    const std::size_t room = budget - picked.size();
    if (stratum_points <= room) {
      for (std::size_t j = i; j < end; ++j)
        for (auto p : groups.of(pixels[j])) picked.push_back(p);
    } else {
      // The stratum straddling the budget: seeded uniform subset.
      std::vector<std::uint32_t> stratum;
      stratum.reserve(stratum_points);
      for (std::size_t j = i; j < end; ++j)
        for (auto p : groups.of(pixels[j])) stratum.push_back(p);
      Rng rng(hash_key(cfg.seed, 0xB0DA));
      auto pos = sample_without_replacement(stratum.size(), room, rng);
      std::sort(pos.begin(), pos.end());
      for (auto k : pos) picked.push_back(stratum[k]);
    }
    i = end;
  }
  return picked;
}

std::vector<std::uint32_t> select_background(const RangeImage& img, const SelectionConfig& cfg) {
  std::vector<std::uint32_t> picked;
  for (std::size_t i = 0; i < img.point_count(); ++i) {
    if (img.is_foreground[i]) continue;
    const double d = background_distance(img, i, cfg.distance_mode);
    const bool take = cfg.background_rule == BackgroundRule::Far ? d >= cfg.c_u : d < cfg.c_u;
    if (take) picked.push_back(static_cast<std::uint32_t>(i));
  }
  return picked;
}

UncertainPointSet build_pool(const RangeImage& img, const CoarseSegmentation& seg,
                             const SelectionConfig& cfg, std::span<const ClassId> current_labels) {
  cfg.validate();
  if (current_labels.size() != img.point_count())
    throw DataError("build_pool: " + std::to_string(current_labels.size()) + " labels for " +
                    std::to_string(img.point_count()) + " points");

  const auto boundary = select_boundary(img, seg, cfg);
  const auto background = select_background(img, cfg);

  constexpr std::uint32_t kAbsent = ~0u;
  std::vector<std::uint32_t> slot(img.point_count(), kAbsent);
  UncertainPointSet pool;
  pool.feature_dim = kGeometryFeatures + static_cast<std::size_t>(seg.num_classes);
  for (auto p : boundary) {
    slot[p] = static_cast<std::uint32_t>(pool.indices.size());
    pool.indices.push_back(p);
    pool.reason.push_back(PoolReason::Boundary);
  }
  for (auto p : background) {
    if (slot[p] != kAbsent) {
      pool.reason[slot[p]] = PoolReason::Both;
      continue;
    }
    slot[p] = static_cast<std::uint32_t>(pool.indices.size());
    pool.indices.push_back(p);
    pool.reason.push_back(PoolReason::Background);
  }
  pool.features = aggregate_features(img, seg, cfg, pool.indices);
  pool.coarse_label.reserve(pool.size());
  for (auto p : pool.indices) pool.coarse_label.push_back(current_labels[p]);
  return pool;
}

UncertainPointSet sample_training_batch(const UncertainPointSet& pool, std::size_t n_u,
                                        std::uint64_t seed) {
  if (pool.empty()) throw DataError("sample_training_batch: empty uncertain point pool");
  Rng rng(hash_key(seed, 0xBA7C));
  const auto pos = sample_without_replacement(pool.size(), n_u, rng);
  UncertainPointSet batch;
  batch.feature_dim = pool.feature_dim;
  batch.indices.reserve(pos.size());
  batch.features.reserve(pos.size() * pool.feature_dim);
  for (auto k : pos) {
    batch.indices.push_back(pool.indices[k]);
    batch.reason.push_back(pool.reason[k]);
    batch.coarse_label.push_back(pool.coarse_label[k]);
    const auto f = pool.feature(k);
    batch.features.insert(batch.features.end(), f.begin(), f.end());
  }
  return batch;
}

void write_pool_dump(const UncertainPointSet& pool, const RangeImage& img,
                     const CoarseSegmentation& seg, const std::filesystem::path& path) {
  const auto margin = top2_margin(seg);
  std::ostringstream out;
  out.precision(9);
  for (std::size_t k = 0; k < pool.size(); ++k) {
    const auto p = pool.indices[k];
    const double d = img.is_foreground[p] ? 0.0 : background_distance(img, p);
    out << p << ' ' << to_string(pool.reason[k]) << ' ' << margin[img.pixel_of(p)] << ' ' << d << '\n';
  }
  write_text_atomic(path, out.str());
}

}  // namespace tupr
