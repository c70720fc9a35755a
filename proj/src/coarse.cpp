#include "tupr/coarse.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "tupr/rng.hpp"

namespace tupr {

void OracleNoiseSpec::validate() const {
  if (blur_radius < 0) throw UsageError("oracle: blur_radius must be >= 0");
  if (!(flip_rate >= 0.0 && flip_rate < 1.0)) throw UsageError("oracle: flip_rate must be in [0,1)");
  if (!(temperature > 0.0)) throw UsageError("oracle: temperature must be > 0");
}

CoarseSegmentation decode_coarse(std::span<const std::byte> bytes, int height, int width,
                                 int num_classes) {
  if (height < 1 || width < 1 || num_classes < 1)
    throw UsageError("coarse: dimensions must be positive");
  const std::size_t pixels = static_cast<std::size_t>(height) * width;
  const std::size_t expected = pixels * num_classes * sizeof(float);
  if (bytes.size() != expected)
    throw DataError("coarse: file has " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(expected) + " for " + std::to_string(height) + "x" +
                    std::to_string(width) + "x" + std::to_string(num_classes));

  CoarseSegmentation seg;
  seg.height = height;
  seg.width = width;
  seg.num_classes = num_classes;
  seg.source = CoarseSource::Loaded;
  seg.probs.resize(pixels * num_classes);
  std::memcpy(seg.probs.data(), bytes.data(), expected);
  seg.valid.assign(pixels, 1);

  for (std::size_t px = 0; px < pixels; ++px) {
    auto vec = seg.at(px);
    double sum = 0.0;
    for (float p : vec) {
      if (std::isnan(p) || std::isinf(p))
        throw DataError("coarse: non-finite probability at pixel " + std::to_string(px));
      if (p < 0.0f) throw DataError("coarse: negative probability at pixel " + std::to_string(px));
      sum += p;
    }
    if (sum == 0.0) {
      seg.valid[px] = 0;
      continue;
    }
    if (std::abs(sum - 1.0) > 1e-3)
      throw DataError("coarse: probabilities at pixel " + std::to_string(px) + " sum to " +
                      std::to_string(sum));
    for (float& p : vec) p = static_cast<float>(p / sum);
  }
  return seg;
}

CoarseSegmentation load_coarse(const std::filesystem::path& path, int height, int width,
                               int num_classes) {
  try {
    return decode_coarse(read_file_bytes(path), height, width, num_classes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_coarse(const CoarseSegmentation& seg, const std::filesystem::path& path) {
  write_file_atomic(path, std::as_bytes(std::span(seg.probs)));
}

CoarseSegmentation oracle_coarse(const RangeImage& img, std::span<const ClassId> gt_labels,
                                 int num_classes, const OracleNoiseSpec& spec) {
  spec.validate();
  if (gt_labels.size() != img.point_count())
    throw DataError("oracle: " + std::to_string(gt_labels.size()) + " labels for " +
                    std::to_string(img.point_count()) + " points");
  if (num_classes < 2) throw UsageError("oracle: need at least two classes");
  const std::size_t pixels = img.pixel_count();
  const auto nc = static_cast<std::size_t>(num_classes);

  std::vector<ClassId> pixel_gt(pixels, 0);
  for (std::size_t px = 0; px < pixels; ++px) {
    if (!img.valid[px]) continue;
    const ClassId c = gt_labels[static_cast<std::size_t>(img.fg_index[px])];
    if (c >= num_classes) throw DataError("oracle: label " + std::to_string(c) + " outside 0..C-1");
    pixel_gt[px] = c;
  }

  CoarseSegmentation seg;
  seg.height = img.height;
  seg.width = img.width;
  seg.num_classes = num_classes;
  seg.source = CoarseSource::Oracle;
  seg.valid = img.valid;
  seg.probs.assign(pixels * nc, 0.0f);

  const int r = spec.blur_radius;
  const double inv_t = 1.0 / spec.temperature;
  std::vector<double> acc(nc);
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      const std::size_t px = img.pixel_at(u, v);
      if (!img.valid[px]) continue;

      // Box blur over the valid pixels of the clipped window.
      std::fill(acc.begin(), acc.end(), 0.0);
      double count = 0.0;
      for (int vv = std::max(0, v - r); vv <= std::min(img.height - 1, v + r); ++vv)
        for (int uu = std::max(0, u - r); uu <= std::min(img.width - 1, u + r); ++uu) {
          const std::size_t q = img.pixel_at(uu, vv);
          if (!img.valid[q]) continue;
          acc[pixel_gt[q]] += 1.0;
          count += 1.0;
        }
      for (double& a : acc) a /= count;

      if (spec.flip_rate > 0.0 &&
          counter_uniform(spec.seed, static_cast<std::uint64_t>(v), static_cast<std::uint64_t>(u)) <
              spec.flip_rate) {
        const auto top = static_cast<std::size_t>(std::max_element(acc.begin(), acc.end()) - acc.begin());
        std::size_t second = top == 0 ? 1 : 0;
        for (std::size_t c = 0; c < nc; ++c)
          if (c != top && acc[c] > acc[second]) second = c;
        std::swap(acc[top], acc[second]);
      }

      if (inv_t != 1.0) {
        double sum = 0.0;
        for (double& a : acc) {
          a = std::pow(a, inv_t);
          sum += a;
        }
        for (double& a : acc) a /= sum;
      }

      auto out = seg.at(px);
      for (std::size_t c = 0; c < nc; ++c) out[c] = static_cast<float>(acc[c]);
    }
  }
  return seg;
}

std::vector<double> top2_margin(const CoarseSegmentation& seg) {
  if (seg.num_classes < 2) throw UsageError("top2_margin: need at least two classes");
  std::vector<double> margin(seg.pixel_count(), std::numeric_limits<double>::infinity());
  for (std::size_t px = 0; px < seg.pixel_count(); ++px) {
    if (!seg.valid[px]) continue;
    double first = -1.0, second = -1.0;
    for (float pf : seg.at(px)) {
      const double p = pf;
      if (p > first) {
        second = first;
        first = p;
      } else if (p > second) {
        second = p;
      }
    }
    margin[px] = first - second;
  }
  return margin;
}

std::vector<ClassId> argmax_labels(const CoarseSegmentation& seg, ClassId fill) {
  std::vector<ClassId> labels(seg.pixel_count(), fill);
  for (std::size_t px = 0; px < seg.pixel_count(); ++px) {
    if (!seg.valid[px]) continue;
    const auto vec = seg.at(px);
    labels[px] = static_cast<ClassId>(std::max_element(vec.begin(), vec.end()) - vec.begin());
  }
  return labels;
}

void check_compatible(const CoarseSegmentation& seg, const RangeImage& img) {
  if (seg.height != img.height || seg.width != img.width)
    throw DataError("coarse segmentation is " + std::to_string(seg.height) + "x" +
                    std::to_string(seg.width) + " but the range image is " +
                    std::to_string(img.height) + "x" + std::to_string(img.width));
  for (std::size_t px = 0; px < img.pixel_count(); ++px)
    if (img.valid[px] && !seg.valid[px])
      throw DataError("coarse segmentation has no probabilities at occupied pixel " +
                      std::to_string(px));
}

}  // namespace tupr
