#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tupr/range_projection.hpp"

namespace tupr {

enum class CoarseSource { Loaded, Oracle };

/// Per-pixel class probabilities standing in for a backbone's softmax output.
struct CoarseSegmentation {
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<float> probs;          // height * width * num_classes, (row, col, class)
  std::vector<std::uint8_t> valid;   // pixels holding a probability vector
  CoarseSource source = CoarseSource::Loaded;

  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width) * height; }
  std::span<const float> at(std::size_t pixel) const {
    return std::span(probs).subspan(pixel * num_classes, static_cast<std::size_t>(num_classes));
  }
  std::span<float> at(std::size_t pixel) {
    return std::span(probs).subspan(pixel * num_classes, static_cast<std::size_t>(num_classes));
  }
};

struct OracleNoiseSpec {
  int blur_radius = 2;
  double flip_rate = 0.05;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Reads a raw float32 (row, col, class) probability file. Vectors within 1e-3 of
/// unit sum are renormalized; all-zero vectors mark empty pixels.
CoarseSegmentation load_coarse(const std::filesystem::path& path, int height, int width,
                               int num_classes);
CoarseSegmentation decode_coarse(std::span<const std::byte> bytes, int height, int width,
                                 int num_classes);
void write_coarse(const CoarseSegmentation& seg, const std::filesystem::path& path);

/// Noisy stand-in for a frozen backbone: one-hot ground truth of each pixel's
/// foreground point, box-blurred, randomly top-2 flipped, temperature-scaled.
CoarseSegmentation oracle_coarse(const RangeImage& img, std::span<const ClassId> gt_labels,
                                 int num_classes, const OracleNoiseSpec& spec);

/// Largest minus second-largest probability per pixel; +inf for empty pixels.
std::vector<double> top2_margin(const CoarseSegmentation& seg);

/// Per-pixel argmax (ties to the smaller class id); empty pixels get `fill`.
std::vector<ClassId> argmax_labels(const CoarseSegmentation& seg, ClassId fill = 0);

/// Checks that the segmentation matches the image shape and that every pixel
/// holding a point also holds a probability vector.
void check_compatible(const CoarseSegmentation& seg, const RangeImage& img);

}  // namespace tupr
