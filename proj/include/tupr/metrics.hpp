#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tupr/common.hpp"

namespace tupr {

/// Rows are ground truth, columns are predictions. Points whose ground truth is
/// the ignore class are never counted.
class ConfusionMatrix {
 public:
  ConfusionMatrix(std::size_t num_classes, std::optional<ClassId> ignore_class);

  void accumulate(std::span<const ClassId> gt, std::span<const ClassId> pred);
  void merge(const ConfusionMatrix& other);

  std::size_t num_classes() const noexcept { return num_classes_; }
  std::optional<ClassId> ignore_class() const noexcept { return ignore_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * num_classes_ + pred]; }
  std::uint64_t& at(std::size_t gt, std::size_t pred) { return counts_[gt * num_classes_ + pred]; }
  std::uint64_t total() const noexcept;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t num_classes_;
  std::optional<ClassId> ignore_;
  std::vector<std::uint64_t> counts_;
};

struct IouResult {
  std::vector<std::optional<double>> per_class;  // nullopt: excluded (ignored or empty)
  double mean = 0.0;
};

IouResult miou(const ConfusionMatrix& cm);
double oacc(const ConfusionMatrix& cm);

/// Human-readable table of per-class IoU plus mIoU and oACC.
std::string format_report(const ConfusionMatrix& cm, std::span<const std::string> class_names);
/// `key value` lines: miou, oacc, iou.<name>.
std::string format_key_values(const ConfusionMatrix& cm, std::span<const std::string> class_names);

}  // namespace tupr
