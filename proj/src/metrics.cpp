#include "tupr/metrics.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>

namespace tupr {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes, std::optional<ClassId> ignore_class)
    : num_classes_(num_classes), ignore_(ignore_class), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw UsageError("confusion matrix: need at least one class");
}

void ConfusionMatrix::accumulate(std::span<const ClassId> gt, std::span<const ClassId> pred) {
  if (gt.size() != pred.size())
    throw DataError("confusion matrix: " + std::to_string(gt.size()) + " ground-truth labels vs " +
                    std::to_string(pred.size()) + " predictions");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] >= num_classes_ || pred[i] >= num_classes_)
      throw DataError("confusion matrix: class id out of range at index " + std::to_string(i));
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (ignore_ && gt[i] == *ignore_) continue;
    ++counts_[gt[i] * num_classes_ + pred[i]];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) throw DataError("confusion matrix: class count mismatch");
  for (std::size_t k = 0; k < counts_.size(); ++k) counts_[k] += other.counts_[k];
}

std::uint64_t ConfusionMatrix::total() const noexcept {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

IouResult miou(const ConfusionMatrix& cm) {
  const std::size_t nc = cm.num_classes();
  IouResult r;
  r.per_class.assign(nc, std::nullopt);
  double sum = 0.0;
  std::size_t included = 0;
  for (std::size_t c = 0; c < nc; ++c) {
    if (cm.ignore_class() && c == *cm.ignore_class()) continue;
    std::uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (std::size_t k = 0; k < nc; ++k) {
      if (k == c) continue;
      fn += cm.at(c, k);
      // Predictions on ignored ground truth are never accumulated.
      fp += cm.at(k, c);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class[c] = iou;
    sum += iou;
    ++included;
  }
  if (included == 0) throw DataError("mIoU: every class is empty");
  r.mean = sum / static_cast<double>(included);
  return r;
}

double oacc(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw DataError("oACC: empty confusion matrix");
  std::uint64_t trace = 0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) trace += cm.at(c, c);
  return static_cast<double>(trace) / static_cast<double>(total);
}

namespace {

std::string class_name(std::span<const std::string> names, std::size_t c) {
  return c < names.size() ? names[c] : "class-" + std::to_string(c);
}

}  // namespace

std::string format_report(const ConfusionMatrix& cm, std::span<const std::string> class_names) {
  const auto iou = miou(cm);
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-16s %8s\n", "class", "IoU(%)");
  out << line;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    if (!iou.per_class[c]) continue;
    std::snprintf(line, sizeof line, "%-16s %8.2f\n", class_name(class_names, c).c_str(),
                  100.0 * *iou.per_class[c]);
    out << line;
  }
  std::snprintf(line, sizeof line, "%-16s %8.2f\n%-16s %8.2f\n", "mIoU", 100.0 * iou.mean, "oACC",
                100.0 * oacc(cm));
  out << line;
  return out.str();
}

std::string format_key_values(const ConfusionMatrix& cm, std::span<const std::string> class_names) {
  const auto iou = miou(cm);
  std::ostringstream out;
  out.precision(17);
  out << "miou " << iou.mean << '\n' << "oacc " << oacc(cm) << '\n' << "points " << cm.total() << '\n';
  for (std::size_t c = 0; c < cm.num_classes(); ++c)
    if (iou.per_class[c]) out << "iou." << class_name(class_names, c) << ' ' << *iou.per_class[c] << '\n';
  return out.str();
}

}  // namespace tupr
