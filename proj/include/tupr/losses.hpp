#pragma once

#include <optional>
#include <span>
#include <vector>

#include "tupr/common.hpp"
#include "tupr/refiner_net.hpp"
#include "tupr/tensor.hpp"

namespace tupr {

/// Weighted softmax cross-entropy, averaged over the non-ignored points.
/// Writes dL/dlogits into `grad_logits` when given.
double wce_loss(const Matrix& logits, std::span<const ClassId> targets, std::span<const double> weights,
                std::optional<ClassId> ignore_class, Matrix* grad_logits = nullptr);

/// Lovasz-Softmax over the classes present in `targets`: per class, the Lovasz
/// extension of the Jaccard loss evaluated at the errors |1{y=c} - p(c)|, then
/// averaged. Writes dL/dprobs into `grad_probs` when given.
double lovasz_softmax_loss(const Matrix& probs, std::span<const ClassId> targets,
                           std::optional<ClassId> ignore_class, Matrix* grad_probs = nullptr);

/// dL/dlogits from dL/dprobs for row-wise softmax probabilities.
Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs);

struct LossValue {
  double total = 0.0;
  double wce = 0.0;
  double lovasz = 0.0;
};

struct LossOptions {
  std::vector<double> class_weights;  // size C
  std::optional<ClassId> ignore_class = ClassId{0};
};

/// wce(logits) + lovasz(softmax(logits)); accumulates parameter gradients into
/// `grad` when given.
LossValue total_loss(const RefinerModel& model, const Matrix& features, std::span<const ClassId> targets,
                     const LossOptions& options, RefinerModel* grad = nullptr);

}  // namespace tupr
