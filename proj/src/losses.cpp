#include "tupr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace tupr {

namespace {

bool ignored(ClassId c, std::optional<ClassId> ignore) { return ignore && c == *ignore; }

void check_targets(std::size_t rows, std::size_t cols, std::span<const ClassId> targets, const char* who) {
  if (targets.size() != rows)
    throw NumericError(std::string(who) + ": " + std::to_string(targets.size()) + " targets for " +
                       std::to_string(rows) + " rows");
  for (auto t : targets)
    if (t >= cols) throw NumericError(std::string(who) + ": target " + std::to_string(t) + " outside 0..C-1");
}

}  // namespace

double wce_loss(const Matrix& logits, std::span<const ClassId> targets, std::span<const double> weights,
                std::optional<ClassId> ignore_class, Matrix* grad_logits) {
  const std::size_t n = logits.rows(), nc = logits.cols();
  check_targets(n, nc, targets, "wce_loss");
  if (weights.size() != nc) throw NumericError("wce_loss: class weight count mismatch");

  std::size_t counted = 0;
  for (auto t : targets)
    if (!ignored(t, ignore_class)) ++counted;
  if (counted == 0) throw NumericError("wce_loss: every target is ignored");

  if (grad_logits) *grad_logits = Matrix(n, nc);
  const double inv = 1.0 / static_cast<double>(counted);
  double loss = 0.0;
  std::vector<double> p(nc);
  for (std::size_t i = 0; i < n; ++i) {
    if (ignored(targets[i], ignore_class)) continue;
    const auto z = logits.row(i);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
      p[c] = std::exp(z[c] - mx);
      sum += p[c];
    }
    const ClassId y = targets[i];
    const double w = weights[y];
    loss += w * (std::log(sum) - (z[y] - mx));
    if (grad_logits) {
      auto g = grad_logits->row(i);
      for (std::size_t c = 0; c < nc; ++c) g[c] = w * inv * (p[c] / sum - (c == y ? 1.0 : 0.0));
    }
  }
  return loss * inv;
}

double lovasz_softmax_loss(const Matrix& probs, std::span<const ClassId> targets,
                           std::optional<ClassId> ignore_class, Matrix* grad_probs) {
  const std::size_t n = probs.rows(), nc = probs.cols();
  check_targets(n, nc, targets, "lovasz_softmax_loss");

  std::vector<std::size_t> kept;
  std::vector<std::size_t> count(nc, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (ignored(targets[i], ignore_class)) continue;
    kept.push_back(i);
    ++count[targets[i]];
  }
  std::vector<std::size_t> present;
  for (std::size_t c = 0; c < nc; ++c)
    if (count[c] > 0) present.push_back(c);
  if (present.empty()) throw NumericError("lovasz_softmax_loss: no class present");

  if (grad_probs) *grad_probs = Matrix(n, nc);
  const std::size_t m = kept.size();
  const double inv_classes = 1.0 / static_cast<double>(present.size());
  std::vector<double> err(m), grad_j(m);
  std::vector<std::size_t> order(m);
  double total = 0.0;

  for (const std::size_t c : present) {
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t i = kept[k];
      const double fg = targets[i] == c ? 1.0 : 0.0;
      err[k] = std::abs(fg - probs(i, c));
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });

    // Jaccard loss after the first k sorted points are mispredicted, differenced.
    const double gts = static_cast<double>(count[c]);
    double cum_fg = 0.0, cum_bg = 0.0, prev = 0.0, loss_c = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const bool is_fg = targets[kept[order[k]]] == c;
      (is_fg ? cum_fg : cum_bg) += 1.0;
      const double inter = gts - cum_fg;
      const double uni = gts + cum_bg;
      const double jac = 1.0 - inter / uni;
      grad_j[k] = jac - prev;
      prev = jac;
      loss_c += err[order[k]] * grad_j[k];
    }
    total += loss_c;

    if (grad_probs) {
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t i = kept[order[k]];
        // err = 1 - p for the class's own points, p otherwise.
        const double sign = targets[i] == c ? -1.0 : 1.0;
        (*grad_probs)(i, c) += sign * grad_j[k] * inv_classes;
      }
    }
  }
  return total * inv_classes;
}

Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
  Matrix out(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const auto p = probs.row(i);
    const auto g = grad_probs.row(i);
    double dot = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) dot += p[c] * g[c];
    auto o = out.row(i);
    for (std::size_t c = 0; c < p.size(); ++c) o[c] = p[c] * (g[c] - dot);
  }
  return out;
}

LossValue total_loss(const RefinerModel& model, const Matrix& features, std::span<const ClassId> targets,
                     const LossOptions& options, RefinerModel* grad) {
  ForwardCache cache;
  const Matrix logits = forward(model, features, grad ? &cache : nullptr);
  const Matrix probs = softmax_rows(logits);

  LossValue value;
  Matrix grad_wce, grad_probs;
  value.wce = wce_loss(logits, targets, options.class_weights, options.ignore_class, grad ? &grad_wce : nullptr);
  value.lovasz = lovasz_softmax_loss(probs, targets, options.ignore_class, grad ? &grad_probs : nullptr);
  value.total = value.wce + value.lovasz;
  if (!std::isfinite(value.total)) throw NumericError("total_loss: non-finite loss");

  if (grad) {
    Matrix grad_logits = softmax_backward(probs, grad_probs);
    auto gl = grad_logits.flat();
    const auto gw = grad_wce.flat();
    for (std::size_t k = 0; k < gl.size(); ++k) gl[k] += gw[k];
    backward(model, cache, grad_logits, *grad);
  }
  return value;
}

}  // namespace tupr
