#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tupr/losses.hpp"
#include "tupr/refiner_net.hpp"
#include "tupr/uncertainty.hpp"

namespace tupr {

struct TrainConfig {
  int epochs = 50;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::size_t n_u = 4096;
  std::vector<double> class_weights;  // empty: derived from the corpus
  std::optional<ClassId> ignore_class = ClassId{0};

  void validate() const;
};

/// One scan's uncertain point pool and its per-point ground truth.
struct TrainingScan {
  std::string scan_id;
  UncertainPointSet pool;
  std::vector<ClassId> gt;  // indexed by point, not by pool entry
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double wce = 0.0;
  double lovasz = 0.0;
};

/// w_c = 1 / ln(eps + f_c) over the pool members' ground truth; the ignore class gets 0.
std::vector<double> wce_class_weights(std::span<const TrainingScan> scans, std::size_t num_classes,
                                      std::optional<ClassId> ignore_class, double eps = 1.02);

/// Sets the model's input standardization from the pool features of `scans`.
void fit_input_normalization(RefinerModel& model, std::span<const TrainingScan> scans);

class AdamOptimizer {
 public:
  AdamOptimizer(const RefinerModel& model, double lr, double beta1, double beta2, double eps);
  void step(RefinerModel& model, const RefinerModel& grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  long steps_ = 0;
  std::vector<double> m_, v_;
};

/// One optimizer step per scan per epoch on an n_u-entry sample of its pool.
/// `on_epoch` is called after each epoch.
std::vector<EpochLog> train(RefinerModel& model, std::span<const TrainingScan> scans, const TrainConfig& cfg,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

struct InferenceConfig {
  std::size_t context_size = 4096;  // max entries attended jointly
  std::uint64_t seed = 0;
};

/// Refined label per pool entry (argmax of the logits, ties to the smaller id).
/// Pools larger than context_size are split into seeded, near-equal chunks.
std::vector<ClassId> refine(const RefinerModel& model, const UncertainPointSet& pool,
                            const InferenceConfig& cfg);

Matrix pool_features(const UncertainPointSet& pool);

}  // namespace tupr
