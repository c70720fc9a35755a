#include "tupr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tupr/rng.hpp"

namespace tupr {

void TrainConfig::validate() const {
  if (epochs < 1) throw UsageError("train: epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw UsageError("train: learning_rate must be > 0");
  if (n_u < 1) throw UsageError("train: n_u must be >= 1");
  for (std::size_t c = 0; c < class_weights.size(); ++c) {
    if (ignore_class && c == *ignore_class) continue;
    if (!(class_weights[c] > 0.0)) throw UsageError("train: class weights must be > 0");
  }
}

Matrix pool_features(const UncertainPointSet& pool) {
  return Matrix(pool.size(), pool.feature_dim, pool.features);
}

std::vector<double> wce_class_weights(std::span<const TrainingScan> scans, std::size_t num_classes,
                                      std::optional<ClassId> ignore_class, double eps) {
  std::vector<double> count(num_classes, 0.0);
  double total = 0.0;
  for (const auto& s : scans)
    for (auto p : s.pool.indices) {
      const ClassId c = s.gt.at(p);
      if (c >= num_classes) throw DataError("class weights: label outside 0..C-1");
      count[c] += 1.0;
      total += 1.0;
    }
  std::vector<double> w(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double f = total > 0.0 ? count[c] / total : 0.0;
    w[c] = 1.0 / std::log(eps + f);
  }
  if (ignore_class && *ignore_class < num_classes) w[*ignore_class] = 0.0;
  return w;
}

void fit_input_normalization(RefinerModel& model, std::span<const TrainingScan> scans) {
  const std::size_t dim = model.dims.input_dim;
  std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
  double n = 0.0;
  for (const auto& s : scans) {
    if (s.pool.feature_dim != dim) throw DataError("normalization: feature width mismatch");
    for (std::size_t k = 0; k < s.pool.size(); ++k) {
      const auto f = s.pool.feature(k);
      for (std::size_t j = 0; j < dim; ++j) {
        sum[j] += f[j];
        sq[j] += f[j] * f[j];
      }
      n += 1.0;
    }
  }
  if (n == 0.0) return;
  for (std::size_t j = 0; j < dim; ++j) {
    const double mean = sum[j] / n;
    const double var = std::max(0.0, sq[j] / n - mean * mean);
    model.input_mean[j] = mean;
    model.input_scale[j] = std::sqrt(var) > 1e-6 ? std::sqrt(var) : 1.0;
  }
}

AdamOptimizer::AdamOptimizer(const RefinerModel& model, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.assign(model.parameter_count(), 0.0);
  v_.assign(model.parameter_count(), 0.0);
}

void AdamOptimizer::step(RefinerModel& model, const RefinerModel& grad) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  auto params = model.parameter_blocks();
  const auto grads = grad.parameter_blocks();
  std::size_t k = 0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b];
    const auto g = grads[b];
    for (std::size_t i = 0; i < p.size(); ++i, ++k) {
      m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g[i];
      v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
    }
  }
}

std::vector<EpochLog> train(RefinerModel& model, std::span<const TrainingScan> scans, const TrainConfig& cfg,
                            const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  std::vector<std::size_t> usable;
  for (std::size_t s = 0; s < scans.size(); ++s)
    if (!scans[s].pool.empty()) usable.push_back(s);
  if (usable.empty()) throw DataError("train: no scan has a non-empty uncertain point pool");

  LossOptions options;
  options.ignore_class = cfg.ignore_class;
  options.class_weights = cfg.class_weights.empty()
                              ? wce_class_weights(scans, model.dims.num_classes, cfg.ignore_class)
                              : cfg.class_weights;
  if (options.class_weights.size() != model.dims.num_classes)
    throw UsageError("train: expected " + std::to_string(model.dims.num_classes) + " class weights");

  AdamOptimizer adam(model, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  std::vector<EpochLog> log;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = usable;
    Rng rng(hash_key(cfg.seed, 0xE90C, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    EpochLog entry{epoch, 0.0, 0.0, 0.0};
    std::size_t steps = 0;
    for (const std::size_t s : order) {
      const auto& scan = scans[s];
      const auto batch = sample_training_batch(
          scan.pool, cfg.n_u, hash_key(cfg.seed, static_cast<std::uint64_t>(epoch), s));
      std::vector<ClassId> targets;
      targets.reserve(batch.size());
      bool any = false;
      for (auto p : batch.indices) {
        targets.push_back(scan.gt.at(p));
        any = any || !(cfg.ignore_class && targets.back() == *cfg.ignore_class);
      }
      if (!any) continue;

      RefinerModel grad = RefinerModel::zeros_like(model);
      LossValue loss;
      try {
        loss = total_loss(model, pool_features(batch), targets, options, &grad);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", scan " + scan.scan_id + ": " + e.what());
      }
      adam.step(model, grad);
      entry.loss += loss.total;
      entry.wce += loss.wce;
      entry.lovasz += loss.lovasz;
      ++steps;
    }
    if (steps == 0) throw DataError("train: every sampled batch was fully ignored");
    entry.loss /= static_cast<double>(steps);
    entry.wce /= static_cast<double>(steps);
    entry.lovasz /= static_cast<double>(steps);
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

std::vector<ClassId> refine(const RefinerModel& model, const UncertainPointSet& pool,
                            const InferenceConfig& cfg) {
  if (pool.empty()) throw DataError("refine: empty uncertain point pool");
  if (cfg.context_size < 1) throw UsageError("refine: context_size must be >= 1");

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t chunks = 1;
  if (pool.size() > cfg.context_size) {
    Rng rng(hash_key(cfg.seed, 0xC4A7));
    rng.shuffle(order);
    chunks = (pool.size() + cfg.context_size - 1) / cfg.context_size;
  }

  std::vector<ClassId> labels(pool.size());
  const std::size_t base = pool.size() / chunks, extra = pool.size() % chunks;
  std::size_t begin = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t len = base + (c < extra ? 1 : 0);
    Matrix x(len, pool.feature_dim);
    for (std::size_t r = 0; r < len; ++r) {
      const auto f = pool.feature(order[begin + r]);
      std::copy(f.begin(), f.end(), x.row(r).begin());
    }
    const Matrix logits = forward(model, x);
    for (std::size_t r = 0; r < len; ++r) {
      const auto z = logits.row(r);
      labels[order[begin + r]] = static_cast<ClassId>(std::max_element(z.begin(), z.end()) - z.begin());
    }
    begin += len;
  }
  return labels;
}

}  // namespace tupr
