#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tupr/common.hpp"
#include "tupr/tensor.hpp"

namespace tupr {

/// Fully connected layer y = x * weight + bias (weight is in x out).
struct Dense {
  Matrix weight;
  std::vector<double> bias;

  Dense() = default;
  Dense(std::size_t in, std::size_t out) : weight(in, out), bias(out, 0.0) {}

  std::size_t in_dim() const noexcept { return weight.rows(); }
  std::size_t out_dim() const noexcept { return weight.cols(); }
  Matrix apply(const Matrix& x) const;

  friend bool operator==(const Dense&, const Dense&) = default;
};

/// One self-attention layer. Queries and keys come from the same projection,
/// so the score matrix Q * Q^T is symmetric.
struct AttentionLayer {
  Dense projection;  // produces Q (= K)
  Dense value;       // produces V

  friend bool operator==(const AttentionLayer&, const AttentionLayer&) = default;
};

struct ModelDims {
  std::size_t input_dim = 25;
  std::size_t embed_hidden = 128;
  std::size_t model_dim = 256;
  std::size_t layers = 4;
  std::size_t head_hidden1 = 512;
  std::size_t head_hidden2 = 256;
  std::size_t num_classes = 20;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Embedding (2 dense + ReLU), stacked attention layers whose outputs are
/// concatenated, and a 3-layer classification head. Inputs are standardized
/// with fixed per-feature statistics before the embedding.
struct RefinerModel {
  ModelDims dims;
  std::vector<double> input_mean;
  std::vector<double> input_scale;
  Dense embed1, embed2;
  std::vector<AttentionLayer> attention;
  Dense head1, head2, head3;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  static RefinerModel create(const ModelDims& dims, std::uint64_t seed);
  /// Same shapes as `model`, all zeros (gradient accumulator).
  static RefinerModel zeros_like(const RefinerModel& model);

  /// Learnable blocks in declaration order.
  std::vector<std::span<double>> parameter_blocks();
  std::vector<std::span<const double>> parameter_blocks() const;
  std::size_t parameter_count() const;

  friend bool operator==(const RefinerModel&, const RefinerModel&) = default;
};

std::size_t parameter_count(const ModelDims& dims);

/// Intermediate values kept by `attention_forward` for the backward pass.
struct AttentionCache {
  Matrix q;       // n x d, also the keys
  Matrix v;       // n x d
  Matrix scores;  // raw Q * Q^T, before scaling
  Matrix attn;    // row-softmax(scores / sqrt(d))
};

/// F_out = softmax(Q Q^T / sqrt(d)) V with Q = F_in W_p, V = F_in W_v.
Matrix attention_forward(const Matrix& input, const AttentionLayer& layer, AttentionCache* cache = nullptr,
                         std::size_t layer_index = 0);

/// Given dL/dF_out, accumulates parameter gradients into `grad` and returns dL/dF_in.
Matrix attention_backward(const Matrix& input, const AttentionLayer& layer, const AttentionCache& cache,
                          const Matrix& grad_output, AttentionLayer& grad);

struct ForwardCache {
  Matrix x;  // standardized input
  Matrix z1, h1, z2, embedding;
  std::vector<AttentionCache> attention;
  std::vector<Matrix> layer_out;
  Matrix concat;
  Matrix zh1, g1, zh2, g2;
};

/// Logits (n x C). Fills `cache` when given.
Matrix forward(const RefinerModel& model, const Matrix& features, ForwardCache* cache = nullptr);

/// Back-propagates dL/dlogits through the network; gradients are accumulated
/// into `grad` (same shapes as `model`).
void backward(const RefinerModel& model, const ForwardCache& cache, const Matrix& grad_logits,
              RefinerModel& grad);

// Checkpoint format: "TUPR", u32 version, u32 dims header, then little-endian
// float64 blocks: input_mean, input_scale, then the learnable blocks.
std::vector<std::byte> encode_model(const RefinerModel& model);
RefinerModel decode_model(std::span<const std::byte> bytes);
void save_model(const RefinerModel& model, const std::filesystem::path& path);
RefinerModel load_model(const std::filesystem::path& path);

}  // namespace tupr
