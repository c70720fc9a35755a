#include "tupr/refiner_net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <string>

#include "tupr/kitti_io.hpp"
#include "tupr/rng.hpp"

namespace tupr {

namespace {

constexpr char kMagic[4] = {'T', 'U', 'P', 'R'};
constexpr std::uint32_t kVersion = 1;

void relu_inplace(Matrix& m) {
  for (double& x : m.flat()) x = x > 0.0 ? x : 0.0;
}

Matrix relu(const Matrix& z) {
  Matrix out = z;
  relu_inplace(out);
  return out;
}

// grad *= 1[z > 0]
void relu_mask(Matrix& grad, const Matrix& z) {
  auto g = grad.flat();
  const auto zz = z.flat();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(zz[i] > 0.0)) g[i] = 0.0;
}

// Accumulates dW, db and returns dX for y = x W + b.
Matrix dense_backward(const Dense& layer, const Matrix& x, const Matrix& grad_y, Dense& grad) {
  matmul_tn_acc(x.view(), grad_y.view(), grad.weight);
  add_column_sums(grad_y, grad.bias);
  return matmul_nt(grad_y.view(), layer.weight.view());
}

void init_dense(Dense& d, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d.in_dim()));
  for (double& w : d.weight.flat()) w = rng.uniform(-bound, bound);
  std::fill(d.bias.begin(), d.bias.end(), 0.0);
}

void check_finite(const Matrix& m, const std::string& where) {
  if (!m.all_finite()) throw NumericError("non-finite activations in " + where);
}

}  // namespace

Matrix Dense::apply(const Matrix& x) const {
  if (x.cols() != in_dim())
    throw NumericError("dense layer expects " + std::to_string(in_dim()) + " inputs, got " +
                       std::to_string(x.cols()));
  Matrix y = matmul(x.view(), weight.view());
  add_row_vector(y, bias);
  return y;
}

std::size_t parameter_count(const ModelDims& d) {
  auto dense = [](std::size_t in, std::size_t out) { return in * out + out; };
  return dense(d.input_dim, d.embed_hidden) + dense(d.embed_hidden, d.model_dim) +
         d.layers * 2 * dense(d.model_dim, d.model_dim) +
         dense(d.layers * d.model_dim, d.head_hidden1) + dense(d.head_hidden1, d.head_hidden2) +
         dense(d.head_hidden2, d.num_classes);
}

RefinerModel RefinerModel::zeros_like(const RefinerModel& model) {
  RefinerModel z;
  const auto& d = model.dims;
  z.dims = d;
  z.input_mean.assign(d.input_dim, 0.0);
  z.input_scale.assign(d.input_dim, 1.0);
  z.embed1 = Dense(d.input_dim, d.embed_hidden);
  z.embed2 = Dense(d.embed_hidden, d.model_dim);
  z.attention.assign(d.layers, AttentionLayer{Dense(d.model_dim, d.model_dim), Dense(d.model_dim, d.model_dim)});
  z.head1 = Dense(d.layers * d.model_dim, d.head_hidden1);
  z.head2 = Dense(d.head_hidden1, d.head_hidden2);
  z.head3 = Dense(d.head_hidden2, d.num_classes);
  return z;
}

RefinerModel RefinerModel::create(const ModelDims& dims, std::uint64_t seed) {
  if (dims.input_dim == 0 || dims.embed_hidden == 0 || dims.model_dim == 0 || dims.layers == 0 ||
      dims.head_hidden1 == 0 || dims.head_hidden2 == 0 || dims.num_classes < 2)
    throw UsageError("refiner model: all dimensions must be positive and C >= 2");
  RefinerModel probe;
  probe.dims = dims;
  RefinerModel m = zeros_like(probe);
  Rng rng(hash_key(seed, 0x1417));
  init_dense(m.embed1, rng);
  init_dense(m.embed2, rng);
  for (auto& layer : m.attention) {
    init_dense(layer.projection, rng);
    init_dense(layer.value, rng);
  }
  init_dense(m.head1, rng);
  init_dense(m.head2, rng);
  init_dense(m.head3, rng);
  return m;
}

std::vector<std::span<double>> RefinerModel::parameter_blocks() {
  std::vector<std::span<double>> blocks;
  auto add = [&](Dense& d) {
    blocks.push_back(d.weight.flat());
    blocks.push_back(d.bias);
  };
  add(embed1);
  add(embed2);
  for (auto& layer : attention) {
    add(layer.projection);
    add(layer.value);
  }
  add(head1);
  add(head2);
  add(head3);
  return blocks;
}

std::vector<std::span<const double>> RefinerModel::parameter_blocks() const {
  auto blocks = const_cast<RefinerModel*>(this)->parameter_blocks();
  return {blocks.begin(), blocks.end()};
}

std::size_t RefinerModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : parameter_blocks()) n += b.size();
  return n;
}

// ---------------------------------------------------------------------------
// Attention

Matrix attention_forward(const Matrix& input, const AttentionLayer& layer, AttentionCache* cache,
                         std::size_t layer_index) {
  const std::size_t n = input.rows();
  if (n == 0) throw NumericError("attention layer " + std::to_string(layer_index) + ": empty input");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(layer.projection.out_dim()));

  Matrix q = layer.projection.apply(input);
  Matrix v = layer.value.apply(input);
  Matrix scores = matmul_nt(q.view(), q.view());

  Matrix attn(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = scores.row(i);
    auto a = attn.row(i);
    double mx = s[0];
    for (double x : s) mx = std::max(mx, x);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      a[j] = std::exp((s[j] - mx) * inv_sqrt_d);
      sum += a[j];
    }
    for (double& x : a) x /= sum;
  }
  Matrix out = matmul(attn.view(), v.view());
  check_finite(out, "attention layer " + std::to_string(layer_index));

  if (cache != nullptr) {
    cache->q = std::move(q);
    cache->v = std::move(v);
    cache->scores = std::move(scores);
    cache->attn = std::move(attn);
  }
  return out;
}

Matrix attention_backward(const Matrix& input, const AttentionLayer& layer, const AttentionCache& cache,
                          const Matrix& grad_output, AttentionLayer& grad) {
  const std::size_t n = input.rows();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(layer.projection.out_dim()));

  // out = A V
  Matrix grad_attn = matmul_nt(grad_output.view(), cache.v.view());
  Matrix grad_v = matmul_tn(cache.attn.view(), grad_output.view());

  // Row softmax, then the 1/sqrt(d) scale: g_ij = A_ij (dA_ij - sum_k A_ik dA_ik) / sqrt(d).
  Matrix grad_scores(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = cache.attn.row(i);
    const auto da = grad_attn.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += a[j] * da[j];
    auto g = grad_scores.row(i);
    for (std::size_t j = 0; j < n; ++j) g[j] = a[j] * (da[j] - dot) * inv_sqrt_d;
  }
  // scores = Q Q^T, so dQ = (G + G^T) Q.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const double s = grad_scores(i, j) + grad_scores(j, i);
      grad_scores(i, j) = s;
      grad_scores(j, i) = s;
    }
  Matrix grad_q = matmul(grad_scores.view(), cache.q.view());

  Matrix grad_in = dense_backward(layer.projection, input, grad_q, grad.projection);
  Matrix grad_in_v = dense_backward(layer.value, input, grad_v, grad.value);
  auto gi = grad_in.flat();
  const auto gv = grad_in_v.flat();
  for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += gv[i];
  return grad_in;
}

// ---------------------------------------------------------------------------
// Full network

Matrix forward(const RefinerModel& model, const Matrix& features, ForwardCache* cache) {
  const auto& d = model.dims;
  if (features.rows() == 0) throw NumericError("forward: empty batch");
  if (features.cols() != d.input_dim)
    throw NumericError("forward: expected " + std::to_string(d.input_dim) + " features, got " +
                       std::to_string(features.cols()));

  Matrix x = features;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = (r[j] - model.input_mean[j]) / model.input_scale[j];
  }

  Matrix z1 = model.embed1.apply(x);
  Matrix h1 = relu(z1);
  Matrix z2 = model.embed2.apply(h1);
  Matrix e = relu(z2);
  check_finite(e, "embedding");

  const std::size_t n = x.rows();
  Matrix concat(n, d.layers * d.model_dim);
  std::vector<AttentionCache> att_caches(cache ? d.layers : 0);
  std::vector<Matrix> outs;
  outs.reserve(d.layers);
  const Matrix* layer_in = &e;
  Matrix current;
  for (std::size_t l = 0; l < d.layers; ++l) {
    Matrix out = attention_forward(*layer_in, model.attention[l], cache ? &att_caches[l] : nullptr, l);
    for (std::size_t i = 0; i < n; ++i)
      std::copy(out.row(i).begin(), out.row(i).end(), concat.row(i).begin() + l * d.model_dim);
    if (cache) {
      outs.push_back(std::move(out));
      layer_in = &outs.back();
    } else {
      current = std::move(out);
      layer_in = &current;
    }
  }

  Matrix zh1 = model.head1.apply(concat);
  Matrix g1 = relu(zh1);
  Matrix zh2 = model.head2.apply(g1);
  Matrix g2 = relu(zh2);
  Matrix logits = model.head3.apply(g2);
  check_finite(logits, "classification head");

  if (cache) {
    cache->x = std::move(x);
    cache->z1 = std::move(z1);
    cache->h1 = std::move(h1);
    cache->z2 = std::move(z2);
    cache->embedding = std::move(e);
    cache->attention = std::move(att_caches);
    cache->layer_out = std::move(outs);
    cache->concat = std::move(concat);
    cache->zh1 = std::move(zh1);
    cache->g1 = std::move(g1);
    cache->zh2 = std::move(zh2);
    cache->g2 = std::move(g2);
  }
  return logits;
}

void backward(const RefinerModel& model, const ForwardCache& cache, const Matrix& grad_logits,
              RefinerModel& grad) {
  const auto& d = model.dims;
  const std::size_t n = grad_logits.rows();

  Matrix g = dense_backward(model.head3, cache.g2, grad_logits, grad.head3);
  relu_mask(g, cache.zh2);
  g = dense_backward(model.head2, cache.g1, g, grad.head2);
  relu_mask(g, cache.zh1);
  const Matrix grad_concat = dense_backward(model.head1, cache.concat, g, grad.head1);

  // Layer l feeds both the concatenation and layer l + 1.
  Matrix carry;
  for (std::size_t l = d.layers; l-- > 0;) {
    Matrix grad_out(n, d.model_dim);
    for (std::size_t i = 0; i < n; ++i) {
      const auto src = grad_concat.row(i).subspan(l * d.model_dim, d.model_dim);
      std::copy(src.begin(), src.end(), grad_out.row(i).begin());
    }
    if (l + 1 < d.layers) {
      auto go = grad_out.flat();
      const auto c = carry.flat();
      for (std::size_t k = 0; k < go.size(); ++k) go[k] += c[k];
    }
    const Matrix& input = l == 0 ? cache.embedding : cache.layer_out[l - 1];
    carry = attention_backward(input, model.attention[l], cache.attention[l], grad_out, grad.attention[l]);
  }

  relu_mask(carry, cache.z2);
  Matrix gh = dense_backward(model.embed2, cache.h1, carry, grad.embed2);
  relu_mask(gh, cache.z1);
  matmul_tn_acc(cache.x.view(), gh.view(), grad.embed1.weight);
  add_column_sums(gh, grad.embed1.bias);
}

// ---------------------------------------------------------------------------
// Checkpoints

std::vector<std::byte> encode_model(const RefinerModel& model) {
  static_assert(std::endian::native == std::endian::little);
  const auto& d = model.dims;
  const std::uint32_t header[7] = {
      static_cast<std::uint32_t>(d.input_dim),    static_cast<std::uint32_t>(d.embed_hidden),
      static_cast<std::uint32_t>(d.model_dim),    static_cast<std::uint32_t>(d.layers),
      static_cast<std::uint32_t>(d.head_hidden1), static_cast<std::uint32_t>(d.head_hidden2),
      static_cast<std::uint32_t>(d.num_classes)};
  const std::size_t doubles = 2 * model.input_mean.size() + model.parameter_count();
  std::vector<std::byte> out(8 + sizeof(header) + doubles * sizeof(double));
  std::memcpy(out.data(), kMagic, sizeof(kMagic));
  std::memcpy(out.data() + 4, &kVersion, sizeof(kVersion));
  std::memcpy(out.data() + 8, header, sizeof(header));
  std::size_t offset = 8 + sizeof(header);
  auto append = [&](std::span<const double> block) {
    std::memcpy(out.data() + offset, block.data(), block.size_bytes());
    offset += block.size_bytes();
  };
  append(model.input_mean);
  append(model.input_scale);
  for (const auto& block : model.parameter_blocks()) append(block);
  return out;
}

RefinerModel decode_model(std::span<const std::byte> bytes) {
  constexpr std::size_t kHeader = 8 + 7 * sizeof(std::uint32_t);
  if (bytes.size() < kHeader || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw DataError("checkpoint: bad magic");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  std::uint32_t h[7];
  std::memcpy(h, bytes.data() + 8, sizeof(h));
  ModelDims dims{h[0], h[1], h[2], h[3], h[4], h[5], h[6]};

  RefinerModel probe;
  probe.dims = dims;
  RefinerModel m = RefinerModel::zeros_like(probe);
  std::size_t expected = kHeader + 2 * dims.input_dim * sizeof(double) + parameter_count(dims) * sizeof(double);
  if (bytes.size() != expected)
    throw DataError("checkpoint: " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(expected));
  std::size_t offset = kHeader;
  auto read = [&](std::span<double> block) {
    std::memcpy(block.data(), bytes.data() + offset, block.size_bytes());
    offset += block.size_bytes();
  };
  read(m.input_mean);
  read(m.input_scale);
  for (auto block : m.parameter_blocks()) read(block);
  return m;
}

void save_model(const RefinerModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_model(model));
}

RefinerModel load_model(const std::filesystem::path& path) {
  try {
    return decode_model(read_file_bytes(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace tupr
