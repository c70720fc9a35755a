#include <doctest.h>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"
#include "tupr/refiner_net.hpp"

using namespace tupr;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& x : m.flat()) x = rng.uniform(-scale, scale);
  return m;
}

AttentionLayer random_layer(Rng& rng, std::size_t in, std::size_t d) {
  AttentionLayer l;
  l.projection = Dense(in, d);
  l.value = Dense(in, d);
  l.projection.weight = random_matrix(rng, in, d, 0.7);
  l.value.weight = random_matrix(rng, in, d);
  for (auto& b : l.projection.bias) b = rng.uniform(-0.3, 0.3);
  for (auto& b : l.value.bias) b = rng.uniform(-0.3, 0.3);
  return l;
}

oracle::Mat to_mat(const Matrix& m) {
  oracle::Mat out(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

ModelDims tiny_dims() {
  ModelDims d;
  d.input_dim = 7;
  d.embed_hidden = 6;
  d.model_dim = 5;
  d.layers = 2;
  d.head_hidden1 = 8;
  d.head_hidden2 = 6;
  d.num_classes = 3;
  return d;
}

}  // namespace

TEST_CASE("attention: a single token returns V") {
  Rng rng(1);
  const auto layer = random_layer(rng, 6, 4);
  const Matrix x = random_matrix(rng, 1, 6);
  const Matrix out = attention_forward(x, layer);
  const Matrix v = layer.value.apply(x);
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(out(0, j) - v(0, j)) < 1e-12);
}

TEST_CASE("attention: identical queries average the values") {
  Rng rng(2);
  auto layer = random_layer(rng, 3, 4);
  // The projection ignores the input entirely, so both Q rows equal the bias.
  layer.projection.weight.fill(0.0);
  Matrix x = random_matrix(rng, 2, 3);
  AttentionCache cache;
  const Matrix out = attention_forward(x, layer, &cache);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(cache.attn(i, j) == doctest::Approx(0.5).epsilon(1e-15));
  for (std::size_t j = 0; j < 4; ++j) {
    const double mean = 0.5 * (cache.v(0, j) + cache.v(1, j));
    CHECK(out(0, j) == doctest::Approx(mean).epsilon(1e-14));
    CHECK(out(1, j) == doctest::Approx(mean).epsilon(1e-14));
  }
}

TEST_CASE("attention: random instances match the explicit-loop oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(9), in = 1 + rng.below(10), d = 1 + rng.below(12);
    const auto layer = random_layer(rng, in, d);
    const Matrix x = random_matrix(rng, n, in, 2.0);
    AttentionCache cache;
    const Matrix out = attention_forward(x, layer, &cache);
    const auto ref = oracle::attention(to_mat(x), to_mat(layer.projection.weight), layer.projection.bias,
                                       to_mat(layer.value.weight), layer.value.bias);
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0;
      for (std::size_t j = 0; j < n; ++j) {
        row += cache.attn(i, j);
        CHECK(cache.scores(i, j) == cache.scores(j, i));
      }
      CHECK(std::abs(row - 1.0) < 1e-12);
      for (std::size_t j = 0; j < d; ++j)
        CHECK(std::abs(out(i, j) - ref[i][j]) <= 1e-10 * std::max(1.0, std::abs(ref[i][j])));
    }
  }
}

TEST_CASE("attention: permutation equivariance") {
  Rng rng(4);
  const auto layer = random_layer(rng, 5, 6);
  const Matrix x = random_matrix(rng, 7, 5);
  const std::vector<std::size_t> perm = {3, 0, 6, 1, 5, 2, 4};
  Matrix xp(7, 5);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 5; ++j) xp(i, j) = x(perm[i], j);
  const Matrix a = attention_forward(x, layer), b = attention_forward(xp, layer);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(b(i, j) == doctest::Approx(a(perm[i], j)).epsilon(1e-12));
}

TEST_CASE("attention: non-finite outputs are numeric errors naming the layer") {
  Rng rng(5);
  auto layer = random_layer(rng, 2, 2);
  layer.value.bias[0] = std::numeric_limits<double>::infinity();
  try {
    attention_forward(random_matrix(rng, 3, 2), layer, nullptr, 2);
    FAIL("expected an error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer 2") != std::string::npos);
  }
}

TEST_CASE("forward: shapes of the default model") {
  const auto model = RefinerModel::create(ModelDims{}, 7);
  CHECK(model.parameter_count() == parameter_count(ModelDims{}));
  ForwardCache cache;
  Rng rng(1);
  const Matrix logits = forward(model, random_matrix(rng, 1, 25), &cache);
  CHECK(logits.rows() == 1);
  CHECK(logits.cols() == 20);
  CHECK(cache.embedding.cols() == 256);
  CHECK(cache.layer_out.size() == 4);
  for (const auto& o : cache.layer_out) CHECK(o.cols() == 256);
  CHECK(cache.concat.cols() == 1024);
  CHECK_THROWS_AS(forward(model, random_matrix(rng, 2, 24)), NumericError);
}

TEST_CASE("forward: a zero model produces zero logits") {
  RefinerModel probe = RefinerModel::create(tiny_dims(), 1);
  const RefinerModel zero = RefinerModel::zeros_like(probe);
  Rng rng(2);
  RefinerModel m = zero;
  m.input_mean.assign(7, 0.0);
  m.input_scale.assign(7, 1.0);
  const Matrix logits = forward(m, random_matrix(rng, 5, 7, 10.0));
  for (double z : logits.flat()) CHECK(z == 0.0);
}

TEST_CASE("forward: duplicated rows get identical logits; init is seeded") {
  const auto a = RefinerModel::create(tiny_dims(), 3);
  CHECK(a == RefinerModel::create(tiny_dims(), 3));
  CHECK_FALSE(a == RefinerModel::create(tiny_dims(), 4));
  Rng rng(9);
  Matrix x = random_matrix(rng, 4, 7);
  for (std::size_t j = 0; j < 7; ++j) x(3, j) = x(1, j);
  const Matrix z = forward(a, x);
  for (std::size_t c = 0; c < 3; ++c) CHECK(z(1, c) == z(3, c));
}

TEST_CASE("backward: parameter gradients match finite differences on a tiny model") {
  Rng rng(11);
  RefinerModel m = RefinerModel::create(tiny_dims(), 5);
  for (std::size_t j = 0; j < 7; ++j) {
    m.input_mean[j] = rng.uniform(-0.5, 0.5);
    m.input_scale[j] = rng.uniform(0.5, 2.0);
  }
  // Non-zero biases so that no ReLU sits exactly on its kink.
  for (auto block : m.parameter_blocks())
    for (double& p : block)
      if (p == 0.0) p = rng.uniform(-0.1, 0.1);
  const Matrix x = random_matrix(rng, 5, 7, 1.5);
  const std::vector<ClassId> targets = {1, 2, 0, 1, 2};
  LossOptions opts;
  opts.class_weights = {0.0, 1.3, 0.7};
  opts.ignore_class = ClassId{0};
  const auto r = gradcheck::check_total_loss(m, x, targets, opts);
  CHECK(r.checked == m.parameter_count());
  INFO("worst at " << r.where);
  CHECK(r.worst < 1e-4);
}

TEST_CASE("checkpoint: round trip, bit-exact bytes and corruption") {
  testutil::TempDir dir;
  auto m = RefinerModel::create(tiny_dims(), 8);
  m.input_mean[2] = 0.25;
  m.input_scale[4] = 3.5;
  save_model(m, dir / "m.tupr");
  const auto back = load_model(dir / "m.tupr");
  CHECK(back == m);
  CHECK(encode_model(back) == encode_model(m));
  CHECK(read_file_bytes(dir / "m.tupr").size() == 8 + 28 + 8 * (14 + parameter_count(tiny_dims())));

  auto bytes = encode_model(m);
  bytes.pop_back();
  CHECK_THROWS_AS(decode_model(bytes), DataError);
  bytes = encode_model(m);
  bytes[0] = std::byte{'X'};
  CHECK_THROWS_AS(decode_model(bytes), DataError);
}
