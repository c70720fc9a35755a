#include <doctest.h>

#include <cstring>

#include "oracles.hpp"
#include "test_util.hpp"
#include "tupr/coarse.hpp"

using namespace tupr;

namespace {

std::vector<std::byte> bytes_of(const std::vector<float>& v) {
  std::vector<std::byte> out(v.size() * 4);
  std::memcpy(out.data(), v.data(), out.size());
  return out;
}

// A dense grid scene: one point per pixel of an H x W image.
PointCloud grid_cloud(const ProjectionConfig& cfg) {
  PointCloud c;
  const double pi = std::numbers::pi;
  const double up = cfg.fov_up_deg * pi / 180, down = cfg.fov_down_deg * pi / 180;
  for (int v = 0; v < cfg.height; ++v)
    for (int u = 0; u < cfg.width; ++u) {
      const double yaw = pi * (1.0 - 2.0 * (u + 0.5) / cfg.width);
      const double pitch = up - (v + 0.5) / cfg.height * (up - down);
      c.points.push_back({static_cast<float>(10 * std::cos(pitch) * std::cos(yaw)),
                          static_cast<float>(10 * std::cos(pitch) * std::sin(yaw)),
                          static_cast<float>(10 * std::sin(pitch)), 0.5f});
    }
  return c;
}

}  // namespace

TEST_CASE("coarse file: one-hot vectors are kept exactly") {
  std::vector<float> probs = {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0};  // 2x2, C=3, last pixel empty
  const auto seg = decode_coarse(bytes_of(probs), 2, 2, 3);
  CHECK(seg.at(0)[0] == 1.0f);
  CHECK(seg.at(1)[1] == 1.0f);
  CHECK(seg.at(2)[2] == 1.0f);
  CHECK(seg.valid == std::vector<std::uint8_t>{1, 1, 1, 0});
  CHECK(seg.source == CoarseSource::Loaded);
}

TEST_CASE("coarse file: near-unit sums are renormalized, others rejected") {
  std::vector<float> probs = {0.4995f, 0.5f};
  const auto seg = decode_coarse(bytes_of(probs), 1, 1, 2);
  CHECK(static_cast<double>(seg.at(0)[0]) + seg.at(0)[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(decode_coarse(bytes_of({0.25f, 0.25f}), 1, 1, 2), DataError);
  CHECK_THROWS_AS(decode_coarse(bytes_of({1.5f, -0.5f}), 1, 1, 2), DataError);
  CHECK_THROWS_AS(decode_coarse(bytes_of({std::nanf(""), 1.0f}), 1, 1, 2), DataError);
  CHECK_THROWS_AS(decode_coarse(bytes_of({1.0f}), 1, 1, 2), DataError);
}

TEST_CASE("coarse file: write/load round trip") {
  testutil::TempDir dir;
  const auto seg = decode_coarse(bytes_of({0.2f, 0.8f, 0.5f, 0.5f}), 1, 2, 2);
  write_coarse(seg, dir / "p.bin");
  const auto back = load_coarse(dir / "p.bin", 1, 2, 2);
  CHECK(back.probs == seg.probs);
}

TEST_CASE("oracle: no noise gives the one-hot foreground truth") {
  ProjectionConfig cfg;
  cfg.width = 32;
  cfg.height = 8;
  Rng rng(1);
  const auto cloud = oracle::random_cloud(rng, 600, cfg);
  const auto img = project(cloud, cfg);
  std::vector<ClassId> gt(cloud.size());
  for (auto& g : gt) g = static_cast<ClassId>(rng.below(5));
  OracleNoiseSpec spec;
  spec.blur_radius = 0;
  spec.flip_rate = 0.0;
  const auto seg = oracle_coarse(img, gt, 5, spec);
  CHECK(seg.source == CoarseSource::Oracle);
  for (std::size_t px = 0; px < img.pixel_count(); ++px) {
    if (!img.valid[px]) continue;
    const ClassId c = gt[static_cast<std::size_t>(img.fg_index[px])];
    for (int k = 0; k < 5; ++k) CHECK(seg.at(px)[k] == (k == c ? 1.0f : 0.0f));
  }
}

TEST_CASE("oracle: 3x3 blur of a single interior pixel") {
  ProjectionConfig cfg;
  cfg.width = 16;
  cfg.height = 8;
  const auto cloud = grid_cloud(cfg);
  const auto img = project(cloud, cfg);
  for (auto v : img.valid) REQUIRE(v == 1);
  const std::size_t centre = img.pixel_at(5, 4);
  std::vector<ClassId> gt(cloud.size(), 2);
  gt[static_cast<std::size_t>(img.fg_index[centre])] = 1;
  OracleNoiseSpec spec;
  spec.blur_radius = 1;
  spec.flip_rate = 0.0;
  const auto seg = oracle_coarse(img, gt, 3, spec);
  CHECK(seg.at(centre)[1] == static_cast<float>(1.0 / 9.0));
  CHECK(seg.at(centre)[2] == static_cast<float>(8.0 / 9.0));
  CHECK(seg.at(img.pixel_at(4, 3))[1] == static_cast<float>(1.0 / 9.0));
  CHECK(seg.at(img.pixel_at(7, 4))[1] == 0.0f);
  // Corner: clipped 2x2 window.
  CHECK(seg.at(img.pixel_at(0, 0))[2] == 1.0f);
}

TEST_CASE("oracle: deterministic, flips change the argmax, temperature sharpens") {
  ProjectionConfig cfg;
  cfg.width = 64;
  cfg.height = 8;
  const auto cloud = grid_cloud(cfg);
  const auto img = project(cloud, cfg);
  std::vector<ClassId> gt(cloud.size());
  for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = static_cast<ClassId>((i / 7) % 3);
  OracleNoiseSpec spec;
  spec.seed = 99;
  spec.flip_rate = 0.3;
  const auto a = oracle_coarse(img, gt, 3, spec);
  const auto b = oracle_coarse(img, gt, 3, spec);
  CHECK(a.probs == b.probs);

  spec.flip_rate = 0.0;
  const auto clean = oracle_coarse(img, gt, 3, spec);
  std::size_t differ = 0;
  const auto la = argmax_labels(a), lc = argmax_labels(clean);
  for (std::size_t px = 0; px < la.size(); ++px) differ += la[px] != lc[px];
  CHECK(differ > 0);
  for (std::size_t px = 0; px < img.pixel_count(); ++px) {
    double s = 0;
    for (float p : a.at(px)) s += p;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }

  spec.temperature = 0.5;
  const auto sharp = oracle_coarse(img, gt, 3, spec);
  const auto m_clean = top2_margin(clean), m_sharp = top2_margin(sharp);
  for (std::size_t px = 0; px < m_clean.size(); ++px) CHECK(m_sharp[px] >= m_clean[px] - 1e-6);
}

TEST_CASE("top-2 margin examples") {
  CoarseSegmentation seg;
  seg.height = 1;
  seg.width = 4;
  seg.num_classes = 3;
  seg.probs = {0.5f, 0.3f, 0.2f, 0, 1, 0, 1.f / 3, 1.f / 3, 1.f / 3, 0, 0, 0};
  seg.valid = {1, 1, 1, 0};
  const auto m = top2_margin(seg);
  CHECK(m[0] == doctest::Approx(0.2).epsilon(1e-6));
  CHECK(m[1] == 1.0);
  CHECK(m[2] == 0.0);
  CHECK(std::isinf(m[3]));
  CHECK(argmax_labels(seg, 9) == std::vector<ClassId>{0, 1, 0, 9});
  seg.num_classes = 1;
  CHECK_THROWS_AS(top2_margin(seg), UsageError);
}

TEST_CASE("uniform vector over 20 classes has zero margin") {
  CoarseSegmentation seg;
  seg.height = seg.width = 1;
  seg.num_classes = 20;
  seg.probs.assign(20, 0.05f);
  seg.valid = {1};
  CHECK(top2_margin(seg)[0] == 0.0);
}

TEST_CASE("coarse/image compatibility") {
  ProjectionConfig cfg;
  cfg.width = 4;
  cfg.height = 2;
  PointCloud c;
  c.points = {{1, 0, 0, 0}};
  const auto img = project(c, cfg);
  CoarseSegmentation seg;
  seg.height = 2;
  seg.width = 4;
  seg.num_classes = 2;
  seg.probs.assign(16, 0.0f);
  seg.valid.assign(8, 0);
  CHECK_THROWS_AS(check_compatible(seg, img), DataError);
  seg.valid[img.pixel_of(0)] = 1;
  CHECK_NOTHROW(check_compatible(seg, img));
  seg.width = 3;
  CHECK_THROWS_AS(check_compatible(seg, img), DataError);
}
