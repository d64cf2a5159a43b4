#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "pgcon/nn.hpp"
#include "pgcon/rng.hpp"

using namespace pgcon;

namespace {

RgbImage random_image(int h, int w, std::uint64_t seed) {
  RgbImage img(h, w);
  Rng rng(seed);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

std::vector<RgbImage> random_tiles(int side, std::uint64_t seed) {
  std::vector<RgbImage> tiles;
  for (int t = 0; t < 9; ++t) tiles.push_back(random_image(side, side, seed + t));
  return tiles;
}

EncoderConfig tiny_cfg() {
  EncoderConfig cfg;
  cfg.c1 = 4;
  cfg.c2 = 8;
  cfg.c3 = 16;
  cfg.dim = 8;
  return cfg;
}

double norm_of(const std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  return std::sqrt(n);
}

bool all_zero(const ModelParams<double>& grads, const std::string& prefix) {
  bool zero = true;
  grads.for_each_tensor([&](const std::string& name, const Tensor<double>& t) {
    if (name.rfind(prefix, 0) != 0) return;
    for (std::size_t i = 0; i < t.size(); ++i)
      if (t[i] != 0.0) zero = false;
  });
  return zero;
}

}  // namespace

TEST_CASE("encoders emit unit-norm embeddings deterministically") {
  const auto params = init_model<double>(tiny_cfg(), 3);
  const RgbImage img = random_image(24, 24, 5);
  const auto tiles = random_tiles(8, 50);

  const auto zp1 = encode_prior(img, params);
  const auto zp2 = encode_prior(img, params);
  CHECK(zp1 == zp2);
  CHECK(std::abs(norm_of(zp1) - 1.0) < 1e-6);

  const auto zd1 = encode_jigsaw(std::span<const RgbImage>(tiles), params);
  const auto zd2 = encode_jigsaw(std::span<const RgbImage>(tiles), params);
  CHECK(zd1 == zd2);
  CHECK(std::abs(norm_of(zd1) - 1.0) < 1e-6);
}

TEST_CASE("forward passes match the direct-convolution oracle") {
  const auto params = init_model<double>(tiny_cfg(), 11);
  const RgbImage img = random_image(24, 24, 7);
  const auto zp = encode_prior(img, params);
  const auto zp_ref = oracle::encode_prior(img, params);
  REQUIRE(zp.size() == zp_ref.size());
  for (std::size_t i = 0; i < zp.size(); ++i)
    CHECK(zp[i] == Catch::Approx(zp_ref[i]).margin(1e-6));

  const auto tiles = random_tiles(8, 70);
  const auto zd = encode_jigsaw(std::span<const RgbImage>(tiles), params);
  const auto zd_ref = oracle::encode_jigsaw(std::span<const RgbImage>(tiles), params);
  for (std::size_t i = 0; i < zd.size(); ++i)
    CHECK(zd[i] == Catch::Approx(zd_ref[i]).margin(1e-6));
}

TEST_CASE("encode_win shares theta with encode_prior exactly") {
  auto params = init_model<double>(tiny_cfg(), 13);
  const RgbImage img = random_image(20, 20, 9);
  CHECK(encode_win(img, params) == encode_prior(img, params));
  // mutating theta changes both identically
  params.f_proj.w[0] += 0.25;
  CHECK(encode_win(img, params) == encode_prior(img, params));
}

TEST_CASE("jigsaw embedding is order-sensitive") {
  const auto params = init_model<double>(tiny_cfg(), 17);
  auto tiles = random_tiles(8, 90);
  const auto before = encode_jigsaw(std::span<const RgbImage>(tiles), params);
  std::swap(tiles[0], tiles[8]);
  const auto after = encode_jigsaw(std::span<const RgbImage>(tiles), params);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i)
    max_diff = std::max(max_diff, std::abs(before[i] - after[i]));
  CHECK(max_diff > 1e-6);
}

TEST_CASE("all-zero tiles reduce to the normalized aggregation bias") {
  auto params = init_model<double>(tiny_cfg(), 19);
  // silence every bias on the tile path, then plant a recognizable agg bias
  params.for_each_tensor([](const std::string& name, Tensor<double>& t) {
    if (name.ends_with(".b")) t.fill(0.0);
  });
  Rng rng(77);
  for (std::size_t i = 0; i < params.h_agg.b.size(); ++i) params.h_agg.b[i] = rng.uniform(-1, 1);

  std::vector<RgbImage> zero_tiles(9, RgbImage(8, 8));
  const auto z = encode_jigsaw(std::span<const RgbImage>(zero_tiles), params);
  std::vector<double> bias(params.h_agg.b.data(), params.h_agg.b.data() + params.h_agg.b.size());
  const double n = norm_of(bias);
  for (std::size_t i = 0; i < z.size(); ++i)
    CHECK(z[i] == Catch::Approx(bias[i] / n).margin(1e-12));
}

TEST_CASE("shape violations are rejected") {
  const auto params = init_model<double>(tiny_cfg(), 23);
  std::vector<RgbImage> eight = random_tiles(8, 31);
  eight.pop_back();
  CHECK_THROWS(encode_jigsaw(std::span<const RgbImage>(eight), params));

  Tensor<double> bad({1, 8, 8});
  CHECK_THROWS(encode_prior(bad, params));
}

TEST_CASE("backward through untouched paths leaves their gradients at zero") {
  const auto params = init_model<double>(tiny_cfg(), 29);
  auto grads = zeros_like(params);
  PriorTrace<double> trace;
  const RgbImage img = random_image(16, 16, 41);
  const auto z = encode_prior(img, params, &trace);
  std::vector<double> grad_embed(z.size(), 0.3);
  backward_prior(trace, params, grad_embed, grads);
  CHECK(!all_zero(grads, "f."));
  CHECK(all_zero(grads, "h."));  // the phi group stayed frozen
}

TEST_CASE("sgd_step: degenerate hyperparameters behave as written") {
  EncoderConfig cfg = tiny_cfg();
  auto params = init_model<double>(cfg, 31);
  auto grads = zeros_like(params);
  auto velocity = zeros_like(params);
  grads.for_each_tensor([](const std::string&, Tensor<double>& t) { t.fill(0.5); });

  // lr = 0: parameters unchanged (velocity may move)
  auto before = params;
  sgd_step(params, grads, velocity, 0.0, 0.9, 1e-4);
  bool same = true;
  params.for_each_tensor([&](const std::string& name, Tensor<double>& t) {
    const Tensor<double>* ref = nullptr;
    before.for_each_tensor([&](const std::string& n, Tensor<double>& t2) {
      if (n == name) ref = &t2;
    });
    for (std::size_t i = 0; i < t.size(); ++i)
      if (t[i] != (*ref)[i]) same = false;
  });
  CHECK(same);

  // momentum = 0, weight_decay = 0: plain gradient descent
  auto p2 = init_model<double>(cfg, 37);
  auto v2 = zeros_like(p2);
  const double w0 = p2.f_proj.w[0];
  sgd_step(p2, grads, v2, 0.1, 0.0, 0.0);
  CHECK(p2.f_proj.w[0] == Catch::Approx(w0 - 0.1 * 0.5).margin(1e-15));
}

TEST_CASE("sgd_step: one step on a 1-d quadratic matches the hand computation") {
  // f(w) = (w - 3)^2 / 2, grad = w - 3; start w=1, lr=0.2, momentum=0.9, wd=0.01
  // v = 0.9*0 + (1-3) + 0.01*1 = -1.99 ; w' = 1 - 0.2*(-1.99) = 1.398
  EncoderConfig cfg = tiny_cfg();
  auto params = make_model<double>(cfg);
  auto grads = zeros_like(params);
  auto velocity = zeros_like(params);
  params.f_proj.w[0] = 1.0;
  grads.f_proj.w[0] = 1.0 - 3.0;
  sgd_step(params, grads, velocity, 0.2, 0.9, 0.01);
  CHECK(params.f_proj.w[0] == Catch::Approx(1.398).margin(1e-12));
  CHECK(velocity.f_proj.w[0] == Catch::Approx(-1.99).margin(1e-12));

  // second step with momentum: grad at 1.398 is -1.602, wd term 0.01398
  // v = 0.9*(-1.99) + (-1.602) + 0.01398 = -3.37902 ; w'' = 1.398 + 0.2*3.37902
  grads.f_proj.w[0] = 1.398 - 3.0;
  sgd_step(params, grads, velocity, 0.2, 0.9, 0.01);
  CHECK(params.f_proj.w[0] == Catch::Approx(1.398 + 0.2 * 3.37902).margin(1e-9));
}

TEST_CASE("sgd_step honors the frozen set") {
  EncoderConfig cfg = tiny_cfg();
  auto params = init_model<double>(cfg, 41);
  auto grads = zeros_like(params);
  auto velocity = zeros_like(params);
  grads.for_each_tensor([](const std::string&, Tensor<double>& t) { t.fill(1.0); });
  const double frozen_before = params.f_proj.w[0];
  const double free_before = params.h_agg.w[0];
  sgd_step(params, grads, velocity, 0.1, 0.0, 0.0, {"f.proj.w"});
  CHECK(params.f_proj.w[0] == frozen_before);
  CHECK(params.h_agg.w[0] != free_before);
}

TEST_CASE("share_trunk aliases the jigsaw path onto theta") {
  EncoderConfig cfg = tiny_cfg();
  cfg.share_trunk = true;
  const auto params = init_model<double>(cfg, 43);
  std::size_t tensors = 0;
  params.for_each_tensor([&](const std::string& name, const Tensor<double>& t) {
    ++tensors;
    CHECK(!name.starts_with("h.proj"));
    CHECK(!name.starts_with("h.conv"));
    (void)t;
  });
  CHECK(tensors == 10);  // f trunk(6) + f proj(2) + agg(2)

  const auto tiles = random_tiles(8, 101);
  const auto z = encode_jigsaw(std::span<const RgbImage>(tiles), params);
  const auto z_ref = oracle::encode_jigsaw(std::span<const RgbImage>(tiles), params);
  for (std::size_t i = 0; i < z.size(); ++i)
    CHECK(z[i] == Catch::Approx(z_ref[i]).margin(1e-9));
}
