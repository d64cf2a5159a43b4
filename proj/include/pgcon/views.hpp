#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "pgcon/augment.hpp"
#include "pgcon/image.hpp"
#include "pgcon/rng.hpp"

namespace pgcon {

struct ViewConfig {
  int crop_size = 60;
  int view_size = 120;
  int tile_size = 40;
  int smooth_radius = 2;
  bool with_win = true;
  // Ablation switch: pick crop centers uniformly at random instead of the
  // smoothed a*-argmax.
  bool random_prior = false;
};

// The per-instance views plus provenance. shared_mask is indexed by source
// grid cell t (row-major, pre-permutation); permutation maps output slot ->
// source cell.
struct ViewBundle {
  RgbImage v_p;
  std::array<RgbImage, 9> v_d_tiles;
  std::array<int, 9> permutation{};
  RgbImage v_win;
  bool has_win = false;
  CropBox prior_box;
  std::array<bool, 9> shared_mask{};
  std::int64_t instance_id = -1;
  std::uint64_t seed = 0;
};

namespace detail {
inline constexpr std::uint64_t kPriorStream = stream_tag("view.prior");
inline constexpr std::uint64_t kDistortStream = stream_tag("view.distort");
inline constexpr std::uint64_t kWinStream = stream_tag("view.win");
}  // namespace detail

// A tile counts as shared with the prior view when at least 25% of its area
// overlaps the prior box after both are mapped to the resized tiling square.
inline std::array<bool, 9> compute_shared_mask(const CropBox& prior_box, int img_h, int img_w,
                                               int tile_size) {
  const double S = 3.0 * tile_size;
  const double sx = S / img_w, sy = S / img_h;
  const double bx0 = prior_box.x0() * sx, bx1 = prior_box.x1() * sx;
  const double by0 = prior_box.y0() * sy, by1 = prior_box.y1() * sy;
  std::array<bool, 9> mask{};
  for (int t = 0; t < 9; ++t) {
    const double tx0 = (t % 3) * static_cast<double>(tile_size);
    const double ty0 = (t / 3) * static_cast<double>(tile_size);
    const double ow = std::max(0.0, std::min(bx1, tx0 + tile_size) - std::max(bx0, tx0));
    const double oh = std::max(0.0, std::min(by1, ty0 + tile_size) - std::max(by0, ty0));
    mask[t] = ow * oh >= 0.25 * tile_size * tile_size;
  }
  return mask;
}

// Prior view: fixed square centered on the (smoothed) a*-channel maximum,
// one T_p sample, then resize to view_size. Returns the pre-transform box in
// original-image coordinates.
inline std::pair<RgbImage, CropBox> make_prior_view(
    const RgbImage& img, const ViewConfig& cfg, std::uint64_t seed,
    std::optional<PixelLoc> cached_center = std::nullopt) {
  Rng rng(seed);
  PixelLoc center;
  if (cfg.random_prior) {
    center.x = static_cast<int>(rng.uniform_int(0, img.width - 1));
    center.y = static_cast<int>(rng.uniform_int(0, img.height - 1));
  } else if (cached_center) {
    center = *cached_center;
  } else {
    center = argmax_a_star(srgb_to_cielab(img), cfg.smooth_radius);
  }
  auto [crop, box] = crop_square(img, center.x, center.y, cfg.crop_size);
  const TransformParams tp = sample_transform(TransformSetKind::prior, rng);
  RgbImage view = resize_bilinear(apply_transform(crop, tp), cfg.view_size, cfg.view_size);
  return {std::move(view), box};
}

// Deterministic prior view for evaluation/export: argmax crop, no
// augmentation.
inline RgbImage deterministic_prior_view(const RgbImage& img, const ViewConfig& cfg,
                                         std::optional<PixelLoc> cached_center = std::nullopt) {
  const PixelLoc center =
      cached_center ? *cached_center : argmax_a_star(srgb_to_cielab(img), cfg.smooth_radius);
  auto [crop, box] = crop_square(img, center.x, center.y, cfg.crop_size);
  (void)box;
  return resize_bilinear(crop, cfg.view_size, cfg.view_size);
}

struct DistortedView {
  std::array<RgbImage, 9> tiles;  // permuted order
  std::array<int, 9> permutation;
  std::array<bool, 9> shared_mask;
};

// Jigsaw view: resize to the 3x3 tiling square, augment shared tiles with
// T_p and the rest with T_d, then return the tiles in a uniformly random
// permuted order.
inline DistortedView make_distorted_view(const RgbImage& img, const CropBox& prior_box,
                                         const ViewConfig& cfg, std::uint64_t seed) {
  const int S = 3 * cfg.tile_size;
  const RgbImage resized = resize_bilinear(img, S, S);
  DistortedView out;
  out.shared_mask = compute_shared_mask(prior_box, img.height, img.width, cfg.tile_size);
  std::array<RgbImage, 9> tiles = tile_grid(resized);

  Rng rng(seed);
  for (int t = 0; t < 9; ++t) {
    const auto kind = out.shared_mask[t] ? TransformSetKind::prior : TransformSetKind::distort;
    tiles[t] = apply_transform(tiles[t], sample_transform(kind, rng));
  }
  for (int t = 0; t < 9; ++t) out.permutation[t] = t;
  rng.shuffle(out.permutation);
  for (int t = 0; t < 9; ++t) out.tiles[t] = std::move(tiles[out.permutation[t]]);
  return out;
}

// All three channels set to exactly 0 inside the box; the transform is
// applied afterwards, so geometric ops move the hole with the image.
inline RgbImage zero_prior_region(const RgbImage& img, const CropBox& prior_box) {
  require(prior_box.x0() >= 0 && prior_box.y0() >= 0 && prior_box.x1() <= img.width &&
              prior_box.y1() <= img.height,
          "zero_prior_region: prior_box must lie within the image");
  RgbImage blanked = img;
  for (int y = prior_box.y0(); y < prior_box.y1(); ++y) {
    float* row = blanked.px(y, prior_box.x0());
    std::fill(row, row + static_cast<std::size_t>(prior_box.side) * 3, 0.0f);
  }
  return blanked;
}

// WIN view: zero out the prior-box pixels of the full image, apply one T_win
// sample, resize to view_size.
inline RgbImage make_win_view(const RgbImage& img, const CropBox& prior_box,
                              const ViewConfig& cfg, std::uint64_t seed) {
  RgbImage blanked = zero_prior_region(img, prior_box);
  Rng rng(seed);
  const TransformParams tw = sample_transform(TransformSetKind::win, rng);
  return resize_bilinear(apply_transform(blanked, tw), cfg.view_size, cfg.view_size);
}

// Composes the three constructors with independent sub-seeds, so disabling
// the WIN view leaves v_p and v_d untouched.
inline ViewBundle build_view_bundle(const RgbImage& img, const ViewConfig& cfg,
                                    std::int64_t instance_id, std::uint64_t seed,
                                    std::optional<PixelLoc> cached_center = std::nullopt) {
  ViewBundle bundle;
  bundle.instance_id = instance_id;
  bundle.seed = seed;

  auto [vp, box] = make_prior_view(img, cfg, derive_seed(seed, detail::kPriorStream), cached_center);
  bundle.v_p = std::move(vp);
  bundle.prior_box = box;

  DistortedView dv =
      make_distorted_view(img, bundle.prior_box, cfg, derive_seed(seed, detail::kDistortStream));
  bundle.v_d_tiles = std::move(dv.tiles);
  bundle.permutation = dv.permutation;
  bundle.shared_mask = dv.shared_mask;

  if (cfg.with_win) {
    bundle.v_win = make_win_view(img, bundle.prior_box, cfg, derive_seed(seed, detail::kWinStream));
    bundle.has_win = true;
  }
  return bundle;
}

}  // namespace pgcon
