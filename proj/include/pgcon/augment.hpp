#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pgcon/image.hpp"
#include "pgcon/rng.hpp"

namespace pgcon {

// The three transform sets used by view construction. T_p is benign and
// invariance-promoting, T_d deliberately destroys local information, T_win is
// mild. Parameter ranges live in sample_transform below.
enum class TransformSetKind { prior, distort, win };

// One realized transform: every random decision is drawn at sample time, so
// applying the same params twice is deterministic.
struct TransformParams {
  // random resized crop (area fraction; u/v pick the window position)
  bool do_rrc = false;
  double rrc_scale = 1.0;
  double rrc_u = 0.0;
  double rrc_v = 0.0;

  bool hflip = false;
  bool vflip = false;

  // color jitter; factor 1 / hue 0 is the identity
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;

  bool do_blur = false;
  double blur_sigma = 0.0;
  bool do_noise = false;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
  bool do_gray = false;
  bool do_channel_perm = false;
  int channel_perm = 0;  // index into the 6 permutations of (r,g,b)

  static TransformParams identity() { return {}; }
};

// Draw one transform from the given set. The draw order is fixed per kind and
// gated values are always drawn, so a rejected coin flip never shifts the
// stream for later fields.
inline TransformParams sample_transform(TransformSetKind kind, Rng& rng) {
  TransformParams p;
  switch (kind) {
    case TransformSetKind::prior:
      p.do_rrc = true;
      p.rrc_scale = rng.uniform(0.6, 1.0);
      p.rrc_u = rng.uniform();
      p.rrc_v = rng.uniform();
      p.hflip = rng.bernoulli(0.5);
      p.vflip = rng.bernoulli(0.5);
      p.brightness = rng.uniform(0.6, 1.4);
      p.contrast = rng.uniform(0.6, 1.4);
      p.saturation = rng.uniform(0.6, 1.4);
      p.hue = rng.uniform(-0.1, 0.1);
      break;
    case TransformSetKind::distort:
      p.do_blur = true;
      p.blur_sigma = rng.uniform(1.0, 3.0);
      p.do_noise = true;
      p.noise_sigma = rng.uniform(0.05, 0.15);
      p.noise_seed = rng.next_u64();
      p.do_gray = rng.bernoulli(0.3);
      p.do_channel_perm = rng.bernoulli(0.3);
      p.channel_perm = static_cast<int>(rng.uniform_int(0, 5));
      p.brightness = rng.uniform(0.4, 1.6);
      p.contrast = rng.uniform(0.4, 1.6);
      p.saturation = rng.uniform(0.4, 1.6);
      break;
    case TransformSetKind::win:
      p.hflip = rng.bernoulli(0.5);
      p.vflip = rng.bernoulli(0.5);
      p.brightness = rng.uniform(0.8, 1.2);
      p.contrast = rng.uniform(0.8, 1.2);
      p.saturation = rng.uniform(0.8, 1.2);
      break;
  }
  return p;
}

namespace detail {

inline void flip_horizontal(RgbImage& img) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width / 2; ++x)
      for (int c = 0; c < 3; ++c)
        std::swap(img.px(y, x)[c], img.px(y, img.width - 1 - x)[c]);
}

inline void flip_vertical(RgbImage& img) {
  for (int y = 0; y < img.height / 2; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        std::swap(img.px(y, x)[c], img.px(img.height - 1 - y, x)[c]);
}

inline float luma601(const float* px) {
  return 0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2];
}

inline void color_jitter(RgbImage& img, const TransformParams& p) {
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  if (p.brightness != 1.0)
    for (float& v : img.data) v *= static_cast<float>(p.brightness);
  if (p.contrast != 1.0) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += luma601(&img.data[3 * i]);
    mean /= static_cast<double>(n);
    const float m = static_cast<float>(mean), fc = static_cast<float>(p.contrast);
    for (float& v : img.data) v = m + fc * (v - m);
  }
  if (p.saturation != 1.0) {
    const float fs = static_cast<float>(p.saturation);
    for (std::size_t i = 0; i < n; ++i) {
      float* px = &img.data[3 * i];
      const float l = luma601(px);
      for (int c = 0; c < 3; ++c) px[c] = l + fs * (px[c] - l);
    }
  }
  if (p.hue != 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      float* px = &img.data[3 * i];
      const float r = px[0], g = px[1], b = px[2];
      const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
      const float d = mx - mn;
      float h = 0.0f;
      if (d > 0.0f) {
        if (mx == r)
          h = std::fmod((g - b) / d, 6.0f);
        else if (mx == g)
          h = (b - r) / d + 2.0f;
        else
          h = (r - g) / d + 4.0f;
        h /= 6.0f;
        if (h < 0.0f) h += 1.0f;
      }
      const float s = mx > 0.0f ? d / mx : 0.0f;
      const float v = mx;
      h = std::fmod(h + static_cast<float>(p.hue) + 1.0f, 1.0f);
      const float hh = h * 6.0f;
      const int sect = std::min(5, static_cast<int>(hh));
      const float f = hh - sect;
      const float pv = v * (1.0f - s);
      const float qv = v * (1.0f - s * f);
      const float tv = v * (1.0f - s * (1.0f - f));
      switch (sect) {
        case 0: px[0] = v; px[1] = tv; px[2] = pv; break;
        case 1: px[0] = qv; px[1] = v; px[2] = pv; break;
        case 2: px[0] = pv; px[1] = v; px[2] = tv; break;
        case 3: px[0] = pv; px[1] = qv; px[2] = v; break;
        case 4: px[0] = tv; px[1] = pv; px[2] = v; break;
        default: px[0] = v; px[1] = pv; px[2] = qv; break;
      }
    }
  }
}

inline void gaussian_blur(RgbImage& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[i + radius] = static_cast<float>(w);
    sum += w;
  }
  for (float& w : kernel) w = static_cast<float>(w / sum);

  RgbImage tmp(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float acc[3] = {0, 0, 0};
      for (int i = -radius; i <= radius; ++i) {
        const int xx = std::clamp(x + i, 0, img.width - 1);
        const float* src = img.px(y, xx);
        const float w = kernel[i + radius];
        for (int c = 0; c < 3; ++c) acc[c] += w * src[c];
      }
      float* dst = tmp.px(y, x);
      for (int c = 0; c < 3; ++c) dst[c] = acc[c];
    }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float acc[3] = {0, 0, 0};
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, img.height - 1);
        const float* src = tmp.px(yy, x);
        const float w = kernel[i + radius];
        for (int c = 0; c < 3; ++c) acc[c] += w * src[c];
      }
      float* dst = img.px(y, x);
      for (int c = 0; c < 3; ++c) dst[c] = acc[c];
    }
}

inline constexpr int kChannelPerms[6][3] = {
    {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};

}  // namespace detail

// Applies a realized transform. Output channel values are re-clamped to
// [0, 1] so transformed images remain valid inputs.
inline RgbImage apply_transform(const RgbImage& img, const TransformParams& p) {
  RgbImage out = img;

  if (p.do_rrc) {
    const double side_frac = std::sqrt(p.rrc_scale);
    const int ch = std::max(1, static_cast<int>(std::lround(img.height * side_frac)));
    const int cw = std::max(1, static_cast<int>(std::lround(img.width * side_frac)));
    if (ch < img.height || cw < img.width) {
      const int y0 = static_cast<int>(p.rrc_v * (img.height - ch + 1));
      const int x0 = static_cast<int>(p.rrc_u * (img.width - cw + 1));
      RgbImage crop(ch, cw);
      for (int y = 0; y < ch; ++y) {
        const float* src = out.px(y0 + y, x0);
        std::copy(src, src + static_cast<std::size_t>(cw) * 3, crop.px(y, 0));
      }
      out = resize_bilinear(crop, img.height, img.width);
    }
  }

  if (p.hflip) detail::flip_horizontal(out);
  if (p.vflip) detail::flip_vertical(out);

  if (p.brightness != 1.0 || p.contrast != 1.0 || p.saturation != 1.0 || p.hue != 0.0)
    detail::color_jitter(out, p);

  if (p.do_blur) detail::gaussian_blur(out, p.blur_sigma);

  if (p.do_noise) {
    Rng noise(p.noise_seed);
    const float sigma = static_cast<float>(p.noise_sigma);
    for (float& v : out.data) v += sigma * static_cast<float>(noise.normal());
  }

  if (p.do_gray) {
    const std::size_t n = static_cast<std::size_t>(out.height) * out.width;
    for (std::size_t i = 0; i < n; ++i) {
      float* px = &out.data[3 * i];
      const float l = detail::luma601(px);
      px[0] = px[1] = px[2] = l;
    }
  }

  if (p.do_channel_perm) {
    const int* perm = detail::kChannelPerms[p.channel_perm];
    const std::size_t n = static_cast<std::size_t>(out.height) * out.width;
    for (std::size_t i = 0; i < n; ++i) {
      float* px = &out.data[3 * i];
      const float r = px[0], g = px[1], b = px[2];
      const float src[3] = {r, g, b};
      for (int c = 0; c < 3; ++c) px[c] = src[perm[c]];
    }
  }

  out.clamp01();
  return out;
}

}  // namespace pgcon
