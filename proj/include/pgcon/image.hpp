#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "pgcon/common.hpp"

namespace pgcon {

// Interleaved RGB raster, channel values in [0, 1], row-major.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // height * width * 3

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0.0f) {
    require(h >= 1 && w >= 1, "RgbImage: dimensions must be positive");
  }

  static RgbImage filled(int h, int w, float r, float g, float b) {
    RgbImage img(h, w);
    for (std::size_t i = 0; i < img.data.size(); i += 3) {
      img.data[i] = r;
      img.data[i + 1] = g;
      img.data[i + 2] = b;
    }
    return img;
  }

  std::size_t idx(int y, int x) const {
    return (static_cast<std::size_t>(y) * width + x) * 3;
  }
  float* px(int y, int x) { return data.data() + idx(y, x); }
  const float* px(int y, int x) const { return data.data() + idx(y, x); }

  void clamp01() {
    for (float& v : data) v = std::clamp(v, 0.0f, 1.0f);
  }

  bool operator==(const RgbImage& o) const {
    return height == o.height && width == o.width && data == o.data;
  }
};

// CIELAB planes. Kept in double: the neutral-axis cancellation (a*=b*=0 for
// r=g=b) is asserted to 1e-9.
struct LabPlanes {
  int height = 0;
  int width = 0;
  std::vector<double> L, a, b;

  LabPlanes() = default;
  LabPlanes(int h, int w)
      : height(h),
        width(w),
        L(static_cast<std::size_t>(h) * w),
        a(L.size()),
        b(L.size()) {}

  std::size_t idx(int y, int x) const {
    return static_cast<std::size_t>(y) * width + x;
  }
};

// Axis-aligned square crop, stored as center + side. The box spans
// [x0, x0+side) x [y0, y0+side) with x0 = cx - side/2 (integer halving).
struct CropBox {
  int cx = 0;
  int cy = 0;
  int side = 0;

  int x0() const { return cx - side / 2; }
  int y0() const { return cy - side / 2; }
  int x1() const { return x0() + side; }
  int y1() const { return y0() + side; }

  static CropBox from_origin(int x0, int y0, int side) {
    return CropBox{x0 + side / 2, y0 + side / 2, side};
  }

  bool contains(int x, int y) const {
    return x >= x0() && x < x1() && y >= y0() && y < y1();
  }

  long long intersection_area(const CropBox& o) const {
    const long long w = std::min(x1(), o.x1()) - std::max(x0(), o.x0());
    const long long h = std::min(y1(), o.y1()) - std::max(y0(), o.y0());
    return (w > 0 && h > 0) ? w * h : 0;
  }

  bool intersects(const CropBox& o) const { return intersection_area(o) > 0; }

  bool operator==(const CropBox& o) const {
    return cx == o.cx && cy == o.cy && side == o.side;
  }
};

struct PixelLoc {
  int x = 0;  // column
  int y = 0;  // row
  bool operator==(const PixelLoc& o) const { return x == o.x && y == o.y; }
};

namespace detail {

inline double srgb_to_linear(double c) {
  return c > 0.04045 ? std::pow((c + 0.055) / 1.055, 2.4) : c / 12.92;
}

// sRGB -> XYZ (D65). Rows are normalized by their own sums so that neutral
// inputs (r=g=b) hit the white point exactly and a*, b* cancel to ~1e-13.
inline constexpr double kSrgbToXyz[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};
inline constexpr double kRowSum[3] = {
    kSrgbToXyz[0][0] + kSrgbToXyz[0][1] + kSrgbToXyz[0][2],
    kSrgbToXyz[1][0] + kSrgbToXyz[1][1] + kSrgbToXyz[1][2],
    kSrgbToXyz[2][0] + kSrgbToXyz[2][1] + kSrgbToXyz[2][2],
};

inline double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  constexpr double delta3 = delta * delta * delta;
  return t > delta3 ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

}  // namespace detail

// Pixelwise sRGB (IEC 61966-2-1) -> CIELAB under D65.
inline LabPlanes srgb_to_cielab(const RgbImage& img) {
  LabPlanes lab(img.height, img.width);
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = detail::srgb_to_linear(img.data[3 * i]);
    const double g = detail::srgb_to_linear(img.data[3 * i + 1]);
    const double b = detail::srgb_to_linear(img.data[3 * i + 2]);
    double ratio[3];
    for (int row = 0; row < 3; ++row) {
      ratio[row] = (detail::kSrgbToXyz[row][0] * r + detail::kSrgbToXyz[row][1] * g +
                    detail::kSrgbToXyz[row][2] * b) /
                   detail::kRowSum[row];
    }
    const double fx = detail::lab_f(ratio[0]);
    const double fy = detail::lab_f(ratio[1]);
    const double fz = detail::lab_f(ratio[2]);
    lab.L[i] = 116.0 * fy - 16.0;
    lab.a[i] = 500.0 * (fx - fy);
    lab.b[i] = 200.0 * (fy - fz);
  }
  return lab;
}

// Location of the maximum of the box-filtered a* plane. The filter window is
// (2*radius+1)^2 with coordinates clamped at the borders; ties break toward
// the smallest row-major index.
inline PixelLoc argmax_a_star(const LabPlanes& lab, int smooth_radius) {
  require(smooth_radius >= 0, "argmax_a_star: radius must be >= 0");
  const int h = lab.height, w = lab.width;
  PixelLoc best{0, 0};
  double best_val = -1e300;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      for (int dy = -smooth_radius; dy <= smooth_radius; ++dy) {
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -smooth_radius; dx <= smooth_radius; ++dx) {
          const int xx = std::clamp(x + dx, 0, w - 1);
          sum += lab.a[lab.idx(yy, xx)];
        }
      }
      if (sum > best_val) {
        best_val = sum;
        best = {x, y};
      }
    }
  }
  return best;
}

// Fixed-size square crop. A box that would stick out of the image is shifted
// (never shrunk) back inside; the returned CropBox records the placement.
inline std::pair<RgbImage, CropBox> crop_square(const RgbImage& img, int cx, int cy, int side) {
  if (side <= 0 || side > std::min(img.height, img.width))
    throw std::invalid_argument("crop exceeds image");
  int x0 = std::clamp(cx - side / 2, 0, img.width - side);
  int y0 = std::clamp(cy - side / 2, 0, img.height - side);
  RgbImage out(side, side);
  for (int y = 0; y < side; ++y) {
    const float* src = img.px(y0 + y, x0);
    std::copy(src, src + static_cast<std::size_t>(side) * 3, out.px(y, 0));
  }
  return {std::move(out), CropBox::from_origin(x0, y0, side)};
}

// Nine equal tiles in row-major order; tile t covers grid cell (t/3, t%3).
inline std::array<RgbImage, 9> tile_grid(const RgbImage& img) {
  if (img.height % 3 != 0 || img.width % 3 != 0)
    throw std::invalid_argument("tile_grid: dimensions must be divisible by 3");
  const int th = img.height / 3, tw = img.width / 3;
  std::array<RgbImage, 9> tiles;
  for (int t = 0; t < 9; ++t) {
    const int r = t / 3, c = t % 3;
    RgbImage tile(th, tw);
    for (int y = 0; y < th; ++y) {
      const float* src = img.px(r * th + y, c * tw);
      std::copy(src, src + static_cast<std::size_t>(tw) * 3, tile.px(y, 0));
    }
    tiles[t] = std::move(tile);
  }
  return tiles;
}

// Bilinear resampling with half-pixel centers; identity size returns a copy.
inline RgbImage resize_bilinear(const RgbImage& img, int out_h, int out_w) {
  require(out_h >= 1 && out_w >= 1, "resize: output dimensions must be >= 1");
  if (out_h == img.height && out_w == img.width) return img;
  RgbImage out(out_h, out_w);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      const float* p00 = img.px(y0, x0);
      const float* p01 = img.px(y0, x1);
      const float* p10 = img.px(y1, x0);
      const float* p11 = img.px(y1, x1);
      float* dst = out.px(oy, ox);
      for (int c = 0; c < 3; ++c) {
        const double top = p00[c] * (1.0 - wx) + p01[c] * wx;
        const double bot = p10[c] * (1.0 - wx) + p11[c] * wx;
        dst[c] = static_cast<float>(top * (1.0 - wy) + bot * wy);
      }
    }
  }
  return out;
}

}  // namespace pgcon
