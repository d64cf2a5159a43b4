#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgcon/image.hpp"
#include "pgcon/image_io.hpp"
#include "pgcon/rng.hpp"

namespace pgcon {

// Synthetic multi-factor corpus: pinkish low-frequency backgrounds, non-red
// distractors (bright bubbles, dark debris, greenish fluid) and one local red
// anomaly per non-normal image. Classes:
//   0 normal, 1 soft disc, 2 ring with pale center, 3 square speckle patch.
struct SynthSpec {
  int image_size = 240;
  int n_images = 0;
  std::array<double, 4> class_mix{0.25, 0.25, 0.25, 0.25};
  double anomaly_radius_min = 12.0;
  double anomaly_radius_max = 30.0;
  // Required a* headroom of the anomaly over everything else in the image.
  // The default isolates the learning mechanism from prior failure; "hard
  // mode" lowers it to 5.
  double a_star_margin = 15.0;
  int max_distractors = 4;
  std::uint64_t seed = 0;
  bool labeled = true;

  void validate() const {
    require(image_size >= 32, "SynthSpec: image_size must be >= 32");
    require(n_images >= 1, "SynthSpec: n_images must be >= 1");
    double sum = 0.0;
    for (double p : class_mix) {
      require(p >= 0.0, "SynthSpec: class_mix entries must be >= 0");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ConfigError("SynthSpec: class_mix must sum to 1 (got " + std::to_string(sum) + ")");
    require(anomaly_radius_min > 0 && anomaly_radius_max >= anomaly_radius_min,
            "SynthSpec: invalid anomaly radius range");
    require(anomaly_radius_max < image_size / 4.0,
            "SynthSpec: anomaly radius must stay below image_size/4");
    require(max_distractors >= 0, "SynthSpec: max_distractors must be >= 0");
  }
};

struct SynthRecord {
  RgbImage image;
  int label = 0;
  std::optional<CropBox> anomaly_box;
  std::vector<CropBox> distractor_boxes;
};

struct ValidationFindings {
  bool pass = false;
  bool argmax_in_box = false;
  double a_margin = 0.0;  // max a* inside box minus max a* outside
  std::string message;
};

namespace synth_detail {

inline float smooth01(float t) {
  t = std::clamp(t, 0.0f, 1.0f);
  return t * t * (3.0f - 2.0f * t);
}

// Bilinearly upsampled coarse grid, one channel of low-frequency noise.
inline std::vector<float> value_noise(int size, int grid, float amp, Rng& rng) {
  std::vector<float> coarse(static_cast<std::size_t>(grid) * grid);
  for (float& v : coarse) v = static_cast<float>(rng.uniform(-amp, amp));
  std::vector<float> out(static_cast<std::size_t>(size) * size);
  const float scale = static_cast<float>(grid - 1) / static_cast<float>(size - 1);
  for (int y = 0; y < size; ++y) {
    const float fy = y * scale;
    const int y0 = std::min(grid - 2, static_cast<int>(fy));
    const float wy = fy - y0;
    for (int x = 0; x < size; ++x) {
      const float fx = x * scale;
      const int x0 = std::min(grid - 2, static_cast<int>(fx));
      const float wx = fx - x0;
      const float v00 = coarse[y0 * grid + x0], v01 = coarse[y0 * grid + x0 + 1];
      const float v10 = coarse[(y0 + 1) * grid + x0], v11 = coarse[(y0 + 1) * grid + x0 + 1];
      out[static_cast<std::size_t>(y) * size + x] =
          (v00 * (1 - wx) + v01 * wx) * (1 - wy) + (v10 * (1 - wx) + v11 * wx) * wy;
    }
  }
  return out;
}

inline void blend_px(float* px, float r, float g, float b, float alpha) {
  px[0] += alpha * (r - px[0]);
  px[1] += alpha * (g - px[1]);
  px[2] += alpha * (b - px[2]);
}

inline double pixel_a_star(float r, float g, float b) {
  RgbImage one(1, 1);
  one.data = {r, g, b};
  return srgb_to_cielab(one).a[0];
}

// Smallest mix toward the strong-red endpoint whose a* clears the target.
inline std::array<float, 3> pick_red(double target_a, double t0) {
  const std::array<float, 3> lo{0.72f, 0.30f, 0.30f};
  const std::array<float, 3> hi{0.86f, 0.02f, 0.04f};
  for (double t = t0; t <= 1.0 + 1e-9; t += 0.05) {
    const float tt = static_cast<float>(std::min(t, 1.0));
    std::array<float, 3> c{lo[0] + tt * (hi[0] - lo[0]), lo[1] + tt * (hi[1] - lo[1]),
                           lo[2] + tt * (hi[2] - lo[2])};
    if (pixel_a_star(c[0], c[1], c[2]) >= target_a) return c;
  }
  return hi;
}

inline double max_a_star(const RgbImage& img) {
  const LabPlanes lab = srgb_to_cielab(img);
  double mx = -1e300;
  for (double v : lab.a) mx = std::max(mx, v);
  return mx;
}

inline SynthRecord generate_one(const SynthSpec& spec, int label, std::uint64_t seed) {
  const int S = spec.image_size;
  Rng rng(seed);
  SynthRecord rec;
  rec.label = label;
  RgbImage& img = rec.image;
  img = RgbImage(S, S);

  // mucosa-toned background with low-frequency structure
  const float base_r = static_cast<float>(rng.uniform(0.66, 0.84));
  const float base_g = static_cast<float>(rng.uniform(0.44, 0.60));
  const float base_b = std::clamp(base_g + static_cast<float>(rng.uniform(-0.08, 0.04)), 0.32f, 0.62f);
  auto noise_r = value_noise(S, 5, 0.05f, rng);
  auto noise_g = value_noise(S, 5, 0.05f, rng);
  auto noise_b = value_noise(S, 5, 0.05f, rng);
  const float lx = static_cast<float>(rng.uniform(0.0, S));
  const float ly = static_cast<float>(rng.uniform(0.0, S));
  const float vig = static_cast<float>(rng.uniform(0.10, 0.35));
  const float diag = std::sqrt(2.0f) * S;
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * S + x;
      const float d = std::sqrt((x - lx) * (x - lx) + (y - ly) * (y - ly)) / diag;
      const float illum = 1.0f - vig * d;
      float* px = img.px(y, x);
      px[0] = (base_r + noise_r[i]) * illum;
      px[1] = (base_g + noise_g[i]) * illum;
      px[2] = (base_b + noise_b[i]) * illum;
    }

  // greenish fluid overlay (negative a* shift)
  if (rng.bernoulli(0.4)) {
    const float fx = static_cast<float>(rng.uniform(0.2, 0.8)) * S;
    const float fy = static_cast<float>(rng.uniform(0.2, 0.8)) * S;
    const float rx = static_cast<float>(rng.uniform(0.25, 0.55)) * S;
    const float ry = static_cast<float>(rng.uniform(0.25, 0.55)) * S;
    const float shift = static_cast<float>(rng.uniform(0.04, 0.10));
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const float dx = (x - fx) / rx, dy = (y - fy) / ry;
        const float a = smooth01(1.0f - (dx * dx + dy * dy));
        if (a <= 0.0f) continue;
        float* px = img.px(y, x);
        px[0] -= a * shift;
        px[1] += a * shift * 0.6f;
      }
  }

  // non-red distractors
  const int n_distractors = static_cast<int>(rng.uniform_int(0, spec.max_distractors));
  for (int d = 0; d < n_distractors; ++d) {
    const bool bubble = rng.bernoulli(0.5);
    const float rad = static_cast<float>(rng.uniform(0.025, 0.08)) * S;
    const float cx = static_cast<float>(rng.uniform(rad, S - rad));
    const float cy = static_cast<float>(rng.uniform(rad, S - rad));
    const float alpha_max = static_cast<float>(rng.uniform(0.5, 0.85));
    const int x0 = std::max(0, static_cast<int>(cx - rad - 1));
    const int x1 = std::min(S - 1, static_cast<int>(cx + rad + 1));
    const int y0 = std::max(0, static_cast<int>(cy - rad - 1));
    const int y1 = std::min(S - 1, static_cast<int>(cy + rad + 1));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const float dist = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
        const float a = alpha_max * smooth01((rad - dist) / (0.35f * rad));
        if (a <= 0.0f) continue;
        if (bubble)
          blend_px(img.px(y, x), 0.91f, 0.90f, 0.87f, a);
        else
          blend_px(img.px(y, x), 0.22f, 0.16f, 0.12f, a);
      }
    const int side = static_cast<int>(std::ceil(2 * rad));
    rec.distractor_boxes.push_back(
        CropBox{static_cast<int>(cx), static_cast<int>(cy), side});
  }

  img.clamp01();

  if (label != 0) {
    const double R = rng.uniform(spec.anomaly_radius_min, spec.anomaly_radius_max);
    const int side = static_cast<int>(std::ceil(2.0 * R)) + 2;
    const int half = side / 2;
    const int cx = static_cast<int>(rng.uniform_int(half + 1, S - (side - half) - 1));
    const int cy = static_cast<int>(rng.uniform_int(half + 1, S - (side - half) - 1));
    const double bg_max = max_a_star(img);
    const double target = bg_max + spec.a_star_margin + 3.0;
    const auto red = pick_red(target, rng.uniform(0.2, 0.5));
    const float Rf = static_cast<float>(R);

    if (label == 1) {  // soft-edged disc
      for (int y = cy - half; y <= cy + half; ++y)
        for (int x = cx - half; x <= cx + half; ++x) {
          const float dist = std::sqrt(static_cast<float>((x - cx) * (x - cx) + (y - cy) * (y - cy)));
          const float a = smooth01((Rf - dist) / (0.3f * Rf));
          if (a > 0.0f) blend_px(img.px(y, x), red[0], red[1], red[2], a);
        }
    } else if (label == 2) {  // ring with pale center
      const float rc = 0.70f * Rf;
      const float w = 0.30f * Rf;
      for (int y = cy - half; y <= cy + half; ++y)
        for (int x = cx - half; x <= cx + half; ++x) {
          const float dist = std::sqrt(static_cast<float>((x - cx) * (x - cx) + (y - cy) * (y - cy)));
          const float a = smooth01(1.0f - std::abs(dist - rc) / w);
          if (a > 0.0f) blend_px(img.px(y, x), red[0], red[1], red[2], a);
          if (dist < rc - w * 0.5f) {
            const float pale = smooth01((rc - w * 0.5f - dist) / (0.5f * rc));
            blend_px(img.px(y, x), 0.93f, 0.82f, 0.78f, 0.55f * pale);
          }
        }
    } else {  // high-frequency speckle patch
      Rng speckle(derive_seed(seed, stream_tag("speckle")));
      const int x0 = cx - half, y0 = cy - half;
      for (int y = y0; y < y0 + side; ++y)
        for (int x = x0; x < x0 + side; ++x) {
          if (!speckle.bernoulli(0.45)) continue;
          const float edge = std::min({x - x0, y - y0, x0 + side - 1 - x, y0 + side - 1 - y}) / 2.0f;
          const float a = (0.75f + 0.25f * static_cast<float>(speckle.uniform())) *
                          smooth01(edge);
          blend_px(img.px(y, x), red[0], red[1], red[2], a);
        }
    }
    img.clamp01();
    rec.anomaly_box = CropBox{cx, cy, side};
  }
  return rec;
}

}  // namespace synth_detail

// Checks the record invariants and the a*-dominance property used by the
// redness prior: the smoothed argmax must fall inside the anomaly box and the
// in-box a* maximum must clear the rest of the image by `margin`.
inline ValidationFindings validate_record(const SynthRecord& rec, double margin) {
  ValidationFindings out;
  if ((rec.label == 0) != !rec.anomaly_box.has_value()) {
    out.message = "label/anomaly_box mismatch";
    return out;
  }
  if (rec.label == 0) {
    out.pass = true;
    out.argmax_in_box = false;
    return out;
  }
  const CropBox& box = *rec.anomaly_box;
  if (box.x0() < 0 || box.y0() < 0 || box.x1() > rec.image.width || box.y1() > rec.image.height) {
    out.message = "anomaly_box outside image";
    return out;
  }
  const LabPlanes lab = srgb_to_cielab(rec.image);
  const PixelLoc loc = argmax_a_star(lab, 2);
  out.argmax_in_box = box.contains(loc.x, loc.y);
  double in_max = -1e300, out_max = -1e300;
  for (int y = 0; y < lab.height; ++y)
    for (int x = 0; x < lab.width; ++x) {
      const double v = lab.a[lab.idx(y, x)];
      if (box.contains(x, y))
        in_max = std::max(in_max, v);
      else
        out_max = std::max(out_max, v);
    }
  out.a_margin = in_max - out_max;
  out.pass = out.argmax_in_box && out.a_margin >= margin;
  if (!out.pass) out.message = "a*-dominance violated";
  return out;
}

// Deterministic generation; each image retries with a derived seed until it
// passes the a*-dominance gate (non-red distractors make retries rare).
inline std::vector<SynthRecord> generate_dataset(const SynthSpec& spec) {
  spec.validate();

  // exact per-class quotas: floor allocation, remainder by largest fraction
  std::array<int, 4> counts{};
  std::array<double, 4> frac{};
  int assigned = 0;
  for (int c = 0; c < 4; ++c) {
    const double exact = spec.class_mix[c] * spec.n_images;
    counts[c] = static_cast<int>(exact);
    frac[c] = exact - counts[c];
    assigned += counts[c];
  }
  for (int r = assigned; r < spec.n_images; ++r) {
    int best = 0;
    for (int c = 1; c < 4; ++c)
      if (frac[c] > frac[best]) best = c;
    ++counts[best];
    frac[best] = -1.0;
  }
  std::vector<int> labels;
  labels.reserve(spec.n_images);
  for (int c = 0; c < 4; ++c) labels.insert(labels.end(), counts[c], c);
  Rng label_rng(derive_seed(spec.seed, stream_tag("labels")));
  label_rng.shuffle(labels);

  std::vector<SynthRecord> records;
  records.reserve(spec.n_images);
  for (int i = 0; i < spec.n_images; ++i) {
    const std::uint64_t base = derive_seed(spec.seed, stream_tag("image"), static_cast<std::uint64_t>(i));
    SynthRecord rec;
    bool ok = false;
    for (int attempt = 0; attempt < 25 && !ok; ++attempt) {
      rec = synth_detail::generate_one(spec, labels[i],
                                       derive_seed(base, static_cast<std::uint64_t>(attempt)));
      ok = validate_record(rec, spec.a_star_margin).pass;
    }
    if (!ok) throw NumericError("generate_dataset: could not satisfy a*-dominance for image " +
                                std::to_string(i));
    records.push_back(std::move(rec));
  }
  return records;
}

// -- disk layout --------------------------------------------------------
// labeled:   root/class_<label>/img_<id>.png  + manifest.json
// unlabeled: root/img_<id>.png                + manifest.json (labels -1)

inline nlohmann::json box_to_json(const CropBox& b) {
  return nlohmann::json{{"cx", b.cx}, {"cy", b.cy}, {"side", b.side}};
}

inline CropBox box_from_json(const nlohmann::json& j) {
  return CropBox{j.at("cx").get<int>(), j.at("cy").get<int>(), j.at("side").get<int>()};
}

inline void write_dataset(const std::string& root, const std::vector<SynthRecord>& records,
                          const SynthSpec& spec) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create dataset directory: " + root);

  nlohmann::json manifest;
  manifest["image_size"] = spec.image_size;
  manifest["n_images"] = spec.n_images;
  manifest["seed"] = spec.seed;
  manifest["class_mix"] = spec.class_mix;
  manifest["a_star_margin"] = spec.a_star_margin;
  manifest["labeled"] = spec.labeled;
  nlohmann::json recs = nlohmann::json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const SynthRecord& r = records[i];
    std::string rel;
    if (spec.labeled) {
      const std::string sub = "class_" + std::to_string(r.label);
      fs::create_directories(fs::path(root) / sub, ec);
      if (ec) throw IoError("cannot create dataset directory: " + root);
      rel = sub + "/img_" + std::to_string(i) + ".png";
    } else {
      rel = "img_" + std::to_string(i) + ".png";
    }
    write_png((fs::path(root) / rel).string(), r.image);
    nlohmann::json jr;
    jr["id"] = i;
    jr["file"] = rel;
    jr["label"] = spec.labeled ? r.label : -1;
    jr["anomaly_box"] = r.anomaly_box ? box_to_json(*r.anomaly_box) : nlohmann::json(nullptr);
    nlohmann::json boxes = nlohmann::json::array();
    for (const CropBox& b : r.distractor_boxes) boxes.push_back(box_to_json(b));
    jr["distractor_boxes"] = boxes;
    recs.push_back(std::move(jr));
  }
  manifest["records"] = recs;
  std::ofstream os(fs::path(root) / "manifest.json");
  if (!os) throw IoError("cannot write manifest under: " + root);
  os << manifest.dump(2) << "\n";
}

}  // namespace pgcon
