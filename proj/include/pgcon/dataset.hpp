#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgcon/image.hpp"
#include "pgcon/image_io.hpp"
#include "pgcon/synthgen.hpp"
#include "pgcon/views.hpp"

namespace pgcon {

// In-memory corpus. Instance id == position == memory-bank row.
struct Dataset {
  std::vector<RgbImage> images;
  std::vector<int> labels;  // -1 when unlabeled
  std::vector<std::optional<CropBox>> anomaly_boxes;

  std::size_t size() const { return images.size(); }

  bool labeled() const {
    return std::any_of(labels.begin(), labels.end(), [](int l) { return l >= 0; });
  }

  int num_classes() const {
    int mx = -1;
    for (int l : labels) mx = std::max(mx, l);
    return mx + 1;
  }
};

// Reads the synth layout: manifest.json when present, otherwise a flat
// directory of images sorted by filename (all unlabeled).
inline Dataset load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  Dataset ds;
  const fs::path manifest_path = fs::path(root) / "manifest.json";
  if (fs::exists(manifest_path)) {
    std::ifstream is(manifest_path);
    if (!is) throw IoError("cannot open manifest: " + manifest_path.string());
    nlohmann::json manifest;
    try {
      is >> manifest;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    for (const auto& jr : manifest.at("records")) {
      const std::string rel = jr.at("file").get<std::string>();
      ds.images.push_back(read_image((fs::path(root) / rel).string()));
      ds.labels.push_back(jr.value("label", -1));
      if (jr.contains("anomaly_box") && !jr["anomaly_box"].is_null())
        ds.anomaly_boxes.push_back(box_from_json(jr["anomaly_box"]));
      else
        ds.anomaly_boxes.push_back(std::nullopt);
    }
  } else {
    if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(root)) {
      if (!entry.is_regular_file()) continue;
      const std::string ext = entry.path().extension().string();
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    for (const std::string& f : files) {
      ds.images.push_back(read_image(f));
      ds.labels.push_back(-1);
      ds.anomaly_boxes.push_back(std::nullopt);
    }
  }
  if (ds.images.empty()) throw IoError("dataset is empty: " + root);
  return ds;
}

// Prior-crop centers are a pure function of image + smooth radius; caching
// them once per corpus removes the per-epoch CIELAB cost.
inline std::vector<PixelLoc> compute_prior_centers(const Dataset& ds, int smooth_radius) {
  std::vector<PixelLoc> centers(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    centers[i] = argmax_a_star(srgb_to_cielab(ds.images[i]), smooth_radius);
  return centers;
}

}  // namespace pgcon
