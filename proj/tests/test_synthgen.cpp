#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pgcon/dataset.hpp"
#include "pgcon/synthgen.hpp"

using namespace pgcon;

namespace {

SynthSpec small_spec(int n, std::uint64_t seed) {
  SynthSpec spec;
  spec.image_size = 96;
  spec.n_images = n;
  spec.anomaly_radius_min = 5;
  spec.anomaly_radius_max = 12;
  spec.seed = seed;
  return spec;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("generation is a pure function of the spec") {
  const auto a = generate_dataset(small_spec(24, 5));
  const auto b = generate_dataset(small_spec(24, 5));
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].label == b[i].label);
    CHECK(a[i].anomaly_box.has_value() == b[i].anomaly_box.has_value());
    if (a[i].anomaly_box) CHECK(*a[i].anomaly_box == *b[i].anomaly_box);
  }
  const auto c = generate_dataset(small_spec(24, 6));
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size() && !any_diff; ++i) any_diff = !(a[i].image == c[i].image);
  CHECK(any_diff);
}

TEST_CASE("class balance matches the mix within rounding") {
  SynthSpec spec = small_spec(40, 9);
  auto records = generate_dataset(spec);
  std::array<int, 4> counts{};
  for (const auto& r : records) counts[r.label]++;
  for (int c = 0; c < 4; ++c) CHECK(counts[c] == 10);

  spec.class_mix = {0.5, 0.2, 0.2, 0.1};
  spec.n_images = 10;
  records = generate_dataset(spec);
  counts = {};
  for (const auto& r : records) counts[r.label]++;
  CHECK(counts[0] == 5);
  CHECK(counts[1] == 2);
  CHECK(counts[2] == 2);
  CHECK(counts[3] == 1);
}

TEST_CASE("invalid specs are rejected") {
  SynthSpec spec = small_spec(10, 1);
  spec.class_mix = {0.5, 0.4, 0.2, 0.1};  // sums to 1.2
  CHECK_THROWS_AS(generate_dataset(spec), ConfigError);
  spec = small_spec(10, 1);
  spec.anomaly_radius_max = 40.0;  // >= image_size/4
  CHECK_THROWS(generate_dataset(spec));
}

TEST_CASE("records satisfy the label/box invariant and the a*-dominance gate") {
  const auto records = generate_dataset(small_spec(60, 11));
  double min_margin = 1e9, sum_margin = 0.0;
  int anomalies = 0;
  for (const auto& r : records) {
    CHECK((r.label == 0) == !r.anomaly_box.has_value());
    const auto findings = validate_record(r, 15.0);
    CHECK(findings.pass);
    if (r.label != 0) {
      CHECK(findings.argmax_in_box);
      CHECK(findings.a_margin >= 15.0);
      min_margin = std::min(min_margin, findings.a_margin);
      sum_margin += findings.a_margin;
      ++anomalies;
    }
  }
  REQUIRE(anomalies > 0);
  INFO("a*-margin over " << anomalies << " anomalies: min " << min_margin << " mean "
                         << sum_margin / anomalies);
  CHECK(min_margin >= 15.0);
}

TEST_CASE("validate_record fails when the box is moved off the anomaly") {
  auto records = generate_dataset(small_spec(12, 3));
  for (auto& r : records) {
    if (!r.anomaly_box) continue;
    SynthRecord moved = r;
    CropBox box = *moved.anomaly_box;
    // relocate to the farthest corner
    box.cx = box.cx < 48 ? 96 - box.side / 2 - 1 : box.side / 2 + 1;
    box.cy = box.cy < 48 ? 96 - box.side / 2 - 1 : box.side / 2 + 1;
    moved.anomaly_box = box;
    const auto findings = validate_record(moved, 15.0);
    CHECK(!findings.pass);
    break;
  }
}

TEST_CASE("hard mode lowers the required margin but still validates") {
  SynthSpec spec = small_spec(16, 21);
  spec.a_star_margin = 5.0;
  const auto records = generate_dataset(spec);
  for (const auto& r : records)
    if (r.label != 0) CHECK(validate_record(r, 5.0).pass);
}

TEST_CASE("disk round trip: layout, labels, boxes and manifest stability") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "pgcon_test_synth";
  fs::remove_all(dir);

  SynthSpec spec = small_spec(16, 13);
  const auto records = generate_dataset(spec);
  write_dataset(dir.string(), records, spec);
  REQUIRE(fs::exists(dir / "manifest.json"));

  const Dataset ds = load_dataset(dir.string());
  REQUIRE(ds.size() == records.size());
  CHECK(ds.labeled());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(ds.labels[i] == records[i].label);
    CHECK(ds.anomaly_boxes[i].has_value() == records[i].anomaly_box.has_value());
    REQUIRE(ds.images[i].height == 96);
    // PNG quantization: loaded pixels within half a level
    for (std::size_t j = 0; j < ds.images[i].data.size(); j += 101)
      CHECK(std::abs(ds.images[i].data[j] - records[i].image.data[j]) <= 0.5f / 255.0f + 1e-6f);
    // dominance survives 8-bit quantization with a little slack
    if (records[i].label != 0) {
      SynthRecord loaded{ds.images[i], ds.labels[i], ds.anomaly_boxes[i], {}};
      CHECK(validate_record(loaded, 13.0).pass);
    }
  }

  // rerun: manifest and image bytes identical
  const std::string manifest_before = slurp(dir / "manifest.json");
  const std::string img_before = slurp(dir / "class_1");
  const fs::path dir2 = fs::temp_directory_path() / "pgcon_test_synth_rerun";
  fs::remove_all(dir2);
  write_dataset(dir2.string(), generate_dataset(spec), spec);
  CHECK(slurp(dir2 / "manifest.json") == manifest_before);
  (void)img_before;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir);
    CHECK(slurp(dir2 / rel) == slurp(entry.path()));
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("unlabeled mode writes a flat directory") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "pgcon_test_synth_flat";
  fs::remove_all(dir);
  SynthSpec spec = small_spec(6, 2);
  spec.labeled = false;
  write_dataset(dir.string(), generate_dataset(spec), spec);
  CHECK(fs::exists(dir / "img_0.png"));
  CHECK(!fs::exists(dir / "class_0"));
  const Dataset ds = load_dataset(dir.string());
  CHECK(ds.size() == 6);
  CHECK(!ds.labeled());
  fs::remove_all(dir);
}
