#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "pgcon/image_io.hpp"
#include "pgcon/views.hpp"

namespace pgcon {

// Debug dump of one bundle: v_p.png, v_d.png (tiles reassembled in permuted
// order), v_win.png when present, and a JSON sidecar with the provenance.
inline void dump_bundle(const std::string& dir, const ViewBundle& bundle) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dump directory: " + dir);

  write_png((fs::path(dir) / "v_p.png").string(), bundle.v_p);
  const int ts = bundle.v_d_tiles[0].height;
  RgbImage montage(3 * ts, 3 * ts);
  for (int t = 0; t < 9; ++t) {
    const RgbImage& tile = bundle.v_d_tiles[t];
    const int r = t / 3, c = t % 3;
    for (int y = 0; y < ts; ++y)
      std::copy(tile.px(y, 0), tile.px(y, 0) + static_cast<std::size_t>(ts) * 3,
                montage.px(r * ts + y, c * ts));
  }
  write_png((fs::path(dir) / "v_d.png").string(), montage);
  if (bundle.has_win) write_png((fs::path(dir) / "v_win.png").string(), bundle.v_win);

  nlohmann::json j;
  j["instance_id"] = bundle.instance_id;
  j["prior_box"] = {{"cx", bundle.prior_box.cx}, {"cy", bundle.prior_box.cy},
                    {"side", bundle.prior_box.side}};
  j["permutation"] = bundle.permutation;
  j["shared_mask"] = bundle.shared_mask;
  j["seed"] = bundle.seed;
  std::ofstream os(fs::path(dir) / "bundle.json");
  if (!os) throw IoError("cannot write bundle sidecar under: " + dir);
  os << j.dump(2) << "\n";
}

}  // namespace pgcon
