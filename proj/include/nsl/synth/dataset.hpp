#pragma once

// Dataset directory layout:
//   root/left/NNNN.png    8-bit RGB
//   root/right/NNNN.png   8-bit RGB
//   root/gt/NNNN.png      optional, 16-bit grayscale depth, metres = value / 256
//   root/calib.txt        key = value lines: baseline_m, focal_px, cx, cy
//   root/features/{left,right}/NNNN.nslt
//                         optional precomputed features ("fine", "coarse")

#include <filesystem>
#include <string>
#include <vector>

#include "nsl/synth/scene.hpp"

namespace nsl::synth {

inline constexpr double kDepthPngScale = 256.0;

// FormatError on missing or malformed keys, ConfigError on invalid values.
losses::StereoRig parse_calib(const std::string& text);
std::string format_calib(const losses::StereoRig& rig);

// Writes every item under root using the layout above. All items must share
// the rig of the first one (ConfigError otherwise).
void write_dataset(const std::filesystem::path& root, const std::vector<DatasetItem>& items);

// Index of a dataset directory; items are decoded on demand in lexicographic
// filename order.
class Dataset {
 public:
  // FormatError if root, left/, right/ or calib.txt is missing or the
  // calibration is malformed.
  explicit Dataset(const std::filesystem::path& root);

  std::size_t size() const { return stems_.size(); }
  const std::vector<std::string>& names() const { return stems_; }
  // Unpaired images, one line each.
  const std::vector<std::string>& skipped() const { return skipped_; }
  const losses::StereoRig& rig() const { return rig_; }

  // DimensionError when the two views differ in size.
  DatasetItem load(std::size_t index) const;

 private:
  std::filesystem::path root_;
  losses::StereoRig rig_;
  std::vector<std::string> stems_;
  std::vector<std::string> skipped_;
};

}  // namespace nsl::synth
