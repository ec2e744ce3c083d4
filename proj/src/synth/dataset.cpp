#include "nsl/synth/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "nsl/diffmath/errors.hpp"
#include "nsl/synth/image_io.hpp"
#include "nsl/synth/keyvalue.hpp"

namespace nsl::synth {

namespace fs = std::filesystem;

namespace {

std::set<std::string> png_stems(const fs::path& dir) {
  std::set<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.insert(e.path().stem().string());
  }
  return out;
}

}  // namespace

losses::StereoRig parse_calib(const std::string& text) {
  std::map<std::string, double> v;
  for (const auto& [key, value] : parse_key_values(text)) {
    if (key != "baseline_m" && key != "focal_px" && key != "cx" && key != "cy") {
      throw FormatError("calib: unknown key '" + key + "'");
    }
    if (v.count(key)) throw FormatError("calib: duplicate key '" + key + "'");
    v[key] = to_double(key, value);
  }
  for (const char* key : {"baseline_m", "focal_px", "cx", "cy"}) {
    if (!v.count(key)) throw FormatError(std::string("calib: missing key '") + key + "'");
  }
  return losses::StereoRig::rectified(v["baseline_m"], v["focal_px"], v["cx"], v["cy"]);
}

std::string format_calib(const losses::StereoRig& rig) {
  std::ostringstream os;
  os.precision(17);
  os << "baseline_m = " << rig.baseline << "\nfocal_px = " << rig.focal << "\ncx = " << rig.cx << "\ncy = " << rig.cy
     << "\n";
  return os.str();
}

void write_dataset(const fs::path& root, const std::vector<DatasetItem>& items) {
  if (items.empty()) throw ConfigError("write_dataset: no items");
  const losses::StereoRig& rig = items.front().rig;
  for (const DatasetItem& it : items) {
    if (it.rig.baseline != rig.baseline || it.rig.focal != rig.focal || it.rig.cx != rig.cx || it.rig.cy != rig.cy) {
      throw ConfigError("write_dataset: items use different calibrations");
    }
  }
  fs::create_directories(root / "left");
  fs::create_directories(root / "right");
  std::ofstream(root / "calib.txt") << format_calib(rig);
  for (const DatasetItem& it : items) {
    write_rgb_png(root / "left" / (it.name + ".png"), it.left);
    write_rgb_png(root / "right" / (it.name + ".png"), it.right);
    if (it.gt) {
      fs::create_directories(root / "gt");
      Tensor depth = it.gt->depth;
      for (std::size_t i = 0; i < depth.numel(); ++i)
        if (it.gt->valid[i] == 0.0) depth[i] = 0.0;
      write_u16_png(root / "gt" / (it.name + ".png"), depth, kDepthPngScale);
    }
  }
}

Dataset::Dataset(const fs::path& root) : root_(root) {
  if (!fs::is_directory(root)) throw FormatError("dataset root not found: " + root.string());
  if (!fs::is_directory(root / "left") || !fs::is_directory(root / "right")) {
    throw FormatError("dataset root needs left/ and right/: " + root.string());
  }
  if (!fs::is_regular_file(root / "calib.txt")) throw FormatError("missing calib.txt in " + root.string());
  rig_ = parse_calib(read_text_file((root / "calib.txt").string()));
  const std::set<std::string> left = png_stems(root / "left"), right = png_stems(root / "right");
  for (const std::string& s : left) {
    if (right.count(s)) stems_.push_back(s);
    else skipped_.push_back("left/" + s + ".png: no right/" + s + ".png");
  }
  for (const std::string& s : right) {
    if (!left.count(s)) skipped_.push_back("right/" + s + ".png: no left/" + s + ".png");
  }
  std::sort(skipped_.begin(), skipped_.end());
}

DatasetItem Dataset::load(std::size_t index) const {
  const std::string& s = stems_.at(index);
  DatasetItem it;
  it.name = s;
  it.rig = rig_;
  it.left = read_rgb_png(root_ / "left" / (s + ".png"));
  it.right = read_rgb_png(root_ / "right" / (s + ".png"));
  if (it.left.shape() != it.right.shape()) {
    throw DimensionError("item " + s + ": left " + shape_str(it.left.shape()) + " vs right " +
                         shape_str(it.right.shape()));
  }
  const fs::path gt = root_ / "gt" / (s + ".png");
  if (fs::is_regular_file(gt)) {
    GroundTruthDepth g{read_u16_png(gt, kDepthPngScale), Tensor()};
    if (g.depth.shape() != Shape{it.left.dim(1), it.left.dim(2)}) {
      throw DimensionError("item " + s + ": gt " + shape_str(g.depth.shape()) + " does not match the images");
    }
    g.valid = Tensor(g.depth.shape());
    for (std::size_t i = 0; i < g.depth.numel(); ++i) g.valid[i] = g.depth[i] > 0.0 ? 1.0 : 0.0;
    it.gt = std::move(g);
  }
  const fs::path fl = root_ / "features" / "left" / (s + ".nslt");
  const fs::path fr = root_ / "features" / "right" / (s + ".nslt");
  if (fs::is_regular_file(fl) && fs::is_regular_file(fr)) {
    it.features_left = features::load_feature_tensor(fl, it.left.dim(1), it.left.dim(2));
    it.features_right = features::load_feature_tensor(fr, it.left.dim(1), it.left.dim(2));
  }
  return it;
}

}  // namespace nsl::synth
