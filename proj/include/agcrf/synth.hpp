#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "agcrf/tensor.hpp"

namespace agcrf {

enum class Task { Contour, Depth, Seg };

Task parse_task(const std::string& name);
std::string task_name(Task t);

/// Knobs for the synthetic generators. One sample is a pure function of
/// (seed, split, index), so splits never share samples.
struct SynthSpec {
  Task task = Task::Contour;
  std::uint64_t seed = 1;
  int size = 32;
  int train = 500;
  int test = 100;
  int shapes_min = 1;
  int shapes_max = 3;
  double radius_min = 4.0;
  double radius_max = 9.0;
  int classes = 4;              // segmentation, background included; at most 8
  double noise = 0.03;          // additive image noise (contour, seg)
  double mask_fraction = 0.3;   // depth: share of pixels with ground truth
  int bumps_max = 3;            // depth: spherical bumps per scene
  bool ramp = true;             // depth: planar ramp

  void validate() const;
  /// key=value lines, sorted by key.
  std::string echo() const;
  /// Applies key=value pairs; unknown keys throw std::invalid_argument.
  static SynthSpec from_pairs(const std::map<std::string, std::string>& kv);
};

struct Sample {
  Tensor image;  // [3, H, W] in [0, 1]
  /// contour: [1, H, W] binary edges; depth: [2, H, W] (depth, mask);
  /// seg: [1, H, W] integer labels.
  Tensor target;
};

enum class Split { Train = 0, Test = 1 };

Sample gen_contour(const SynthSpec& spec, Split split, int index);
Sample gen_depth(const SynthSpec& spec, Split split, int index);
Sample gen_seg(const SynthSpec& spec, Split split, int index);
Sample generate(const SynthSpec& spec, Split split, int index);

/// Marks pixels of a region-id map that have a 4-neighbour with a smaller id,
/// i.e. the 1-pixel inner boundary of every shape drawn over the ones below.
Tensor inner_boundary(const Tensor& regions);

/// Brightness of a depth scene pixel under the fixed light model; strictly
/// decreasing in depth.
double depth_shade(double depth);
/// Channel tints applied to depth_shade.
constexpr double kDepthTint[3] = {1.0, 0.8, 0.6};

/// Class colours sit on corners of the RGB cube; class 0 is black.
void class_color(int cls, double rgb[3]);

/// Writes `<root>/manifest.txt` and `<root>/<split>/<index>.img.agt|.gt.agt`.
void write_dataset(const std::filesystem::path& root, const SynthSpec& spec);

struct Dataset {
  Task task = Task::Contour;
  int classes = 0;
  std::vector<Sample> samples;
};

/// Reads one split ("train" or "test") written by write_dataset.
Dataset read_dataset(const std::filesystem::path& root, const std::string& split);

/// Parses the manifest's spec echo.
SynthSpec read_manifest(const std::filesystem::path& root);

}  // namespace agcrf
