#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "pisr/tensor.hpp"

namespace pisr {

// Synthetic panoptic scenes: stuff drawn as horizontal bands, things as
// axis-aligned rectangles and circles composited in draw order.
struct SceneConfig {
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::int64_t n_stuff_classes = 2;
  std::int64_t n_thing_classes = 2;
  std::int64_t min_instances = 1;
  std::int64_t max_instances = 5;
  double gaussian_sigma = 3.0;
  std::uint64_t seed = 0;

  std::int64_t n_sem() const { return n_stuff_classes + n_thing_classes; }
  // Thing class ids occupy the upper range [n_stuff_classes, n_sem).
  std::vector<std::int64_t> thing_ids() const {
    std::vector<std::int64_t> ids;
    for (std::int64_t c = n_stuff_classes; c < n_sem(); ++c) ids.push_back(c);
    return ids;
  }
  void validate() const;
};

struct SceneSample {
  Tensor image;        // [3 x H x W] in [0, 1]
  Tensor gt_semantic;  // [H x W], integer class ids
  Tensor gt_instance;  // [H x W], 0 = stuff, >= 1 = instance id
  Tensor gt_center;    // [1 x H x W] in [0, 1]
  Tensor gt_offset;    // [2 x H x W], (drow, dcol) to the owning center
};

// Pure function of (config, index); identical across runs.
SceneSample generate(const SceneConfig& config, std::uint64_t index);

// Gaussian center heatmap (max-composited, peak 1 at each center pixel) and
// per-pixel offsets toward the owning instance's center. Centers are mass
// centers rounded to the nearest pixel. sigma <= 0 collapses the bump to a
// single-pixel peak.
std::pair<Tensor, Tensor> render_center_targets(const Tensor& instance_map, double sigma);

// Base color of a semantic class before jitter and noise.
std::array<double, 3> class_base_color(std::int64_t class_id, std::int64_t n_stuff);

// ---- dataset directory layout ---------------------------------------------
// manifest.txt with key=value lines plus one tensor file per sample field:
// NNNN.image.t, NNNN.sem.t, NNNN.inst.t, NNNN.center.t, NNNN.offset.t
// (all stored as f32).

struct Dataset {
  SceneConfig config;
  std::vector<SceneSample> samples;
};

void write_dataset(const std::string& dir, const SceneConfig& config, std::int64_t n);
Dataset load_dataset(const std::string& dir);
SceneSample load_sample(const std::string& dir, std::int64_t index);

}  // namespace pisr
