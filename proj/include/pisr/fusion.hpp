#pragma once

#include <string>
#include <vector>

#include "pisr/encodings.hpp"
#include "pisr/tensor.hpp"

namespace pisr {

struct PanopticLabelMap {
  Tensor semantic;  // [H x W], integer class ids
  Tensor instance;  // [H x W], 0 for stuff, 1..n for things (dense)
};

// Center-regression grouping: per-pixel class = argmax, thing pixels go to
// the nearest selected center (measured from the pixel's regressed center),
// then each instance takes the majority class of its pixels. Instances that
// end up empty are dropped and ids are renumbered by first row-major
// occurrence. K = 0 with thing pixels present degrades to instance id 0
// everywhere (logged to stderr).
PanopticLabelMap fuse(const Tensor& s_final, const Tensor& m_final, const Tensor& o_final,
                      std::int64_t k, const std::vector<std::int64_t>& thing_ids);

PanopticLabelMap label_map_from_gt(const Tensor& gt_semantic, const Tensor& gt_instance);

// Writes prefix.sem.t, prefix.inst.t and a color PPM at prefix.ppm with a
// hash-derived palette per (class, instance) pair.
void write_label_map(const std::string& prefix, const PanopticLabelMap& map);

}  // namespace pisr
