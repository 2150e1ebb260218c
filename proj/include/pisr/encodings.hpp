#pragma once

#include <utility>
#include <vector>

#include "pisr/autodiff.hpp"
#include "pisr/params.hpp"
#include "pisr/rng.hpp"

namespace pisr {

struct Candidate {
  std::int64_t row = 0;
  std::int64_t col = 0;
  double score = 0.0;
};

// Selected center candidates, sorted by descending score with row-major pixel
// index as the tie break. May hold fewer than K entries; downstream heatmaps
// pad the missing rows with zeros so shapes stay fixed.
struct InstanceCandidates {
  std::vector<Candidate> items;
};

// 3x3 local-maximum suppression (a pixel survives iff it is >= all existing
// neighbors), then top-k by score. m is [1 x H x W] or [H x W].
InstanceCandidates select_centers(const Tensor& m, std::int64_t k);

// Hard argmax over the class axis (ties to the lowest class id), 1 where the
// winning class is a thing. s: [N_sem x HW] or [N_sem x H x W]; returns [1 x HW].
Tensor things_mask(const Tensor& s, const std::vector<std::int64_t>& thing_ids);

// Center-regression heatmaps. For candidate k at pixel c_k,
//   H_k(i,j) = clamp(1 - d / diag, 0, 1) * mask(i,j),
// where d is the distance from c_k to the regressed center
// (i + O_row(i,j), j + O_col(i,j)) and diag = sqrt(H^2 + W^2).
// Differentiable in offsets only; candidate coordinates and the mask are
// treated as constants. Returns [K x HW] with all-zero rows past the last
// candidate.
Var instance_heatmaps(const InstanceCandidates& candidates, Var offsets,
                      const Tensor& mask, std::int64_t k, std::int64_t h,
                      std::int64_t w);

// E = heat · features^T, i.e. row r is the feature sum weighted by heat row r.
// heat: [R x HW], features: [C x HW]; result [R x C].
Var encode(Var heat, Var features_flat);

// Rows: semantic encodings first, then instance encodings.
Var concat_panoptic(Var e_sem, Var e_ins);

// Per-row gate: channels -> max(8, channels/4) -> 1 with sigmoid, shared
// across rows.
std::int64_t reweighter_hidden(std::int64_t channels);
void init_reweighter(ParamStore& params, const std::string& prefix,
                     std::int64_t channels, Rng& rng);
// Returns (omega [P x 1], reweighted encodings [P x C]).
std::pair<Var, Var> reweight(const VarStore& vars, const std::string& prefix, Var e_pan);

}  // namespace pisr
