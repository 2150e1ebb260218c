#pragma once

#include <string>

#include "pisr/autodiff.hpp"
#include "pisr/params.hpp"
#include "pisr/rng.hpp"

namespace pisr {

// Two-stage relational attention over category encodings and spatial
// features. g_s and g_q carry no bias: an all-zero encoding row then
// contributes exactly nothing to either stage, which is what lets the
// reweighter silence a category.
struct PraConfig {
  std::int64_t channels = 32;      // C of the encodings and features
  std::int64_t d_inter = 32;       // intermediate width D
  std::int64_t c_out = 32;         // output channels
  std::int64_t p_categories = 12;  // N_sem + K; also the stage-2 normalizer
};

void init_pra(ParamStore& params, const std::string& prefix, const PraConfig& cfg,
              Rng& rng);

// F_sp = (g_s(E) · h(F)) / sqrt(D); e_tilde [P x C], features [C x H x W];
// returns [P x HW].
Var pra_stage1(const VarStore& vars, const std::string& prefix, Var e_tilde,
               Var features, std::int64_t d_inter);

// F_pan = (g_q(E)^T · g_p(F_sp)) / p_norm; returns [C_out x HW]. p_norm is the
// configured category count, fixed at construction so that recomputing with
// deleted zero rows reproduces the same values.
Var pra_stage2(const VarStore& vars, const std::string& prefix, Var e_tilde, Var f_sp,
               double p_norm);

// Composition of both stages; returns [C_out x H x W].
Var pra_forward(const VarStore& vars, const std::string& prefix, const PraConfig& cfg,
                Var e_tilde, Var features);

}  // namespace pisr
