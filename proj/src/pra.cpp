#include "pisr/pra.hpp"

#include <cmath>

#include "pisr/segmenter.hpp"

namespace pisr {

namespace {
using i64 = std::int64_t;
}

void init_pra(ParamStore& params, const std::string& prefix, const PraConfig& cfg,
              Rng& rng) {
  params.add(prefix + ".gs.weight", init_linear(cfg.channels, cfg.d_inter, rng));
  params.add(prefix + ".h.kernel", init_conv_kernel(cfg.d_inter, cfg.channels, 3, rng));
  params.add(prefix + ".h.bias", init_bias(cfg.d_inter, cfg.channels * 9, rng));
  params.add(prefix + ".gp.weight",
             init_linear(cfg.p_categories, cfg.p_categories, rng));
  params.add(prefix + ".gp.bias", init_bias(cfg.p_categories, cfg.p_categories, rng));
  params.add(prefix + ".gq.weight", init_linear(cfg.channels, cfg.c_out, rng));
}

Var pra_stage1(const VarStore& vars, const std::string& prefix, Var e_tilde,
               Var features, i64 d_inter) {
  const Tensor& vf = features.value();
  if (vf.rank() != 3) {
    throw ShapeError("pra_stage1: features must be [C x H x W], got " + vf.shape_str());
  }
  Var gs_e = matmul(e_tilde, vars.get(prefix + ".gs.weight"));  // [P x D]
  Var hf = relu(conv2d(features, vars.get(prefix + ".h.kernel"),
                       vars.get(prefix + ".h.bias")));          // [D x H x W]
  Var hf_flat = reshape(hf, {d_inter, vf.dim(1) * vf.dim(2)});
  return scale(matmul(gs_e, hf_flat), 1.0 / std::sqrt(static_cast<double>(d_inter)));
}

Var pra_stage2(const VarStore& vars, const std::string& prefix, Var e_tilde, Var f_sp,
               double p_norm) {
  Var gq_e = matmul(e_tilde, vars.get(prefix + ".gq.weight"));  // [P x C_out]
  Var gp_f = add_col_bias(matmul(vars.get(prefix + ".gp.weight"), f_sp),
                          vars.get(prefix + ".gp.bias"));       // [P x HW]
  return scale(matmul(transpose(gq_e), gp_f), 1.0 / p_norm);
}

Var pra_forward(const VarStore& vars, const std::string& prefix, const PraConfig& cfg,
                Var e_tilde, Var features) {
  const Tensor& vf = features.value();
  Var f_sp = pra_stage1(vars, prefix, e_tilde, features, cfg.d_inter);
  Var f_pan = pra_stage2(vars, prefix, e_tilde, f_sp,
                         static_cast<double>(cfg.p_categories));
  return reshape(f_pan, {cfg.c_out, vf.dim(1), vf.dim(2)});
}

}  // namespace pisr
