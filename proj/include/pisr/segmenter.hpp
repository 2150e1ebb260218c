#pragma once

#include <string>

#include "pisr/autodiff.hpp"
#include "pisr/params.hpp"
#include "pisr/rng.hpp"

namespace pisr {

// Convolutional trunk and prediction heads. The same head block serves both
// the intermediate generators (on backbone features) and the final
// prediction stage (on the relational features), as fresh parameter copies.

struct BaseOutputs {
  Var features;  // [C x H x W]
  Var s_logits;  // [N_sem x H x W]
  Var s;         // softmax of s_logits over the class axis
  Var m;         // [1 x H x W], sigmoid
  Var o;         // [2 x H x W], linear, pixel units
};

// 3 -> 16 -> 32 -> channels, 3x3 same-padding convs with ReLU between.
void init_backbone(ParamStore& params, const std::string& prefix, std::int64_t channels,
                   Rng& rng);
Var backbone_forward(const VarStore& vars, const std::string& prefix, Var image);

// 1x1 heads: semantic logits (in -> n_sem), center (in -> 1, sigmoid),
// offset (in -> 2, linear).
void init_heads(ParamStore& params, const std::string& prefix, std::int64_t in_channels,
                std::int64_t n_sem, Rng& rng);
BaseOutputs heads_forward(const VarStore& vars, const std::string& prefix, Var features);

void init_segmenter(ParamStore& params, std::int64_t channels, std::int64_t n_sem,
                    Rng& rng);
BaseOutputs segmenter_forward(const VarStore& vars, Var image);

// Uniform(-a, a) with a = sqrt(1 / fan_in); one call per layer keeps the
// draw order stable.
Tensor init_conv_kernel(std::int64_t out_ch, std::int64_t in_ch, std::int64_t k, Rng& rng);
Tensor init_bias(std::int64_t out_ch, std::int64_t fan_in, Rng& rng);
// Linear weight stored input-major, i.e. [in x out], applied as x · W.
Tensor init_linear(std::int64_t in_dim, std::int64_t out_dim, Rng& rng);

}  // namespace pisr
