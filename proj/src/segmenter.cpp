#include "pisr/segmenter.hpp"

#include <cmath>

namespace pisr {

namespace {
using i64 = std::int64_t;
}

Tensor init_conv_kernel(i64 out_ch, i64 in_ch, i64 k, Rng& rng) {
  Tensor t({out_ch, in_ch, k, k});
  const double a = std::sqrt(1.0 / static_cast<double>(in_ch * k * k));
  for (i64 i = 0; i < t.size(); ++i) t[i] = rng.uniform(-a, a);
  return t;
}

Tensor init_bias(i64 out_ch, i64 fan_in, Rng& rng) {
  Tensor t({out_ch});
  const double a = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (i64 i = 0; i < t.size(); ++i) t[i] = rng.uniform(-a, a);
  return t;
}

Tensor init_linear(i64 in_dim, i64 out_dim, Rng& rng) {
  Tensor t({in_dim, out_dim});
  const double a = std::sqrt(1.0 / static_cast<double>(in_dim));
  for (i64 i = 0; i < t.size(); ++i) t[i] = rng.uniform(-a, a);
  return t;
}

void init_backbone(ParamStore& params, const std::string& prefix, i64 channels, Rng& rng) {
  const i64 widths[4] = {3, 16, 32, channels};
  for (int layer = 0; layer < 3; ++layer) {
    const std::string name = prefix + ".conv" + std::to_string(layer);
    params.add(name + ".kernel", init_conv_kernel(widths[layer + 1], widths[layer], 3, rng));
    params.add(name + ".bias", init_bias(widths[layer + 1], widths[layer] * 9, rng));
  }
}

Var backbone_forward(const VarStore& vars, const std::string& prefix, Var image) {
  Var x = image;
  for (int layer = 0; layer < 3; ++layer) {
    const std::string name = prefix + ".conv" + std::to_string(layer);
    x = conv2d(x, vars.get(name + ".kernel"), vars.get(name + ".bias"));
    if (layer < 2) x = relu(x);
  }
  return x;
}

void init_heads(ParamStore& params, const std::string& prefix, i64 in_channels,
                i64 n_sem, Rng& rng) {
  params.add(prefix + ".sem.kernel", init_conv_kernel(n_sem, in_channels, 1, rng));
  params.add(prefix + ".sem.bias", init_bias(n_sem, in_channels, rng));
  params.add(prefix + ".center.kernel", init_conv_kernel(1, in_channels, 1, rng));
  params.add(prefix + ".center.bias", init_bias(1, in_channels, rng));
  params.add(prefix + ".offset.kernel", init_conv_kernel(2, in_channels, 1, rng));
  params.add(prefix + ".offset.bias", init_bias(2, in_channels, rng));
}

BaseOutputs heads_forward(const VarStore& vars, const std::string& prefix, Var features) {
  BaseOutputs out;
  out.features = features;
  out.s_logits = conv2d(features, vars.get(prefix + ".sem.kernel"), vars.get(prefix + ".sem.bias"));
  out.s = softmax(out.s_logits, 0);
  out.m = sigmoid(conv2d(features, vars.get(prefix + ".center.kernel"),
                         vars.get(prefix + ".center.bias")));
  out.o = conv2d(features, vars.get(prefix + ".offset.kernel"),
                 vars.get(prefix + ".offset.bias"));
  return out;
}

void init_segmenter(ParamStore& params, i64 channels, i64 n_sem, Rng& rng) {
  init_backbone(params, "backbone", channels, rng);
  init_heads(params, "head", channels, n_sem, rng);
}

BaseOutputs segmenter_forward(const VarStore& vars, Var image) {
  Var f = backbone_forward(vars, "backbone", image);
  return heads_forward(vars, "head", f);
}

}  // namespace pisr
