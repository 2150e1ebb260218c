#include "pisr/encodings.hpp"

#include <algorithm>
#include <cmath>

#include "pisr/segmenter.hpp"

namespace pisr {

namespace {
using i64 = std::int64_t;

std::pair<i64, i64> plane_dims(const Tensor& m) {
  if (m.rank() == 2) return {m.dim(0), m.dim(1)};
  if (m.rank() == 3 && m.dim(0) == 1) return {m.dim(1), m.dim(2)};
  throw ShapeError("expected [H x W] or [1 x H x W], got " + m.shape_str());
}

}  // namespace

InstanceCandidates select_centers(const Tensor& m, i64 k) {
  const auto [h, w] = plane_dims(m);
  InstanceCandidates out;
  if (k <= 0) return out;

  std::vector<Candidate> maxima;
  for (i64 r = 0; r < h; ++r) {
    for (i64 c = 0; c < w; ++c) {
      const double v = m[r * w + c];
      bool is_max = true;
      for (i64 dr = -1; dr <= 1 && is_max; ++dr) {
        for (i64 dc = -1; dc <= 1 && is_max; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const i64 rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          if (m[rr * w + cc] > v) is_max = false;
        }
      }
      if (is_max) maxima.push_back({r, c, v});
    }
  }
  std::stable_sort(maxima.begin(), maxima.end(), [w = w](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.row * w + a.col < b.row * w + b.col;
  });
  if (static_cast<i64>(maxima.size()) > k) maxima.resize(static_cast<std::size_t>(k));
  out.items = std::move(maxima);
  return out;
}

Tensor things_mask(const Tensor& s, const std::vector<i64>& thing_ids) {
  if (s.rank() < 2) throw ShapeError("things_mask: need class-major map, got " + s.shape_str());
  const i64 n_cls = s.dim(0);
  i64 hw = 1;
  for (i64 i = 1; i < s.rank(); ++i) hw *= s.dim(i);
  std::vector<bool> is_thing(static_cast<std::size_t>(n_cls), false);
  for (i64 id : thing_ids) {
    if (id < 0 || id >= n_cls) {
      throw ConfigError("things_mask: thing id " + std::to_string(id) + " outside [0, " +
                        std::to_string(n_cls) + ")");
    }
    is_thing[static_cast<std::size_t>(id)] = true;
  }
  Tensor mask({1, hw});
  for (i64 p = 0; p < hw; ++p) {
    i64 best = 0;
    double best_v = s[p];
    for (i64 c = 1; c < n_cls; ++c) {
      if (s[c * hw + p] > best_v) {  // ties keep the lowest class index
        best_v = s[c * hw + p];
        best = c;
      }
    }
    mask[p] = is_thing[static_cast<std::size_t>(best)] ? 1.0 : 0.0;
  }
  return mask;
}

Var instance_heatmaps(const InstanceCandidates& candidates, Var offsets,
                      const Tensor& mask, i64 k, i64 h, i64 w) {
  Tape& t = *offsets.tape();
  const Tensor& vo = t.value(offsets);
  if (vo.rank() != 3 || vo.dim(0) != 2 || vo.dim(1) != h || vo.dim(2) != w) {
    throw ShapeError("instance_heatmaps: offsets " + vo.shape_str() + " do not match " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  const i64 hw = h * w;
  if (mask.size() != hw) {
    throw ShapeError("instance_heatmaps: mask " + mask.shape_str() + " does not cover plane");
  }
  const double diag = std::sqrt(static_cast<double>(h * h + w * w));
  const i64 n_cand = std::min<i64>(k, static_cast<i64>(candidates.items.size()));

  Tensor out({k, hw});
  for (i64 ci = 0; ci < n_cand; ++ci) {
    const Candidate& cand = candidates.items[static_cast<std::size_t>(ci)];
    for (i64 r = 0; r < h; ++r) {
      for (i64 c = 0; c < w; ++c) {
        const double reg_r = static_cast<double>(r) + vo[0 * hw + r * w + c];
        const double reg_c = static_cast<double>(c) + vo[1 * hw + r * w + c];
        const double dr = static_cast<double>(cand.row) - reg_r;
        const double dc = static_cast<double>(cand.col) - reg_c;
        const double d = std::sqrt(dr * dr + dc * dc);
        const double v = std::clamp(1.0 - d / diag, 0.0, 1.0);
        out[ci * hw + r * w + c] = v * mask[r * w + c];
      }
    }
  }

  std::vector<Candidate> cands(candidates.items.begin(),
                               candidates.items.begin() + static_cast<std::ptrdiff_t>(n_cand));
  Tensor mask_copy = mask;
  auto backward = [cands, mask_copy, k, h, w, diag](Tape& tp, const Tensor&,
                                                    const Tensor& g,
                                                    const std::vector<Var>& ps) {
    const Tensor& vo = tp.value(ps[0]);
    const i64 hw = h * w;
    Tensor go({2, h, w});
    for (std::size_t ci = 0; ci < cands.size(); ++ci) {
      const Candidate& cand = cands[ci];
      for (i64 r = 0; r < h; ++r) {
        for (i64 c = 0; c < w; ++c) {
          const i64 p = r * w + c;
          const double m = mask_copy[p];
          if (m == 0.0) continue;
          const double reg_r = static_cast<double>(r) + vo[0 * hw + p];
          const double reg_c = static_cast<double>(c) + vo[1 * hw + p];
          const double dr = reg_r - static_cast<double>(cand.row);
          const double dc = reg_c - static_cast<double>(cand.col);
          const double d = std::sqrt(dr * dr + dc * dc);
          // Zero slope at the clamp boundaries and at the apex d = 0.
          if (d == 0.0 || d >= diag) continue;
          const double gv = g[static_cast<i64>(ci) * hw + p] * m;
          const double coef = -gv / (diag * d);
          go[0 * hw + p] += coef * dr;
          go[1 * hw + p] += coef * dc;
        }
      }
    }
    tp.accum_grad(ps[0], std::move(go));
  };
  return t.make_node(std::move(out), {offsets}, "instance_heatmaps", std::move(backward));
}

Var encode(Var heat, Var features_flat) {
  return matmul(heat, transpose(features_flat));
}

Var concat_panoptic(Var e_sem, Var e_ins) { return concat_rows({e_sem, e_ins}); }

i64 reweighter_hidden(i64 channels) { return std::max<i64>(8, channels / 4); }

void init_reweighter(ParamStore& params, const std::string& prefix, i64 channels,
                     Rng& rng) {
  const i64 hidden = reweighter_hidden(channels);
  params.add(prefix + ".fc1.weight", init_linear(channels, hidden, rng));
  params.add(prefix + ".fc1.bias", init_bias(hidden, channels, rng));
  params.add(prefix + ".fc2.weight", init_linear(hidden, 1, rng));
  params.add(prefix + ".fc2.bias", init_bias(1, hidden, rng));
}

std::pair<Var, Var> reweight(const VarStore& vars, const std::string& prefix, Var e_pan) {
  Var hidden = relu(add_row_bias(matmul(e_pan, vars.get(prefix + ".fc1.weight")),
                                 vars.get(prefix + ".fc1.bias")));
  Var logits = add_row_bias(matmul(hidden, vars.get(prefix + ".fc2.weight")),
                            vars.get(prefix + ".fc2.bias"));
  Var omega = sigmoid(logits);  // [P x 1]
  Var e_tilde = row_scale(e_pan, omega);
  return {omega, e_tilde};
}

}  // namespace pisr
