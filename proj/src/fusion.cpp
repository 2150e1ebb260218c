#include "pisr/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "pisr/rng.hpp"
#include "pisr/tensor_io.hpp"

namespace pisr {

namespace {
using i64 = std::int64_t;
}

PanopticLabelMap fuse(const Tensor& s_final, const Tensor& m_final, const Tensor& o_final,
                      i64 k, const std::vector<i64>& thing_ids) {
  if (s_final.rank() != 3) {
    throw ShapeError("fuse: semantic scores must be [N x H x W], got " + s_final.shape_str());
  }
  const i64 n_cls = s_final.dim(0), h = s_final.dim(1), w = s_final.dim(2);
  const i64 hw = h * w;
  if (o_final.size() != 2 * hw) {
    throw ShapeError("fuse: offsets " + o_final.shape_str() + " do not match semantic map " +
                     s_final.shape_str());
  }

  std::vector<bool> is_thing(static_cast<std::size_t>(n_cls), false);
  for (i64 id : thing_ids) is_thing[static_cast<std::size_t>(id)] = true;

  PanopticLabelMap out;
  out.semantic = Tensor({h, w});
  out.instance = Tensor({h, w});

  for (i64 p = 0; p < hw; ++p) {
    i64 best = 0;
    for (i64 c = 1; c < n_cls; ++c) {
      if (s_final[c * hw + p] > s_final[best * hw + p]) best = c;  // ties keep lowest
    }
    out.semantic[p] = static_cast<double>(best);
  }

  const InstanceCandidates cands = select_centers(m_final, k);
  const i64 n_cand = static_cast<i64>(cands.items.size());

  bool any_thing = false;
  std::vector<i64> group(static_cast<std::size_t>(hw), 0);  // candidate index + 1
  for (i64 r = 0; r < h; ++r) {
    for (i64 c = 0; c < w; ++c) {
      const i64 p = r * w + c;
      if (!is_thing[static_cast<std::size_t>(std::llround(out.semantic[p]))]) continue;
      any_thing = true;
      if (n_cand == 0) continue;
      const double reg_r = static_cast<double>(r) + o_final[0 * hw + p];
      const double reg_c = static_cast<double>(c) + o_final[1 * hw + p];
      i64 best = -1;
      double best_d = 0.0;
      i64 best_pix = 0;
      for (i64 ci = 0; ci < n_cand; ++ci) {
        const Candidate& cand = cands.items[static_cast<std::size_t>(ci)];
        const double dr = reg_r - static_cast<double>(cand.row);
        const double dc = reg_c - static_cast<double>(cand.col);
        const double d = dr * dr + dc * dc;
        const i64 pix = cand.row * w + cand.col;
        if (best < 0 || d < best_d || (d == best_d && pix < best_pix)) {
          best = ci;
          best_d = d;
          best_pix = pix;
        }
      }
      group[static_cast<std::size_t>(p)] = best + 1;
    }
  }

  if (any_thing && n_cand == 0) {
    std::fprintf(stderr, "fuse: no center candidates; thing pixels keep instance id 0\n");
  }

  // Majority semantic vote per group (ties to the lowest class id).
  std::vector<std::vector<i64>> votes(static_cast<std::size_t>(n_cand + 1),
                                      std::vector<i64>(static_cast<std::size_t>(n_cls), 0));
  for (i64 p = 0; p < hw; ++p) {
    const i64 g = group[static_cast<std::size_t>(p)];
    if (g == 0) continue;
    ++votes[static_cast<std::size_t>(g)][static_cast<std::size_t>(std::llround(out.semantic[p]))];
  }
  std::vector<i64> group_cls(static_cast<std::size_t>(n_cand + 1), -1);
  for (i64 g = 1; g <= n_cand; ++g) {
    const auto& v = votes[static_cast<std::size_t>(g)];
    i64 best = -1, best_votes = 0;
    for (i64 c = 0; c < n_cls; ++c) {
      if (v[static_cast<std::size_t>(c)] > best_votes) {
        best_votes = v[static_cast<std::size_t>(c)];
        best = c;
      }
    }
    group_cls[static_cast<std::size_t>(g)] = best;  // -1 when the group is empty
  }

  // Dense renumbering by first row-major occurrence.
  std::vector<i64> renumber(static_cast<std::size_t>(n_cand + 1), 0);
  i64 next_id = 1;
  for (i64 p = 0; p < hw; ++p) {
    const i64 g = group[static_cast<std::size_t>(p)];
    if (g == 0) continue;
    if (renumber[static_cast<std::size_t>(g)] == 0) renumber[static_cast<std::size_t>(g)] = next_id++;
    out.instance[p] = static_cast<double>(renumber[static_cast<std::size_t>(g)]);
    out.semantic[p] = static_cast<double>(group_cls[static_cast<std::size_t>(g)]);
  }
  return out;
}

PanopticLabelMap label_map_from_gt(const Tensor& gt_semantic, const Tensor& gt_instance) {
  PanopticLabelMap m;
  m.semantic = gt_semantic;
  m.instance = gt_instance;
  if (m.semantic.rank() == 3) {
    m.semantic = Tensor::from_data({gt_semantic.dim(1), gt_semantic.dim(2)},
                                   gt_semantic.values());
  }
  if (m.instance.rank() == 3) {
    m.instance = Tensor::from_data({gt_instance.dim(1), gt_instance.dim(2)},
                                   gt_instance.values());
  }
  return m;
}

void write_label_map(const std::string& prefix, const PanopticLabelMap& map) {
  Tensor sem = map.semantic;
  Tensor inst = map.instance;
  save_tensor(prefix + ".sem.t", sem.set_dtype(DType::f32));
  save_tensor(prefix + ".inst.t", inst.set_dtype(DType::f32));

  const i64 h = map.semantic.dim(0), w = map.semantic.dim(1);
  std::ofstream f(prefix + ".ppm", std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + prefix + ".ppm");
  f << "P6\n" << w << " " << h << "\n255\n";
  for (i64 p = 0; p < h * w; ++p) {
    const i64 cls = static_cast<i64>(std::llround(map.semantic[p]));
    const i64 id = static_cast<i64>(std::llround(map.instance[p]));
    const std::uint64_t hash =
        Rng::mix(static_cast<std::uint64_t>(cls) * 7919 + 13,
                 static_cast<std::uint64_t>(id));
    const char rgb[3] = {static_cast<char>(hash & 0xff), static_cast<char>((hash >> 8) & 0xff),
                         static_cast<char>((hash >> 16) & 0xff)};
    f.write(rgb, 3);
  }
}

}  // namespace pisr
