#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <fstream>
#include <map>

#include "pisr/fusion.hpp"
#include "pisr/rng.hpp"
#include "pisr/tensor_io.hpp"

using namespace pisr;
using i64 = std::int64_t;

namespace {

// One-hot semantic scores from a label map.
Tensor scores_from_labels(const Tensor& labels, i64 n_cls) {
  const i64 h = labels.dim(0), w = labels.dim(1);
  Tensor s({n_cls, h, w});
  for (i64 p = 0; p < h * w; ++p) {
    s[static_cast<i64>(std::llround(labels[p])) * h * w + p] = 1.0;
  }
  return s;
}

}  // namespace

TEST_CASE("one center: every thing pixel lands in a single instance") {
  const i64 h = 6, w = 6;
  Tensor labels({h, w});
  for (i64 r = 2; r < 5; ++r) {
    for (i64 c = 1; c < 5; ++c) labels.at(r, c) = 1.0;  // thing class 1
  }
  Tensor m({1, h, w});
  m.at(0, 3, 3) = 0.9;
  Tensor o({2, h, w});
  const auto out = fuse(scores_from_labels(labels, 2), m, o, 1, {1});
  for (i64 p = 0; p < h * w; ++p) {
    if (labels[p] == 1.0) {
      CHECK(out.instance[p] == 1.0);
      CHECK(out.semantic[p] == 1.0);
    } else {
      CHECK(out.instance[p] == 0.0);
    }
  }
}

TEST_CASE("stuff-only prediction has an all-zero instance map") {
  const i64 h = 5, w = 5;
  Tensor labels({h, w});  // all class 0 (stuff)
  Tensor m = Tensor::full({1, h, w}, 0.8);
  Tensor o({2, h, w});
  const auto out = fuse(scores_from_labels(labels, 3), m, o, 3, {2});
  for (i64 p = 0; p < h * w; ++p) CHECK(out.instance[p] == 0.0);
}

TEST_CASE("two centers: assignment equals the brute-force nearest-center rule") {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const i64 h = 8, w = 8, hw = h * w;
    const i64 n_cls = 4;
    const std::vector<i64> thing_ids{2, 3};

    Tensor s({n_cls, h, w});
    for (i64 p = 0; p < hw; ++p) {
      for (i64 c = 0; c < n_cls; ++c) s[c * hw + p] = rng.uniform(0.0, 1.0);
    }
    Tensor m({1, h, w});
    m.at(0, 2, 2) = 0.9;
    m.at(0, 6, 5) = 0.8;
    Tensor o({2, h, w});
    for (i64 i = 0; i < o.size(); ++i) o[i] = rng.uniform(-2.0, 2.0);

    const auto out = fuse(s, m, o, 2, thing_ids);

    // Independent recomputation.
    std::vector<i64> argmax(static_cast<std::size_t>(hw));
    for (i64 p = 0; p < hw; ++p) {
      i64 best = 0;
      for (i64 c = 1; c < n_cls; ++c) {
        if (s[c * hw + p] > s[best * hw + p]) best = c;
      }
      argmax[static_cast<std::size_t>(p)] = best;
    }
    const std::array<std::pair<i64, i64>, 2> centers{{{2, 2}, {6, 5}}};
    std::vector<i64> group(static_cast<std::size_t>(hw), 0);
    for (i64 r = 0; r < h; ++r) {
      for (i64 c = 0; c < w; ++c) {
        const i64 p = r * w + c;
        if (argmax[static_cast<std::size_t>(p)] < 2) continue;
        const double rr = r + o[0 * hw + p], rc = c + o[1 * hw + p];
        double d0 = (rr - centers[0].first) * (rr - centers[0].first) +
                    (rc - centers[0].second) * (rc - centers[0].second);
        double d1 = (rr - centers[1].first) * (rr - centers[1].first) +
                    (rc - centers[1].second) * (rc - centers[1].second);
        group[static_cast<std::size_t>(p)] = d1 < d0 ? 2 : 1;
      }
    }
    // Majority class per group, ties to the lowest id.
    for (i64 g = 1; g <= 2; ++g) {
      std::vector<i64> votes(static_cast<std::size_t>(n_cls), 0);
      for (i64 p = 0; p < hw; ++p) {
        if (group[static_cast<std::size_t>(p)] == g) {
          ++votes[static_cast<std::size_t>(argmax[static_cast<std::size_t>(p)])];
        }
      }
      i64 best = -1, best_v = 0;
      for (i64 c = 0; c < n_cls; ++c) {
        if (votes[static_cast<std::size_t>(c)] > best_v) {
          best_v = votes[static_cast<std::size_t>(c)];
          best = c;
        }
      }
      for (i64 p = 0; p < hw; ++p) {
        if (group[static_cast<std::size_t>(p)] == g && best >= 0) {
          argmax[static_cast<std::size_t>(p)] = best;
        }
      }
    }
    std::vector<i64> renumber(3, 0);
    i64 next = 1;
    for (i64 p = 0; p < hw; ++p) {
      const i64 g = group[static_cast<std::size_t>(p)];
      if (g == 0) continue;
      if (renumber[static_cast<std::size_t>(g)] == 0) renumber[static_cast<std::size_t>(g)] = next++;
    }
    for (i64 p = 0; p < hw; ++p) {
      CHECK(out.instance[p] ==
            static_cast<double>(renumber[static_cast<std::size_t>(group[static_cast<std::size_t>(p)])]));
      CHECK(out.semantic[p] == static_cast<double>(argmax[static_cast<std::size_t>(p)]));
    }
  }
}

TEST_CASE("each instance carries exactly one semantic label after voting") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const i64 h = 10, w = 10, hw = h * w;
    Tensor s({4, h, w});
    for (i64 i = 0; i < s.size(); ++i) s[i] = rng.uniform(0.0, 1.0);
    Tensor m({1, h, w});
    for (i64 i = 0; i < hw; ++i) m[i] = rng.uniform(0.0, 1.0);
    Tensor o({2, h, w});
    for (i64 i = 0; i < o.size(); ++i) o[i] = rng.uniform(-3.0, 3.0);
    const auto out = fuse(s, m, o, 4, {2, 3});

    std::map<i64, i64> label_of;
    for (i64 p = 0; p < hw; ++p) {
      const i64 id = static_cast<i64>(std::llround(out.instance[p]));
      if (id == 0) continue;
      const i64 cls = static_cast<i64>(std::llround(out.semantic[p]));
      if (label_of.count(id)) {
        CHECK(label_of[id] == cls);
      } else {
        label_of[id] = cls;
      }
      CHECK((cls == 2 || cls == 3));
    }
    // Dense ids 1..n.
    i64 expect = 1;
    for (const auto& [id, cls] : label_of) CHECK(id == expect++);
  }
}

TEST_CASE("K = 0 with thing pixels demotes instances to zero") {
  const i64 h = 4, w = 4;
  Tensor labels({h, w});
  labels.at(1, 1) = 1.0;
  labels.at(1, 2) = 1.0;
  Tensor m = Tensor::full({1, h, w}, 0.5);
  Tensor o({2, h, w});
  const auto out = fuse(scores_from_labels(labels, 2), m, o, 0, {1});
  for (i64 p = 0; p < h * w; ++p) CHECK(out.instance[p] == 0.0);
  CHECK(out.semantic.at(1, 1) == 1.0);  // argmax label kept
}

TEST_CASE("fusion is deterministic") {
  Rng rng(11);
  const i64 h = 8, w = 8;
  Tensor s({3, h, w});
  for (i64 i = 0; i < s.size(); ++i) s[i] = rng.uniform(0.0, 1.0);
  Tensor m({1, h, w});
  for (i64 i = 0; i < m.size(); ++i) m[i] = rng.uniform(0.0, 1.0);
  Tensor o({2, h, w});
  for (i64 i = 0; i < o.size(); ++i) o[i] = rng.uniform(-1.0, 1.0);
  const auto a = fuse(s, m, o, 3, {2});
  const auto b = fuse(s, m, o, 3, {2});
  for (i64 p = 0; p < h * w; ++p) {
    CHECK(a.semantic[p] == b.semantic[p]);
    CHECK(a.instance[p] == b.instance[p]);
  }
}

TEST_CASE("label map files round trip through the tensor container") {
  Tensor sem({4, 4});
  Tensor inst({4, 4});
  sem.at(1, 1) = 2.0;
  inst.at(1, 1) = 1.0;
  PanopticLabelMap map{sem, inst};
  write_label_map("fusion_io_test", map);
  CHECK(std::ifstream("fusion_io_test.ppm").good());
  const Tensor sem_back = load_tensor("fusion_io_test.sem.t");
  CHECK(sem_back.at(1, 1) == 2.0);
}
