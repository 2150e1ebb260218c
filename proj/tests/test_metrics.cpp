#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "pisr/metrics.hpp"
#include "pisr/rng.hpp"

using namespace pisr;
using i64 = std::int64_t;

namespace {

PanopticLabelMap random_map(Rng& rng, i64 h, i64 w, i64 n_sem,
                            const std::vector<i64>& thing_ids, i64 max_inst) {
  PanopticLabelMap m;
  m.semantic = Tensor({h, w});
  m.instance = Tensor({h, w});
  std::set<i64> things(thing_ids.begin(), thing_ids.end());
  for (i64 p = 0; p < h * w; ++p) {
    const i64 cls = rng.uniform_int(0, n_sem - 1);
    m.semantic[p] = static_cast<double>(cls);
    m.instance[p] = things.count(cls) ? static_cast<double>(rng.uniform_int(1, max_inst)) : 0.0;
  }
  return m;
}

// Blocky maps give segments large enough to clear the IoU threshold sometimes.
PanopticLabelMap blocky_map(Rng& rng, i64 h, i64 w, i64 n_sem,
                            const std::vector<i64>& thing_ids, i64 max_inst) {
  PanopticLabelMap m;
  m.semantic = Tensor({h, w});
  m.instance = Tensor({h, w});
  std::set<i64> things(thing_ids.begin(), thing_ids.end());
  const i64 bh = 4, bw = 4;
  for (i64 br = 0; br < h; br += bh) {
    for (i64 bc = 0; bc < w; bc += bw) {
      const i64 cls = rng.uniform_int(0, n_sem - 1);
      const i64 inst = things.count(cls) ? rng.uniform_int(1, max_inst) : 0;
      for (i64 r = br; r < std::min(h, br + bh); ++r) {
        for (i64 c = bc; c < std::min(w, bc + bw); ++c) {
          m.semantic.at(r, c) = static_cast<double>(cls);
          m.instance.at(r, c) = static_cast<double>(inst);
        }
      }
    }
  }
  return m;
}

}  // namespace

TEST_CASE("perfect prediction scores 1 everywhere") {
  Rng rng(1);
  const std::vector<i64> thing_ids{2, 3};
  const auto gt = blocky_map(rng, 12, 12, 4, thing_ids, 2);
  const auto rep = panoptic_quality(gt, gt, 4, thing_ids);
  for (const auto& st : rep.classes) {
    if (!st.present()) continue;
    CHECK(st.pq() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(st.sq() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(st.rq() == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(rep.pq == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.miou == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("disjoint same-class segments do not match") {
  // class 1 segments occupy disjoint halves: IoU 0 -> one FP, one FN.
  PanopticLabelMap pred, gt;
  pred.semantic = Tensor({4, 4});
  pred.instance = Tensor({4, 4});
  gt.semantic = Tensor({4, 4});
  gt.instance = Tensor({4, 4});
  for (i64 c = 0; c < 4; ++c) {
    pred.semantic.at(0, c) = 1.0;
    pred.instance.at(0, c) = 1.0;
    gt.semantic.at(3, c) = 1.0;
    gt.instance.at(3, c) = 1.0;
  }
  const auto rep = panoptic_quality(pred, gt, 2, {1});
  CHECK(rep.classes[1].tp == 0);
  CHECK(rep.classes[1].fp == 1);
  CHECK(rep.classes[1].fn == 1);
  CHECK(rep.classes[1].pq() == 0.0);
}

TEST_CASE("IoU exactly one half stays unmatched; just above matches") {
  // GT: a 10-pixel segment of class 1. Pred overlaps 6 of them.
  auto build = [](i64 extra) {
    PanopticLabelMap pred, gt;
    pred.semantic = Tensor({4, 5});
    pred.instance = Tensor({4, 5});
    gt.semantic = Tensor({4, 5});
    gt.instance = Tensor({4, 5});
    for (i64 p = 0; p < 10; ++p) {
      gt.semantic[p] = 1.0;
      gt.instance[p] = 1.0;
    }
    for (i64 p = 4; p < 10 + extra; ++p) {
      pred.semantic[p] = 1.0;
      pred.instance[p] = 1.0;
    }
    return std::pair{pred, gt};
  };

  {
    const auto [pred, gt] = build(2);  // pred 8 px, IoU = 6/12 = 0.5
    const auto rep = panoptic_quality(pred, gt, 2, {1});
    CHECK(rep.classes[1].tp == 0);
    CHECK(rep.classes[1].pq() == 0.0);
  }
  {
    const auto [pred, gt] = build(1);  // pred 7 px, IoU = 6/11
    const auto rep = panoptic_quality(pred, gt, 2, {1});
    CHECK(rep.classes[1].tp == 1);
    CHECK(rep.classes[1].pq() == doctest::Approx(6.0 / 11.0).epsilon(1e-12));
  }
}

TEST_CASE("matched pairs are unique above the half threshold") {
  Rng rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    const std::vector<i64> thing_ids{1, 2};
    const auto pred = blocky_map(rng, 8, 8, 3, thing_ids, 2);
    const auto gt = blocky_map(rng, 8, 8, 3, thing_ids, 2);
    const auto ps = extract_segments(pred, 3, thing_ids);
    const auto gs = extract_segments(gt, 3, thing_ids);
    std::set<i64> used_p, used_g;
    for (std::size_t p = 0; p < ps.size(); ++p) {
      for (std::size_t g = 0; g < gs.size(); ++g) {
        if (ps[p].cls != gs[g].cls) continue;
        if (segment_iou(ps[p], gs[g]) > 0.5) {
          CHECK(used_p.count(static_cast<i64>(p)) == 0);
          CHECK(used_g.count(static_cast<i64>(g)) == 0);
          used_p.insert(static_cast<i64>(p));
          used_g.insert(static_cast<i64>(g));
        }
      }
    }
  }
}

TEST_CASE("greedy matching equals the exhaustive oracle") {
  Rng rng(4);
  int nonempty = 0;
  for (int trial = 0; trial < 80; ++trial) {
    const std::vector<i64> thing_ids{1, 2};
    const auto pred = blocky_map(rng, 8, 8, 3, thing_ids, 2);
    const auto gt = blocky_map(rng, 8, 8, 3, thing_ids, 2);
    const auto ps = extract_segments(pred, 3, thing_ids);
    const auto gs = extract_segments(gt, 3, thing_ids);
    if (ps.size() > 8 || gs.size() > 8) continue;

    auto greedy = match_greedy(ps, gs);
    std::sort(greedy.begin(), greedy.end());
    const auto exact = match_oracle(ps, gs);
    CHECK(greedy == exact);
    if (!exact.empty()) ++nonempty;
  }
  CHECK(nonempty > 10);  // the comparison must actually exercise matches
}

TEST_CASE("match_oracle trivial cases and size cap") {
  Segment a{1, {0, 1, 2, 3}};
  Segment b{1, {0, 1, 2}};
  const auto m = match_oracle({a}, {b});
  REQUIRE(m.size() == 1);
  CHECK(m[0] == std::pair<i64, i64>{0, 0});

  CHECK(match_oracle({}, {}).empty());

  std::vector<Segment> many(9, a);
  CHECK_THROWS_AS(match_oracle(many, {b}), ConfigError);
}

TEST_CASE("PQ is invariant to instance relabeling on either side") {
  Rng rng(5);
  const std::vector<i64> thing_ids{2};
  const auto gt = blocky_map(rng, 8, 8, 3, thing_ids, 3);
  auto pred = blocky_map(rng, 8, 8, 3, thing_ids, 3);
  const auto rep1 = panoptic_quality(pred, gt, 3, thing_ids);

  // Permute pred's instance ids 1,2,3 -> 3,1,2.
  auto permuted = pred;
  for (i64 p = 0; p < permuted.instance.size(); ++p) {
    const i64 id = static_cast<i64>(std::llround(permuted.instance[p]));
    if (id > 0) permuted.instance[p] = static_cast<double>(id % 3 + 1);
  }
  const auto rep2 = panoptic_quality(permuted, gt, 3, thing_ids);
  CHECK(rep1.pq == doctest::Approx(rep2.pq).epsilon(1e-12));
  CHECK(rep1.sq == doctest::Approx(rep2.sq).epsilon(1e-12));
  CHECK(rep1.rq == doctest::Approx(rep2.rq).epsilon(1e-12));
}

TEST_CASE("scores stay in [0,1] and PQ = SQ x RQ when TP > 0") {
  Rng rng(6);
  for (int trial = 0; trial < 40; ++trial) {
    const std::vector<i64> thing_ids{1, 2};
    const auto pred = blocky_map(rng, 12, 12, 3, thing_ids, 2);
    const auto gt = blocky_map(rng, 12, 12, 3, thing_ids, 2);
    const auto rep = panoptic_quality(pred, gt, 3, thing_ids);
    for (const auto& st : rep.classes) {
      CHECK(st.pq() >= 0.0);
      CHECK(st.pq() <= 1.0);
      CHECK(st.sq() >= 0.0);
      CHECK(st.sq() <= 1.0);
      CHECK(st.rq() >= 0.0);
      CHECK(st.rq() <= 1.0);
      if (st.tp > 0) {
        CHECK(st.pq() == doctest::Approx(st.sq() * st.rq()).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("mean IoU: identical, disjoint, and confusion-matrix oracle") {
  Tensor a({3, 3});
  for (i64 i = 0; i < 9; ++i) a[i] = static_cast<double>(i % 2);
  CHECK(mean_iou(a, a, 3).second == doctest::Approx(1.0).epsilon(1e-12));

  Tensor b({2, 2}), c({2, 2});
  for (i64 i = 0; i < 4; ++i) {
    b[i] = 0.0;
    c[i] = 1.0;
  }
  CHECK(mean_iou(b, c, 2).second == 0.0);

  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor p({6, 6}), g({6, 6});
    for (i64 i = 0; i < 36; ++i) {
      p[i] = static_cast<double>(rng.uniform_int(0, 3));
      g[i] = static_cast<double>(rng.uniform_int(0, 3));
    }
    const auto [per_class, miou] = mean_iou(p, g, 4);

    double expect_sum = 0.0;
    i64 expect_n = 0;
    for (i64 cls = 0; cls < 4; ++cls) {
      i64 tp = 0, in_p = 0, in_g = 0;
      for (i64 i = 0; i < 36; ++i) {
        const bool ip = static_cast<i64>(p[i]) == cls;
        const bool ig = static_cast<i64>(g[i]) == cls;
        tp += ip && ig ? 1 : 0;
        in_p += ip ? 1 : 0;
        in_g += ig ? 1 : 0;
      }
      const i64 uni = in_p + in_g - tp;
      if (uni == 0) continue;
      expect_sum += static_cast<double>(tp) / static_cast<double>(uni);
      ++expect_n;
    }
    CHECK(miou == doctest::Approx(expect_sum / static_cast<double>(expect_n)).epsilon(1e-12));
  }
}

TEST_CASE("dataset-level accumulation matches merged per-sample accumulators") {
  Rng rng(8);
  const std::vector<i64> thing_ids{2};
  PqAccumulator whole(3, thing_ids);
  PqAccumulator part1(3, thing_ids), part2(3, thing_ids);
  for (int i = 0; i < 4; ++i) {
    const auto pred = blocky_map(rng, 8, 8, 3, thing_ids, 2);
    const auto gt = blocky_map(rng, 8, 8, 3, thing_ids, 2);
    whole.add(pred, gt);
    (i < 2 ? part1 : part2).add(pred, gt);
  }
  part1.merge(part2);
  const auto a = whole.finalize();
  const auto b = part1.finalize();
  CHECK(a.pq == b.pq);
  CHECK(a.miou == b.miou);
}

TEST_CASE("csv report has one row per class plus aggregates") {
  Rng rng(9);
  const std::vector<i64> thing_ids{2};
  const auto gt = blocky_map(rng, 8, 8, 3, thing_ids, 2);
  const auto rep = panoptic_quality(gt, gt, 3, thing_ids);
  const std::string csv = pq_report_csv(rep);
  CHECK(csv.find("class,tp,fp,fn,iou_sum,pq,sq,rq\n") == 0);
  CHECK(csv.find("\nthings,") != std::string::npos);
  CHECK(csv.find("\nstuff,") != std::string::npos);
  CHECK(csv.find("\nall,") != std::string::npos);
  CHECK(csv.find("\nmiou,") != std::string::npos);
  CHECK(csv.find("1.000000") != std::string::npos);
}
