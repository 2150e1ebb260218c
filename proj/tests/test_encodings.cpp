#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "pisr/encodings.hpp"
#include "pisr/grad_check.hpp"
#include "pisr/rng.hpp"

using namespace pisr;
using i64 = std::int64_t;

namespace {

Tensor random_tensor(std::vector<i64> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (i64 i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Independent local-maximum enumeration written against the definition.
std::vector<Candidate> brute_force_centers(const Tensor& m, i64 h, i64 w, i64 k) {
  std::vector<Candidate> all;
  for (i64 r = 0; r < h; ++r) {
    for (i64 c = 0; c < w; ++c) {
      bool ok = true;
      for (i64 rr = r - 1; rr <= r + 1; ++rr) {
        for (i64 cc = c - 1; cc <= c + 1; ++cc) {
          if (rr < 0 || rr >= h || cc < 0 || cc >= w || (rr == r && cc == c)) continue;
          if (m[rr * w + cc] > m[r * w + c]) ok = false;
        }
      }
      if (ok) all.push_back({r, c, m[r * w + c]});
    }
  }
  std::sort(all.begin(), all.end(), [w](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.row * w + a.col < b.row * w + b.col;
  });
  if (static_cast<i64>(all.size()) > k) all.resize(static_cast<std::size_t>(k));
  return all;
}

}  // namespace

TEST_CASE("semantic encodings: one-hot rows sum the features of their pixels") {
  const i64 n_sem = 3, c = 4, hw = 6;
  Rng rng(1);
  Tensor f = random_tensor({c, hw}, rng);
  Tensor s({n_sem, hw});
  for (i64 x = 0; x < hw; ++x) s.at(1, x) = 1.0;  // every pixel belongs to class 1

  Tape tape;
  Var e = encode(tape.leaf(s), tape.leaf(f));
  for (i64 ch = 0; ch < c; ++ch) {
    double expect = 0.0;
    for (i64 x = 0; x < hw; ++x) expect += f.at(ch, x);
    CHECK(e.value().at(1, ch) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(e.value().at(0, ch) == 0.0);
    CHECK(e.value().at(2, ch) == 0.0);
  }
}

TEST_CASE("semantic encodings: uniform map gives identical rows") {
  const i64 n_sem = 3, c = 4, hw = 6;
  Rng rng(2);
  Tensor f = random_tensor({c, hw}, rng);
  Tensor s = Tensor::full({n_sem, hw}, 1.0 / static_cast<double>(n_sem));
  Tape tape;
  Var e = encode(tape.leaf(s), tape.leaf(f));
  for (i64 ch = 0; ch < c; ++ch) {
    double expect = 0.0;
    for (i64 x = 0; x < hw; ++x) expect += f.at(ch, x) / static_cast<double>(n_sem);
    for (i64 r = 0; r < n_sem; ++r) {
      CHECK(e.value().at(r, ch) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("encodings match the explicit summation oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const i64 rows = rng.uniform_int(1, 6), c = rng.uniform_int(1, 5), hw = rng.uniform_int(1, 9);
    Tensor heat = random_tensor({rows, hw}, rng, 0.0, 1.0);
    Tensor f = random_tensor({c, hw}, rng);
    Tape tape;
    Var e = encode(tape.leaf(heat), tape.leaf(f));
    CHECK(oracle::max_abs_diff(e.value(), oracle::encode(heat, f)) <= 1e-12);
  }
}

TEST_CASE("encoding rows scale linearly with their heatmap rows") {
  Rng rng(4);
  Tensor heat = random_tensor({3, 8}, rng, 0.0, 1.0);
  Tensor f = random_tensor({5, 8}, rng);
  Tensor doubled = heat;
  for (i64 x = 0; x < 8; ++x) doubled.at(1, x) *= 2.0;
  Tape tape;
  Var e1 = encode(tape.leaf(heat), tape.leaf(f));
  Var e2 = encode(tape.leaf(doubled), tape.leaf(f));
  for (i64 ch = 0; ch < 5; ++ch) {
    CHECK(e2.value().at(1, ch) == 2.0 * e1.value().at(1, ch));
    CHECK(e2.value().at(0, ch) == e1.value().at(0, ch));
  }
}

TEST_CASE("select_centers: single strict peak") {
  Tensor m({1, 5, 5});
  m.at(0, 2, 3) = 0.9;
  const auto cands = select_centers(m, 1);
  REQUIRE(cands.items.size() == 1);
  CHECK(cands.items[0].row == 2);
  CHECK(cands.items[0].col == 3);
  CHECK(cands.items[0].score == 0.9);
}

TEST_CASE("select_centers: plateau breaks ties in row-major order") {
  Tensor m = Tensor::full({1, 4, 6}, 0.25);
  const auto cands = select_centers(m, 2);
  REQUIRE(cands.items.size() == 2);
  CHECK(cands.items[0].row == 0);
  CHECK(cands.items[0].col == 0);
  CHECK(cands.items[1].row == 0);
  CHECK(cands.items[1].col == 1);
}

TEST_CASE("select_centers equals exhaustive enumeration") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor m = random_tensor({1, 8, 8}, rng, 0.0, 1.0);
    const i64 k = rng.uniform_int(1, 6);
    const auto got = select_centers(m, k);
    const auto want = brute_force_centers(m, 8, 8, k);
    REQUIRE(got.items.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(got.items[i].row == want[i].row);
      CHECK(got.items[i].col == want[i].col);
      CHECK(got.items[i].score == want[i].score);
    }
  }
}

TEST_CASE("select_centers with large K returns exactly all local maxima") {
  Rng rng(6);
  Tensor m = random_tensor({1, 7, 7}, rng, 0.0, 1.0);
  const auto all = brute_force_centers(m, 7, 7, 49);
  const auto got = select_centers(m, 49);
  CHECK(got.items.size() == all.size());
}

TEST_CASE("things_mask basics and argmax oracle") {
  const i64 hw = 6;
  Tensor stuff({3, hw});
  for (i64 x = 0; x < hw; ++x) stuff.at(0, x) = 1.0;
  Tensor ones = things_mask(stuff, {2});
  for (i64 x = 0; x < hw; ++x) CHECK(ones[x] == 0.0);

  Tensor thing({3, hw});
  for (i64 x = 0; x < hw; ++x) thing.at(2, x) = 1.0;
  Tensor mask = things_mask(thing, {2});
  for (i64 x = 0; x < hw; ++x) CHECK(mask[x] == 1.0);

  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor s = random_tensor({4, 9}, rng, 0.0, 1.0);
    Tensor got = things_mask(s, {2, 3});
    for (i64 p = 0; p < 9; ++p) {
      i64 best = 0;
      for (i64 c = 1; c < 4; ++c) {
        if (s.at(c, p) > s.at(best, p)) best = c;
      }
      CHECK(got[p] == (best >= 2 ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("instance heatmaps: exact hit gives 1, mask suppresses, rows pad with zero") {
  const i64 h = 6, w = 6, hw = h * w;
  InstanceCandidates cands;
  cands.items.push_back({2, 3, 0.9});

  // Offsets that point every pixel exactly at (2, 3).
  Tensor o({2, h, w});
  for (i64 r = 0; r < h; ++r) {
    for (i64 c = 0; c < w; ++c) {
      o.at(0, r, c) = static_cast<double>(2 - r);
      o.at(1, r, c) = static_cast<double>(3 - c);
    }
  }
  Tensor mask = Tensor::full({1, hw}, 1.0);
  Tape tape;
  Var heat = instance_heatmaps(cands, tape.leaf(o), mask, 3, h, w);
  CHECK(heat.value().shape() == std::vector<i64>{3, hw});
  for (i64 p = 0; p < hw; ++p) {
    CHECK(heat.value().at(0, p) == 1.0);
    CHECK(heat.value().at(1, p) == 0.0);  // padded rows
    CHECK(heat.value().at(2, p) == 0.0);
  }

  Tensor zero_mask({1, hw});
  Var suppressed = instance_heatmaps(cands, tape.leaf(o), zero_mask, 3, h, w);
  for (i64 i = 0; i < suppressed.value().size(); ++i) CHECK(suppressed.value()[i] == 0.0);
}

TEST_CASE("instance heatmaps match the direct formula and stay in [0,1]") {
  const i64 h = 6, w = 6, hw = h * w;
  Rng rng(8);
  for (int trial = 0; trial < 40; ++trial) {
    InstanceCandidates cands;
    cands.items.push_back({rng.uniform_int(0, h - 1), rng.uniform_int(0, w - 1), 0.8});
    cands.items.push_back({rng.uniform_int(0, h - 1), rng.uniform_int(0, w - 1), 0.7});
    Tensor o = random_tensor({2, h, w}, rng, -4.0, 4.0);
    Tensor mask({1, hw});
    for (i64 p = 0; p < hw; ++p) mask[p] = static_cast<double>(rng.uniform_int(0, 1));

    Tape tape;
    Var heat = instance_heatmaps(cands, tape.leaf(o), mask, 2, h, w);
    const double diag = std::sqrt(static_cast<double>(h * h + w * w));
    for (i64 k = 0; k < 2; ++k) {
      for (i64 r = 0; r < h; ++r) {
        for (i64 c = 0; c < w; ++c) {
          const double dr = cands.items[static_cast<std::size_t>(k)].row -
                            (static_cast<double>(r) + o.at(0, r, c));
          const double dc = cands.items[static_cast<std::size_t>(k)].col -
                            (static_cast<double>(c) + o.at(1, r, c));
          const double expect =
              std::clamp(1.0 - std::sqrt(dr * dr + dc * dc) / diag, 0.0, 1.0) *
              mask[r * w + c];
          const double got = heat.value().at(k, r * w + c);
          CHECK(std::abs(got - expect) <= 1e-12);
          CHECK(got >= 0.0);
          CHECK(got <= 1.0);
        }
      }
    }
  }
}

TEST_CASE("instance heatmaps are differentiable in the offsets") {
  const i64 h = 5, w = 4;
  Rng rng(9);
  InstanceCandidates cands;
  cands.items.push_back({1, 2, 0.9});
  cands.items.push_back({3, 1, 0.8});
  Tensor o = random_tensor({2, h, w}, rng, -1.5, 1.5);
  Tensor mask = Tensor::full({1, h * w}, 1.0);
  mask[3] = 0.0;

  auto fn = [&](Tape& t, const std::vector<Var>& in) {
    Var heat = instance_heatmaps(cands, in[0], mask, 3, h, w);
    Tensor weights({3, h * w});
    Rng wr(321);
    for (i64 i = 0; i < weights.size(); ++i) weights[i] = wr.uniform(-1.0, 1.0);
    return sum(mul(heat, t.constant(weights)));
  };
  const auto res = grad_check(fn, {o}, 1e-6, 1e-4);
  INFO("max_rel_err ", res.max_rel_err, " at ", res.worst);
  CHECK(res.pass);
}

TEST_CASE("reweight: omega forced to 1 reproduces the encodings bitwise") {
  const i64 c = 12, p = 5;
  Rng rng(10);
  ParamStore params;
  init_reweighter(params, "rw", c, rng);
  for (auto& [name, t] : params.items()) {
    for (i64 i = 0; i < t.size(); ++i) t[i] = 0.0;
  }
  params.get("rw.fc2.bias")[0] = 50.0;  // sigmoid(50) == 1.0 in f64

  Tensor e_pan = random_tensor({p, c}, rng);
  Tape tape;
  VarStore vars(tape, params);
  auto [omega, e_tilde] = reweight(vars, "rw", tape.leaf(e_pan));
  for (i64 i = 0; i < p; ++i) CHECK(omega.value()[i] == 1.0);
  for (i64 i = 0; i < e_pan.size(); ++i) CHECK(e_tilde.value()[i] == e_pan[i]);
}

TEST_CASE("reweight: zero row with zero biases gates at one half") {
  const i64 c = 8, p = 3;
  Rng rng(11);
  ParamStore params;
  init_reweighter(params, "rw", c, rng);
  params.get("rw.fc1.bias") = Tensor({reweighter_hidden(c)});
  params.get("rw.fc2.bias") = Tensor({1});

  Tensor e_pan = random_tensor({p, c}, rng);
  for (i64 j = 0; j < c; ++j) e_pan.at(1, j) = 0.0;
  Tape tape;
  VarStore vars(tape, params);
  auto [omega, e_tilde] = reweight(vars, "rw", tape.leaf(e_pan));
  CHECK(omega.value()[1] == 0.5);
  for (i64 j = 0; j < c; ++j) CHECK(e_tilde.value().at(1, j) == 0.0);
}

TEST_CASE("reweight gradients pass finite differences") {
  const i64 c = 6, p = 4;
  Rng rng(12);
  ParamStore params;
  init_reweighter(params, "rw", c, rng);
  std::vector<std::string> names;
  std::vector<Tensor> inputs;
  for (const auto& [name, t] : params.items()) {
    names.push_back(name);
    inputs.push_back(t);
  }
  inputs.push_back(random_tensor({p, c}, rng));

  auto fn = [names](Tape& t, const std::vector<Var>& in) {
    VarStore vars(names, std::vector<Var>(in.begin(), in.end() - 1));
    auto [omega, e_tilde] = reweight(vars, "rw", in.back());
    Tensor weights(e_tilde.value().shape());
    Rng wr(654);
    for (i64 i = 0; i < weights.size(); ++i) weights[i] = wr.uniform(-1.0, 1.0);
    return sum(mul(e_tilde, t.constant(weights)));
  };
  const auto res = grad_check(fn, inputs, 1e-5, 1e-4);
  INFO("max_rel_err ", res.max_rel_err, " at ", res.worst);
  CHECK(res.pass);
}

TEST_CASE("concat_panoptic stacks semantic rows first") {
  Rng rng(13);
  Tensor e_sem = random_tensor({3, 4}, rng);
  Tensor e_ins = random_tensor({2, 4}, rng);
  Tape tape;
  Var e = concat_panoptic(tape.leaf(e_sem), tape.leaf(e_ins));
  CHECK(e.value().shape() == std::vector<i64>{5, 4});
  for (i64 i = 0; i < 3; ++i) {
    for (i64 j = 0; j < 4; ++j) CHECK(e.value().at(i, j) == e_sem.at(i, j));
  }
  for (i64 i = 0; i < 2; ++i) {
    for (i64 j = 0; j < 4; ++j) CHECK(e.value().at(3 + i, j) == e_ins.at(i, j));
  }
}
