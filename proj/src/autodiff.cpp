#include "pisr/autodiff.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <utility>

namespace pisr {

namespace {

using i64 = std::int64_t;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using MapC = Eigen::Map<const RowMat>;

// C[M x N] (+)= op_a(A) * op_b(B), all buffers row-major contiguous.
void gemm(bool trans_a, bool trans_b, i64 m, i64 n, i64 k, const double* a,
          const double* b, double* c, bool accumulate) {
  MapC ma(a, trans_a ? k : m, trans_a ? m : k);
  MapC mb(b, trans_b ? n : k, trans_b ? k : n);
  MapM mc(c, m, n);
  if (!trans_a && !trans_b) {
    if (accumulate) mc.noalias() += ma * mb; else mc.noalias() = ma * mb;
  } else if (trans_a && !trans_b) {
    if (accumulate) mc.noalias() += ma.transpose() * mb; else mc.noalias() = ma.transpose() * mb;
  } else if (!trans_a && trans_b) {
    if (accumulate) mc.noalias() += ma * mb.transpose(); else mc.noalias() = ma * mb.transpose();
  } else {
    if (accumulate) mc.noalias() += ma.transpose() * mb.transpose();
    else mc.noalias() = ma.transpose() * mb.transpose();
  }
}

// Unfolds a [Cin x H x W] image into [Cin*9 x HW] patch columns, zero padded.
Tensor im2col3(const Tensor& x) {
  const i64 cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor col({cin * 9, h * w});
  for (i64 c = 0; c < cin; ++c) {
    for (i64 dy = 0; dy < 3; ++dy) {
      for (i64 dx = 0; dx < 3; ++dx) {
        double* row = col.data() + (c * 9 + dy * 3 + dx) * h * w;
        const double* src = x.data() + c * h * w;
        for (i64 y = 0; y < h; ++y) {
          const i64 sy = y + dy - 1;
          if (sy < 0 || sy >= h) continue;  // stays zero
          for (i64 xx = 0; xx < w; ++xx) {
            const i64 sx = xx + dx - 1;
            if (sx < 0 || sx >= w) continue;
            row[y * w + xx] = src[sy * w + sx];
          }
        }
      }
    }
  }
  return col;
}

// Adjoint of im2col3: folds [Cin*9 x HW] columns back onto a [Cin x H x W] grid.
void col2im3_accum(const Tensor& col, Tensor& gx) {
  const i64 cin = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
  for (i64 c = 0; c < cin; ++c) {
    for (i64 dy = 0; dy < 3; ++dy) {
      for (i64 dx = 0; dx < 3; ++dx) {
        const double* row = col.data() + (c * 9 + dy * 3 + dx) * h * w;
        double* dst = gx.data() + c * h * w;
        for (i64 y = 0; y < h; ++y) {
          const i64 sy = y + dy - 1;
          if (sy < 0 || sy >= h) continue;
          for (i64 xx = 0; xx < w; ++xx) {
            const i64 sx = xx + dx - 1;
            if (sx < 0 || sx >= w) continue;
            dst[sy * w + sx] += row[y * w + xx];
          }
        }
      }
    }
  }
}

Tape& common_tape(std::initializer_list<Var> vars, const char* op) {
  Tape* t = nullptr;
  for (Var v : vars) {
    if (!v.valid()) throw std::logic_error(std::string(op) + ": invalid var");
    if (t == nullptr) t = v.tape();
    if (v.tape() != t) throw std::logic_error(std::string(op) + ": vars from different tapes");
  }
  return *t;
}

struct AxisSpan {
  i64 outer, n, inner;
};

AxisSpan axis_span(const Tensor& x, i64 axis, const char* op) {
  if (axis < 0 || axis >= x.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for " + x.shape_str());
  }
  AxisSpan s{1, x.dim(axis), 1};
  for (i64 i = 0; i < axis; ++i) s.outer *= x.dim(i);
  for (i64 i = axis + 1; i < x.rank(); ++i) s.inner *= x.dim(i);
  return s;
}

i64 flat_cols(const Tensor& t, const char* op) {
  if (t.rank() < 2) throw ShapeError(std::string(op) + ": need rank >= 2, got " + t.shape_str());
  i64 n = 1;
  for (i64 i = 1; i < t.rank(); ++i) n *= t.dim(i);
  return n;
}

}  // namespace

// ---- Tape ------------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(*this); }
const Tensor& Var::grad() const { return tape_->grad(*this); }

Tape::Node& Tape::node(Var v) { return nodes_[static_cast<std::size_t>(v.index())]; }
const Tape::Node& Tape::node(Var v) const { return nodes_[static_cast<std::size_t>(v.index())]; }

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.op = "leaf";
  nodes_.push_back(std::move(n));
  return Var(this, node_count() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = false;
  n.op = "const";
  nodes_.push_back(std::move(n));
  return Var(this, node_count() - 1);
}

Var Tape::make_node(Tensor value, std::vector<Var> parents, std::string op_name,
                    BackwardFn backward) {
  if (check_finite_) {
    for (i64 i = 0; i < value.size(); ++i) {
      if (!std::isfinite(value[i])) {
        throw std::runtime_error("non-finite value produced by op '" + op_name + "'");
      }
    }
  }
  Node n;
  n.value = std::move(value);
  n.op = std::move(op_name);
  for (Var p : parents) {
    if (p.tape() != this) throw std::logic_error("make_node: parent from another tape");
    n.requires_grad = n.requires_grad || node(p).requires_grad;
  }
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, node_count() - 1);
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) throw std::logic_error("grad unavailable for op '" + n.op + "'");
  return n.grad;
}

bool Tape::has_grad(Var v) const { return !node(v).grad.empty(); }

Tensor Tape::grad_or_zero(Var v) const {
  const Node& n = node(v);
  if (!n.grad.empty()) return n.grad;
  Tensor z(n.value.shape(), n.value.dtype());
  return z;
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

const std::string& Tape::op_name(Var v) const { return node(v).op; }

void Tape::accum_grad(Var v, Tensor g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (!n.value.same_shape(g)) {
    throw ShapeError("gradient shape " + g.shape_str() + " does not match value " +
                     n.value.shape_str() + " in op '" + n.op + "'");
  }
  if (n.grad.empty()) {
    n.grad = std::move(g);
  } else {
    double* dst = n.grad.data();
    const double* src = g.data();
    const i64 sz = g.size();
    for (i64 i = 0; i < sz; ++i) dst[i] += src[i];
  }
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw std::logic_error("backward: var from another tape");
  Node& top = node(loss);
  if (top.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + top.value.shape_str());
  }
  top.grad = Tensor::full(top.value.shape(), 1.0, top.value.dtype());
  for (i64 i = loss.index(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.empty() || !n.requires_grad || !n.backward) continue;
    n.backward(*this, n.value, n.grad, n.parents);
  }
}

void Tape::clear() { nodes_.clear(); }

// ---- operations ------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = common_tape({a, b}, "matmul");
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + va.shape_str() + " and " + vb.shape_str());
  }
  const i64 m = va.dim(0), k = va.dim(1), n = vb.dim(1);
  Tensor out({m, n});
  gemm(false, false, m, n, k, va.data(), vb.data(), out.data(), false);
  return t.make_node(std::move(out), {a, b}, "matmul",
                     [m, k, n](Tape& tp, const Tensor&, const Tensor& g,
                               const std::vector<Var>& ps) {
                       if (tp.requires_grad(ps[0])) {
                         Tensor ga({m, k});
                         gemm(false, true, m, k, n, g.data(), tp.value(ps[1]).data(),
                              ga.data(), false);
                         tp.accum_grad(ps[0], std::move(ga));
                       }
                       if (tp.requires_grad(ps[1])) {
                         Tensor gb({k, n});
                         gemm(true, false, k, n, m, tp.value(ps[0]).data(), g.data(),
                              gb.data(), false);
                         tp.accum_grad(ps[1], std::move(gb));
                       }
                     });
}

namespace {

Var conv2d_impl(Var x, Var kernel, Var bias, bool has_bias) {
  Tape& t = has_bias ? common_tape({x, kernel, bias}, "conv2d")
                     : common_tape({x, kernel}, "conv2d");
  const Tensor& vx = t.value(x);
  const Tensor& vk = t.value(kernel);
  if (vx.rank() != 3 || vk.rank() != 4) {
    throw ShapeError("conv2d: need x[Cin x H x W], kernel[Cout x Cin x k x k]; got " +
                     vx.shape_str() + " and " + vk.shape_str());
  }
  const i64 cin = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
  const i64 cout = vk.dim(0), ksz = vk.dim(2);
  if (vk.dim(1) != cin || vk.dim(3) != ksz) {
    throw ShapeError("conv2d: kernel " + vk.shape_str() + " does not match input " +
                     vx.shape_str());
  }
  if (ksz != 1 && ksz != 3) {
    throw ShapeError("conv2d: unsupported kernel size " + std::to_string(ksz) +
                     " (only 1 and 3)");
  }
  if (has_bias) {
    const Tensor& vb = t.value(bias);
    if (vb.rank() != 1 || vb.dim(0) != cout) {
      throw ShapeError("conv2d: bias " + vb.shape_str() + " does not match Cout " +
                       std::to_string(cout));
    }
  }

  const i64 hw = h * w;
  Tensor out({cout, h, w});
  Tensor col;  // cached patch matrix for k=3
  if (ksz == 1) {
    gemm(false, false, cout, hw, cin, vk.data(), vx.data(), out.data(), false);
  } else {
    col = im2col3(vx);
    gemm(false, false, cout, hw, cin * 9, vk.data(), col.data(), out.data(), false);
  }
  if (has_bias) {
    const Tensor& vb = t.value(bias);
    for (i64 c = 0; c < cout; ++c) {
      double* row = out.data() + c * hw;
      const double b = vb[c];
      for (i64 i = 0; i < hw; ++i) row[i] += b;
    }
  }

  std::vector<Var> parents = has_bias ? std::vector<Var>{x, kernel, bias}
                                      : std::vector<Var>{x, kernel};
  auto backward = [cin, cout, h, w, ksz, has_bias, col = std::move(col)](
                      Tape& tp, const Tensor&, const Tensor& g,
                      const std::vector<Var>& ps) {
    const i64 hw = h * w;
    if (has_bias && tp.requires_grad(ps[2])) {
      Tensor gb({cout});
      for (i64 c = 0; c < cout; ++c) {
        double s = 0.0;
        const double* row = g.data() + c * hw;
        for (i64 i = 0; i < hw; ++i) s += row[i];
        gb[c] = s;
      }
      tp.accum_grad(ps[2], std::move(gb));
    }
    const Tensor& vk = tp.value(ps[1]);
    if (ksz == 1) {
      if (tp.requires_grad(ps[1])) {
        Tensor gk({cout, cin, 1, 1});
        gemm(false, true, cout, cin, hw, g.data(), tp.value(ps[0]).data(), gk.data(), false);
        tp.accum_grad(ps[1], std::move(gk));
      }
      if (tp.requires_grad(ps[0])) {
        Tensor gx({cin, h, w});
        gemm(true, false, cin, hw, cout, vk.data(), g.data(), gx.data(), false);
        tp.accum_grad(ps[0], std::move(gx));
      }
    } else {
      if (tp.requires_grad(ps[1])) {
        Tensor gk({cout, cin, 3, 3});
        gemm(false, true, cout, cin * 9, hw, g.data(), col.data(), gk.data(), false);
        tp.accum_grad(ps[1], std::move(gk));
      }
      if (tp.requires_grad(ps[0])) {
        Tensor gcol({cin * 9, hw});
        gemm(true, false, cin * 9, hw, cout, vk.data(), g.data(), gcol.data(), false);
        Tensor gx({cin, h, w});
        col2im3_accum(gcol, gx);
        tp.accum_grad(ps[0], std::move(gx));
      }
    }
  };
  return t.make_node(std::move(out), std::move(parents), "conv2d", std::move(backward));
}

}  // namespace

Var conv2d(Var x, Var kernel) { return conv2d_impl(x, kernel, Var(), false); }
Var conv2d(Var x, Var kernel, Var bias) { return conv2d_impl(x, kernel, bias, true); }

Var softmax(Var x, i64 axis) {
  Tape& t = common_tape({x}, "softmax");
  const Tensor& vx = t.value(x);
  const AxisSpan s = axis_span(vx, axis, "softmax");
  Tensor out(vx.shape());
  for (i64 o = 0; o < s.outer; ++o) {
    for (i64 in = 0; in < s.inner; ++in) {
      const i64 base = o * s.n * s.inner + in;
      double mx = vx[base];
      for (i64 j = 1; j < s.n; ++j) mx = std::max(mx, vx[base + j * s.inner]);
      double denom = 0.0;
      for (i64 j = 0; j < s.n; ++j) {
        const double e = std::exp(vx[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        denom += e;
      }
      for (i64 j = 0; j < s.n; ++j) out[base + j * s.inner] /= denom;
    }
  }
  return t.make_node(std::move(out), {x}, "softmax",
                     [s](Tape& tp, const Tensor& y, const Tensor& g,
                         const std::vector<Var>& ps) {
                       Tensor gx(y.shape());
                       for (i64 o = 0; o < s.outer; ++o) {
                         for (i64 in = 0; in < s.inner; ++in) {
                           const i64 base = o * s.n * s.inner + in;
                           double dot = 0.0;
                           for (i64 j = 0; j < s.n; ++j) {
                             const i64 idx = base + j * s.inner;
                             dot += g[idx] * y[idx];
                           }
                           for (i64 j = 0; j < s.n; ++j) {
                             const i64 idx = base + j * s.inner;
                             gx[idx] = y[idx] * (g[idx] - dot);
                           }
                         }
                       }
                       tp.accum_grad(ps[0], std::move(gx));
                     });
}

Var sigmoid(Var x) {
  Tape& t = common_tape({x}, "sigmoid");
  const Tensor& vx = t.value(x);
  Tensor out(vx.shape());
  for (i64 i = 0; i < vx.size(); ++i) {
    const double v = vx[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return t.make_node(std::move(out), {x}, "sigmoid",
                     [](Tape& tp, const Tensor& y, const Tensor& g,
                        const std::vector<Var>& ps) {
                       Tensor gx(y.shape());
                       for (i64 i = 0; i < y.size(); ++i) {
                         gx[i] = g[i] * y[i] * (1.0 - y[i]);
                       }
                       tp.accum_grad(ps[0], std::move(gx));
                     });
}

Var relu(Var x) {
  Tape& t = common_tape({x}, "relu");
  const Tensor& vx = t.value(x);
  Tensor out(vx.shape());
  for (i64 i = 0; i < vx.size(); ++i) out[i] = vx[i] > 0.0 ? vx[i] : 0.0;
  return t.make_node(std::move(out), {x}, "relu",
                     [](Tape& tp, const Tensor&, const Tensor& g,
                        const std::vector<Var>& ps) {
                       const Tensor& vx = tp.value(ps[0]);
                       Tensor gx(vx.shape());
                       for (i64 i = 0; i < vx.size(); ++i) {
                         gx[i] = vx[i] > 0.0 ? g[i] : 0.0;
                       }
                       tp.accum_grad(ps[0], std::move(gx));
                     });
}

namespace {

template <class Fwd>
Var elementwise_binary(Var a, Var b, const char* name, Fwd fwd,
                       Tape::BackwardFn backward) {
  Tape& t = common_tape({a, b}, name);
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  require_same_shape(va, vb, name);
  Tensor out(va.shape());
  for (i64 i = 0; i < va.size(); ++i) out[i] = fwd(va[i], vb[i]);
  return t.make_node(std::move(out), {a, b}, name, std::move(backward));
}

}  // namespace

Var add(Var a, Var b) {
  return elementwise_binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](Tape& tp, const Tensor&, const Tensor& g, const std::vector<Var>& ps) {
        tp.accum_grad(ps[0], g);
        tp.accum_grad(ps[1], g);
      });
}

Var sub(Var a, Var b) {
  return elementwise_binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](Tape& tp, const Tensor&, const Tensor& g, const std::vector<Var>& ps) {
        tp.accum_grad(ps[0], g);
        Tensor gb(g.shape());
        for (i64 i = 0; i < g.size(); ++i) gb[i] = -g[i];
        tp.accum_grad(ps[1], std::move(gb));
      });
}

Var mul(Var a, Var b) {
  return elementwise_binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](Tape& tp, const Tensor&, const Tensor& g, const std::vector<Var>& ps) {
        const Tensor& va = tp.value(ps[0]);
        const Tensor& vb = tp.value(ps[1]);
        if (tp.requires_grad(ps[0])) {
          Tensor ga(g.shape());
          for (i64 i = 0; i < g.size(); ++i) ga[i] = g[i] * vb[i];
          tp.accum_grad(ps[0], std::move(ga));
        }
        if (tp.requires_grad(ps[1])) {
          Tensor gb(g.shape());
          for (i64 i = 0; i < g.size(); ++i) gb[i] = g[i] * va[i];
          tp.accum_grad(ps[1], std::move(gb));
        }
      });
}

Var scale(Var a, double s) {
  Tape& t = common_tape({a}, "scale");
  const Tensor& va = t.value(a);
  Tensor out(va.shape());
  for (i64 i = 0; i < va.size(); ++i) out[i] = va[i] * s;
  return t.make_node(std::move(out), {a}, "scale",
                     [s](Tape& tp, const Tensor&, const Tensor& g,
                         const std::vector<Var>& ps) {
                       Tensor ga(g.shape());
                       for (i64 i = 0; i < g.size(); ++i) ga[i] = g[i] * s;
                       tp.accum_grad(ps[0], std::move(ga));
                     });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& t = *parts[0].tape();
  i64 rows = 0;
  i64 cols = -1;
  for (Var p : parts) {
    const Tensor& v = t.value(p);
    if (v.rank() != 2) throw ShapeError("concat_rows: need rank 2, got " + v.shape_str());
    if (cols < 0) cols = v.dim(1);
    if (v.dim(1) != cols) {
      throw ShapeError("concat_rows: column mismatch " + std::to_string(cols) + " vs " +
                       v.shape_str());
    }
    rows += v.dim(0);
  }
  Tensor out({rows, cols});
  i64 r = 0;
  std::vector<i64> offsets;
  for (Var p : parts) {
    const Tensor& v = t.value(p);
    offsets.push_back(r);
    std::copy(v.data(), v.data() + v.size(), out.data() + r * cols);
    r += v.dim(0);
  }
  return t.make_node(std::move(out), parts, "concat_rows",
                     [offsets, cols](Tape& tp, const Tensor&, const Tensor& g,
                                     const std::vector<Var>& ps) {
                       for (std::size_t i = 0; i < ps.size(); ++i) {
                         if (!tp.requires_grad(ps[i])) continue;
                         const Tensor& v = tp.value(ps[i]);
                         Tensor gp(v.shape());
                         std::copy(g.data() + offsets[i] * cols,
                                   g.data() + offsets[i] * cols + v.size(), gp.data());
                         tp.accum_grad(ps[i], std::move(gp));
                       }
                     });
}

Var transpose(Var a) {
  Tape& t = common_tape({a}, "transpose");
  const Tensor& va = t.value(a);
  if (va.rank() != 2) throw ShapeError("transpose: need rank 2, got " + va.shape_str());
  const i64 m = va.dim(0), n = va.dim(1);
  Tensor out({n, m});
  for (i64 i = 0; i < m; ++i) {
    for (i64 j = 0; j < n; ++j) out.at(j, i) = va.at(i, j);
  }
  return t.make_node(std::move(out), {a}, "transpose",
                     [m, n](Tape& tp, const Tensor&, const Tensor& g,
                            const std::vector<Var>& ps) {
                       Tensor ga({m, n});
                       for (i64 j = 0; j < n; ++j) {
                         for (i64 i = 0; i < m; ++i) ga.at(i, j) = g.at(j, i);
                       }
                       tp.accum_grad(ps[0], std::move(ga));
                     });
}

Var sum(Var a) {
  Tape& t = common_tape({a}, "sum");
  const Tensor& va = t.value(a);
  double s = 0.0;
  for (i64 i = 0; i < va.size(); ++i) s += va[i];
  return t.make_node(Tensor::scalar(s), {a}, "sum",
                     [](Tape& tp, const Tensor&, const Tensor& g,
                        const std::vector<Var>& ps) {
                       const Tensor& va = tp.value(ps[0]);
                       tp.accum_grad(ps[0], Tensor::full(va.shape(), g[0]));
                     });
}

Var sum_axis(Var a, i64 axis) {
  Tape& t = common_tape({a}, "sum_axis");
  const Tensor& va = t.value(a);
  const AxisSpan s = axis_span(va, axis, "sum_axis");
  std::vector<i64> out_shape;
  for (i64 i = 0; i < va.rank(); ++i) {
    if (i != axis) out_shape.push_back(va.dim(i));
  }
  Tensor out = out_shape.empty() ? Tensor::scalar(0.0) : Tensor(out_shape);
  for (i64 o = 0; o < s.outer; ++o) {
    for (i64 in = 0; in < s.inner; ++in) {
      double acc = 0.0;
      for (i64 j = 0; j < s.n; ++j) acc += va[o * s.n * s.inner + j * s.inner + in];
      out[o * s.inner + in] = acc;
    }
  }
  return t.make_node(std::move(out), {a}, "sum_axis",
                     [s](Tape& tp, const Tensor&, const Tensor& g,
                         const std::vector<Var>& ps) {
                       const Tensor& va = tp.value(ps[0]);
                       Tensor ga(va.shape());
                       for (i64 o = 0; o < s.outer; ++o) {
                         for (i64 in = 0; in < s.inner; ++in) {
                           const double gv = g[o * s.inner + in];
                           for (i64 j = 0; j < s.n; ++j) {
                             ga[o * s.n * s.inner + j * s.inner + in] = gv;
                           }
                         }
                       }
                       tp.accum_grad(ps[0], std::move(ga));
                     });
}

Var reshape(Var a, std::vector<i64> shape) {
  Tape& t = common_tape({a}, "reshape");
  const Tensor& va = t.value(a);
  if (Tensor::count(shape) != va.size()) {
    throw ShapeError("reshape: cannot view " + va.shape_str() + " as " +
                     Tensor::shape_string(shape));
  }
  Tensor out = Tensor::from_data(shape, va.values(), va.dtype());
  return t.make_node(std::move(out), {a}, "reshape",
                     [](Tape& tp, const Tensor&, const Tensor& g,
                        const std::vector<Var>& ps) {
                       const Tensor& va = tp.value(ps[0]);
                       tp.accum_grad(ps[0], Tensor::from_data(va.shape(), g.values()));
                     });
}

Var row_scale(Var m, Var w) {
  Tape& t = common_tape({m, w}, "row_scale");
  const Tensor& vm = t.value(m);
  const Tensor& vw = t.value(w);
  if (vm.rank() != 2 || vw.size() != vm.dim(0)) {
    throw ShapeError("row_scale: matrix " + vm.shape_str() + " vs weights " + vw.shape_str());
  }
  const i64 p = vm.dim(0), c = vm.dim(1);
  Tensor out({p, c});
  for (i64 i = 0; i < p; ++i) {
    for (i64 j = 0; j < c; ++j) out.at(i, j) = vm.at(i, j) * vw[i];
  }
  return t.make_node(std::move(out), {m, w}, "row_scale",
                     [p, c](Tape& tp, const Tensor&, const Tensor& g,
                            const std::vector<Var>& ps) {
                       const Tensor& vm = tp.value(ps[0]);
                       const Tensor& vw = tp.value(ps[1]);
                       if (tp.requires_grad(ps[0])) {
                         Tensor gm({p, c});
                         for (i64 i = 0; i < p; ++i) {
                           for (i64 j = 0; j < c; ++j) gm.at(i, j) = g.at(i, j) * vw[i];
                         }
                         tp.accum_grad(ps[0], std::move(gm));
                       }
                       if (tp.requires_grad(ps[1])) {
                         Tensor gw(vw.shape());
                         for (i64 i = 0; i < p; ++i) {
                           double s = 0.0;
                           for (i64 j = 0; j < c; ++j) s += g.at(i, j) * vm.at(i, j);
                           gw[i] = s;
                         }
                         tp.accum_grad(ps[1], std::move(gw));
                       }
                     });
}

Var add_row_bias(Var x, Var b) {
  Tape& t = common_tape({x, b}, "add_row_bias");
  const Tensor& vx = t.value(x);
  const Tensor& vb = t.value(b);
  if (vx.rank() != 2 || vb.size() != vx.dim(1)) {
    throw ShapeError("add_row_bias: " + vx.shape_str() + " vs bias " + vb.shape_str());
  }
  const i64 p = vx.dim(0), d = vx.dim(1);
  Tensor out({p, d});
  for (i64 i = 0; i < p; ++i) {
    for (i64 j = 0; j < d; ++j) out.at(i, j) = vx.at(i, j) + vb[j];
  }
  return t.make_node(std::move(out), {x, b}, "add_row_bias",
                     [p, d](Tape& tp, const Tensor&, const Tensor& g,
                            const std::vector<Var>& ps) {
                       tp.accum_grad(ps[0], g);
                       if (tp.requires_grad(ps[1])) {
                         Tensor gb(tp.value(ps[1]).shape());
                         for (i64 j = 0; j < d; ++j) {
                           double s = 0.0;
                           for (i64 i = 0; i < p; ++i) s += g.at(i, j);
                           gb[j] = s;
                         }
                         tp.accum_grad(ps[1], std::move(gb));
                       }
                     });
}

Var add_col_bias(Var x, Var b) {
  Tape& t = common_tape({x, b}, "add_col_bias");
  const Tensor& vx = t.value(x);
  const Tensor& vb = t.value(b);
  if (vx.rank() != 2 || vb.size() != vx.dim(0)) {
    throw ShapeError("add_col_bias: " + vx.shape_str() + " vs bias " + vb.shape_str());
  }
  const i64 p = vx.dim(0), n = vx.dim(1);
  Tensor out({p, n});
  for (i64 i = 0; i < p; ++i) {
    for (i64 j = 0; j < n; ++j) out.at(i, j) = vx.at(i, j) + vb[i];
  }
  return t.make_node(std::move(out), {x, b}, "add_col_bias",
                     [p, n](Tape& tp, const Tensor&, const Tensor& g,
                            const std::vector<Var>& ps) {
                       tp.accum_grad(ps[0], g);
                       if (tp.requires_grad(ps[1])) {
                         Tensor gb(tp.value(ps[1]).shape());
                         for (i64 i = 0; i < p; ++i) {
                           double s = 0.0;
                           for (i64 j = 0; j < n; ++j) s += g.at(i, j);
                           gb[i] = s;
                         }
                         tp.accum_grad(ps[1], std::move(gb));
                       }
                     });
}

Var mask_cols(Var x, const Tensor& mask) {
  Tape& t = common_tape({x}, "mask_cols");
  const Tensor& vx = t.value(x);
  if (vx.rank() != 2 || mask.size() != vx.dim(1)) {
    throw ShapeError("mask_cols: " + vx.shape_str() + " vs mask " + mask.shape_str());
  }
  const i64 k = vx.dim(0), n = vx.dim(1);
  Tensor out({k, n});
  for (i64 i = 0; i < k; ++i) {
    for (i64 j = 0; j < n; ++j) out.at(i, j) = vx.at(i, j) * mask[j];
  }
  Tensor mask_copy = mask;
  return t.make_node(std::move(out), {x}, "mask_cols",
                     [k, n, mask_copy](Tape& tp, const Tensor&, const Tensor& g,
                                       const std::vector<Var>& ps) {
                       Tensor gx({k, n});
                       for (i64 i = 0; i < k; ++i) {
                         for (i64 j = 0; j < n; ++j) gx.at(i, j) = g.at(i, j) * mask_copy[j];
                       }
                       tp.accum_grad(ps[0], std::move(gx));
                     });
}

Var mse(Var pred, const Tensor& target) {
  Tape& t = common_tape({pred}, "mse");
  const Tensor& vp = t.value(pred);
  require_same_shape(vp, target, "mse");
  const i64 n = vp.size();
  double s = 0.0;
  for (i64 i = 0; i < n; ++i) {
    const double d = vp[i] - target[i];
    s += d * d;
  }
  Tensor target_copy = target;
  return t.make_node(Tensor::scalar(s / static_cast<double>(n)), {pred}, "mse",
                     [target_copy, n](Tape& tp, const Tensor&, const Tensor& g,
                                      const std::vector<Var>& ps) {
                       const Tensor& vp = tp.value(ps[0]);
                       Tensor gp(vp.shape());
                       const double c = 2.0 * g[0] / static_cast<double>(n);
                       for (i64 i = 0; i < n; ++i) gp[i] = c * (vp[i] - target_copy[i]);
                       tp.accum_grad(ps[0], std::move(gp));
                     });
}

Var l1(Var pred, const Tensor& target) {
  Tape& t = common_tape({pred}, "l1");
  const Tensor& vp = t.value(pred);
  require_same_shape(vp, target, "l1");
  const i64 n = vp.size();
  double s = 0.0;
  for (i64 i = 0; i < n; ++i) s += std::abs(vp[i] - target[i]);
  Tensor target_copy = target;
  return t.make_node(Tensor::scalar(s / static_cast<double>(n)), {pred}, "l1",
                     [target_copy, n](Tape& tp, const Tensor&, const Tensor& g,
                                      const std::vector<Var>& ps) {
                       const Tensor& vp = tp.value(ps[0]);
                       Tensor gp(vp.shape());
                       const double c = g[0] / static_cast<double>(n);
                       for (i64 i = 0; i < n; ++i) {
                         const double d = vp[i] - target_copy[i];
                         gp[i] = d > 0.0 ? c : (d < 0.0 ? -c : 0.0);
                       }
                       tp.accum_grad(ps[0], std::move(gp));
                     });
}

Var l1_masked(Var pred, const Tensor& target, const Tensor& mask) {
  Tape& t = common_tape({pred}, "l1_masked");
  const Tensor& vp = t.value(pred);
  require_same_shape(vp, target, "l1_masked");
  const i64 channels = vp.dim(0);
  const i64 hw = flat_cols(vp, "l1_masked");
  if (mask.size() != hw) {
    throw ShapeError("l1_masked: mask " + mask.shape_str() + " does not cover " +
                     vp.shape_str());
  }
  double mask_sum = 0.0;
  for (i64 i = 0; i < hw; ++i) mask_sum += mask[i];
  const double denom = std::max(1.0, mask_sum * static_cast<double>(channels));
  double s = 0.0;
  for (i64 c = 0; c < channels; ++c) {
    for (i64 i = 0; i < hw; ++i) {
      s += std::abs(vp[c * hw + i] - target[c * hw + i]) * mask[i];
    }
  }
  Tensor target_copy = target;
  Tensor mask_copy = mask;
  return t.make_node(
      Tensor::scalar(s / denom), {pred}, "l1_masked",
      [target_copy, mask_copy, channels, hw, denom](Tape& tp, const Tensor&,
                                                    const Tensor& g,
                                                    const std::vector<Var>& ps) {
        const Tensor& vp = tp.value(ps[0]);
        Tensor gp(vp.shape());
        const double c0 = g[0] / denom;
        for (i64 c = 0; c < channels; ++c) {
          for (i64 i = 0; i < hw; ++i) {
            const double d = vp[c * hw + i] - target_copy[c * hw + i];
            const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            gp[c * hw + i] = c0 * sgn * mask_copy[i];
          }
        }
        tp.accum_grad(ps[0], std::move(gp));
      });
}

Var cross_entropy(Var logits, const Tensor& targets, i64 ignore_label) {
  Tape& t = common_tape({logits}, "cross_entropy");
  const Tensor& vx = t.value(logits);
  const i64 n_cls = vx.dim(0);
  const i64 hw = flat_cols(vx, "cross_entropy");
  if (targets.size() != hw) {
    throw ShapeError("cross_entropy: targets " + targets.shape_str() +
                     " do not cover logits " + vx.shape_str());
  }

  Tensor probs({n_cls, hw});
  std::vector<i64> tgt(static_cast<std::size_t>(hw));
  double loss = 0.0;
  i64 n_valid = 0;
  for (i64 p = 0; p < hw; ++p) {
    const i64 label = static_cast<i64>(std::llround(targets[p]));
    tgt[static_cast<std::size_t>(p)] = label;
    double mx = vx[p];
    for (i64 c = 1; c < n_cls; ++c) mx = std::max(mx, vx[c * hw + p]);
    double denom = 0.0;
    for (i64 c = 0; c < n_cls; ++c) {
      const double e = std::exp(vx[c * hw + p] - mx);
      probs[c * hw + p] = e;
      denom += e;
    }
    for (i64 c = 0; c < n_cls; ++c) probs[c * hw + p] /= denom;
    if (label == ignore_label) continue;
    if (label < 0 || label >= n_cls) {
      throw ConfigError("cross_entropy: target " + std::to_string(label) +
                        " outside [0, " + std::to_string(n_cls) + ")");
    }
    loss += std::log(denom) + mx - vx[label * hw + p];
    ++n_valid;
  }
  const double inv = n_valid > 0 ? 1.0 / static_cast<double>(n_valid) : 0.0;
  return t.make_node(
      Tensor::scalar(loss * inv), {logits}, "cross_entropy",
      [probs = std::move(probs), tgt = std::move(tgt), n_cls, hw, inv, ignore_label](
          Tape& tp, const Tensor&, const Tensor& g, const std::vector<Var>& ps) {
        const Tensor& vx = tp.value(ps[0]);
        Tensor gx(vx.shape());
        const double c0 = g[0] * inv;
        for (i64 p = 0; p < hw; ++p) {
          const i64 label = tgt[static_cast<std::size_t>(p)];
          if (label == ignore_label) continue;
          for (i64 c = 0; c < n_cls; ++c) {
            const double onehot = c == label ? 1.0 : 0.0;
            gx[c * hw + p] = c0 * (probs[c * hw + p] - onehot);
          }
        }
        tp.accum_grad(ps[0], std::move(gx));
      });
}

}  // namespace pisr
