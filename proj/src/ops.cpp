// SPDX-License-Identifier: Apache-2.0
#include "gncf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gncf/error.hpp"

namespace gncf {

using detail::Node;
using detail::make_result;

namespace {

// ---------------------------------------------------------------------------
// Broadcasting

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out.resize(r);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  const auto sa = row_major_strides(a);
  const auto sb = row_major_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::ptrdiff_t ia = static_cast<std::ptrdiff_t>(i) -
                              static_cast<std::ptrdiff_t>(r - a.size());
    const std::ptrdiff_t ib = static_cast<std::ptrdiff_t>(i) -
                              static_cast<std::ptrdiff_t>(r - b.size());
    const std::size_t ea = ia >= 0 ? a[static_cast<std::size_t>(ia)] : 1;
    const std::size_t eb = ib >= 0 ? b[static_cast<std::size_t>(ib)] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    }
    p.out[i] = std::max(ea, eb);
    if (ia >= 0 && ea != 1) p.stride_a[i] = sa[static_cast<std::size_t>(ia)];
    if (ib >= 0 && eb != 1) p.stride_b[i] = sb[static_cast<std::size_t>(ib)];
  }
  return p;
}

template <typename Fn>
void for_each_broadcast(const BroadcastPlan& p, Fn&& fn) {
  const std::size_t r = p.out.size();
  const std::size_t n = shape_numel(p.out);
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (std::size_t ax = r; ax-- > 0;) {
      if (++idx[ax] < p.out[ax]) {
        ia += p.stride_a[ax];
        ib += p.stride_b[ax];
        break;
      }
      ia -= p.stride_a[ax] * (p.out[ax] - 1);
      ib -= p.stride_b[ax] * (p.out[ax] - 1);
      idx[ax] = 0;
    }
  }
}

enum class BinaryKind { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  const auto apply = [kind](double x, double y) {
    switch (kind) {
      case BinaryKind::Add: return x + y;
      case BinaryKind::Sub: return x - y;
      case BinaryKind::Mul: return x * y;
    }
    return 0.0;
  };
  const auto av = a.values();
  const auto bv = b.values();

  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(av[i], bv[i]);
    return make_result(a.shape(), std::move(out), {a, b}, [kind](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      const auto& g = self.grad;
      if (pa.requires_grad) {
        auto& ga = pa.grad_buffer();
        if (kind == BinaryKind::Mul) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb.value[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      }
      if (pb.requires_grad) {
        auto& gb = pb.grad_buffer();
        switch (kind) {
          case BinaryKind::Add:
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            break;
          case BinaryKind::Sub:
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            break;
          case BinaryKind::Mul:
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa.value[i];
            break;
        }
      }
    });
  }

  auto plan = plan_broadcast(a.shape(), b.shape(), name);
  std::vector<double> out(shape_numel(plan.out));
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    out[i] = apply(av[ia], bv[ib]);
  });
  Shape out_shape = plan.out;
  return make_result(std::move(out_shape), std::move(out), {a, b},
                     [kind, plan = std::move(plan)](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       const auto& g = self.grad;
                       double* ga = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
                       double* gb = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
                       for_each_broadcast(plan, [&](std::size_t i, std::size_t ia,
                                                    std::size_t ib) {
                         switch (kind) {
                           case BinaryKind::Add:
                             if (ga) ga[ia] += g[i];
                             if (gb) gb[ib] += g[i];
                             break;
                           case BinaryKind::Sub:
                             if (ga) ga[ia] += g[i];
                             if (gb) gb[ib] -= g[i];
                             break;
                           case BinaryKind::Mul:
                             if (ga) ga[ia] += g[i] * pb.value[ib];
                             if (gb) gb[ib] += g[i] * pa.value[ia];
                             break;
                         }
                       });
                     });
}

// ---------------------------------------------------------------------------
// Dense kernels. All accumulate into C.

// C[m,n] += A[m,k] B[k,n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += s * bp[j];
    }
  }
}

// C[m,k] += G[m,n] B[k,n]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* g,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T G[m,n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* g, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += s * gi[j];
    }
  }
}

void require_finite(std::span<const double> v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Mul, "mul"); }

Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("elementwise_mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  return binary(a, b, BinaryKind::Mul, "elementwise_mul");
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), {x}, [factor](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * self.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    Node& px = *self.parents[0];
    auto& gx = px.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (px.value[i] > 0.0) gx[i] += self.grad[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  const auto v = x.values();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  return make_result(Shape{}, {s}, {x}, [](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (auto& g : gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.extent(-2), k = a.extent(-1);
  const std::size_t kb = b.extent(-2), n = b.extent(-1);
  if (k != kb) {
    throw ShapeError("matmul: inner extents differ for " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  BroadcastPlan plan;
  try {
    plan = plan_broadcast(batch_a, batch_b, "matmul");
  } catch (const ShapeError&) {
    throw ShapeError("matmul: batch extents of " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not broadcast");
  }
  Shape out_shape = plan.out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(shape_numel(out_shape), 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    gemm_nn(m, k, n, av + ia * m * k, bv + ib * k * n, out.data() + i * m * n);
  });
  return make_result(std::move(out_shape), std::move(out), {a, b},
                     [plan = std::move(plan), m, k, n](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       const double* g = self.grad.data();
                       double* ga = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
                       double* gb = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
                       for_each_broadcast(plan, [&](std::size_t i, std::size_t ia,
                                                    std::size_t ib) {
                         const double* gi = g + i * m * n;
                         if (ga) gemm_nt(m, n, k, gi, pb.value.data() + ib * k * n,
                                         ga + ia * m * k);
                         if (gb) gemm_tn(m, k, n, pa.value.data() + ia * m * k, gi,
                                         gb + ib * k * n);
                       });
                     });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2: rank < 2 for " + shape_str(x.shape()));
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw ShapeError("permute: axis count does not match " + shape_str(x.shape()));
  std::vector<bool> used(r, false);
  for (auto ax : axes) {
    if (ax >= r || used[ax]) throw ShapeError("permute: invalid axis order for " + shape_str(x.shape()));
    used[ax] = true;
  }
  const auto in_strides = row_major_strides(x.shape());
  BroadcastPlan plan;  // reused as an (output index -> input offset) walker
  plan.out.resize(r);
  plan.stride_a.resize(r);
  plan.stride_b.assign(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    plan.out[i] = x.shape()[axes[i]];
    plan.stride_a[i] = in_strides[axes[i]];
  }
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t) { out[i] = xv[ia]; });
  Shape out_shape = plan.out;
  return make_result(std::move(out_shape), std::move(out), {x},
                     [plan = std::move(plan)](Node& self) {
                       auto& gx = self.parents[0]->grad_buffer();
                       for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t) {
                         gx[ia] += self.grad[i];
                       });
                     });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2 || x.rank() < 1 || x.extent(-1) != w.extent(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  const std::size_t din = w.extent(0), dout = w.extent(1);
  if (b.defined() && (b.rank() != 1 || b.extent(0) != dout)) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  const std::size_t rows = x.numel() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  std::vector<double> out(rows * dout, 0.0);
  if (b.defined()) {
    const auto bv = b.values();
    for (std::size_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), out.begin() + r * dout);
  }
  gemm_nn(rows, din, dout, x.values().data(), w.values().data(), out.data());
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result(std::move(out_shape), std::move(out), std::move(inputs),
                     [rows, din, dout](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pw = *self.parents[1];
                       const double* g = self.grad.data();
                       if (px.requires_grad)
                         gemm_nt(rows, dout, din, g, pw.value.data(), px.grad_buffer().data());
                       if (pw.requires_grad)
                         gemm_tn(rows, din, dout, px.value.data(), g, pw.grad_buffer().data());
                       if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                         auto& gb = self.parents[2]->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < dout; ++j) gb[j] += g[r * dout + j];
                       }
                     });
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax_lastdim: scalar input");
  require_finite(x.values(), "softmax_lastdim");
  const std::size_t d = x.extent(-1);
  const std::size_t rows = x.numel() / d;
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = xv.data() + r * d;
    double* yi = out.data() + r * d;
    const double mx = *std::max_element(xi, xi + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (yi[j] = std::exp(xi[j] - mx));
    for (std::size_t j = 0; j < d; ++j) yi[j] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, d](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * d;
      const double* g = self.grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.extent(-1);
  if (gain.shape() != Shape{d} || shift.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / shift " +
                     shape_str(shift.shape()) + " do not match input " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto sv = shift.values();
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xi[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xi[j] - mu) * inv_std[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + sv[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gain, shift},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& ps = *self.parents[2];
        const auto& g = self.grad;
        if (pg.requires_grad) {
          auto& gg = pg.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
        }
        if (ps.requires_grad) {
          auto& gs = ps.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gs[i % d] += g[i];
        }
        if (px.requires_grad) {
          auto& gx = px.grad_buffer();
          std::vector<double> dh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              dh[j] = g[r * d + j] * pg.value[j];
              m1 += dh[j];
              m2 += dh[j] * xhat[r * d + j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j)
              gx[r * d + j] += inv_std[r] * (dh[j] - m1 - xhat[r * d + j] * m2);
          }
        }
      });
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
                        ConvPadding padding) {
  if (x.rank() < 2) throw ShapeError("depthwise_conv1d: input needs [..., T, C], got " + shape_str(x.shape()));
  const std::size_t t_len = x.extent(-2), c = x.extent(-1);
  if (kernels.rank() != 2 || kernels.extent(0) != c) {
    throw ShapeError("depthwise_conv1d: kernels " + shape_str(kernels.shape()) +
                     " do not match input " + shape_str(x.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{c}) {
    throw ShapeError("depthwise_conv1d: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(c) + " channels");
  }
  const std::size_t k = kernels.extent(1);
  if (k > 2 * t_len + 1) {
    throw ShapeError("depthwise_conv1d: kernel width " + std::to_string(k) +
                     " exceeds 2T+1 for T=" + std::to_string(t_len));
  }
  const std::ptrdiff_t left =
      padding == ConvPadding::Same ? static_cast<std::ptrdiff_t>((k - 1) / 2)
                                   : static_cast<std::ptrdiff_t>(k - 1);
  const std::size_t batches = x.numel() / (t_len * c);
  const auto xv = x.values();
  const auto kv = kernels.values();
  std::vector<double> out(x.numel(), 0.0);
  const auto T = static_cast<std::ptrdiff_t>(t_len);

  // Valid tap range for output t: 0 <= t + j - left < T.
  const auto tap_range = [=](std::ptrdiff_t t) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, left - t);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(k), T - t + left);
    return std::pair{lo, hi};
  };

  for (std::size_t bi = 0; bi < batches; ++bi) {
    const double* xb = xv.data() + bi * t_len * c;
    double* yb = out.data() + bi * t_len * c;
    for (std::ptrdiff_t t = 0; t < T; ++t) {
      double* yt = yb + t * static_cast<std::ptrdiff_t>(c);
      if (bias.defined()) std::copy(bias.values().begin(), bias.values().end(), yt);
      const auto [lo, hi] = tap_range(t);
      for (std::ptrdiff_t j = lo; j < hi; ++j) {
        const double* xs = xb + (t + j - left) * static_cast<std::ptrdiff_t>(c);
        for (std::size_t ch = 0; ch < c; ++ch) yt[ch] += kv[ch * k + static_cast<std::size_t>(j)] * xs[ch];
      }
    }
  }

  std::vector<Tensor> inputs{x, kernels};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      x.shape(), std::move(out), std::move(inputs),
      [=](Node& self) {
        Node& px = *self.parents[0];
        Node& pk = *self.parents[1];
        double* gx = px.requires_grad ? px.grad_buffer().data() : nullptr;
        double* gk = pk.requires_grad ? pk.grad_buffer().data() : nullptr;
        double* gb = (self.parents.size() > 2 && self.parents[2]->requires_grad)
                         ? self.parents[2]->grad_buffer().data()
                         : nullptr;
        for (std::size_t bi = 0; bi < batches; ++bi) {
          const double* xb = px.value.data() + bi * t_len * c;
          const double* gyb = self.grad.data() + bi * t_len * c;
          double* gxb = gx ? gx + bi * t_len * c : nullptr;
          for (std::ptrdiff_t t = 0; t < T; ++t) {
            const double* gy = gyb + t * static_cast<std::ptrdiff_t>(c);
            if (gb) for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += gy[ch];
            const auto [lo, hi] = tap_range(t);
            for (std::ptrdiff_t j = lo; j < hi; ++j) {
              const std::ptrdiff_t s = (t + j - left) * static_cast<std::ptrdiff_t>(c);
              for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t kidx = ch * k + static_cast<std::size_t>(j);
                if (gxb) gxb[s + static_cast<std::ptrdiff_t>(ch)] += pk.value[kidx] * gy[ch];
                if (gk) gk[kidx] += xb[s + static_cast<std::ptrdiff_t>(ch)] * gy[ch];
              }
            }
          }
        }
      });
}

std::vector<Tensor> split_lastdim(const Tensor& x, std::span<const std::size_t> widths) {
  if (x.rank() < 1) throw ShapeError("split_lastdim: scalar input");
  const std::size_t d = x.extent(-1);
  const std::size_t total = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  if (total != d) {
    throw ShapeError("split_lastdim: widths sum to " + std::to_string(total) +
                     " but last extent of " + shape_str(x.shape()) + " is " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.values();
  std::vector<Tensor> parts;
  parts.reserve(widths.size());
  std::size_t offset = 0;
  for (std::size_t w : widths) {
    if (w == 0) throw ShapeError("split_lastdim: zero width");
    Shape s = x.shape();
    s.back() = w;
    std::vector<double> out(rows * w);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(xv.data() + r * d + offset, w, out.data() + r * w);
    parts.push_back(make_result(std::move(s), std::move(out), {x}, [rows, d, w, offset](Node& self) {
      auto& gx = self.parents[0]->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) gx[r * d + offset + j] += self.grad[r * w + j];
    }));
    offset += w;
  }
  return parts;
}

Tensor concat_lastdim(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_lastdim: no inputs");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rank() != lead.size() + 1 || !std::equal(lead.begin(), lead.end(), p.shape().begin())) {
      throw ShapeError("concat_lastdim: " + shape_str(p.shape()) + " does not match " +
                       shape_str(parts[0].shape()));
    }
    widths.push_back(p.extent(-1));
  }
  const std::size_t d = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  const std::size_t rows = shape_numel(lead);
  std::vector<double> out(rows * d);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto pv = parts[i].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.data() + r * widths[i], widths[i], out.data() + r * d + offset);
    offset += widths[i];
  }
  Shape s = lead;
  s.push_back(d);
  return make_result(std::move(s), std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                     [rows, d, widths](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t i = 0; i < widths.size(); ++i) {
                         Node& p = *self.parents[i];
                         if (p.requires_grad) {
                           auto& gp = p.grad_buffer();
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < widths[i]; ++j)
                               gp[r * widths[i] + j] += self.grad[r * d + off + j];
                         }
                         off += widths[i];
                       }
                     });
}

Tensor embedding(const Tensor& table, std::span<const int> ids, Shape lead) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be [V, D], got " + shape_str(table.shape()));
  if (shape_numel(lead) != ids.size()) {
    throw ShapeError("embedding: " + std::to_string(ids.size()) + " ids do not fill " + shape_str(lead));
  }
  const std::size_t vocab = table.extent(0), d = table.extent(1);
  std::vector<int> idx(ids.begin(), ids.end());
  for (int id : idx) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("embedding: token " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
  }
  const auto tv = table.values();
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(tv.data() + static_cast<std::size_t>(idx[i]) * d, d, out.data() + i * d);
  lead.push_back(d);
  return make_result(std::move(lead), std::move(out), {table}, [idx = std::move(idx), d](Node& self) {
    auto& gt = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        gt[static_cast<std::size_t>(idx[i]) * d + j] += self.grad[i * d + j];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index,
                     double label_smoothing) {
  if (logits.rank() != 2 || logits.extent(0) != targets.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  require_finite(logits.values(), "cross_entropy");
  const std::size_t rows = logits.extent(0), v = logits.extent(1);
  const auto lv = logits.values();
  std::vector<double> probs(lv.size());
  std::vector<int> tgt(targets.begin(), targets.end());
  std::size_t count = 0;
  double total = 0.0;
  const double eps = label_smoothing;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* li = lv.data() + r * v;
    double* pi = probs.data() + r * v;
    const double mx = *std::max_element(li, li + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += (pi[j] = std::exp(li[j] - mx));
    for (std::size_t j = 0; j < v; ++j) pi[j] /= z;
    if (tgt[r] == ignore_index) continue;
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= v) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(tgt[r]) +
                              " outside [0, " + std::to_string(v) + ")");
    }
    const double log_z = mx + std::log(z);
    double row = -(1.0 - eps) * (li[tgt[r]] - log_z);
    if (eps != 0.0) {
      double sum_logp = 0.0;
      for (std::size_t j = 0; j < v; ++j) sum_logp += li[j] - log_z;
      row -= eps / static_cast<double>(v) * sum_logp;
    }
    total += row;
    ++count;
  }
  const double loss = count ? total / static_cast<double>(count) : 0.0;
  return make_result(Shape{}, {loss}, {logits},
                     [probs = std::move(probs), tgt = std::move(tgt), rows, v, count, eps,
                      ignore_index](Node& self) {
                       if (count == 0) return;
                       auto& gl = self.parents[0]->grad_buffer();
                       const double s = self.grad[0] / static_cast<double>(count);
                       const double uniform = eps / static_cast<double>(v);
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (tgt[r] == ignore_index) continue;
                         for (std::size_t j = 0; j < v; ++j) {
                           double q = uniform;
                           if (static_cast<int>(j) == tgt[r]) q += 1.0 - eps;
                           gl[r * v + j] += s * (probs[r * v + j] - q);
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be below 1");
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

}  // namespace gncf
