#include "protoscale/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "protoscale/kernels.hpp"

namespace protoscale {

namespace {

using detail::Node;
using detail::grad_buffer;

// ---------------------------------------------------------------------------
// Broadcasting

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
  bool same = false;
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r - a.size(), 1), pb(r - b.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  pb.insert(pb.end(), b.begin(), b.end());
  p.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.out[i] = std::max(pa[i], pb[i]);
  }
  auto sa = contiguous_strides(pa), sb = contiguous_strides(pb);
  p.stride_a.resize(r);
  p.stride_b.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    p.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element in order.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t n = element_count(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t inner = p.out[r - 1];
  const std::size_t ia_step = p.stride_a[r - 1], ib_step = p.stride_b[r - 1];
  std::vector<std::size_t> counter(r, 0);
  std::size_t o = 0;
  while (o < n) {
    std::size_t base_a = 0, base_b = 0;
    for (std::size_t d = 0; d + 1 < r; ++d) {
      base_a += counter[d] * p.stride_a[d];
      base_b += counter[d] * p.stride_b[d];
    }
    for (std::size_t j = 0; j < inner; ++j) f(o + j, base_a + j * ia_step, base_b + j * ib_step);
    o += inner;
    for (std::size_t d = r - 1; d-- > 0;) {
      if (++counter[d] < p.out[d]) break;
      counter[d] = 0;
    }
  }
}

// f(a, b) forward; da(a, b, y) and db(a, b, y) are partial derivatives.
template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), name);
  std::vector<double> out(element_count(plan.out));
  auto ad = a.data(), bd = b.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = f(ad[i], bd[j]); });
  Shape shape = plan.out;
  return record(std::move(shape), std::move(out), {a, b}, [plan, da, db](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const auto& g = self.grad;
    const auto& y = self.data;
    const auto& av = na.data;
    const auto& bv = nb.data;
    if (na.requires_grad) {
      auto ga = grad_buffer(na);
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
        ga[i] += g[o] * da(av[i], bv[j], y[o]);
      });
    }
    if (nb.requires_grad) {
      auto gb = grad_buffer(nb);
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
        gb[j] += g[o] * db(av[i], bv[j], y[o]);
      });
    }
  });
}

// f(x) forward; df(x, y) derivative.
template <class F, class DF>
Tensor unary_op(const Tensor& x, F f, DF df) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  return record(x.shape(), std::move(out), {x}, [df](Node& self) {
    Node& nx = *self.parents[0];
    auto gx = grad_buffer(nx);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * df(nx.data[i], self.data[i]);
  });
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  AxisSplit a{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double q) { return -q / y; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary_op(x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary_op(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x, double floor) {
  return unary_op(
      x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
  return unary_op(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor relu(const Tensor& x) {
  return unary_op(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return record(Shape{}, {s}, {x}, [](Node& self) {
    auto gx = grad_buffer(*self.parents[0]);
    const double g = self.grad[0];
    for (auto& v : gx) v += g;
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  const AxisSplit s = split_axis(x.shape(), axis, "sum");
  std::vector<double> out(s.outer * s.inner, 0.0);
  auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.n; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xd[(o * s.n + k) * s.inner + i];
  Shape shape = x.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<long>(axis));
  }
  return record(std::move(shape), std::move(out), {x}, [s](Node& self) {
    auto gx = grad_buffer(*self.parents[0]);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.n; ++k)
        for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.n + k) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  return mul_scalar(sum(x, axis, keepdim), 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor softmax(const Tensor& x, std::size_t axis, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("softmax temperature must be > 0, got " + std::to_string(temperature));
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  auto xd = x.data();
  std::vector<double> out(xd.size());
  const double inv_t = 1.0 / temperature;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.n; ++k) mx = std::max(mx, xd[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const double e = std::exp((xd[base + k * s.inner] - mx) * inv_t);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] /= z;
    }
  }
  return record(x.shape(), std::move(out), {x}, [s, inv_t](Node& self) {
    auto gx = grad_buffer(*self.parents[0]);
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t at = base + k * s.inner;
          gx[at] += inv_t * y[at] * (g[at] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return record(Shape{m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    if (na.requires_grad) kernels::gemm_nt(m, k, n, self.grad.data(), nb.data.data(), grad_buffer(na).data(), true);
    if (nb.requires_grad) kernels::gemm_tn(k, n, m, na.data.data(), self.grad.data(), grad_buffer(nb).data(), true);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() == 2 && b.rank() == 2) return matmul(a, b);
  const bool a3 = a.rank() == 3, b3 = b.rank() == 3;
  auto fail = [&] {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  };
  if ((!a3 && a.rank() != 2) || (!b3 && b.rank() != 2)) fail();
  const std::size_t batch = a3 ? a.dim(0) : b.dim(0);
  if (a3 && b3 && a.dim(0) != b.dim(0)) fail();
  const std::size_t m = a3 ? a.dim(1) : a.dim(0);
  const std::size_t k = a3 ? a.dim(2) : a.dim(1);
  const std::size_t kb = b3 ? b.dim(1) : b.dim(0);
  const std::size_t n = b3 ? b.dim(2) : b.dim(1);
  if (k != kb) fail();
  const std::size_t sa = a3 ? m * k : 0, sb = b3 ? k * n : 0;
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    kernels::gemm_nn(m, n, k, a.data().data() + i * sa, b.data().data() + i * sb, out.data() + i * m * n, false);
  }
  return record(Shape{batch, m, n}, std::move(out), {a, b}, [batch, m, k, n, sa, sb](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    for (std::size_t i = 0; i < batch; ++i) {
      const double* g = self.grad.data() + i * m * n;
      if (na.requires_grad)
        kernels::gemm_nt(m, k, n, g, nb.data.data() + i * sb, grad_buffer(na).data() + i * sa, true);
      if (nb.requires_grad)
        kernels::gemm_tn(k, n, m, na.data.data() + i * sa, g, grad_buffer(nb).data() + i * sb, true);
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& x, Shape shape) {
  if (element_count(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return record(std::move(shape), std::move(out), {x}, [](Node& self) {
    auto gx = grad_buffer(*self.parents[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1) {
  const Shape& in = x.shape();
  if (axis0 >= in.size() || axis1 >= in.size()) {
    throw DimensionError("transpose: axes out of range for " + shape_str(in));
  }
  Shape out_shape = in;
  std::swap(out_shape[axis0], out_shape[axis1]);
  const auto in_strides = contiguous_strides(in);
  auto permuted = in_strides;
  std::swap(permuted[axis0], permuted[axis1]);
  // source[o] = input offset feeding output element o.
  const std::size_t n = x.numel();
  std::vector<std::size_t> source(n);
  std::vector<std::size_t> counter(out_shape.size(), 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < out_shape.size(); ++d) off += counter[d] * permuted[d];
    source[o] = off;
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      if (++counter[d] < out_shape[d]) break;
      counter[d] = 0;
    }
  }
  auto xd = x.data();
  std::vector<double> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = xd[source[o]];
  return record(std::move(out_shape), std::move(out), {x}, [source = std::move(source)](Node& self) {
    auto gx = grad_buffer(*self.parents[0]);
    for (std::size_t o = 0; o < source.size(); ++o) gx[source[o]] += self.grad[o];
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_axis(x.shape(), axis, "slice");
  if (start + length > s.n) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = length;
  auto xd = x.data();
  std::vector<double> out(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xd.begin() + static_cast<long>((o * s.n + start) * s.inner), length * s.inner,
                out.begin() + static_cast<long>(o * length * s.inner));
  return record(std::move(shape), std::move(out), {x}, [s, start, length](Node& self) {
    auto gx = grad_buffer(*self.parents[0]);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < length * s.inner; ++i)
        gx[(o * s.n + start) * s.inner + i] += self.grad[o * length * s.inner + i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw DimensionError("concat: axis out of range for " + shape_str(shape));
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != shape.size()) throw DimensionError("concat: rank mismatch");
    probe[axis] = shape[axis];
    if (probe != shape) {
      throw DimensionError("concat: " + shape_str(p.shape()) + " incompatible with " + shape_str(parts[0].shape()));
    }
    widths.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  const AxisSplit s = split_axis(shape, axis, "concat");
  shape[axis] = total;
  std::vector<double> out(s.outer * total * s.inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto pd = parts[p].data();
    const std::size_t w = widths[p] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pd.begin() + static_cast<long>(o * w), w,
                  out.begin() + static_cast<long>((o * total + offset) * s.inner));
    offset += widths[p];
  }
  return record(std::move(shape), std::move(out), parts, [s, total, widths](Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      Node& np = *self.parents[p];
      const std::size_t w = widths[p] * s.inner;
      if (np.requires_grad) {
        auto gp = grad_buffer(np);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t i = 0; i < w; ++i) gp[o * w + i] += self.grad[(o * total + offset) * s.inner + i];
      }
      offset += widths[p];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  const bool batched = input.rank() == 4;
  if ((!batched && input.rank() != 3) || kernel.rank() != 4) {
    throw DimensionError("conv2d: expected input [C,H,W] or [B,C,H,W] and kernel [Cout,Cin,kh,kw], got " +
                         shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
  }
  if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
  kernels::ConvGeometry g{};
  g.batch = batched ? input.dim(0) : 1;
  g.in_channels = input.dim(batched ? 1 : 0);
  g.height = input.dim(batched ? 2 : 1);
  g.width = input.dim(batched ? 3 : 2);
  g.kernel_h = kernel.dim(2);
  g.kernel_w = kernel.dim(3);
  g.stride = stride;
  g.padding = padding;
  const std::size_t cout = kernel.dim(0);
  if (kernel.dim(1) != g.in_channels) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " does not match input " +
                         shape_str(input.shape()));
  }
  if (g.kernel_h % 2 == 0 || g.kernel_w % 2 == 0) throw ParameterError("conv2d: kernel extents must be odd");
  if (g.height + 2 * padding < g.kernel_h || g.width + 2 * padding < g.kernel_w) {
    throw DimensionError("conv2d: output would be empty for input " + shape_str(input.shape()) + " and kernel " +
                         shape_str(kernel.shape()));
  }
  const std::size_t oh = g.out_h(), ow = g.out_w(), hw = oh * ow;
  const std::size_t rows = g.col_rows(), cols_n = g.col_cols();

  auto cols = std::make_shared<std::vector<double>>(rows * cols_n);
  kernels::im2col(g, input.data().data(), cols->data());
  std::vector<double> flat(cout * cols_n);
  kernels::gemm_nn(cout, cols_n, rows, kernel.data().data(), cols->data(), flat.data(), false);
  // [Cout, B*hw] -> [B, Cout, hw]
  std::vector<double> out(flat.size());
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t c = 0; c < cout; ++c)
      std::copy_n(flat.begin() + static_cast<long>(c * cols_n + b * hw), hw,
                  out.begin() + static_cast<long>((b * cout + c) * hw));

  Shape shape = batched ? Shape{g.batch, cout, oh, ow} : Shape{cout, oh, ow};
  if (!(grad_enabled() && (input.requires_grad() || kernel.requires_grad()))) cols.reset();
  return record(std::move(shape), std::move(out), {input, kernel}, [g, cout, hw, cols](Node& self) {
    Node& nx = *self.parents[0];
    Node& nk = *self.parents[1];
    const std::size_t rows = g.col_rows(), cols_n = g.col_cols();
    std::vector<double> gflat(cout * cols_n);
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t c = 0; c < cout; ++c)
        std::copy_n(self.grad.begin() + static_cast<long>((b * cout + c) * hw), hw,
                    gflat.begin() + static_cast<long>(c * cols_n + b * hw));
    if (nk.requires_grad) kernels::gemm_nt(cout, rows, cols_n, gflat.data(), cols->data(), grad_buffer(nk).data(), true);
    if (nx.requires_grad) {
      std::vector<double> gcols(rows * cols_n);
      kernels::gemm_tn(rows, cols_n, cout, nk.data.data(), gflat.data(), gcols.data(), false);
      kernels::col2im(g, gcols.data(), grad_buffer(nx).data());
    }
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw DimensionError("add_channel_bias: " + shape_str(x.shape()) + " with bias " + shape_str(bias.shape()));
  }
  const std::size_t outer = x.dim(0), c = x.dim(1), inner = x.numel() / (outer * c);
  auto xd = x.data();
  auto bd = bias.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t at = (o * c + k) * inner + i;
        out[at] = xd[at] + bd[k];
      }
  return record(x.shape(), std::move(out), {x, bias}, [outer, c, inner](Node& self) {
    Node& nx = *self.parents[0];
    Node& nb = *self.parents[1];
    if (nx.requires_grad) {
      auto gx = grad_buffer(nx);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto gb = grad_buffer(nb);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < c; ++k) {
          double s = 0.0;
          for (std::size_t i = 0; i < inner; ++i) s += self.grad[(o * c + k) * inner + i];
          gb[k] += s;
        }
    }
  });
}

Tensor upsample_nearest2x(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("upsample_nearest2x: rank must be >= 2");
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t planes = x.numel() / (h * w);
  Shape shape = x.shape();
  shape[shape.size() - 2] = 2 * h;
  shape[shape.size() - 1] = 2 * w;
  auto xd = x.data();
  std::vector<double> out(planes * 4 * h * w);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t z = 0; z < 2 * w; ++z) out[(p * 2 * h + y) * 2 * w + z] = xd[(p * h + y / 2) * w + z / 2];
  return record(std::move(shape), std::move(out), {x}, [planes, h, w](Node& self) {
    auto gx = grad_buffer(*self.parents[0]);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t z = 0; z < 2 * w; ++z) gx[(p * h + y / 2) * w + z / 2] += self.grad[(p * 2 * h + y) * 2 * w + z];
  });
}

// ---------------------------------------------------------------------------
// Distribution matching

Tensor kl_divergence(const Tensor& p, const Tensor& q, std::size_t axis) {
  constexpr double kFloor = 1e-12;
  constexpr double kNormTol = 1e-6;
  if (p.shape() != q.shape()) {
    throw DimensionError("kl_divergence: " + shape_str(p.shape()) + " vs " + shape_str(q.shape()));
  }
  const AxisSplit s = split_axis(p.shape(), axis, "kl_divergence");
  auto pd = p.data(), qd = q.data();
  auto check = [&](std::span<const double> d, const char* name) {
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        double total = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) {
          const double v = d[(o * s.n + k) * s.inner + i];
          if (!(v >= 0.0)) throw DistributionError(std::string("kl_divergence: ") + name + " has a negative or NaN entry");
          total += v;
        }
        if (std::abs(total - 1.0) > kNormTol) {
          throw DistributionError(std::string("kl_divergence: ") + name + " not normalized along axis (sum " +
                                  std::to_string(total) + ")");
        }
      }
  };
  check(pd, "target");
  check(qd, "prediction");
  const double count = static_cast<double>(s.outer * s.inner);
  double total = 0.0;
  for (std::size_t i = 0; i < pd.size(); ++i) {
    if (pd[i] > 0.0) total += pd[i] * (std::log(std::max(pd[i], kFloor)) - std::log(std::max(qd[i], kFloor)));
  }
  // p enters as a detached constant: gradient only reaches q.
  Tensor target = p.detach();
  return record(Shape{}, {total / count}, {target, q}, [count](Node& self) {
    Node& nt = *self.parents[0];
    Node& nq = *self.parents[1];
    auto gq = grad_buffer(nq);
    const double g = self.grad[0] / count;
    for (std::size_t i = 0; i < gq.size(); ++i) {
      if (nq.data[i] > kFloor) gq[i] -= g * nt.data[i] / nq.data[i];
    }
  });
}

Tensor threshold_straight_through(const Tensor& x, double threshold) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] < threshold ? 0.0 : xd[i];
  return record(x.shape(), std::move(out), {x}, [](Node& self) {
    auto gx = grad_buffer(*self.parents[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

}  // namespace protoscale
