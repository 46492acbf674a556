#include "mimnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace mimnet::ops {
namespace {

template <typename T>
using Node = detail::Node<T>;
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
Tensor<T> make(Shape shape, std::vector<T> value, std::initializer_list<const Tensor<T>*> inputs,
               std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->leaf = false;
  bool any = false;
  for (const auto* in : inputs) any = any || in->requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const auto* in : inputs) {
      node->parents.push_back(in->node());
      node->needs.push_back(in->requires_grad() ? 1 : 0);
    }
    node->backward_fn = std::move(fn);
  }
  return Tensor<T>::from_node(std::move(node));
}

// Variadic-input flavour used by concat/add_n.
template <typename T>
Tensor<T> make_many(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                    std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->leaf = false;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const auto& in : inputs) {
      node->parents.push_back(in.node());
      node->needs.push_back(in.requires_grad() ? 1 : 0);
    }
    node->backward_fn = std::move(fn);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                         " differ");
  }
}

// ---------------------------------------------------------------- broadcasting

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  p.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    p.out[i] = std::max(pa[i], pb[i]);
  }
  auto sa = strides_of(pa), sb = strides_of(pb);
  p.stride_a.resize(rank);
  p.stride_b.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    p.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) over the broadcast output.
template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t n = numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t rank = p.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * p.out[d];
      ib -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA da, DB db) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape(), name));
  std::vector<T> out(numel(plan->out));
  const auto& av = a.values();
  const auto& bv = b.values();
  for_each_broadcast(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = f(av[ia], bv[ib]); });
  return make<T>(plan->out, std::move(out), {&a, &b}, [plan, da, db](Node<T>& self) {
    const auto& x = self.parent_value(0);
    const auto& y = self.parent_value(1);
    const auto& g = self.grad;
    if (self.parent_needs(0)) {
      auto& gx = self.parent_grad(0);
      for_each_broadcast(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        gx[ia] += g[i] * da(x[ia], y[ib]);
      });
    }
    if (self.parent_needs(1)) {
      auto& gy = self.parent_grad(1);
      for_each_broadcast(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        gy[ib] += g[i] * db(x[ia], y[ib]);
      });
    }
  });
}

// dfdx receives the input and the forward output.
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F f, D dfdx) {
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make<T>(x.shape(), std::move(out), {&x}, [dfdx](Node<T>& self) {
    const auto& xv = self.parent_value(0);
    auto& gx = self.parent_grad(0);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
  });
}

template <typename T>
void check_no_nan(const Tensor<T>& x, const char* op) {
  for (T v : x.values()) {
    if (std::isnan(v)) throw NumericError(std::string(op) + ": NaN input");
  }
}

template <typename T>
T stable_sigmoid(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

// ------------------------------------------------------------------ arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> one_minus(const Tensor<T>& a) {
  return unary(a, [](T x) { return T(1) - x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& terms) {
  if (terms.empty()) throw DimensionError("add_n: no terms");
  std::vector<T> out(terms[0].values());
  for (std::size_t k = 1; k < terms.size(); ++k) {
    require_same_shape(terms[0], terms[k], "add_n");
    const auto& v = terms[k].values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  return make_many<T>(terms[0].shape(), std::move(out), terms, [](Node<T>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      if (!self.parent_needs(k)) continue;
      auto& g = self.parent_grad(k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

// ------------------------------------------------------------------ pointwise

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.values()) {
    if (!(v > T(0))) throw NumericError("log: non-positive or NaN input " + std::to_string(v));
  }
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(x, [](T v) { return stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return unary(
      x, [slope](T v) { return v > T(0) ? v : slope * v; }, [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> log_sigmoid(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::min(v, T(0)) - std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) { return stable_sigmoid(-v); });
}

template <typename T>
Tensor<T> log1mexp(const Tensor<T>& x) {
  check_no_nan(x, "log1mexp");
  const T cap = -std::numeric_limits<T>::epsilon();
  return unary(
      x,
      [cap](T v) {
        v = std::min(v, cap);
        return v > -T(0.6931471805599453) ? std::log(-std::expm1(v)) : std::log1p(-std::exp(v));
      },
      [cap](T v, T) { return v > cap ? T(0) : T(-1) / std::expm1(-v); });
}

// ------------------------------------------------------------------ softmax

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  check_no_nan(x, "softmax");
  const auto sp = split_axis(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < sp.len; ++k) mx = std::max(mx, xv[base + k * sp.inner]);
      T total = 0;
      for (std::size_t k = 0; k < sp.len; ++k) {
        const T e = std::exp(xv[base + k * sp.inner] - mx);
        out[base + k * sp.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < sp.len; ++k) out[base + k * sp.inner] /= total;
    }
  }
  return make<T>(x.shape(), std::move(out), {&x}, [sp](Node<T>& self) {
    auto& gx = self.parent_grad(0);
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        T dot = 0;
        for (std::size_t k = 0; k < sp.len; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.len; ++k) {
          const std::size_t i = base + k * sp.inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

// ------------------------------------------------------------------ linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const auto r = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
  std::vector<T> out(r * c);
  MatMap<T>(out.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)).noalias() =
      ConstMatMap<T>(a.values().data(), r, k) * ConstMatMap<T>(b.values().data(), k, c);
  return make<T>(Shape{r, c}, std::move(out), {&a, &b}, [r, k, c](Node<T>& self) {
    ConstMatMap<T> g(self.grad.data(), r, c);
    if (self.parent_needs(0)) {
      MatMap<T>(self.parent_grad(0).data(), r, k).noalias() += g * ConstMatMap<T>(self.parent_value(1).data(), k, c).transpose();
    }
    if (self.parent_needs(1)) {
      MatMap<T>(self.parent_grad(1).data(), k, c).noalias() += ConstMatMap<T>(self.parent_value(0).data(), r, k).transpose() * g;
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + to_string(a.shape()));
  const auto r = a.shape()[0], c = a.shape()[1];
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.values()[i * c + j];
  return make<T>(Shape{c, r}, std::move(out), {&a}, [r, c](Node<T>& self) {
    auto& g = self.parent_grad(0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

// ------------------------------------------------------------------ shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: " + to_string(a.shape()) + " cannot become " + to_string(shape));
  }
  return make<T>(std::move(shape), a.values(), {&a}, [](Node<T>& self) {
    auto& g = self.parent_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw DimensionError("concat: " + to_string(s) + " incompatible with " + to_string(first));
    out_shape[axis] += s[axis];
  }
  const auto sp = split_axis(out_shape, axis);
  std::vector<std::size_t> widths;  // contiguous block width of each part per outer index
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * sp.inner);
  const std::size_t row = sp.len * sp.inner;
  std::vector<T> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].values();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    }
    offset += widths[k];
  }
  return make_many<T>(out_shape, std::move(out), parts, [widths, row, outer = sp.outer](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      if (self.parent_needs(k)) {
        auto& g = self.parent_grad(k);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < widths[k]; ++i) g[o * widths[k] + i] += self.grad[o * row + offset + i];
      }
      offset += widths[k];
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto sp = split_axis(a.shape(), axis);
  if (length == 0 || start + length > sp.len) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for axis " + std::to_string(axis) + " of " + to_string(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  const std::size_t width = length * sp.inner, row = sp.len * sp.inner, skip = start * sp.inner;
  std::vector<T> out(sp.outer * width);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>(o * row + skip), width,
                out.begin() + static_cast<std::ptrdiff_t>(o * width));
  }
  return make<T>(out_shape, std::move(out), {&a}, [=, outer = sp.outer](Node<T>& self) {
    auto& g = self.parent_grad(0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < width; ++i) g[o * row + skip + i] += self.grad[o * width + i];
  });
}

// ------------------------------------------------------------------ reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.values()) total += v;
  return make<T>(Shape{}, {total}, {&a}, [](Node<T>& self) {
    auto& g = self.parent_grad(0);
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::size_t axis, bool keepdim) {
  const auto sp = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  std::vector<T> out(sp.outer * sp.inner, T(0));
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.len; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += a.values()[(o * sp.len + k) * sp.inner + i];
  return make<T>(out_shape, std::move(out), {&a}, [sp](Node<T>& self) {
    auto& g = self.parent_grad(0);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.len; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i) g[(o * sp.len + k) * sp.inner + i] += self.grad[o * sp.inner + i];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis, bool keepdim) {
  const auto len = a.dim(axis);
  return scale(sum(a, axis, keepdim), T(1) / static_cast<T>(len));
}

// ------------------------------------------------------------------ convolution

namespace {

struct ConvGeometry {
  std::size_t batch, in_c, h, w, out_c, kh, kw, stride, pad, out_h, out_w;
  std::size_t patch() const { return in_c * kh * kw; }
  std::size_t positions() const { return out_h * out_w; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride, std::size_t pad) {
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  if ((is.size() != 3 && is.size() != 4) || ks.size() != 4) {
    throw DimensionError("conv2d: expected input [C,H,W] or [N,C,H,W] and kernel [O,C,kh,kw], got " + to_string(is) +
                         " and " + to_string(ks));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  ConvGeometry g{};
  const std::size_t off = is.size() - 3;
  g.batch = off ? is[0] : 1;
  g.in_c = is[off];
  g.h = is[off + 1];
  g.w = is[off + 2];
  g.out_c = ks[0];
  g.kh = ks[2];
  g.kw = ks[3];
  g.stride = stride;
  g.pad = pad;
  if (ks[1] != g.in_c) {
    throw DimensionError("conv2d: kernel " + to_string(ks) + " expects " + std::to_string(ks[1]) +
                         " input channels, input " + to_string(is) + " has " + std::to_string(g.in_c));
  }
  if (g.kh > g.h + 2 * pad || g.kw > g.w + 2 * pad) {
    throw DimensionError("conv2d: kernel " + to_string(ks) + " larger than padded input " + to_string(is) +
                         " (padding " + std::to_string(pad) + ")");
  }
  g.out_h = (g.h + 2 * pad - g.kh) / stride + 1;
  g.out_w = (g.w + 2 * pad - g.kw) / stride + 1;
  return g;
}

// Valid output-column range [lo, hi) for kernel column j: 0 <= ox*stride + j - pad < w.
inline void column_range(const ConvGeometry& g, std::size_t j, std::size_t& lo, std::size_t& hi) {
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(g.pad);
  std::ptrdiff_t first = off >= 0 ? 0 : (-off + s - 1) / s;
  std::ptrdiff_t last = (static_cast<std::ptrdiff_t>(g.w) - 1 - off) / s + 1;  // exclusive
  if (static_cast<std::ptrdiff_t>(g.w) - 1 - off < 0) last = 0;
  lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(first, 0));
  hi = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(last, 0, static_cast<std::ptrdiff_t>(g.out_w)));
  if (hi < lo) hi = lo;
}

template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* cols) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * P;
        std::size_t lo, hi;
        column_range(g, j, lo, hi);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          T* dst = row + oy * g.out_w;
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = in + (c * g.h + static_cast<std::size_t>(y)) * g.w;
          std::fill(dst, dst + lo, T(0));
          std::fill(dst + hi, dst + g.out_w, T(0));
          const std::size_t x0 = lo * g.stride + j - g.pad;
          if (g.stride == 1) {
            std::copy(src + x0, src + x0 + (hi - lo), dst + lo);
          } else {
            for (std::size_t ox = lo, x = x0; ox < hi; ++ox, x += g.stride) dst[ox] = src[x];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* out) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * P;
        std::size_t lo, hi;
        column_range(g, j, lo, hi);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
          const T* src = row + oy * g.out_w;
          T* dst = out + (c * g.h + static_cast<std::size_t>(y)) * g.w;
          const std::size_t x0 = lo * g.stride + j - g.pad;
          if (g.stride == 1) {
            for (std::size_t k = 0; k < hi - lo; ++k) dst[x0 + k] += src[lo + k];
          } else {
            for (std::size_t ox = lo, x = x0; ox < hi; ++ox, x += g.stride) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv2d_impl(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias, std::size_t stride,
                      std::size_t padding) {
  const ConvGeometry g = conv_geometry(input, kernel, stride, padding);
  if (bias && (bias->rank() != 1 || bias->shape()[0] != g.out_c)) {
    throw DimensionError("conv2d: bias " + to_string(bias->shape()) + " does not match " + std::to_string(g.out_c) +
                         " output channels");
  }
  const std::size_t K = g.patch(), P = g.positions();
  const std::size_t in_size = g.in_c * g.h * g.w, out_size = g.out_c * P;
  auto cols = std::make_shared<std::vector<T>>(g.batch * K * P);
  std::vector<T> out(g.batch * out_size);
  ConstMatMap<T> kmat(kernel.values().data(), g.out_c, K);
  for (std::size_t n = 0; n < g.batch; ++n) {
    T* col = cols->data() + n * K * P;
    im2col(input.values().data() + n * in_size, g, col);
    MatMap<T> o(out.data() + n * out_size, g.out_c, P);
    o.noalias() = kmat * ConstMatMap<T>(col, K, P);
    if (bias) {
      for (std::size_t c = 0; c < g.out_c; ++c) o.row(c).array() += bias->values()[c];
    }
  }
  Shape out_shape = input.rank() == 4 ? Shape{g.batch, g.out_c, g.out_h, g.out_w} : Shape{g.out_c, g.out_h, g.out_w};
  auto backward = [g, cols, K, P, in_size, out_size](Node<T>& self) {
    ConstMatMap<T> kmat(self.parent_value(1).data(), g.out_c, K);
    std::vector<T> dcol(self.parent_needs(0) ? K * P : 0);
    for (std::size_t n = 0; n < g.batch; ++n) {
      ConstMatMap<T> dy(self.grad.data() + n * out_size, g.out_c, P);
      const T* col = cols->data() + n * K * P;
      if (self.parent_needs(1)) {
        MatMap<T>(self.parent_grad(1).data(), g.out_c, K).noalias() += dy * ConstMatMap<T>(col, K, P).transpose();
      }
      if (self.parent_needs(0)) {
        MatMap<T>(dcol.data(), K, P).noalias() = kmat.transpose() * dy;
        col2im_add(dcol.data(), g, self.parent_grad(0).data() + n * in_size);
      }
      if (self.parents.size() > 2 && self.parent_needs(2)) {
        auto& gb = self.parent_grad(2);
        for (std::size_t c = 0; c < g.out_c; ++c) gb[c] += dy.row(c).sum();
      }
    }
  };
  if (bias) return make<T>(std::move(out_shape), std::move(out), {&input, &kernel, bias}, backward);
  return make<T>(std::move(out_shape), std::move(out), {&input, &kernel}, backward);
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride, std::size_t padding) {
  return conv2d_impl<T>(input, kernel, nullptr, stride, padding);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  return conv2d_impl<T>(input, kernel, &bias, stride, padding);
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& input) {
  if (input.rank() < 2) throw DimensionError("upsample_nearest2x: need at least 2 axes, got " + to_string(input.shape()));
  Shape s = input.shape();
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const std::size_t planes = input.size() / (h * w);
  s[s.size() - 2] = 2 * h;
  s[s.size() - 1] = 2 * w;
  std::vector<T> out(input.size() * 4);
  const auto& v = input.values();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t x = 0; x < 2 * w; ++x) out[(p * 2 * h + y) * 2 * w + x] = v[(p * h + y / 2) * w + x / 2];
  return make<T>(s, std::move(out), {&input}, [planes, h, w](Node<T>& self) {
    auto& g = self.parent_grad(0);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t x = 0; x < 2 * w; ++x) g[(p * h + y / 2) * w + x / 2] += self.grad[(p * 2 * h + y) * 2 * w + x];
  });
}

template <typename T>
Tensor<T> avg_pool2x(const Tensor<T>& input) {
  if (input.rank() < 2) throw DimensionError("avg_pool2x: need at least 2 axes, got " + to_string(input.shape()));
  Shape s = input.shape();
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  if (h % 2 || w % 2) throw DimensionError("avg_pool2x: odd spatial extent in " + to_string(input.shape()));
  const std::size_t planes = input.size() / (h * w), oh = h / 2, ow = w / 2;
  s[s.size() - 2] = oh;
  s[s.size() - 1] = ow;
  std::vector<T> out(input.size() / 4, T(0));
  const auto& v = input.values();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(p * oh + y / 2) * ow + x / 2] += v[(p * h + y) * w + x] * T(0.25);
  return make<T>(s, std::move(out), {&input}, [planes, h, w, oh, ow](Node<T>& self) {
    auto& g = self.parent_grad(0);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) g[(p * h + y) * w + x] += T(0.25) * self.grad[(p * oh + y / 2) * ow + x / 2];
  });
}

template <typename T>
Tensor<T> channel_dot(const Tensor<T>& x, const Tensor<T>& v) {
  if (x.rank() < 1 || v.rank() != 1 || v.shape()[0] != x.shape()[0]) {
    throw DimensionError("channel_dot: channel extents of " + to_string(x.shape()) + " and " + to_string(v.shape()) +
                         " differ");
  }
  const std::size_t C = x.shape()[0], P = x.size() / C;
  Shape out_shape = x.shape();
  out_shape[0] = 1;
  std::vector<T> out(P);
  MatMap<T>(out.data(), 1, P).noalias() = ConstMatMap<T>(v.values().data(), 1, C) * ConstMatMap<T>(x.values().data(), C, P);
  return make<T>(out_shape, std::move(out), {&x, &v}, [C, P](Node<T>& self) {
    ConstMatMap<T> g(self.grad.data(), 1, P);
    if (self.parent_needs(0)) {
      MatMap<T>(self.parent_grad(0).data(), C, P).noalias() += ConstMatMap<T>(self.parent_value(1).data(), C, 1) * g;
    }
    if (self.parent_needs(1)) {
      MatMap<T>(self.parent_grad(1).data(), C, 1).noalias() +=
          ConstMatMap<T>(self.parent_value(0).data(), C, P) * g.transpose();
    }
  });
}

// ------------------------------------------------------------------ distances

template <typename T>
Tensor<T> l1_distance(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "l1_distance");
  T total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a.values()[i] - b.values()[i]);
  return make<T>(Shape{}, {total}, {&a, &b}, [](Node<T>& self) {
    const auto& x = self.parent_value(0);
    const auto& y = self.parent_value(1);
    const T g = self.grad[0];
    auto sign = [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); };
    if (self.parent_needs(0)) {
      auto& gx = self.parent_grad(0);
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g * sign(x[i] - y[i]);
    }
    if (self.parent_needs(1)) {
      auto& gy = self.parent_grad(1);
      for (std::size_t i = 0; i < x.size(); ++i) gy[i] -= g * sign(x[i] - y[i]);
    }
  });
}

template <typename T>
Tensor<T> l2_distance(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "l2_distance");
  T total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a.values()[i] - b.values()[i];
    total += d * d;
  }
  return make<T>(Shape{}, {std::sqrt(total)}, {&a, &b}, [](Node<T>& self) {
    const T norm = self.value[0];
    if (norm == T(0)) return;
    const auto& x = self.parent_value(0);
    const auto& y = self.parent_value(1);
    const T g = self.grad[0] / norm;
    if (self.parent_needs(0)) {
      auto& gx = self.parent_grad(0);
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g * (x[i] - y[i]);
    }
    if (self.parent_needs(1)) {
      auto& gy = self.parent_grad(1);
      for (std::size_t i = 0; i < x.size(); ++i) gy[i] -= g * (x[i] - y[i]);
    }
  });
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mse");
  T total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a.values()[i] - b.values()[i];
    total += d * d;
  }
  const T inv = T(1) / static_cast<T>(a.size());
  return make<T>(Shape{}, {total * inv}, {&a, &b}, [inv](Node<T>& self) {
    const auto& x = self.parent_value(0);
    const auto& y = self.parent_value(1);
    const T g = T(2) * inv * self.grad[0];
    if (self.parent_needs(0)) {
      auto& gx = self.parent_grad(0);
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g * (x[i] - y[i]);
    }
    if (self.parent_needs(1)) {
      auto& gy = self.parent_grad(1);
      for (std::size_t i = 0; i < x.size(); ++i) gy[i] -= g * (x[i] - y[i]);
    }
  });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be [V,d], got " + to_string(table.shape()));
  if (ids.empty()) throw InputError("embedding: empty id list");
  const std::size_t V = table.shape()[0], d = table.shape()[1];
  std::vector<T> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= V) {
      throw DimensionError("embedding: id " + std::to_string(ids[r]) + " outside table of " + std::to_string(V) + " rows");
    }
    std::copy_n(table.values().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[r]) * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return make<T>(Shape{ids.size(), d}, std::move(out), {&table}, [ids, d](Node<T>& self) {
    auto& g = self.parent_grad(0);
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t k = 0; k < d; ++k) g[static_cast<std::size_t>(ids[r]) * d + k] += self.grad[r * d + k];
  });
}

// ------------------------------------------------------------------ instantiation

#define MIMNET_INSTANTIATE_OPS(T)                                                                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                       \
  template Tensor<T> scale(const Tensor<T>&, T);                                                            \
  template Tensor<T> one_minus(const Tensor<T>&);                                                           \
  template Tensor<T> add_n(const std::vector<Tensor<T>>&);                                                  \
  template Tensor<T> exp(const Tensor<T>&);                                                                 \
  template Tensor<T> log(const Tensor<T>&);                                                                 \
  template Tensor<T> tanh(const Tensor<T>&);                                                                \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                             \
  template Tensor<T> relu(const Tensor<T>&);                                                                \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                       \
  template Tensor<T> log_sigmoid(const Tensor<T>&);                                                         \
  template Tensor<T> log1mexp(const Tensor<T>&);                                                            \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> transpose(const Tensor<T>&);                                                           \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                      \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                    \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                        \
  template Tensor<T> sum(const Tensor<T>&);                                                                 \
  template Tensor<T> mean(const Tensor<T>&);                                                                \
  template Tensor<T> sum(const Tensor<T>&, std::size_t, bool);                                              \
  template Tensor<T> mean(const Tensor<T>&, std::size_t, bool);                                             \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> upsample_nearest2x(const Tensor<T>&);                                                  \
  template Tensor<T> avg_pool2x(const Tensor<T>&);                                                          \
  template Tensor<T> channel_dot(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> l1_distance(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> l2_distance(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> embedding(const Tensor<T>&, const std::vector<int>&);

MIMNET_INSTANTIATE_OPS(float)
MIMNET_INSTANTIATE_OPS(double)

#undef MIMNET_INSTANTIATE_OPS

}  // namespace mimnet::ops
