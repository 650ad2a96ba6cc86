#include "ctxgan/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "ctxgan/errors.hpp"

namespace ctxgan {
namespace {

template <typename T>
using NodeT = detail::Node<T>;
template <typename T>
using BackwardFn = std::function<void(NodeT<T>&)>;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
Tensor<T> record(Shape shape, std::vector<T> values, std::initializer_list<Tensor<T>> inputs,
                 BackwardFn<T> fn) {
  auto node = std::make_shared<NodeT<T>>();
  node->shape = std::move(shape);
  node->data = std::make_shared<std::vector<T>>(std::move(values));
  const bool tracked =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
  if (tracked) {
    node->requires_grad = true;
    for (const Tensor<T>& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(fn);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> record_many(Shape shape, std::vector<T> values, std::span<const Tensor<T>> inputs,
                      BackwardFn<T> fn) {
  auto node = std::make_shared<NodeT<T>>();
  node->shape = std::move(shape);
  node->data = std::make_shared<std::vector<T>>(std::move(values));
  const bool tracked =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
  if (tracked) {
    node->requires_grad = true;
    for (const Tensor<T>& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(fn);
  }
  return Tensor<T>::from_node(std::move(node));
}

// Parent i needs a gradient.
template <typename T>
bool wants(const NodeT<T>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

template <typename T, typename Forward, typename Derivative>
Tensor<T> unary(const Tensor<T>& x, Forward f, Derivative dfdx) {
  std::vector<T> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return record<T>(x.shape(), std::move(out), {x}, [dfdx](NodeT<T>& self) {
    const auto& xs = *self.parents[0]->data;
    const auto& ys = *self.data;
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * dfdx(xs[i], ys[i]);
  });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Convolution as im2col + GEMM over NHWC tensors. The geometry describes a
// forward convolution from an [n,in_h,in_w,channels] image to [n,out_h,out_w].
struct ConvGeometry {
  std::size_t n, in_h, in_w, channels, k, stride, pad_top, pad_left, out_h, out_w;
  std::size_t rows() const { return n * out_h * out_w; }
  std::size_t cols() const { return k * k * channels; }
};

ConvGeometry make_geometry(std::size_t n, std::size_t h, std::size_t w, std::size_t c,
                           std::size_t k, std::size_t stride, Padding padding) {
  ConvGeometry g{n, h, w, c, k, stride, 0, 0, 0, 0};
  if (padding == Padding::valid) {
    if (h < k || w < k) {
      throw DimensionError("conv2d(valid): input " + std::to_string(h) + "x" + std::to_string(w) +
                           " smaller than kernel " + std::to_string(k));
    }
    g.out_h = (h - k) / stride + 1;
    g.out_w = (w - k) / stride + 1;
  } else {
    g.out_h = (h + stride - 1) / stride;
    g.out_w = (w + stride - 1) / stride;
    const auto pad_total = [&](std::size_t in, std::size_t out) -> std::size_t {
      const std::size_t span = (out - 1) * stride + k;
      return span > in ? span - in : 0;
    };
    g.pad_top = pad_total(h, g.out_h) / 2;
    g.pad_left = pad_total(w, g.out_w) / 2;
  }
  return g;
}

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
  const std::size_t row_len = g.k * g.channels;
  for (std::size_t b = 0; b < g.n; ++b) {
    const T* img = image + b * g.in_h * g.in_w * g.channels;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        T* dst = cols;
        cols += g.cols();
        for (std::size_t ky = 0; ky < g.k; ++ky, dst += row_len) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill(dst, dst + row_len, T(0));
            continue;
          }
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad_left);
            T* cell = dst + kx * g.channels;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) {
              std::fill(cell, cell + g.channels, T(0));
            } else {
              const T* src = img + (static_cast<std::size_t>(iy) * g.in_w + ix) * g.channels;
              std::copy(src, src + g.channels, cell);
            }
          }
        }
      }
    }
  }
}

// Adds the columns back into an image buffer (the adjoint of im2col).
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* image) {
  for (std::size_t b = 0; b < g.n; ++b) {
    T* img = image + b * g.in_h * g.in_w * g.channels;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const T* src_row = cols;
        cols += g.cols();
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            const T* src = src_row + (ky * g.k + kx) * g.channels;
            T* dst = img + (static_cast<std::size_t>(iy) * g.in_w + ix) * g.channels;
            for (std::size_t c = 0; c < g.channels; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

void check_conv_args(std::size_t k_rows, std::size_t k_cols, std::size_t stride, const char* op) {
  if (k_rows == 0 || k_rows != k_cols) {
    throw ArgumentError(std::string(op) + ": kernel must be square with k >= 1");
  }
  if (stride == 0) throw ArgumentError(std::string(op) + ": stride must be >= 1");
}

template <typename T>
std::size_t channels_of(const Tensor<T>& x, const char* op) {
  if (x.rank() == 0) throw DimensionError(std::string(op) + ": rank-0 input");
  return x.shape().back();
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return record<T>(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(self, p)) continue;
      auto& g = self.parents[p]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return record<T>(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    if (wants(self, 0)) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return record<T>(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    const auto& xs = *self.parents[0]->data;
    const auto& ys = *self.parents[1]->data;
    if (wants(self, 0)) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ys[i];
    }
    if (wants(self, 1)) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * xs[i];
    }
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t c = channels_of(x, "add_bias");
  if (bias.size() != c) {
    throw DimensionError("add_bias: bias of " + std::to_string(bias.size()) +
                         " values for last axis " + std::to_string(c));
  }
  std::vector<T> out(x.size());
  auto xs = x.data();
  auto bs = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] + bs[i % c];
  return record<T>(x.shape(), std::move(out), {x, bias}, [c](NodeT<T>& self) {
    if (wants(self, 0)) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % c] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
  return unary(
      x, [scale, shift](T v) { return scale * v + shift; }, [scale](T, T) { return scale; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, const Tensor<T>& s) {
  if (s.size() != 1) {
    throw DimensionError("mul_scalar: factor has shape " + shape_string(s.shape()));
  }
  const T factor = s.item();
  std::vector<T> out(x.size());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] * factor;
  return record<T>(x.shape(), std::move(out), {x, s}, [](NodeT<T>& self) {
    const auto& xs = *self.parents[0]->data;
    const T factor = (*self.parents[1]->data)[0];
    if (wants(self, 0)) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    }
    if (wants(self, 1)) {
      T acc = 0;
      for (std::size_t i = 0; i < xs.size(); ++i) acc += self.grad[i] * xs[i];
      self.parents[1]->grad_buffer()[0] += acc;
    }
  });
}

template <typename T>
Tensor<T> lrelu(const Tensor<T>& x, T slope) {
  return unary(
      x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) { return stable_sigmoid(v); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (!(v > T(0))) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> log_clamped(const Tensor<T>& x, T floor) {
  if (!(floor > T(0))) throw ArgumentError("log_clamped: floor must be positive");
  return unary(
      x, [floor](T v) { return std::log(std::max(v, floor)); },
      [floor](T v, T) { return v > floor ? T(1) / v : T(0); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return record<T>(Shape{}, {acc}, {x}, [](NodeT<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T up = self.grad[0];
    for (T& v : g) v += up;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.size() == 0) throw ArgumentError("mean of an empty tensor");
  T acc = 0;
  for (T v : x.data()) acc += v;
  const T inv = T(1) / static_cast<T>(x.size());
  return record<T>(Shape{}, {acc * inv}, {x}, [inv](NodeT<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T up = self.grad[0] * inv;
    for (T& v : g) v += up;
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<T> out(static_cast<std::size_t>(m * n));
  MatMap<T>(out.data(), m, n).noalias() =
      ConstMatMap<T>(a.data().data(), m, k) * ConstMatMap<T>(b.data().data(), k, n);
  return record<T>(Shape{a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, n](NodeT<T>& self) {
    ConstMatMap<T> up(self.grad.data(), m, n);
    if (wants(self, 0)) {
      MatMap<T> ga(self.parents[0]->grad_buffer().data(), m, k);
      ga.noalias() += up * ConstMatMap<T>(self.parents[1]->data->data(), k, n).transpose();
    }
    if (wants(self, 1)) {
      MatMap<T> gb(self.parents[1]->grad_buffer().data(), k, n);
      gb.noalias() += ConstMatMap<T>(self.parents[0]->data->data(), m, k).transpose() * up;
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  auto node = std::make_shared<NodeT<T>>();
  node->shape = std::move(shape);
  node->data = x.node()->data;
  if (x.requires_grad()) {
    node->requires_grad = true;
    node->parents.push_back(x.node());
    node->backward = [](NodeT<T>& self) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

namespace {

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank()) throw DimensionError("slice: axis out of range");
  if (begin >= end || end > x.dim(axis)) {
    throw DimensionError("slice: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") on extent " + std::to_string(x.dim(axis)));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  const std::size_t len = end - begin;
  Shape shape = x.shape();
  shape[axis] = len;
  std::vector<T> out(s.outer * len * s.inner);
  auto xs = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    const T* src = xs.data() + (o * s.extent + begin) * s.inner;
    std::copy(src, src + len * s.inner, out.data() + o * len * s.inner);
  }
  return record<T>(std::move(shape), std::move(out), {x}, [s, begin, len](NodeT<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      T* dst = g.data() + (o * s.extent + begin) * s.inner;
      const T* src = self.grad.data() + o * len * s.inner;
      for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ArgumentError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const Tensor<T>& p : parts) {
    if (p.rank() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.dim(i) != first[i]) {
        throw DimensionError("concat: " + shape_string(p.shape()) + " vs " + shape_string(first));
      }
    }
    extents.push_back(p.dim(axis));
    shape[axis] += p.dim(axis);
  }
  const AxisSplit s = split_at(shape, axis);
  std::vector<T> out(shape_size(shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto xs = parts[p].data();
    const std::size_t chunk = extents[p] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy(xs.data() + o * chunk, xs.data() + (o + 1) * chunk,
                out.data() + (o * s.extent + offset) * s.inner);
    }
    offset += extents[p];
  }
  return record_many<T>(std::move(shape), std::move(out), parts, [s, extents](NodeT<T>& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < extents.size(); ++p) {
      const std::size_t chunk = extents[p] * s.inner;
      if (wants(self, p)) {
        auto& g = self.parents[p]->grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o) {
          const T* src = self.grad.data() + (o * s.extent + offset) * s.inner;
          for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += src[i];
        }
      }
      offset += extents[p];
    }
  });
}

template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::span<const std::size_t> flat_indices) {
  std::vector<T> out(flat_indices.size());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (flat_indices[i] >= xs.size()) throw DimensionError("gather: index out of range");
    out[i] = xs[flat_indices[i]];
  }
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  Shape shape{out.size()};
  return record<T>(std::move(shape), std::move(out), {x}, [idx = std::move(idx)](NodeT<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride,
                 Padding padding) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw DimensionError("conv2d: expected [N,H,W,C] input and [k,k,C,F] kernel, got " +
                         shape_string(input.shape()) + " and " + shape_string(kernel.shape()));
  }
  check_conv_args(kernel.dim(0), kernel.dim(1), stride, "conv2d");
  if (kernel.dim(2) != input.dim(3)) {
    throw DimensionError("conv2d: input has " + std::to_string(input.dim(3)) +
                         " channels, kernel expects " + std::to_string(kernel.dim(2)));
  }
  const ConvGeometry g = make_geometry(input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                                       kernel.dim(0), stride, padding);
  const std::size_t filters = kernel.dim(3);
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto cols = static_cast<Eigen::Index>(g.cols());
  const auto f = static_cast<Eigen::Index>(filters);

  auto columns = std::make_shared<std::vector<T>>(g.rows() * g.cols());
  im2col(input.data().data(), g, columns->data());
  std::vector<T> out(g.rows() * filters);
  MatMap<T>(out.data(), rows, f).noalias() =
      ConstMatMap<T>(columns->data(), rows, cols) * ConstMatMap<T>(kernel.data().data(), cols, f);

  Shape shape{g.n, g.out_h, g.out_w, filters};
  if (!input.requires_grad() && !kernel.requires_grad()) columns.reset();
  return record<T>(std::move(shape), std::move(out), {input, kernel},
                   [g, rows, cols, f, columns](NodeT<T>& self) {
                     ConstMatMap<T> up(self.grad.data(), rows, f);
                     if (wants(self, 1)) {
                       MatMap<T> gk(self.parents[1]->grad_buffer().data(), cols, f);
                       gk.noalias() += ConstMatMap<T>(columns->data(), rows, cols).transpose() * up;
                     }
                     if (wants(self, 0)) {
                       std::vector<T> dcols(g.rows() * g.cols());
                       MatMap<T>(dcols.data(), rows, cols).noalias() =
                           up * ConstMatMap<T>(self.parents[1]->data->data(), cols, f).transpose();
                       col2im(dcols.data(), g, self.parents[0]->grad_buffer().data());
                     }
                   });
}

template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw DimensionError("conv2d_transpose: expected [N,H,W,C] input and [k,k,F,C] kernel, got " +
                         shape_string(input.shape()) + " and " + shape_string(kernel.shape()));
  }
  check_conv_args(kernel.dim(0), kernel.dim(1), stride, "conv2d_transpose");
  if (kernel.dim(3) != input.dim(3)) {
    throw DimensionError("conv2d_transpose: input has " + std::to_string(input.dim(3)) +
                         " channels, kernel expects " + std::to_string(kernel.dim(3)));
  }
  const std::size_t filters = kernel.dim(2);
  const ConvGeometry g = make_geometry(input.dim(0), input.dim(1) * stride, input.dim(2) * stride,
                                       filters, kernel.dim(0), stride, Padding::same);
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto cols = static_cast<Eigen::Index>(g.cols());
  const auto c = static_cast<Eigen::Index>(input.dim(3));

  std::vector<T> columns(g.rows() * g.cols());
  MatMap<T>(columns.data(), rows, cols).noalias() =
      ConstMatMap<T>(input.data().data(), rows, c) *
      ConstMatMap<T>(kernel.data().data(), cols, c).transpose();
  std::vector<T> out(g.n * g.in_h * g.in_w * filters, T(0));
  col2im(columns.data(), g, out.data());

  Shape shape{g.n, g.in_h, g.in_w, filters};
  return record<T>(std::move(shape), std::move(out), {input, kernel},
                   [g, rows, cols, c](NodeT<T>& self) {
                     std::vector<T> up_cols(g.rows() * g.cols());
                     im2col(self.grad.data(), g, up_cols.data());
                     ConstMatMap<T> up(up_cols.data(), rows, cols);
                     if (wants(self, 0)) {
                       MatMap<T> gx(self.parents[0]->grad_buffer().data(), rows, c);
                       gx.noalias() += up * ConstMatMap<T>(self.parents[1]->data->data(), cols, c);
                     }
                     if (wants(self, 1)) {
                       MatMap<T> gk(self.parents[1]->grad_buffer().data(), cols, c);
                       gk.noalias() +=
                           up.transpose() * ConstMatMap<T>(self.parents[0]->data->data(), rows, c);
                     }
                   });
}

namespace {

template <typename T>
std::size_t check_norm_args(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  const std::size_t c = channels_of(x, "batchnorm");
  if (gamma.size() != c || beta.size() != c) {
    throw DimensionError("batchnorm: gamma/beta of " + std::to_string(gamma.size()) + "/" +
                         std::to_string(beta.size()) + " values for " + std::to_string(c) +
                         " channels");
  }
  if (c == 0 || x.size() == 0) throw ArgumentError("batchnorm on an empty batch");
  return c;
}

}  // namespace

template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          RunningStats<T>* running, BatchNormOptions options) {
  const std::size_t c = check_norm_args(x, gamma, beta);
  const std::size_t m = x.size() / c;
  auto xs = x.data();

  std::vector<double> mu(c, 0.0);
  std::vector<double> var(c, 0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) mu[i % c] += xs[i];
  for (double& v : mu) v /= static_cast<double>(m);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double d = xs[i] - mu[i % c];
    var[i % c] += d * d;
  }
  for (double& v : var) v /= static_cast<double>(m);

  std::vector<T> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var[ch] + options.epsilon));
  }
  auto xhat = std::make_shared<std::vector<T>>(xs.size());
  std::vector<T> out(xs.size());
  auto gs = gamma.data();
  auto bs = beta.data();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t ch = i % c;
    (*xhat)[i] = static_cast<T>((xs[i] - mu[ch]) * inv_std[ch]);
    out[i] = gs[ch] * (*xhat)[i] + bs[ch];
  }

  if (running != nullptr) {
    if (running->mean.size() != c || running->var.size() != c) {
      throw DimensionError("batchnorm: running stats sized for a different channel count");
    }
    const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      running->mean[ch] = static_cast<T>((1.0 - options.momentum) * running->mean[ch] +
                                         options.momentum * mu[ch]);
      running->var[ch] = static_cast<T>((1.0 - options.momentum) * running->var[ch] +
                                        options.momentum * var[ch] * unbias);
    }
  }

  return record<T>(x.shape(), std::move(out), {x, gamma, beta},
                   [c, m, xhat, inv_std = std::move(inv_std)](NodeT<T>& self) {
                     const auto& gam = *self.parents[1]->data;
                     const auto& up = self.grad;
                     std::vector<T> sum_up(c, T(0));
                     std::vector<T> sum_up_xhat(c, T(0));
                     for (std::size_t i = 0; i < up.size(); ++i) {
                       sum_up[i % c] += up[i];
                       sum_up_xhat[i % c] += up[i] * (*xhat)[i];
                     }
                     if (wants(self, 1)) {
                       auto& g = self.parents[1]->grad_buffer();
                       for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_up_xhat[ch];
                     }
                     if (wants(self, 2)) {
                       auto& g = self.parents[2]->grad_buffer();
                       for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_up[ch];
                     }
                     if (wants(self, 0)) {
                       auto& g = self.parents[0]->grad_buffer();
                       const T mt = static_cast<T>(m);
                       for (std::size_t i = 0; i < up.size(); ++i) {
                         const std::size_t ch = i % c;
                         g[i] += gam[ch] * inv_std[ch] / mt *
                                 (mt * up[i] - sum_up[ch] - (*xhat)[i] * sum_up_xhat[ch]);
                       }
                     }
                   });
}

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          const RunningStats<T>& running, BatchNormOptions options) {
  const std::size_t c = check_norm_args(x, gamma, beta);
  if (running.mean.size() != c || running.var.size() != c) {
    throw DimensionError("batchnorm: running stats sized for a different channel count");
  }
  std::vector<T> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running.var[ch]) +
                                                 options.epsilon));
  }
  std::vector<T> shift(running.mean);
  auto xs = x.data();
  auto gs = gamma.data();
  auto bs = beta.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t ch = i % c;
    out[i] = gs[ch] * ((xs[i] - shift[ch]) * inv_std[ch]) + bs[ch];
  }
  return record<T>(x.shape(), std::move(out), {x, gamma, beta},
                   [c, inv_std = std::move(inv_std), shift = std::move(shift)](NodeT<T>& self) {
                     const auto& xs = *self.parents[0]->data;
                     const auto& gam = *self.parents[1]->data;
                     const auto& up = self.grad;
                     if (wants(self, 0)) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < up.size(); ++i) {
                         g[i] += up[i] * gam[i % c] * inv_std[i % c];
                       }
                     }
                     if (wants(self, 1)) {
                       auto& g = self.parents[1]->grad_buffer();
                       for (std::size_t i = 0; i < up.size(); ++i) {
                         g[i % c] += up[i] * (xs[i] - shift[i % c]) * inv_std[i % c];
                       }
                     }
                     if (wants(self, 2)) {
                       auto& g = self.parents[2]->grad_buffer();
                       for (std::size_t i = 0; i < up.size(); ++i) g[i % c] += up[i];
                     }
                   });
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormMode mode, RunningStats<T>& running, BatchNormOptions options) {
  return mode == BatchNormMode::train ? batchnorm_train(x, gamma, beta, &running, options)
                                      : batchnorm_infer(x, gamma, beta, running, options);
}

#define CTXGAN_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> affine(const Tensor<T>&, T, T);                                           \
  template Tensor<T> mul_scalar(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> lrelu(const Tensor<T>&, T);                                               \
  template Tensor<T> tanh(const Tensor<T>&);                                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> softplus(const Tensor<T>&);                                               \
  template Tensor<T> log(const Tensor<T>&);                                                    \
  template Tensor<T> log_clamped(const Tensor<T>&, T);                                         \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);           \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                          \
  template Tensor<T> gather(const Tensor<T>&, std::span<const std::size_t>);                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, Padding);         \
  template Tensor<T> conv2d_transpose(const Tensor<T>&, const Tensor<T>&, std::size_t);        \
  template Tensor<T> batchnorm_train(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                     RunningStats<T>*, BatchNormOptions);                      \
  template Tensor<T> batchnorm_infer(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                     const RunningStats<T>&, BatchNormOptions);                \
  template Tensor<T> batchnorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                               BatchNormMode, RunningStats<T>&, BatchNormOptions);

CTXGAN_INSTANTIATE_OPS(float)
CTXGAN_INSTANTIATE_OPS(double)

}  // namespace ctxgan
