// SPDX-License-Identifier: Apache-2.0
#include "drl/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "drl/error.hpp"
#include "gemm.hpp"

namespace drl::nn {

using detail::make_result;

namespace {

template <typename T>
Node<T>* grad_target(Node<T>& self, std::size_t i) {
  Node<T>* p = self.parents[i].get();
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return p;
}

void require(bool ok, const std::string& op, const std::string& message) {
  if (!ok) throw ValidationError(op + ": " + message);
}

void require_same_shape(const Shape& a, const Shape& b, const std::string& op) {
  require(a == b, op, "expected shape " + shape_str(a) + " but got " + shape_str(b));
}

// 2D inputs are handled as 3D with a unit leading spatial axis.
struct Spatial {
  std::size_t d = 1, h = 1, w = 1;
  std::size_t size() const { return d * h * w; }
};

Spatial spatial_of(const Shape& s, std::size_t first) {
  if (s.size() - first == 2) return {1, s[first], s[first + 1]};
  return {s[first], s[first + 1], s[first + 2]};
}

void require_spatial_rank(const Shape& s, const std::string& op) {
  require(s.size() == 4 || s.size() == 5, op,
          "expected (N, C, H, W) or (N, C, D, H, W) input but got " + shape_str(s));
}

template <typename T>
void im2col(const T* x, std::size_t channels, Spatial in, Spatial k, Spatial pad, Spatial out,
            T* cols) {
  const std::size_t plane = out.size();
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* xc = x + c * in.size();
    for (std::size_t a = 0; a < k.d; ++a)
      for (std::size_t b = 0; b < k.h; ++b)
        for (std::size_t e = 0; e < k.w; ++e, ++row) {
          T* dst = cols + row * plane;
          for (std::size_t od = 0; od < out.d; ++od) {
            const long id = static_cast<long>(od + a) - static_cast<long>(pad.d);
            for (std::size_t oh = 0; oh < out.h; ++oh) {
              const long ih = static_cast<long>(oh + b) - static_cast<long>(pad.h);
              T* line = dst + (od * out.h + oh) * out.w;
              if (id < 0 || id >= static_cast<long>(in.d) || ih < 0 ||
                  ih >= static_cast<long>(in.h)) {
                std::fill(line, line + out.w, T{});
                continue;
              }
              const T* src = xc + (static_cast<std::size_t>(id) * in.h + ih) * in.w;
              for (std::size_t ow = 0; ow < out.w; ++ow) {
                const long iw = static_cast<long>(ow + e) - static_cast<long>(pad.w);
                line[ow] = (iw < 0 || iw >= static_cast<long>(in.w)) ? T{} : src[iw];
              }
            }
          }
        }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t channels, Spatial in, Spatial k, Spatial pad, Spatial out,
            T* dx) {
  const std::size_t plane = out.size();
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    T* dxc = dx + c * in.size();
    for (std::size_t a = 0; a < k.d; ++a)
      for (std::size_t b = 0; b < k.h; ++b)
        for (std::size_t e = 0; e < k.w; ++e, ++row) {
          const T* src = cols + row * plane;
          for (std::size_t od = 0; od < out.d; ++od) {
            const long id = static_cast<long>(od + a) - static_cast<long>(pad.d);
            if (id < 0 || id >= static_cast<long>(in.d)) continue;
            for (std::size_t oh = 0; oh < out.h; ++oh) {
              const long ih = static_cast<long>(oh + b) - static_cast<long>(pad.h);
              if (ih < 0 || ih >= static_cast<long>(in.h)) continue;
              const T* line = src + (od * out.h + oh) * out.w;
              T* dst = dxc + (static_cast<std::size_t>(id) * in.h + ih) * in.w;
              for (std::size_t ow = 0; ow < out.w; ++ow) {
                const long iw = static_cast<long>(ow + e) - static_cast<long>(pad.w);
                if (iw >= 0 && iw < static_cast<long>(in.w)) dst[iw] += line[ow];
              }
            }
          }
        }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (auto* g = grad_target(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i];
    if (auto* g = grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i] * bv[i];
    if (auto* g = grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i] * av[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * factor;
  return make_result<T>(x.shape(), std::move(out), {x}, [factor](Node<T>& self) {
    if (auto* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x.values()[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, [](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    if (auto* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T s = xv[i] > T{} ? T{1} : (xv[i] < T{} ? T{-1} : T{});
        g->grad[i] += self.grad[i] * s;
      }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x.values()[i], T{});
  return make_result<T>(x.shape(), std::move(out), {x}, [](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    if (auto* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (xv[i] > T{}) g->grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{};
  for (T v : x.values()) total += v;
  return make_result<T>(Shape{1}, {total}, {x}, [](Node<T>& self) {
    if (auto* g = grad_target(self, 0))
      for (auto& v : g->grad) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel(shape) == x.numel(), "reshape",
          "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<T> out(x.values().begin(), x.values().end());
  return make_result<T>(std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  require(axes.size() == r, "permute", "axis list length must equal rank " + std::to_string(r));
  std::vector<bool> used(r, false);
  for (auto a : axes) {
    require(a < r && !used[a], "permute", "axes must be a permutation of 0.." + std::to_string(r - 1));
    used[a] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out_shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  // source index for every output position
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> counter(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < index->size(); ++o) {
    (*index)[o] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      ++counter[ax];
      src += stride[ax];
      if (counter[ax] < out_shape[ax]) break;
      src -= stride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = x.values()[(*index)[o]];
  return make_result<T>(std::move(out_shape), std::move(out), {x}, [index](Node<T>& self) {
    if (auto* g = grad_target(self, 0))
      for (std::size_t o = 0; o < self.grad.size(); ++o) g->grad[(*index)[o]] += self.grad[o];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  require(!parts.empty(), "concat", "needs at least one tensor");
  const Shape& first = parts[0].shape();
  require(axis < first.size(), "concat", "axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    require(probe.size() == first.size(), "concat", "rank mismatch: " + shape_str(probe));
    probe[axis] = first[axis];
    require_same_shape(first, probe, "concat");
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
  const std::size_t row = out_shape[axis] * inner;
  std::vector<T> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.begin() + o * widths[k], widths[k], out.begin() + o * row + offset);
    offset += widths[k];
  }
  return make_result<T>(std::move(out_shape), std::move(out), parts,
                        [widths, outer, row](Node<T>& self) {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < widths.size(); ++k) {
                            if (auto* g = grad_target(self, k))
                              for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t i = 0; i < widths[k]; ++i)
                                  g->grad[o * widths[k] + i] += self.grad[o * row + off + i];
                            off += widths[k];
                          }
                        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& in = x.shape();
  require(axis < in.size(), "slice", "axis out of range for " + shape_str(in));
  require(start + length <= in[axis] && length > 0, "slice",
          "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
              ") exceeds extent " + std::to_string(in[axis]));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  Shape out_shape = in;
  out_shape[axis] = length;
  const std::size_t in_row = in[axis] * inner, out_row = length * inner, off = start * inner;
  std::vector<T> out(outer * out_row);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.values().begin() + o * in_row + off, out_row, out.begin() + o * out_row);
  return make_result<T>(std::move(out_shape), std::move(out), {x},
                        [outer, in_row, out_row, off](Node<T>& self) {
                          if (auto* g = grad_target(self, 0))
                            for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t i = 0; i < out_row; ++i)
                                g->grad[o * in_row + off + i] += self.grad[o * out_row + i];
                        });
}

// ---------------------------------------------------------------------------
// Dense algebra

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(weight.rank() == 2, "linear", "weight must be (out, in), got " + shape_str(weight.shape()));
  const std::size_t out_f = weight.dim(0), in_f = weight.dim(1);
  require(x.rank() >= 1 && x.shape().back() == in_f, "linear",
          "expected last extent " + std::to_string(in_f) + " but input is " + shape_str(x.shape()));
  if (bias.defined())
    require(bias.numel() == out_f, "linear",
            "expected bias extent " + std::to_string(out_f) + " but got " + shape_str(bias.shape()));
  const std::size_t rows = x.numel() / in_f;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  std::vector<T> out(rows * out_f);
  if (rows > 0)
    detail::gemm(false, true, int(rows), int(out_f), int(in_f), T{1}, x.values().data(), int(in_f),
                 weight.values().data(), int(in_f), T{}, out.data(), int(out_f));
  if (bias.defined())
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_f; ++j) out[r * out_f + j] += bias.values()[j];
  std::vector<Tensor<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>(std::move(out_shape), std::move(out), std::move(parents),
                        [rows, in_f, out_f](Node<T>& self) {
                          const T* dy = self.grad.data();
                          const auto& xv = self.parents[0]->value;
                          const auto& wv = self.parents[1]->value;
                          if (auto* g = grad_target(self, 0))
                            detail::gemm(false, false, int(rows), int(in_f), int(out_f), T{1}, dy,
                                         int(out_f), wv.data(), int(in_f), T{1}, g->grad.data(),
                                         int(in_f));
                          if (auto* g = grad_target(self, 1))
                            detail::gemm(true, false, int(out_f), int(in_f), int(rows), T{1}, dy,
                                         int(out_f), xv.data(), int(in_f), T{1}, g->grad.data(),
                                         int(in_f));
                          if (self.parents.size() > 2)
                            if (auto* g = grad_target(self, 2))
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t j = 0; j < out_f; ++j)
                                  g->grad[j] += dy[r * out_f + j];
                        });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  require(a.rank() == 3 && b.rank() == 3, "bmm",
          "expected rank-3 operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  require(b.dim(0) == batch && bk == k, "bmm",
          "incompatible operands " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
              (transpose_b ? " (b transposed)" : ""));
  std::vector<T> out(batch * m * n);
  const int ldb = int(transpose_b ? k : n);
  for (std::size_t i = 0; i < batch; ++i)
    detail::gemm(false, transpose_b, int(m), int(n), int(k), T{1}, a.values().data() + i * m * k,
                 int(k), b.values().data() + i * k * n, ldb, T{}, out.data() + i * m * n, int(n));
  return make_result<T>(Shape{batch, m, n}, std::move(out), {a, b},
                        [batch, m, n, k, transpose_b](Node<T>& self) {
                          const auto& av = self.parents[0]->value;
                          const auto& bv = self.parents[1]->value;
                          auto* ga = grad_target(self, 0);
                          auto* gb = grad_target(self, 1);
                          for (std::size_t i = 0; i < batch; ++i) {
                            const T* dy = self.grad.data() + i * m * n;
                            const T* ai = av.data() + i * m * k;
                            const T* bi = bv.data() + i * k * n;
                            if (ga) {
                              // da = dy * op(b)^T
                              if (transpose_b)
                                detail::gemm(false, false, int(m), int(k), int(n), T{1}, dy, int(n),
                                             bi, int(k), T{1}, ga->grad.data() + i * m * k, int(k));
                              else
                                detail::gemm(false, true, int(m), int(k), int(n), T{1}, dy, int(n),
                                             bi, int(n), T{1}, ga->grad.data() + i * m * k, int(k));
                            }
                            if (gb) {
                              if (transpose_b)  // db (n, k) = dy^T a
                                detail::gemm(true, false, int(n), int(k), int(m), T{1}, dy, int(n),
                                             ai, int(k), T{1}, gb->grad.data() + i * k * n, int(k));
                              else  // db (k, n) = a^T dy
                                detail::gemm(true, false, int(k), int(n), int(m), T{1}, ai, int(k),
                                             dy, int(n), T{1}, gb->grad.data() + i * k * n, int(n));
                            }
                          }
                        });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  require(x.rank() >= 1, "softmax", "needs rank >= 1");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  std::vector<T> out(x.numel());
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * width;
    T* y = out.data() + r * width;
    const T peak = *std::max_element(in, in + width);
    T total{};
    for (std::size_t j = 0; j < width; ++j) total += (y[j] = std::exp(in[j] - peak));
    for (std::size_t j = 0; j < width; ++j) y[j] /= total;
  }
  return make_result<T>(x.shape(), out, {x}, [rows, width](Node<T>& self) {
    if (auto* g = grad_target(self, 0))
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = self.value.data() + r * width;
        const T* dy = self.grad.data() + r * width;
        T dot{};
        for (std::size_t j = 0; j < width; ++j) dot += dy[j] * y[j];
        for (std::size_t j = 0; j < width; ++j) g->grad[r * width + j] += y[j] * (dy[j] - dot);
      }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require(x.rank() >= 1, "layer_norm", "needs rank >= 1");
  const std::size_t width = x.shape().back();
  require(gamma.numel() == width && beta.numel() == width, "layer_norm",
          "expected gamma/beta extent " + std::to_string(width) + " but got " +
              shape_str(gamma.shape()) + "/" + shape_str(beta.shape()));
  const std::size_t rows = x.numel() / width;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.values().data() + r * width;
    T mu{}, var{};
    for (std::size_t j = 0; j < width; ++j) mu += in[j];
    mu /= T(width);
    for (std::size_t j = 0; j < width; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= T(width);
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < width; ++j) {
      const T h = (in[j] - mu) * is;
      (*xhat)[r * width + j] = h;
      out[r * width + j] = h * gamma.values()[j] + beta.values()[j];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
                        [rows, width, xhat, inv_std](Node<T>& self) {
                          const auto& gv = self.parents[1]->value;
                          auto* gx = grad_target(self, 0);
                          auto* gg = grad_target(self, 1);
                          auto* gb = grad_target(self, 2);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* dy = self.grad.data() + r * width;
                            const T* h = xhat->data() + r * width;
                            T sum_dh{}, sum_dh_h{};
                            for (std::size_t j = 0; j < width; ++j) {
                              const T dh = dy[j] * gv[j];
                              sum_dh += dh;
                              sum_dh_h += dh * h[j];
                              if (gg) gg->grad[j] += dy[j] * h[j];
                              if (gb) gb->grad[j] += dy[j];
                            }
                            if (gx)
                              for (std::size_t j = 0; j < width; ++j) {
                                const T dh = dy[j] * gv[j];
                                gx->grad[r * width + j] +=
                                    (*inv_std)[r] / T(width) *
                                    (T(width) * dh - sum_dh - h[j] * sum_dh_h);
                              }
                          }
                        });
}

template <typename T>
Tensor<T> per_row_affine(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(x.rank() == 3, "per_row_affine", "expected (N, K, d) input, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), k = x.dim(1), d = x.dim(2);
  require(weight.shape() == Shape{k, d} && bias.numel() == k, "per_row_affine",
          "expected weight " + shape_str({k, d}) + " and bias (" + std::to_string(k) + ") but got " +
              shape_str(weight.shape()) + " and " + shape_str(bias.shape()));
  std::vector<T> out(n * k);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < k; ++i) {
      T acc = bias.values()[i];
      for (std::size_t j = 0; j < d; ++j)
        acc += x.values()[(s * k + i) * d + j] * weight.values()[i * d + j];
      out[s * k + i] = acc;
    }
  return make_result<T>(Shape{n, k}, std::move(out), {x, weight, bias},
                        [n, k, d](Node<T>& self) {
                          const auto& xv = self.parents[0]->value;
                          const auto& wv = self.parents[1]->value;
                          auto* gx = grad_target(self, 0);
                          auto* gw = grad_target(self, 1);
                          auto* gb = grad_target(self, 2);
                          for (std::size_t s = 0; s < n; ++s)
                            for (std::size_t i = 0; i < k; ++i) {
                              const T dy = self.grad[s * k + i];
                              if (gb) gb->grad[i] += dy;
                              for (std::size_t j = 0; j < d; ++j) {
                                if (gx) gx->grad[(s * k + i) * d + j] += dy * wv[i * d + j];
                                if (gw) gw->grad[i * d + j] += dy * xv[(s * k + i) * d + j];
                              }
                            }
                        });
}

// ---------------------------------------------------------------------------
// Convolutional layers

Shape conv_output_shape(const Shape& input, const Shape& weight, std::size_t padding) {
  require_spatial_rank(input, "conv");
  require(weight.size() == input.size(), "conv",
          "weight " + shape_str(weight) + " does not match input rank of " + shape_str(input));
  require(weight[1] == input[1], "conv",
          "expected " + std::to_string(weight[1]) + " input channels but got " +
              std::to_string(input[1]) + " in " + shape_str(input));
  Shape out{input[0], weight[0]};
  for (std::size_t i = 2; i < input.size(); ++i) {
    const long extent = long(input[i]) + 2 * long(padding) - long(weight[i]) + 1;
    require(extent > 0, "conv",
            "kernel " + shape_str(weight) + " does not fit input " + shape_str(input));
    out.push_back(std::size_t(extent));
  }
  return out;
}

Shape max_pool_output_shape(const Shape& input) {
  require_spatial_rank(input, "max_pool");
  Shape out{input[0], input[1]};
  for (std::size_t i = 2; i < input.size(); ++i) {
    out.push_back(input[i] / 2);
    require(out.back() > 0, "max_pool",
            "spatial extent " + std::to_string(input[i]) + " on axis " + std::to_string(i) +
                " of " + shape_str(input) + " collapses to 0; use a larger input");
  }
  return out;
}

template <typename T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
               std::size_t padding) {
  const Shape out_shape = conv_output_shape(x.shape(), weight.shape(), padding);
  if (bias.defined())
    require(bias.numel() == weight.dim(0), "conv",
            "expected bias extent " + std::to_string(weight.dim(0)) + " but got " +
                shape_str(bias.shape()));
  const bool is3d = x.rank() == 5;
  const std::size_t batch = x.dim(0), cin = x.dim(1), cout = weight.dim(0);
  const Spatial in = spatial_of(x.shape(), 2), out = spatial_of(out_shape, 2),
                k = spatial_of(weight.shape(), 2);
  const Spatial pad{is3d ? padding : 0, padding, padding};
  const std::size_t ck = cin * k.size(), plane = out.size();
  std::vector<T> cols(ck * plane);
  std::vector<T> result(numel(out_shape));
  for (std::size_t s = 0; s < batch; ++s) {
    im2col(x.values().data() + s * cin * in.size(), cin, in, k, pad, out, cols.data());
    T* y = result.data() + s * cout * plane;
    detail::gemm(false, false, int(cout), int(plane), int(ck), T{1}, weight.values().data(),
                 int(ck), cols.data(), int(plane), T{}, y, int(plane));
    if (bias.defined())
      for (std::size_t c = 0; c < cout; ++c) {
        const T b = bias.values()[c];
        for (std::size_t p = 0; p < plane; ++p) y[c * plane + p] += b;
      }
  }
  std::vector<Tensor<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>(out_shape, std::move(result), std::move(parents),
                        [batch, cin, cout, in, out, k, pad, ck, plane](Node<T>& self) {
                          auto* gx = grad_target(self, 0);
                          auto* gw = grad_target(self, 1);
                          auto* gb = self.parents.size() > 2 ? grad_target(self, 2) : nullptr;
                          const auto& xv = self.parents[0]->value;
                          const auto& wv = self.parents[1]->value;
                          std::vector<T> buf(ck * plane);
                          for (std::size_t s = 0; s < batch; ++s) {
                            const T* dy = self.grad.data() + s * cout * plane;
                            if (gb)
                              for (std::size_t c = 0; c < cout; ++c)
                                for (std::size_t p = 0; p < plane; ++p)
                                  gb->grad[c] += dy[c * plane + p];
                            if (gw) {
                              im2col(xv.data() + s * cin * in.size(), cin, in, k, pad, out,
                                     buf.data());
                              detail::gemm(false, true, int(cout), int(ck), int(plane), T{1}, dy,
                                           int(plane), buf.data(), int(plane), T{1},
                                           gw->grad.data(), int(ck));
                            }
                            if (gx) {
                              detail::gemm(true, false, int(ck), int(plane), int(cout), T{1},
                                           wv.data(), int(ck), dy, int(plane), T{}, buf.data(),
                                           int(plane));
                              col2im(buf.data(), cin, in, k, pad, out,
                                     gx->grad.data() + s * cin * in.size());
                            }
                          }
                        });
}

template <typename T>
Tensor<T> max_pool(const Tensor<T>& x) {
  const Shape out_shape = max_pool_output_shape(x.shape());
  const bool is3d = x.rank() == 5;
  const Spatial in = spatial_of(x.shape(), 2), out = spatial_of(out_shape, 2);
  const std::size_t kd = is3d ? 2 : 1;
  const std::size_t planes = x.dim(0) * x.dim(1);
  auto argmax = std::make_shared<std::vector<std::size_t>>(numel(out_shape));
  std::vector<T> result(argmax->size());
  auto xv = x.values();
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t ibase = p * in.size(), obase = p * out.size();
    for (std::size_t od = 0; od < out.d; ++od)
      for (std::size_t oh = 0; oh < out.h; ++oh)
        for (std::size_t ow = 0; ow < out.w; ++ow) {
          std::size_t best = 0;
          T best_v = -std::numeric_limits<T>::infinity();
          for (std::size_t a = 0; a < kd; ++a)
            for (std::size_t b = 0; b < 2; ++b)
              for (std::size_t e = 0; e < 2; ++e) {
                const std::size_t idx =
                    ibase + ((od * kd + a) * in.h + oh * 2 + b) * in.w + ow * 2 + e;
                if (xv[idx] > best_v) {
                  best_v = xv[idx];
                  best = idx;
                }
              }
          const std::size_t o = obase + (od * out.h + oh) * out.w + ow;
          result[o] = best_v;
          (*argmax)[o] = best;
        }
  }
  return make_result<T>(out_shape, std::move(result), {x}, [argmax](Node<T>& self) {
    if (auto* g = grad_target(self, 0))
      for (std::size_t o = 0; o < self.grad.size(); ++o) g->grad[(*argmax)[o]] += self.grad[o];
  });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                     T momentum, T eps) {
  require(x.rank() >= 2, "batch_norm", "expected (N, C, ...) input, got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t spatial = x.numel() / (batch * channels);
  require(gamma.numel() == channels && beta.numel() == channels &&
              running_mean.size() == channels && running_var.size() == channels,
          "batch_norm",
          "expected per-channel parameters of extent " + std::to_string(channels) + " but got " +
              shape_str(gamma.shape()));
  if (training)
    require(batch > 1, "batch_norm",
            "training mode needs batch size > 1 to estimate statistics, got batch size 1");
  const std::size_t count = batch * spatial;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(channels);
  std::vector<T> out(x.numel());
  auto xv = x.values();
  for (std::size_t c = 0; c < channels; ++c) {
    T mu, var;
    if (training) {
      mu = T{};
      for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t p = 0; p < spatial; ++p) mu += xv[(s * channels + c) * spatial + p];
      mu /= T(count);
      var = T{};
      for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t p = 0; p < spatial; ++p) {
          const T dlt = xv[(s * channels + c) * spatial + p] - mu;
          var += dlt * dlt;
        }
      var /= T(count);
      running_mean[c] = (T{1} - momentum) * running_mean[c] + momentum * mu;
      running_var[c] =
          (T{1} - momentum) * running_var[c] + momentum * var * T(count) / T(count - 1);
    } else {
      mu = running_mean[c];
      var = running_var[c];
    }
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[c] = is;
    const T g = gamma.values()[c], b = beta.values()[c];
    for (std::size_t s = 0; s < batch; ++s)
      for (std::size_t p = 0; p < spatial; ++p) {
        const std::size_t i = (s * channels + c) * spatial + p;
        const T h = (xv[i] - mu) * is;
        (*xhat)[i] = h;
        out[i] = g * h + b;
      }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
                        [batch, channels, spatial, count, training, xhat, inv_std](Node<T>& self) {
                          const auto& gv = self.parents[1]->value;
                          auto* gx = grad_target(self, 0);
                          auto* gg = grad_target(self, 1);
                          auto* gb = grad_target(self, 2);
                          for (std::size_t c = 0; c < channels; ++c) {
                            T sum_dy{}, sum_dy_h{};
                            for (std::size_t s = 0; s < batch; ++s)
                              for (std::size_t p = 0; p < spatial; ++p) {
                                const std::size_t i = (s * channels + c) * spatial + p;
                                sum_dy += self.grad[i];
                                sum_dy_h += self.grad[i] * (*xhat)[i];
                              }
                            if (gg) gg->grad[c] += sum_dy_h;
                            if (gb) gb->grad[c] += sum_dy;
                            if (!gx) continue;
                            const T k = gv[c] * (*inv_std)[c];
                            for (std::size_t s = 0; s < batch; ++s)
                              for (std::size_t p = 0; p < spatial; ++p) {
                                const std::size_t i = (s * channels + c) * spatial + p;
                                if (training)
                                  gx->grad[i] += k / T(count) *
                                                 (T(count) * self.grad[i] - sum_dy -
                                                  (*xhat)[i] * sum_dy_h);
                                else
                                  gx->grad[i] += k * self.grad[i];
                              }
                          }
                        });
}

// ---------------------------------------------------------------------------

#define DRL_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> abs(const Tensor<T>&);                                                     \
  template Tensor<T> relu(const Tensor<T>&);                                                    \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                        \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);            \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                             \
  template Tensor<T> softmax(const Tensor<T>&);                                                 \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);       \
  template Tensor<T> per_row_affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> conv(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);   \
  template Tensor<T> max_pool(const Tensor<T>&);                                                \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                std::vector<T>&, std::vector<T>&, bool, T, T);

DRL_INSTANTIATE_OPS(float)
DRL_INSTANTIATE_OPS(double)

#undef DRL_INSTANTIATE_OPS

}  // namespace drl::nn
