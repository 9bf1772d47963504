// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "distmerge/ops.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <cmath>
#include <numbers>
#include <string>

namespace distmerge {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;
using CArr = Eigen::Map<const Eigen::ArrayXf>;
using MArr = Eigen::Map<Eigen::ArrayXf>;
using StridedCMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<long>(small.size()));
}

// Sums g [outer, inner] over outer into [inner] with the given shape.
Tensor reduce_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  const std::size_t inner = numel(shape);
  const std::size_t outer = g.size() / inner;
  std::vector<double> acc(inner, 0.0);
  const float* src = g.ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) acc[j] += src[o * inner + j];
  }
  Tensor out = Tensor::uninitialized(shape);
  for (std::size_t j = 0; j < inner; ++j) out[j] = static_cast<float>(acc[j]);
  return out;
}

enum class Binary { kAdd, kSub, kMul };

// out[o, j] = f(a[o, j or j], b[o, j or j]) where the smaller operand repeats
// over the outer index; no per-element modulo.
template <typename F>
void broadcast_apply(const float* pa, std::size_t na, const float* pb, std::size_t nb, float* po, std::size_t n,
                     F f) {
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
  } else if (na == n) {
    for (std::size_t o = 0; o < n; o += nb, po += nb, pa += nb)
      for (std::size_t j = 0; j < nb; ++j) po[j] = f(pa[j], pb[j]);
  } else {
    for (std::size_t o = 0; o < n; o += na, po += na, pb += na)
      for (std::size_t j = 0; j < na; ++j) po[j] = f(pa[j], pb[j]);
  }
}

Var binary(const Var& a, const Var& b, Binary kind) {
  const char* name = kind == Binary::kAdd ? "add" : kind == Binary::kSub ? "sub" : "mul";
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool a_big = is_suffix(sb, sa);
  if (!a_big && !is_suffix(sa, sb)) mismatch(name, sa, sb);
  const Shape out_shape = a_big ? sa : sb;
  const std::size_t n = numel(out_shape);
  const std::size_t na = a.value().size();
  const std::size_t nb = b.value().size();
  Tensor out = Tensor::uninitialized(out_shape);
  const float* pa = a.value().ptr();
  const float* pb = b.value().ptr();
  switch (kind) {
    case Binary::kAdd: broadcast_apply(pa, na, pb, nb, out.ptr(), n, [](float x, float y) { return x + y; }); break;
    case Binary::kSub: broadcast_apply(pa, na, pb, nb, out.ptr(), n, [](float x, float y) { return x - y; }); break;
    case Binary::kMul: broadcast_apply(pa, na, pb, nb, out.ptr(), n, [](float x, float y) { return x * y; }); break;
  }
  const OpKind op = kind == Binary::kAdd ? OpKind::kAdd
                    : kind == Binary::kSub ? OpKind::kSub
                                           : OpKind::kMul;
  return make_result(std::move(out), op, {a, b}, [kind, n, na, nb](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    const float* g = self.grad.ptr();
    if (A.requires_grad) {
      Tensor ga = Tensor::uninitialized(self.value.shape());
      if (kind == Binary::kMul) {
        broadcast_apply(g, n, B.value.ptr(), nb, ga.ptr(), n, [](float x, float y) { return x * y; });
      } else {
        std::copy(g, g + n, ga.ptr());
      }
      A.accumulate(reduce_to(ga, A.value.shape()));
    }
    if (B.requires_grad) {
      Tensor gb = Tensor::uninitialized(self.value.shape());
      if (kind == Binary::kMul) {
        broadcast_apply(g, n, A.value.ptr(), na, gb.ptr(), n, [](float x, float y) { return x * y; });
      } else if (kind == Binary::kSub) {
        for (std::size_t i = 0; i < n; ++i) gb[i] = -g[i];
      } else {
        std::copy(g, g + n, gb.ptr());
      }
      B.accumulate(reduce_to(gb, B.value.shape()));
    }
  });
}

template <typename Fwd, typename Deriv>
Var unary(const Var& a, OpKind op, Fwd fwd, Deriv deriv) {
  Tensor out = Tensor::uninitialized(a.shape());
  const float* pa = a.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i]);
  return make_result(std::move(out), op, {a}, [deriv](Node& self) {
    Node& A = *self.parents[0];
    Tensor ga = Tensor::uninitialized(A.value.shape());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] * deriv(A.value[i]);
    A.accumulate(ga);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) mismatch("matmul", sa, sb);
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t n = sb.back();
  if (sb[sb.size() - 2] != k) mismatch("matmul", sa, sb);

  if (sb.size() == 2) {
    const std::size_t rows = a.value().size() / k;
    Shape out_shape = sa;
    out_shape.back() = n;
    Tensor out = Tensor::uninitialized(out_shape);
    MMap(out.ptr(), rows, n).noalias() = CMap(a.value().ptr(), rows, k) * CMap(b.value().ptr(), k, n);
    return make_result(std::move(out), OpKind::kMatmul, {a, b}, [rows, k, n](Node& self) {
      Node& A = *self.parents[0];
      Node& B = *self.parents[1];
      CMap g(self.grad.ptr(), rows, n);
      if (A.requires_grad) {
        Tensor ga = Tensor::uninitialized(A.value.shape());
        MMap(ga.ptr(), rows, k).noalias() = g * CMap(B.value.ptr(), k, n).transpose();
        A.accumulate(ga);
      }
      if (B.requires_grad) {
        Tensor gb = Tensor::uninitialized(B.value.shape());
        MMap(gb.ptr(), k, n).noalias() = CMap(A.value.ptr(), rows, k).transpose() * g;
        B.accumulate(gb);
      }
    });
  }

  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())) {
    mismatch("matmul", sa, sb);
  }
  const std::size_t batch = a.value().size() / (m * k);
  Shape out_shape = sa;
  out_shape.back() = n;
  Tensor out = Tensor::uninitialized(out_shape);
  for (std::size_t i = 0; i < batch; ++i) {
    MMap(out.ptr() + i * m * n, m, n).noalias() =
        CMap(a.value().ptr() + i * m * k, m, k) * CMap(b.value().ptr() + i * k * n, k, n);
  }
  return make_result(std::move(out), OpKind::kMatmul, {a, b}, [batch, m, k, n](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    Tensor ga, gb;
    if (A.requires_grad) ga = Tensor::uninitialized(A.value.shape());
    if (B.requires_grad) gb = Tensor::uninitialized(B.value.shape());
    for (std::size_t i = 0; i < batch; ++i) {
      CMap g(self.grad.ptr() + i * m * n, m, n);
      if (A.requires_grad) {
        MMap(ga.ptr() + i * m * k, m, k).noalias() =
            g * CMap(B.value.ptr() + i * k * n, k, n).transpose();
      }
      if (B.requires_grad) {
        MMap(gb.ptr() + i * k * n, k, n).noalias() =
            CMap(A.value.ptr() + i * m * k, m, k).transpose() * g;
      }
    }
    if (A.requires_grad) A.accumulate(ga);
    if (B.requires_grad) B.accumulate(gb);
  });
}

Var add(const Var& a, const Var& b) { return binary(a, b, Binary::kAdd); }
Var sub(const Var& a, const Var& b) { return binary(a, b, Binary::kSub); }
Var mul(const Var& a, const Var& b) { return binary(a, b, Binary::kMul); }

Var scale(const Var& a, float s) {
  Tensor out = Tensor::uninitialized(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  return make_result(std::move(out), OpKind::kScale, {a}, [s](Node& self) {
    Tensor ga = Tensor::uninitialized(self.value.shape());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] * s;
    self.parents[0]->accumulate(ga);
  });
}

Var transpose_last2(const Var& a) {
  const Shape& sa = a.shape();
  if (sa.size() < 2) throw ShapeError("transpose: needs rank >= 2, got " + shape_str(sa));
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t n = sa.back();
  const std::size_t batch = a.value().size() / (m * n);
  Shape out_shape = sa;
  std::swap(out_shape[out_shape.size() - 2], out_shape.back());
  auto transpose = [batch](const float* src, float* dst, std::size_t rows, std::size_t cols) {
    for (std::size_t b = 0; b < batch; ++b) {
      const float* s = src + b * rows * cols;
      float* d = dst + b * rows * cols;
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) d[j * rows + i] = s[i * cols + j];
    }
  };
  Tensor out = Tensor::uninitialized(out_shape);
  transpose(a.value().ptr(), out.ptr(), m, n);
  return make_result(std::move(out), OpKind::kTranspose, {a}, [transpose, m, n](Node& self) {
    Tensor ga = Tensor::uninitialized(self.parents[0]->value.shape());
    transpose(self.grad.ptr(), ga.ptr(), n, m);
    self.parents[0]->accumulate(ga);
  });
}

Var gelu(const Var& a) {
  static constexpr float kInvSqrt2 = static_cast<float>(1.0 / std::numbers::sqrt2);
  static constexpr float kInvSqrt2Pi = static_cast<float>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  const auto n = static_cast<Eigen::Index>(a.value().size());
  Tensor out = Tensor::uninitialized(a.shape());
  {
    CArr x(a.value().ptr(), n);
    MArr(out.ptr(), n) = 0.5f * x * (1.0f + (x * kInvSqrt2).erf());
  }
  return make_result(std::move(out), OpKind::kGelu, {a}, [n](Node& self) {
    Node& A = *self.parents[0];
    CArr x(A.value.ptr(), n);
    Tensor ga = Tensor::uninitialized(A.value.shape());
    MArr(ga.ptr(), n) = CArr(self.grad.ptr(), n) *
                        (0.5f * (1.0f + (x * kInvSqrt2).erf()) + x * kInvSqrt2Pi * (-0.5f * x * x).exp());
    A.accumulate(ga);
  });
}

Var log_sigmoid(const Var& a) {
  return unary(
      a, OpKind::kLogSigmoid,
      [](float x) {
        return x >= 0.0f ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
      },
      [](float x) {
        // d/dx log sigmoid(x) = sigmoid(-x)
        return x >= 0.0f ? std::exp(-x) / (1.0f + std::exp(-x)) : 1.0f / (1.0f + std::exp(x));
      });
}

Var softmax_last(const Var& a) {
  const std::size_t d = a.shape().empty() ? 1 : a.shape().back();
  const std::size_t rows = a.value().size() / d;
  Tensor out = Tensor::uninitialized(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = a.value().ptr() + r * d;
    float* y = out.ptr() + r * d;
    float mx = x[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    MArr(y, static_cast<Eigen::Index>(d)) = (CArr(x, static_cast<Eigen::Index>(d)) - mx).exp();
    double sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) sum += y[j];
    const float inv = static_cast<float>(1.0 / sum);
    for (std::size_t j = 0; j < d; ++j) y[j] *= inv;
  }
  return make_result(std::move(out), OpKind::kSoftmax, {a}, [rows, d](Node& self) {
    Tensor ga = Tensor::uninitialized(self.value.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const float* y = self.value.ptr() + r * d;
      const float* g = self.grad.ptr() + r * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(g[j]) * y[j];
      float* o = ga.ptr() + r * d;
      for (std::size_t j = 0; j < d; ++j) o[j] = y[j] * (g[j] - static_cast<float>(dot));
    }
    self.parents[0]->accumulate(ga);
  });
}

Var layer_norm_last(const Var& x, const Var& gain, const Var& bias, float eps) {
  const Shape& sx = x.shape();
  if (sx.empty()) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = sx.back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    mismatch("layer_norm", sx, gain.shape() != Shape{d} ? gain.shape() : bias.shape());
  }
  const std::size_t rows = x.value().size() / d;
  Tensor out = Tensor::uninitialized(sx);
  Tensor xhat = Tensor::uninitialized(sx);
  std::vector<float> inv_std(rows);
  const float* g = gain.value().ptr();
  const float* b = bias.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = x.value().ptr() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = in[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<float>(is);
    float* xh = xhat.ptr() + r * d;
    float* o = out.ptr() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = static_cast<float>((in[j] - mean) * is);
      o[j] = xh[j] * g[j] + b[j];
    }
  }
  return make_result(
      std::move(out), OpKind::kLayerNorm, {x, gain, bias},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& X = *self.parents[0];
        Node& G = *self.parents[1];
        Node& B = *self.parents[2];
        const float* gy = self.grad.ptr();
        if (X.requires_grad) {
          Tensor gx = Tensor::uninitialized(X.value.shape());
          std::vector<float> dxh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            const float* xh = xhat.ptr() + r * d;
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              dxh[j] = gy[r * d + j] * G.value[j];
              m1 += dxh[j];
              m2 += static_cast<double>(dxh[j]) * xh[j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              gx[r * d + j] = static_cast<float>(inv_std[r] * (dxh[j] - m1 - xh[j] * m2));
            }
          }
          X.accumulate(gx);
        }
        if (G.requires_grad || B.requires_grad) {
          std::vector<double> gg(d, 0.0), gb(d, 0.0);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              gg[j] += static_cast<double>(gy[r * d + j]) * xhat[r * d + j];
              gb[j] += gy[r * d + j];
            }
          }
          Tensor tg({d}), tb({d});
          for (std::size_t j = 0; j < d; ++j) {
            tg[j] = static_cast<float>(gg[j]);
            tb[j] = static_cast<float>(gb[j]);
          }
          if (G.requires_grad) G.accumulate(tg);
          if (B.requires_grad) B.accumulate(tb);
        }
      });
}

Var mean_axis(const Var& a, std::size_t axis) {
  const Shape& sa = a.shape();
  if (axis >= sa.size()) {
    throw ShapeError("mean_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(sa));
  }
  std::size_t pre = 1, post = 1;
  for (std::size_t i = 0; i < axis; ++i) pre *= sa[i];
  for (std::size_t i = axis + 1; i < sa.size(); ++i) post *= sa[i];
  const std::size_t n = sa[axis];
  Shape out_shape = sa;
  out_shape.erase(out_shape.begin() + static_cast<long>(axis));
  Tensor out = Tensor::uninitialized(out_shape);
  std::vector<double> acc(post);
  for (std::size_t p = 0; p < pre; ++p) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const float* src = a.value().ptr() + (p * n + i) * post;
      for (std::size_t q = 0; q < post; ++q) acc[q] += src[q];
    }
    for (std::size_t q = 0; q < post; ++q) out[p * post + q] = static_cast<float>(acc[q] / n);
  }
  return make_result(std::move(out), OpKind::kMeanAxis, {a}, [pre, n, post](Node& self) {
    Tensor ga = Tensor::uninitialized(self.parents[0]->value.shape());
    const float inv = 1.0f / static_cast<float>(n);
    for (std::size_t p = 0; p < pre; ++p)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < post; ++q)
          ga[(p * n + i) * post + q] = self.grad[p * post + q] * inv;
    self.parents[0]->accumulate(ga);
  });
}

Var sum_all(const Var& a) {
  double acc = 0.0;
  for (float v : a.value().data()) acc += v;
  return make_result(Tensor::scalar(static_cast<float>(acc)), OpKind::kSumAll, {a}, [](Node& self) {
    self.parents[0]->accumulate(Tensor::full(self.parents[0]->value.shape(), self.grad[0]));
  });
}

Var mean_all(const Var& a) {
  const std::size_t n = a.value().size();
  double acc = 0.0;
  for (float v : a.value().data()) acc += v;
  return make_result(Tensor::scalar(static_cast<float>(acc / n)), OpKind::kMeanAll, {a},
                     [n](Node& self) {
                       self.parents[0]->accumulate(Tensor::full(
                           self.parents[0]->value.shape(), self.grad[0] / static_cast<float>(n)));
                     });
}

Var l1_mean(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) mismatch("l1_mean", a.shape(), b.shape());
  const std::size_t n = a.value().size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::fabs(a.value()[i] - b.value()[i]);
  return make_result(Tensor::scalar(static_cast<float>(acc / n)), OpKind::kL1Mean, {a, b},
                     [n](Node& self) {
                       Node& A = *self.parents[0];
                       Node& B = *self.parents[1];
                       const float s = self.grad[0] / static_cast<float>(n);
                       Tensor ga(A.value.shape());
                       for (std::size_t i = 0; i < n; ++i) {
                         const float diff = A.value[i] - B.value[i];
                         ga[i] = diff > 0.0f ? s : diff < 0.0f ? -s : 0.0f;
                       }
                       if (B.requires_grad) {
                         Tensor gb(B.value.shape());
                         for (std::size_t i = 0; i < n; ++i) gb[i] = -ga[i];
                         B.accumulate(gb);
                       }
                       if (A.requires_grad) A.accumulate(ga);
                     });
}

Var cosine_similarity_last(const Var& a, const Var& b, float eps) {
  if (a.shape() != b.shape() || a.shape().empty()) mismatch("cosine_similarity", a.shape(), b.shape());
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.value().size() / d;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  Tensor out(out_shape);
  // Per row: dot, |a|, |b|.
  std::vector<double> stats(rows * 3);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = a.value().ptr() + r * d;
    const float* y = b.value().ptr() + r * d;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += static_cast<double>(x[j]) * y[j];
      na += static_cast<double>(x[j]) * x[j];
      nb += static_cast<double>(y[j]) * y[j];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    stats[r * 3] = dot;
    stats[r * 3 + 1] = na;
    stats[r * 3 + 2] = nb;
    out[r] = static_cast<float>(dot / (na * nb + eps));
  }
  return make_result(
      std::move(out), OpKind::kCosine, {a, b},
      [rows, d, eps, stats = std::move(stats)](Node& self) {
        Node& A = *self.parents[0];
        Node& B = *self.parents[1];
        Tensor ga = Tensor::uninitialized(A.value.shape()), gb = Tensor::uninitialized(B.value.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const double dot = stats[r * 3], na = stats[r * 3 + 1], nb = stats[r * 3 + 2];
          const double den = na * nb + eps;
          const double g = self.grad[r];
          const float* x = A.value.ptr() + r * d;
          const float* y = B.value.ptr() + r * d;
          // d/dx [dot / (|x||y| + eps)] = y/den - dot*|y|*x/(|x| den^2)
          const double cx = na > 0.0 ? dot * nb / (na * den * den) : 0.0;
          const double cy = nb > 0.0 ? dot * na / (nb * den * den) : 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            ga[r * d + j] = static_cast<float>(g * (y[j] / den - cx * x[j]));
            gb[r * d + j] = static_cast<float>(g * (x[j] / den - cy * y[j]));
          }
        }
        if (A.requires_grad) A.accumulate(ga);
        if (B.requires_grad) B.accumulate(gb);
      });
}

Var embedding(const Var& table, const std::vector<std::size_t>& ids) {
  const Shape& st = table.shape();
  if (st.size() != 2) throw ShapeError("embedding: table must be rank 2, got " + shape_str(st));
  const std::size_t vocab = st[0];
  const std::size_t d = st[1];
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " out of range for table " +
                       shape_str(st));
    }
    std::copy_n(table.value().ptr() + ids[i] * d, d, out.ptr() + i * d);
  }
  return make_result(std::move(out), OpKind::kEmbedding, {table}, [ids, d](Node& self) {
    Tensor gt(self.parents[0]->value.shape());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) gt[ids[i] * d + j] += self.grad[i * d + j];
    }
    self.parents[0]->accumulate(gt);
  });
}

Var conv1d(const Var& x, const Var& w, std::size_t stride) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 3 || sw.size() != 3 || sx[2] != sw[1] || stride == 0) mismatch("conv1d", sx, sw);
  const std::size_t batch = sx[0], len = sx[1], cin = sx[2];
  const std::size_t kernel = sw[0], cout = sw[2];
  if (len < kernel) {
    throw ShapeError("conv1d: input length " + std::to_string(len) + " shorter than kernel " +
                     std::to_string(kernel) + " (" + shape_str(sx) + " vs " + shape_str(sw) + ")");
  }
  const std::size_t frames = (len - kernel) / stride + 1;
  const std::size_t patch = kernel * cin;
  const auto row_stride = static_cast<Eigen::Index>(stride * cin);
  Tensor out = Tensor::uninitialized({batch, frames, cout});
  CMap wm(w.value().ptr(), patch, cout);
  for (std::size_t b = 0; b < batch; ++b) {
    // Channel-last layout: frame t's receptive field is a contiguous run of
    // kernel*cin floats starting at t*stride*cin.
    StridedCMap patches(x.value().ptr() + b * len * cin, frames, patch, Eigen::OuterStride<>(row_stride));
    MMap(out.ptr() + b * frames * cout, frames, cout).noalias() = patches * wm;
  }
  return make_result(
      std::move(out), OpKind::kConv1d, {x, w},
      [batch, len, cin, frames, patch, cout, stride, row_stride](Node& self) {
        Node& X = *self.parents[0];
        Node& W = *self.parents[1];
        CMap wm(W.value.ptr(), patch, cout);
        Tensor gw, gx;
        if (W.requires_grad) gw = Tensor(W.value.shape());
        if (X.requires_grad) gx = Tensor(X.value.shape());
        RowMat dpatch;
        for (std::size_t b = 0; b < batch; ++b) {
          CMap g(self.grad.ptr() + b * frames * cout, frames, cout);
          if (W.requires_grad) {
            StridedCMap patches(X.value.ptr() + b * len * cin, frames, patch, Eigen::OuterStride<>(row_stride));
            MMap(gw.ptr(), patch, cout).noalias() += patches.transpose() * g;
          }
          if (X.requires_grad) {
            dpatch.noalias() = g * wm.transpose();
            float* dst = gx.ptr() + b * len * cin;
            for (std::size_t t = 0; t < frames; ++t) {
              float* win = dst + t * stride * cin;
              const float* src = dpatch.data() + t * patch;
              for (std::size_t j = 0; j < patch; ++j) win[j] += src[j];
            }
          }
        }
        if (W.requires_grad) W.accumulate(gw);
        if (X.requires_grad) X.accumulate(gx);
      });
}

Var reshape(const Var& a, Shape shape) {
  if (numel(shape) != a.value().size()) mismatch("reshape", a.shape(), shape);
  return make_result(a.value().reshaped(std::move(shape)), OpKind::kReshape, {a}, [](Node& self) {
    Node& A = *self.parents[0];
    A.accumulate(self.grad.reshaped(A.value.shape()));
  });
}

namespace {
// [B, T, H, dh] <-> [B, H, T, dh] index shuffles.
void heads_permute(const float* src, float* dst, std::size_t B, std::size_t T, std::size_t H,
                   std::size_t dh, bool split) {
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t bthd = ((b * T + t) * H + h) * dh;
        const std::size_t bhtd = ((b * H + h) * T + t) * dh;
        if (split)
          std::copy_n(src + bthd, dh, dst + bhtd);
        else
          std::copy_n(src + bhtd, dh, dst + bthd);
      }
}
}  // namespace

Var split_heads(const Var& a, std::size_t heads) {
  const Shape& s = a.shape();
  if (s.size() != 3 || heads == 0 || s[2] % heads != 0) {
    throw ShapeError("split_heads: cannot split " + shape_str(s) + " into " + std::to_string(heads) + " heads");
  }
  const std::size_t B = s[0], T = s[1], dh = s[2] / heads;
  Tensor out = Tensor::uninitialized({B, heads, T, dh});
  heads_permute(a.value().ptr(), out.ptr(), B, T, heads, dh, true);
  return make_result(std::move(out), OpKind::kSplitHeads, {a}, [B, T, heads, dh](Node& self) {
    Tensor ga = Tensor::uninitialized(self.parents[0]->value.shape());
    heads_permute(self.grad.ptr(), ga.ptr(), B, T, heads, dh, false);
    self.parents[0]->accumulate(ga);
  });
}

Var merge_heads(const Var& a) {
  const Shape& s = a.shape();
  if (s.size() != 4) throw ShapeError("merge_heads: expected rank 4, got " + shape_str(s));
  const std::size_t B = s[0], H = s[1], T = s[2], dh = s[3];
  Tensor out = Tensor::uninitialized({B, T, H * dh});
  heads_permute(a.value().ptr(), out.ptr(), B, T, H, dh, false);
  return make_result(std::move(out), OpKind::kMergeHeads, {a}, [B, T, H, dh](Node& self) {
    Tensor ga = Tensor::uninitialized(self.parents[0]->value.shape());
    heads_permute(self.grad.ptr(), ga.ptr(), B, T, H, dh, true);
    self.parents[0]->accumulate(ga);
  });
}

Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(s) + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t n = s[0], c = s[1];
  Tensor probs(s);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) throw ShapeError("cross_entropy: label out of range");
    const float* x = logits.value().ptr() + i * c;
    float* p = probs.ptr() + i * c;
    float mx = x[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(x[j] - mx));
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) p[j] = static_cast<float>(std::exp(x[j] - lse));
    loss += lse - x[labels[i]];
  }
  return make_result(Tensor::scalar(static_cast<float>(loss / n)), OpKind::kCrossEntropy, {logits},
                     [n, c, labels, probs = std::move(probs)](Node& self) {
                       Tensor g = probs;
                       const float s = self.grad[0] / static_cast<float>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         g[i * c + labels[i]] -= 1.0f;
                         for (std::size_t j = 0; j < c; ++j) g[i * c + j] *= s;
                       }
                       self.parents[0]->accumulate(g);
                     });
}

}  // namespace distmerge
