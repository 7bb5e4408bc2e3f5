#include "edgedoc/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "edgedoc/rng.hpp"

namespace edgedoc {
namespace ops {

namespace {

using RowMat =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs)
    if (t->needs_grad()) return true;
  return false;
}

void finish(const char* op, Tensor& out,
            std::initializer_list<const Tensor*> inputs,
            std::function<void()> backward_fn) {
  if (finite_checks_enabled() && !out.all_finite())
    throw NumericError(std::string(op) + ": non-finite output");
  if (should_record(inputs)) {
    out.mark_recorded();
    Tape::active()->record(op, std::move(backward_fn));
  }
}

// Validates elementwise-broadcast compatibility: equal shape, 1-element rhs,
// or rhs shape equal to the trailing dims of lhs.
void check_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  if (b.size() == 1) return;
  if (a.shape() == b.shape()) return;
  bool trailing = a.ndim() >= b.ndim() && a.size() % b.size() == 0;
  if (trailing) {
    std::size_t off = a.ndim() - b.ndim();
    for (std::size_t i = 0; i < b.ndim() && trailing; ++i)
      trailing = a.dim(off + i) == b.dim(i);
  }
  if (!trailing)
    throw ShapeError(std::string(op) + ": incompatible shapes " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

// Accumulates a full-size gradient chunk-summed down to b's size.
void reduce_broadcast_grad(const std::vector<Scalar>& g, Tensor b) {
  const std::size_t bs = b.size();
  Scalar* dst = b.grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i % bs] += g[i];
}

}  // namespace

Tensor add(const Tensor& a_in, const Tensor& b_in) {
  Tensor a = a_in, b = b_in;
  if (a.size() < b.size()) std::swap(a, b);
  check_broadcast("add", a, b);
  const std::size_t bs = b.size();
  Tensor out = Tensor::zeros(a.shape());
  const Scalar* pa = a.data();
  const Scalar* pb = b.data();
  Scalar* po = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = pa[i] + pb[i % bs];
  finish("add", out, {&a, &b}, [a, b, out]() mutable {
    const std::vector<Scalar>& g = out.grad_vec();
    if (a.needs_grad()) a.accumulate_grad(g.data(), g.size());
    if (b.needs_grad()) {
      if (b.size() == g.size())
        b.accumulate_grad(g.data(), g.size());
      else
        reduce_broadcast_grad(g, b);
    }
  });
  return out;
}

Tensor mul(const Tensor& a_in, const Tensor& b_in) {
  Tensor a = a_in, b = b_in;
  if (a.size() < b.size()) std::swap(a, b);
  check_broadcast("mul", a, b);
  const std::size_t bs = b.size();
  Tensor out = Tensor::zeros(a.shape());
  const Scalar* pa = a.data();
  const Scalar* pb = b.data();
  Scalar* po = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = pa[i] * pb[i % bs];
  finish("mul", out, {&a, &b}, [a, b, out]() mutable {
    const std::vector<Scalar>& g = out.grad_vec();
    const Scalar* pa = a.data();
    const Scalar* pb = b.data();
    const std::size_t bs = b.size();
    if (a.needs_grad()) {
      Scalar* da = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * pb[i % bs];
    }
    if (b.needs_grad()) {
      Scalar* db = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) db[i % bs] += g[i] * pa[i];
    }
  });
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_broadcast("div", a, b);
  if (b.size() != 1 && a.shape() != b.shape())
    throw ShapeError("div: rhs must be scalar or same shape");
  const std::size_t bs = b.size();
  Tensor out = Tensor::zeros(a.shape());
  const Scalar* pa = a.data();
  const Scalar* pb = b.data();
  Scalar* po = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = pa[i] / pb[i % bs];
  finish("div", out, {&a, &b}, [a, b, out]() mutable {
    const std::vector<Scalar>& g = out.grad_vec();
    const Scalar* pa = a.data();
    const Scalar* pb = b.data();
    const std::size_t bs = b.size();
    if (a.needs_grad()) {
      Scalar* da = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / pb[i % bs];
    }
    if (b.needs_grad()) {
      Scalar* db = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        Scalar bv = pb[i % bs];
        db[i % bs] += -g[i] * pa[i] / (bv * bv);
      }
    }
  });
  return out;
}

Tensor scale(const Tensor& x, Scalar c) {
  Tensor out = Tensor::zeros(x.shape());
  const Scalar* px = x.data();
  Scalar* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = px[i] * c;
  finish("scale", out, {&x}, [x, out, c]() mutable {
    if (!x.needs_grad()) return;
    const std::vector<Scalar>& g = out.grad_vec();
    Scalar* dx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * c;
  });
  return out;
}

Tensor add_const(const Tensor& x, Scalar c) {
  Tensor out = Tensor::zeros(x.shape());
  const Scalar* px = x.data();
  Scalar* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = px[i] + c;
  finish("add_const", out, {&x}, [x, out]() mutable {
    if (!x.needs_grad()) return;
    const std::vector<Scalar>& g = out.grad_vec();
    x.accumulate_grad(g.data(), g.size());
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const Scalar* px = x.data();
  Scalar* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = px[i] > 0 ? px[i] : 0;
  finish("relu", out, {&x}, [x, out]() mutable {
    if (!x.needs_grad()) return;
    const std::vector<Scalar>& g = out.grad_vec();
    const Scalar* px = x.data();
    Scalar* dx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (px[i] > 0) dx[i] += g[i];
  });
  return out;
}

namespace {
constexpr Scalar kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr Scalar kGeluA = 0.044715f;
}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const Scalar* px = x.data();
  Scalar* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    Scalar v = px[i];
    Scalar t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    po[i] = 0.5f * v * (1.0f + t);
  }
  finish("gelu", out, {&x}, [x, out]() mutable {
    if (!x.needs_grad()) return;
    const std::vector<Scalar>& g = out.grad_vec();
    const Scalar* px = x.data();
    Scalar* dx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      Scalar v = px[i];
      Scalar t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      Scalar du = kGeluC * (1.0f + 3.0f * kGeluA * v * v);
      dx[i] += g[i] * (0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du);
    }
  });
  return out;
}

namespace {
Scalar sigmoid_stable(Scalar v) {
  if (v >= 0) {
    Scalar e = std::exp(-v);
    return 1.0f / (1.0f + e);
  }
  Scalar e = std::exp(v);
  return e / (1.0f + e);
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const Scalar* px = x.data();
  Scalar* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = sigmoid_stable(px[i]);
  finish("sigmoid", out, {&x}, [x, out]() mutable {
    if (!x.needs_grad()) return;
    const std::vector<Scalar>& g = out.grad_vec();
    const Scalar* py = out.data();
    Scalar* dx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      dx[i] += g[i] * py[i] * (1.0f - py[i]);
  });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != b.ndim() || (a.ndim() != 2 && a.ndim() != 3))
    throw ShapeError("matmul: expected 2-D or batched 3-D operands, got " +
                     shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  const bool batched = a.ndim() == 3;
  const std::size_t n = batched ? a.dim(0) : 1;
  const std::size_t rows = a.dim(batched ? 1 : 0);
  const std::size_t inner = a.dim(batched ? 2 : 1);
  const std::size_t cols = b.dim(batched ? 2 : 1);
  if (b.dim(batched ? 1 : 0) != inner || (batched && b.dim(0) != n))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " @ " + shape_str(b.shape()));
  Shape os = batched ? Shape{n, rows, cols} : Shape{rows, cols};
  Tensor out = Tensor::zeros(os);
  for (std::size_t i = 0; i < n; ++i) {
    ConstMapMat A(a.data() + i * rows * inner, rows, inner);
    ConstMapMat B(b.data() + i * inner * cols, inner, cols);
    MapMat O(out.data() + i * rows * cols, rows, cols);
    O.noalias() = A * B;
  }
  finish("matmul", out, {&a, &b},
         [a, b, out, n, rows, inner, cols]() mutable {
           const Scalar* g = out.grad_vec().data();
           for (std::size_t i = 0; i < n; ++i) {
             ConstMapMat G(g + i * rows * cols, rows, cols);
             if (a.needs_grad()) {
               ConstMapMat B(b.data() + i * inner * cols, inner, cols);
               MapMat dA(a.grad() + i * rows * inner, rows, inner);
               dA.noalias() += G * B.transpose();
             }
             if (b.needs_grad()) {
               ConstMapMat A(a.data() + i * rows * inner, rows, inner);
               MapMat dB(b.grad() + i * inner * cols, inner, cols);
               dB.noalias() += A.transpose() * G;
             }
           }
         });
  return out;
}

Tensor transpose_last2(const Tensor& x) {
  if (x.ndim() != 2 && x.ndim() != 3)
    throw ShapeError("transpose_last2: expected 2-D or 3-D, got " +
                     shape_str(x.shape()));
  const bool batched = x.ndim() == 3;
  const std::size_t n = batched ? x.dim(0) : 1;
  const std::size_t rows = x.dim(batched ? 1 : 0);
  const std::size_t cols = x.dim(batched ? 2 : 1);
  Shape os = batched ? Shape{n, cols, rows} : Shape{cols, rows};
  Tensor out = Tensor::zeros(os);
  for (std::size_t i = 0; i < n; ++i) {
    ConstMapMat X(x.data() + i * rows * cols, rows, cols);
    MapMat O(out.data() + i * rows * cols, cols, rows);
    O = X.transpose();
  }
  finish("transpose_last2", out, {&x}, [x, out, n, rows, cols]() mutable {
    if (!x.needs_grad()) return;
    const Scalar* g = out.grad_vec().data();
    for (std::size_t i = 0; i < n; ++i) {
      ConstMapMat G(g + i * rows * cols, cols, rows);
      MapMat dX(x.grad() + i * rows * cols, rows, cols);
      dX += G.transpose();
    }
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " +
                     shape_str(shape) + " changes element count");
  Tensor out = Tensor::from_data(std::move(shape), x.vec());
  finish("reshape", out, {&x}, [x, out]() mutable {
    if (!x.needs_grad()) return;
    const std::vector<Scalar>& g = out.grad_vec();
    x.accumulate_grad(g.data(), g.size());
  });
  return out;
}

namespace {

struct ConvDims {
  std::size_t N, C, H, W, O, kh, kw, OH, OW;
};

ConvDims conv_dims(const char* op, const Tensor& x, const Tensor& w,
                   const Tensor& b, std::size_t stride, std::size_t pad,
                   bool depthwise) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw ShapeError(std::string(op) + ": expected 4-D input/kernel, got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  ConvDims d;
  d.N = x.dim(0);
  d.C = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.O = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  if (depthwise) {
    if (d.O != d.C || w.dim(1) != 1)
      throw ShapeError(std::string(op) + ": kernel must be [C,1,kh,kw]; got " +
                       shape_str(w.shape()) + " for input " +
                       shape_str(x.shape()));
  } else if (w.dim(1) != d.C) {
    throw ShapeError(std::string(op) + ": kernel " + shape_str(w.shape()) +
                     " does not match input channels of " +
                     shape_str(x.shape()));
  }
  if (b.size() != d.O)
    throw ShapeError(std::string(op) + ": bias size " +
                     std::to_string(b.size()) + " != out channels " +
                     std::to_string(d.O));
  if (d.H + 2 * pad < d.kh || d.W + 2 * pad < d.kw)
    throw ShapeError(std::string(op) + ": kernel larger than padded input");
  d.OH = (d.H + 2 * pad - d.kh) / stride + 1;
  d.OW = (d.W + 2 * pad - d.kw) / stride + 1;
  return d;
}

// Column buffer layout: [C*kh*kw, OH*OW], row-major.
void im2col(const Scalar* x, std::size_t C, std::size_t H, std::size_t W,
            std::size_t kh, std::size_t kw, std::size_t stride,
            std::size_t pad, std::size_t OH, std::size_t OW, Scalar* col) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        Scalar* dst = col + ((c * kh + ki) * kw + kj) * OH * OW;
        for (std::size_t oh = 0; oh < OH; ++oh) {
          std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * stride + ki) -
              static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(dst + oh * OW, dst + (oh + 1) * OW, 0.0f);
            continue;
          }
          const Scalar* src = x + (c * H + ih) * W;
          for (std::size_t ow = 0; ow < OW; ++ow) {
            std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * stride + kj) -
                static_cast<std::ptrdiff_t>(pad);
            dst[oh * OW + ow] =
                (iw >= 0 && iw < static_cast<std::ptrdiff_t>(W)) ? src[iw]
                                                                 : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_accum(const Scalar* col, std::size_t C, std::size_t H,
                  std::size_t W, std::size_t kh, std::size_t kw,
                  std::size_t stride, std::size_t pad, std::size_t OH,
                  std::size_t OW, Scalar* dx) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const Scalar* src = col + ((c * kh + ki) * kw + kj) * OH * OW;
        for (std::size_t oh = 0; oh < OH; ++oh) {
          std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * stride + ki) -
              static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
          Scalar* dst = dx + (c * H + ih) * W;
          for (std::size_t ow = 0; ow < OW; ++ow) {
            std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * stride + kj) -
                static_cast<std::ptrdiff_t>(pad);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(W))
              dst[iw] += src[oh * OW + ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::size_t stride, std::size_t pad) {
  ConvDims d = conv_dims("conv2d", x, w, b, stride, pad, false);
  const bool pointwise = d.kh == 1 && d.kw == 1 && stride == 1 && pad == 0;
  const std::size_t kcols = d.OH * d.OW;
  const std::size_t krows = d.C * d.kh * d.kw;
  Tensor out = Tensor::zeros({d.N, d.O, d.OH, d.OW});
  std::vector<Scalar> colbuf(pointwise ? 0 : krows * kcols);
  for (std::size_t n = 0; n < d.N; ++n) {
    const Scalar* xn = x.data() + n * d.C * d.H * d.W;
    const Scalar* colp = xn;
    if (!pointwise) {
      im2col(xn, d.C, d.H, d.W, d.kh, d.kw, stride, pad, d.OH, d.OW,
             colbuf.data());
      colp = colbuf.data();
    }
    ConstMapMat Wm(w.data(), d.O, krows);
    ConstMapMat Col(colp, krows, kcols);
    MapMat O(out.data() + n * d.O * kcols, d.O, kcols);
    O.noalias() = Wm * Col;
    for (std::size_t o = 0; o < d.O; ++o) O.row(o).array() += b.data()[o];
  }
  finish("conv2d", out, {&x, &w, &b},
         [x, w, b, out, d, stride, pad, pointwise, krows, kcols]() mutable {
           std::vector<Scalar> colbuf(pointwise ? 0 : krows * kcols);
           std::vector<Scalar> dcol(x.needs_grad() && !pointwise
                                        ? krows * kcols
                                        : 0);
           for (std::size_t n = 0; n < d.N; ++n) {
             ConstMapMat G(out.grad_vec().data() + n * d.O * kcols, d.O,
                           kcols);
             const Scalar* xn = x.data() + n * d.C * d.H * d.W;
             const Scalar* colp = xn;
             if (!pointwise && (w.needs_grad() || x.needs_grad())) {
               im2col(xn, d.C, d.H, d.W, d.kh, d.kw, stride, pad, d.OH, d.OW,
                      colbuf.data());
               colp = colbuf.data();
             }
             if (w.needs_grad()) {
               ConstMapMat Col(colp, krows, kcols);
               MapMat dW(w.grad(), d.O, krows);
               dW.noalias() += G * Col.transpose();
             }
             if (b.needs_grad()) {
               Scalar* db = b.grad();
               for (std::size_t o = 0; o < d.O; ++o) db[o] += G.row(o).sum();
             }
             if (x.needs_grad()) {
               ConstMapMat Wm(w.data(), d.O, krows);
               if (pointwise) {
                 MapMat dX(x.grad() + n * d.C * d.H * d.W, krows, kcols);
                 dX.noalias() += Wm.transpose() * G;
               } else {
                 MapMat dCol(dcol.data(), krows, kcols);
                 dCol.noalias() = Wm.transpose() * G;
                 col2im_accum(dcol.data(), d.C, d.H, d.W, d.kh, d.kw, stride,
                              pad, d.OH, d.OW,
                              x.grad() + n * d.C * d.H * d.W);
               }
             }
           }
         });
  return out;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                        std::size_t stride, std::size_t pad) {
  ConvDims d = conv_dims("depthwise_conv2d", x, w, b, stride, pad, true);
  const std::size_t kk = d.kh * d.kw;
  const std::size_t kcols = d.OH * d.OW;
  Tensor out = Tensor::zeros({d.N, d.C, d.OH, d.OW});
  std::vector<Scalar> colbuf(kk * kcols);
  for (std::size_t n = 0; n < d.N; ++n) {
    for (std::size_t c = 0; c < d.C; ++c) {
      const Scalar* xc = x.data() + (n * d.C + c) * d.H * d.W;
      im2col(xc, 1, d.H, d.W, d.kh, d.kw, stride, pad, d.OH, d.OW,
             colbuf.data());
      ConstMapMat Col(colbuf.data(), kk, kcols);
      Eigen::Map<const Eigen::RowVectorXf> Wc(w.data() + c * kk, kk);
      Eigen::Map<Eigen::RowVectorXf> O(out.data() + (n * d.C + c) * kcols,
                                       kcols);
      O.noalias() = Wc * Col;
      O.array() += b.data()[c];
    }
  }
  finish("depthwise_conv2d", out, {&x, &w, &b},
         [x, w, b, out, d, stride, pad, kk, kcols]() mutable {
           std::vector<Scalar> colbuf(kk * kcols);
           std::vector<Scalar> dcol(x.needs_grad() ? kk * kcols : 0);
           for (std::size_t n = 0; n < d.N; ++n) {
             for (std::size_t c = 0; c < d.C; ++c) {
               Eigen::Map<const Eigen::RowVectorXf> G(
                   out.grad_vec().data() + (n * d.C + c) * kcols, kcols);
               const Scalar* xc = x.data() + (n * d.C + c) * d.H * d.W;
               if (w.needs_grad() || x.needs_grad())
                 im2col(xc, 1, d.H, d.W, d.kh, d.kw, stride, pad, d.OH, d.OW,
                        colbuf.data());
               ConstMapMat Col(colbuf.data(), kk, kcols);
               if (w.needs_grad()) {
                 Eigen::Map<Eigen::RowVectorXf> dW(w.grad() + c * kk, kk);
                 dW.noalias() += G * Col.transpose();
               }
               if (b.needs_grad()) b.grad()[c] += G.sum();
               if (x.needs_grad()) {
                 Eigen::Map<const Eigen::RowVectorXf> Wc(w.data() + c * kk,
                                                         kk);
                 MapMat dCol(dcol.data(), kk, kcols);
                 dCol.noalias() = Wc.transpose() * G;
                 col2im_accum(dcol.data(), 1, d.H, d.W, d.kh, d.kw, stride,
                              pad, d.OH, d.OW,
                              x.grad() + (n * d.C + c) * d.H * d.W);
               }
             }
           }
         });
  return out;
}

Tensor pad_zero(const Tensor& x, std::size_t pad) {
  if (x.ndim() != 4) throw ShapeError("pad_zero: expected 4-D input");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t OH = H + 2 * pad, OW = W + 2 * pad;
  Tensor out = Tensor::zeros({N, C, OH, OW});
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t h = 0; h < H; ++h)
      std::copy(x.data() + (nc * H + h) * W, x.data() + (nc * H + h + 1) * W,
                out.data() + (nc * OH + h + pad) * OW + pad);
  finish("pad_zero", out, {&x}, [x, out, N, C, H, W, OH, OW, pad]() mutable {
    if (!x.needs_grad()) return;
    const Scalar* g = out.grad_vec().data();
    Scalar* dx = x.grad();
    for (std::size_t nc = 0; nc < N * C; ++nc)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
          dx[(nc * H + h) * W + w] += g[(nc * OH + h + pad) * OW + w + pad];
  });
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.ndim() == 0 || x.size() == 0)
    throw ShapeError("softmax_lastdim: empty input");
  const std::size_t cols = x.dim(x.ndim() - 1);
  const std::size_t rows = x.size() / cols;
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* px = x.data() + r * cols;
    Scalar* po = out.data() + r * cols;
    Scalar m = *std::max_element(px, px + cols);
    Scalar sum = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      po[j] = std::exp(px[j] - m);
      sum += po[j];
    }
    for (std::size_t j = 0; j < cols; ++j) po[j] /= sum;
  }
  finish("softmax_lastdim", out, {&x}, [x, out, rows, cols]() mutable {
    if (!x.needs_grad()) return;
    const Scalar* g = out.grad_vec().data();
    const Scalar* y = out.data();
    Scalar* dx = x.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      Scalar dot = 0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j)
        dx[r * cols + j] += (g[r * cols + j] - dot) * y[r * cols + j];
    }
  });
  return out;
}

Tensor l2_normalize_lastdim(const Tensor& x) {
  if (x.ndim() == 0 || x.size() == 0)
    throw ShapeError("l2_normalize_lastdim: empty input");
  const std::size_t cols = x.dim(x.ndim() - 1);
  const std::size_t rows = x.size() / cols;
  constexpr Scalar kEps = 1e-12f;
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* px = x.data() + r * cols;
    Scalar* po = out.data() + r * cols;
    Scalar ss = kEps;
    for (std::size_t j = 0; j < cols; ++j) ss += px[j] * px[j];
    Scalar inv = 1.0f / std::sqrt(ss);
    for (std::size_t j = 0; j < cols; ++j) po[j] = px[j] * inv;
  }
  finish("l2_normalize_lastdim", out, {&x}, [x, out, rows, cols]() mutable {
    if (!x.needs_grad()) return;
    const Scalar* g = out.grad_vec().data();
    const Scalar* px = x.data();
    Scalar* dx = x.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      Scalar ss = kEps;
      Scalar dot = 0;
      for (std::size_t j = 0; j < cols; ++j) {
        ss += px[r * cols + j] * px[r * cols + j];
        dot += px[r * cols + j] * g[r * cols + j];
      }
      Scalar inv = 1.0f / std::sqrt(ss);
      Scalar inv3 = inv * inv * inv;
      for (std::size_t j = 0; j < cols; ++j)
        dx[r * cols + j] += g[r * cols + j] * inv - px[r * cols + j] * dot * inv3;
    }
  });
  return out;
}

Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma,
                           const Tensor& beta, Scalar eps) {
  if (x.ndim() != 4)
    throw ShapeError("layer_norm_channels: expected 4-D input, got " +
                     shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.size() != C || beta.size() != C)
    throw ShapeError("layer_norm_channels: affine size != C");
  Tensor out = Tensor::zeros(x.shape());
  const Scalar* px = x.data();
  const Scalar* pg = gamma.data();
  const Scalar* pb = beta.data();
  Scalar* po = out.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t p = 0; p < HW; ++p) {
      const std::size_t base = n * C * HW + p;
      Scalar mean = 0;
      for (std::size_t c = 0; c < C; ++c) mean += px[base + c * HW];
      mean /= C;
      Scalar var = 0;
      for (std::size_t c = 0; c < C; ++c) {
        Scalar d = px[base + c * HW] - mean;
        var += d * d;
      }
      var /= C;
      Scalar inv = 1.0f / std::sqrt(var + eps);
      for (std::size_t c = 0; c < C; ++c) {
        Scalar xh = (px[base + c * HW] - mean) * inv;
        po[base + c * HW] = xh * pg[c] + pb[c];
      }
    }
  }
  finish("layer_norm_channels", out, {&x, &gamma, &beta},
         [x, gamma, beta, out, N, C, HW, eps]() mutable {
           const Scalar* g = out.grad_vec().data();
           const Scalar* px = x.data();
           const Scalar* pg = gamma.data();
           Scalar* dx = x.needs_grad() ? x.grad() : nullptr;
           Scalar* dgam = gamma.needs_grad() ? gamma.grad() : nullptr;
           Scalar* dbet = beta.needs_grad() ? beta.grad() : nullptr;
           std::vector<Scalar> xh(C), dxh(C);
           for (std::size_t n = 0; n < N; ++n) {
             for (std::size_t p = 0; p < HW; ++p) {
               const std::size_t base = n * C * HW + p;
               Scalar mean = 0;
               for (std::size_t c = 0; c < C; ++c) mean += px[base + c * HW];
               mean /= C;
               Scalar var = 0;
               for (std::size_t c = 0; c < C; ++c) {
                 Scalar d = px[base + c * HW] - mean;
                 var += d * d;
               }
               var /= C;
               Scalar inv = 1.0f / std::sqrt(var + eps);
               Scalar m1 = 0, m2 = 0;
               for (std::size_t c = 0; c < C; ++c) {
                 xh[c] = (px[base + c * HW] - mean) * inv;
                 Scalar go = g[base + c * HW];
                 dxh[c] = go * pg[c];
                 m1 += dxh[c];
                 m2 += dxh[c] * xh[c];
                 if (dgam) dgam[c] += go * xh[c];
                 if (dbet) dbet[c] += go;
               }
               if (dx) {
                 m1 /= C;
                 m2 /= C;
                 for (std::size_t c = 0; c < C; ++c)
                   dx[base + c * HW] += inv * (dxh[c] - m1 - xh[c] * m2);
               }
             }
           }
         });
  return out;
}

Tensor layer_norm_spatial(const Tensor& x, const Tensor& gamma,
                          const Tensor& beta, Scalar eps) {
  if (x.ndim() != 4)
    throw ShapeError("layer_norm_spatial: expected 4-D input, got " +
                     shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.size() != C || beta.size() != C)
    throw ShapeError("layer_norm_spatial: affine size != C");
  Tensor out = Tensor::zeros(x.shape());
  const Scalar* px = x.data();
  const Scalar* pg = gamma.data();
  const Scalar* pb = beta.data();
  Scalar* po = out.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * HW;
      Scalar mean = 0;
      for (std::size_t p = 0; p < HW; ++p) mean += px[base + p];
      mean /= HW;
      Scalar var = 0;
      for (std::size_t p = 0; p < HW; ++p) {
        Scalar d = px[base + p] - mean;
        var += d * d;
      }
      var /= HW;
      Scalar inv = 1.0f / std::sqrt(var + eps);
      for (std::size_t p = 0; p < HW; ++p)
        po[base + p] = (px[base + p] - mean) * inv * pg[c] + pb[c];
    }
  }
  finish("layer_norm_spatial", out, {&x, &gamma, &beta},
         [x, gamma, beta, out, N, C, HW, eps]() mutable {
           const Scalar* g = out.grad_vec().data();
           const Scalar* px = x.data();
           const Scalar* pg = gamma.data();
           Scalar* dx = x.needs_grad() ? x.grad() : nullptr;
           Scalar* dgam = gamma.needs_grad() ? gamma.grad() : nullptr;
           Scalar* dbet = beta.needs_grad() ? beta.grad() : nullptr;
           for (std::size_t n = 0; n < N; ++n) {
             for (std::size_t c = 0; c < C; ++c) {
               const std::size_t base = (n * C + c) * HW;
               Scalar mean = 0;
               for (std::size_t p = 0; p < HW; ++p) mean += px[base + p];
               mean /= HW;
               Scalar var = 0;
               for (std::size_t p = 0; p < HW; ++p) {
                 Scalar d = px[base + p] - mean;
                 var += d * d;
               }
               var /= HW;
               Scalar inv = 1.0f / std::sqrt(var + eps);
               Scalar m1 = 0, m2 = 0;
               for (std::size_t p = 0; p < HW; ++p) {
                 Scalar xh = (px[base + p] - mean) * inv;
                 Scalar go = g[base + p];
                 Scalar dxh = go * pg[c];
                 m1 += dxh;
                 m2 += dxh * xh;
                 if (dgam) dgam[c] += go * xh;
                 if (dbet) dbet[c] += go;
               }
               if (dx) {
                 m1 /= HW;
                 m2 /= HW;
                 for (std::size_t p = 0; p < HW; ++p) {
                   Scalar xh = (px[base + p] - mean) * inv;
                   Scalar dxh = g[base + p] * pg[c];
                   dx[base + p] += inv * (dxh - m1 - xh * m2);
                 }
               }
             }
           }
         });
  return out;
}

Tensor mean_all(const Tensor& x) {
  Tensor out = Tensor::scalar(0.0f);
  double acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  out.data()[0] = static_cast<Scalar>(acc / static_cast<double>(x.size()));
  finish("mean_all", out, {&x}, [x, out]() mutable {
    if (!x.needs_grad()) return;
    Scalar g = out.grad_vec()[0] / static_cast<Scalar>(x.size());
    Scalar* dx = x.grad();
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g;
  });
  return out;
}

Tensor sum_all(const Tensor& x) {
  Tensor out = Tensor::scalar(0.0f);
  double acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  out.data()[0] = static_cast<Scalar>(acc);
  finish("sum_all", out, {&x}, [x, out]() mutable {
    if (!x.needs_grad()) return;
    Scalar g = out.grad_vec()[0];
    Scalar* dx = x.grad();
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g;
  });
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() != 4) throw ShapeError("global_avg_pool: expected 4-D input");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros({N, C});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double acc = 0;
    for (std::size_t p = 0; p < HW; ++p) acc += x.data()[nc * HW + p];
    out.data()[nc] = static_cast<Scalar>(acc / static_cast<double>(HW));
  }
  finish("global_avg_pool", out, {&x}, [x, out, N, C, HW]() mutable {
    if (!x.needs_grad()) return;
    const Scalar* g = out.grad_vec().data();
    Scalar* dx = x.grad();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      Scalar gv = g[nc] / static_cast<Scalar>(HW);
      for (std::size_t p = 0; p < HW; ++p) dx[nc * HW + p] += gv;
    }
  });
  return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
  if (x.ndim() != 4) throw ShapeError("upsample_nearest2x: expected 4-D input");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out = Tensor::zeros({N, C, 2 * H, 2 * W});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const Scalar* src = x.data() + nc * H * W;
    Scalar* dst = out.data() + nc * 4 * H * W;
    for (std::size_t h = 0; h < 2 * H; ++h)
      for (std::size_t w = 0; w < 2 * W; ++w)
        dst[h * 2 * W + w] = src[(h / 2) * W + (w / 2)];
  }
  finish("upsample_nearest2x", out, {&x}, [x, out, N, C, H, W]() mutable {
    if (!x.needs_grad()) return;
    const Scalar* g = out.grad_vec().data();
    Scalar* dx = x.grad();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const Scalar* gsrc = g + nc * 4 * H * W;
      Scalar* dst = dx + nc * H * W;
      for (std::size_t h = 0; h < 2 * H; ++h)
        for (std::size_t w = 0; w < 2 * W; ++w)
          dst[(h / 2) * W + (w / 2)] += gsrc[h * 2 * W + w];
    }
  });
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const std::size_t N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  std::size_t Ctot = 0;
  for (const Tensor& t : xs) {
    if (t.ndim() != 4 || t.dim(0) != N || t.dim(2) != H || t.dim(3) != W)
      throw ShapeError("concat_channels: mismatched shapes " +
                       shape_str(xs[0].shape()) + " vs " +
                       shape_str(t.shape()));
    Ctot += t.dim(1);
  }
  Tensor out = Tensor::zeros({N, Ctot, H, W});
  const std::size_t HW = H * W;
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t coff = 0;
    for (const Tensor& t : xs) {
      const std::size_t Ci = t.dim(1);
      std::copy(t.data() + n * Ci * HW, t.data() + (n + 1) * Ci * HW,
                out.data() + (n * Ctot + coff) * HW);
      coff += Ci;
    }
  }
  bool any = false;
  for (const Tensor& t : xs) any = any || t.needs_grad();
  if (finite_checks_enabled() && !out.all_finite())
    throw NumericError("concat_channels: non-finite output");
  if (Tape::active() && any) {
    out.mark_recorded();
    std::vector<Tensor> ins = xs;
    Tape::active()->record("concat_channels",
                           [ins, out, N, Ctot, HW]() mutable {
                             const Scalar* g = out.grad_vec().data();
                             for (std::size_t n = 0; n < N; ++n) {
                               std::size_t coff = 0;
                               for (Tensor& t : ins) {
                                 const std::size_t Ci = t.dim(1);
                                 if (t.needs_grad()) {
                                   Scalar* dt = t.grad();
                                   const Scalar* gs =
                                       g + (n * Ctot + coff) * HW;
                                   for (std::size_t i = 0; i < Ci * HW; ++i)
                                     dt[n * Ci * HW + i] += gs[i];
                                 }
                                 coff += Ci;
                               }
                             }
                           });
  }
  return out;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape())
    throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape()) +
                     " vs targets " + shape_str(targets.shape()));
  const std::size_t n = logits.size();
  double acc = 0;
  const Scalar* z = logits.data();
  const Scalar* y = targets.data();
  for (std::size_t i = 0; i < n; ++i)
    acc += std::max(z[i], 0.0f) - z[i] * y[i] +
           std::log1p(std::exp(-std::abs(z[i])));
  Tensor out = Tensor::scalar(static_cast<Scalar>(acc / n));
  finish("bce_with_logits", out, {&logits, &targets},
         [logits, targets, out, n]() mutable {
           Scalar g = out.grad_vec()[0] / static_cast<Scalar>(n);
           const Scalar* z = logits.data();
           const Scalar* y = targets.data();
           if (logits.needs_grad()) {
             Scalar* dz = logits.grad();
             for (std::size_t i = 0; i < n; ++i)
               dz[i] += g * (sigmoid_stable(z[i]) - y[i]);
           }
           if (targets.needs_grad()) {
             Scalar* dy = targets.grad();
             for (std::size_t i = 0; i < n; ++i) dy[i] += -g * z[i];
           }
         });
  return out;
}

Tensor dice_with_logits(const Tensor& logits, const Tensor& targets,
                        Scalar eps) {
  if (logits.shape() != targets.shape())
    throw ShapeError("dice_with_logits: logits " + shape_str(logits.shape()) +
                     " vs targets " + shape_str(targets.shape()));
  const std::size_t N = logits.ndim() == 4 ? logits.dim(0) : 1;
  const std::size_t per = logits.size() / N;
  const Scalar* z = logits.data();
  const Scalar* y = targets.data();
  double loss = 0;
  for (std::size_t b = 0; b < N; ++b) {
    double inter = 0, psum = 0, ysum = 0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      Scalar p = sigmoid_stable(z[i]);
      inter += p * y[i];
      psum += p;
      ysum += y[i];
    }
    loss += 1.0 - (2.0 * inter + eps) / (psum + ysum + eps);
  }
  Tensor out = Tensor::scalar(static_cast<Scalar>(loss / N));
  finish("dice_with_logits", out, {&logits, &targets},
         [logits, targets, out, N, per, eps]() mutable {
           Scalar g = out.grad_vec()[0] / static_cast<Scalar>(N);
           const Scalar* z = logits.data();
           const Scalar* y = targets.data();
           for (std::size_t b = 0; b < N; ++b) {
             double inter = 0, psum = 0, ysum = 0;
             for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
               Scalar p = sigmoid_stable(z[i]);
               inter += p * y[i];
               psum += p;
               ysum += y[i];
             }
             double num = 2.0 * inter + eps;
             double den = psum + ysum + eps;
             double den2 = den * den;
             if (logits.needs_grad()) {
               Scalar* dz = logits.grad();
               for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
                 Scalar p = sigmoid_stable(z[i]);
                 double dp = (num - 2.0 * y[i] * den) / den2;
                 dz[i] += g * static_cast<Scalar>(dp) * p * (1.0f - p);
               }
             }
             if (targets.needs_grad()) {
               Scalar* dy = targets.grad();
               for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
                 Scalar p = sigmoid_stable(z[i]);
                 dy[i] += g * static_cast<Scalar>((num - 2.0 * p * den) / den2);
               }
             }
           }
         });
  return out;
}

Scalar gradcheck(const std::function<Tensor(const Tensor&)>& f,
                 const Tensor& x, Scalar eps, std::size_t max_probes,
                 std::uint64_t probe_seed) {
  Tensor xg = x.clone();
  xg.set_requires_grad(true);
  {
    Tape tape;
    Tensor y = f(xg);
    if (y.size() != 1) throw ContractError("gradcheck: f must be scalar-valued");
    tape.backward(y);
  }
  std::vector<Scalar> g_ad(xg.size(), 0.0f);
  if (xg.has_grad())
    g_ad.assign(xg.grad_vec().begin(), xg.grad_vec().end());

  std::vector<std::size_t> probes;
  if (max_probes == 0 || max_probes >= x.size()) {
    probes.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) probes[i] = i;
  } else {
    SplitMix64 rng(probe_seed);
    for (std::size_t i = 0; i < max_probes; ++i)
      probes.push_back(rng.next_below(x.size()));
  }

  Tensor xp = x.clone();
  Scalar max_err = 0;
  for (std::size_t idx : probes) {
    Scalar orig = xp.data()[idx];
    xp.data()[idx] = orig + eps;
    double fp = f(xp).item();
    xp.data()[idx] = orig - eps;
    double fm = f(xp).item();
    xp.data()[idx] = orig;
    double g_fd = (fp - fm) / (2.0 * static_cast<double>(eps));
    double ad = g_ad[idx];
    double err = std::abs(ad - g_fd) /
                 std::max({1.0, std::abs(ad), std::abs(g_fd)});
    max_err = std::max(max_err, static_cast<Scalar>(err));
  }
  return max_err;
}

}  // namespace ops
}  // namespace edgedoc
