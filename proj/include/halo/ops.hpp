#pragma once

// Reference dense kernels. Every reduction runs in ascending index order
// starting from zero, so results are bit-reproducible and a 1x1 convolution
// is bit-identical to the per-pixel matmul.

#include "halo/parallel.hpp"
#include "halo/tensor.hpp"

#include <cmath>
#include <limits>

namespace halo {

enum class Padding { ZeroSame, Valid };
enum class Activation { Relu, Silu };

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<Scalar> c({m, n});
  const Scalar* pa = a.data();
  const Scalar* pb = b.data();
  Scalar* pc = c.data();
  parallel_for(m, [&](Index i) {
    for (Index j = 0; j < n; ++j) {
      Scalar acc = 0;
      for (Index p = 0; p < k; ++p) acc += pa[i * k + p] * pb[p * n + j];
      pc[i * n + j] = acc;
    }
  });
  return c;
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects rank 2, got " + to_string(a.shape()));
  Tensor<Scalar> t({a.dim(1), a.dim(0)});
  t.matrix() = a.matrix().transpose();
  return t;
}

/// NHWC convolution with an HWIO kernel. ZeroSame pads k/2 on every side,
/// giving ceil(h/stride) outputs for odd k.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, Index stride,
                      Padding pad = Padding::ZeroSame) {
  if (x.rank() != 4 || kernel.rank() != 4) {
    throw DimensionError("conv2d: expected NHWC input and HWIO kernel, got " +
                         to_string(x.shape()) + " and " + to_string(kernel.shape()));
  }
  const Index kh = kernel.dim(0), kw = kernel.dim(1);
  if (kh != kw || kh % 2 == 0) throw ConfigError("conv2d: kernel must be square with odd size");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (kernel.dim(2) != x.dim(3)) {
    throw DimensionError("conv2d: channel mismatch, input " + to_string(x.shape()) + " kernel " +
                         to_string(kernel.shape()));
  }
  const Index n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3), cout = kernel.dim(3);
  const Index p = pad == Padding::ZeroSame ? kh / 2 : 0;
  const Index oh = (h + 2 * p - kh) / stride + 1;
  const Index ow = (w + 2 * p - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw DimensionError("conv2d: kernel larger than input " + to_string(x.shape()));

  Tensor<Scalar> y({n, oh, ow, cout});
  const Scalar* px = x.data();
  const Scalar* pk = kernel.data();
  Scalar* py = y.data();
  parallel_for(n * oh, [&](Index row) {
    const Index b = row / oh, oi = row % oh;
    for (Index oj = 0; oj < ow; ++oj) {
      for (Index co = 0; co < cout; ++co) {
        Scalar acc = 0;
        for (Index ki = 0; ki < kh; ++ki) {
          const Index ii = oi * stride + ki - p;
          if (ii < 0 || ii >= h) continue;
          for (Index kj = 0; kj < kw; ++kj) {
            const Index jj = oj * stride + kj - p;
            if (jj < 0 || jj >= w) continue;
            const Scalar* xin = px + ((b * h + ii) * w + jj) * cin;
            const Scalar* kin = pk + (ki * kw + kj) * cin * cout + co;
            for (Index ci = 0; ci < cin; ++ci) acc += xin[ci] * kin[ci * cout];
          }
        }
        py[((b * oh + oi) * ow + oj) * cout + co] = acc;
      }
    }
  });
  return y;
}

/// Max pooling with "same" output size; cells outside the image are ignored.
template <typename Scalar>
Tensor<Scalar> maxpool(const Tensor<Scalar>& x, Index k, Index stride) {
  if (x.rank() != 4) throw DimensionError("maxpool: expected NHWC, got " + to_string(x.shape()));
  if (k < 1 || k % 2 == 0 || stride < 1) throw ConfigError("maxpool: k must be odd, stride >= 1");
  const Index n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const Index p = k / 2;
  const Index oh = (h + 2 * p - k) / stride + 1;
  const Index ow = (w + 2 * p - k) / stride + 1;
  Tensor<Scalar> y({n, oh, ow, c});
  for (Index b = 0; b < n; ++b)
    for (Index oi = 0; oi < oh; ++oi)
      for (Index oj = 0; oj < ow; ++oj)
        for (Index ch = 0; ch < c; ++ch) {
          Scalar m = -std::numeric_limits<Scalar>::infinity();
          for (Index ki = 0; ki < k; ++ki) {
            const Index ii = oi * stride + ki - p;
            if (ii < 0 || ii >= h) continue;
            for (Index kj = 0; kj < k; ++kj) {
              const Index jj = oj * stride + kj - p;
              if (jj < 0 || jj >= w) continue;
              m = std::max(m, x(b, ii, jj, ch));
            }
          }
          y(b, oi, oj, ch) = m;
        }
  return y;
}

/// Softmax over a single contiguous row, in place. Max is subtracted first.
template <typename Scalar>
void softmax_row(Scalar* row, Index len) {
  Scalar m = row[0];
  for (Index i = 1; i < len; ++i) m = std::max(m, row[i]);
  Scalar sum = 0;
  for (Index i = 0; i < len; ++i) {
    row[i] = std::exp(row[i] - m);
    sum += row[i];
  }
  for (Index i = 0; i < len; ++i) row[i] /= sum;
}

template <typename Scalar>
Tensor<Scalar> softmax_lastdim(const Tensor<Scalar>& x) {
  if (x.rank() < 1) throw DimensionError("softmax_lastdim: empty tensor");
  Tensor<Scalar> y = x;
  const Index len = x.dim(x.rank() - 1);
  for (Index r = 0; r < x.size() / len; ++r) softmax_row(y.data() + r * len, len);
  return y;
}

template <typename Scalar>
Scalar sigmoid(Scalar v) {
  return Scalar(1) / (Scalar(1) + std::exp(-v));
}

template <typename Scalar>
Tensor<Scalar> activation(const Tensor<Scalar>& x, Activation kind) {
  Tensor<Scalar> y = x;
  auto a = y.flat().array();
  switch (kind) {
    case Activation::Relu:
      a = a.max(Scalar(0));
      break;
    case Activation::Silu:
      a = a.unaryExpr([](Scalar v) { return v * sigmoid(v); });
      break;
  }
  return y;
}

/// Inference-mode normalization over the last (channel) axis; works on any
/// rank, including the 5D blocked layout.
template <typename Scalar>
Tensor<Scalar> affine_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& scale,
                           const Tensor<Scalar>& shift, const Tensor<Scalar>& mean,
                           const Tensor<Scalar>& var, Scalar eps) {
  const Index c = x.dim(x.rank() - 1);
  for (const auto* t : {&scale, &shift, &mean, &var}) {
    if (t->size() != c) {
      throw DimensionError("affine_norm: channel count " + std::to_string(c) + " vs parameter " +
                           to_string(t->shape()));
    }
  }
  if ((var.flat().array() < Scalar(0)).any()) throw DomainError("affine_norm: negative variance");

  using Row = Eigen::Array<Scalar, 1, Eigen::Dynamic>;
  const Row mu = mean.flat().array().transpose();
  const Row sd = (var.flat().array() + eps).sqrt().transpose();
  const Row sc = scale.flat().array().transpose();
  const Row sh = shift.flat().array().transpose();
  Tensor<Scalar> y = x;
  Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> rows(
      y.data(), x.size() / c, c);
  rows = (((rows.rowwise() - mu).rowwise() / sd).rowwise() * sc).rowwise() + sh;
  return y;
}

/// [n,h,w,c] -> [n,c], ascending spatial summation.
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
  if (x.rank() != 4) throw DimensionError("global_avg_pool: expected NHWC, got " + to_string(x.shape()));
  const Index n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  Tensor<Scalar> y({n, c});
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      Scalar acc = 0;
      for (Index p = 0; p < hw; ++p) acc += x[(b * hw + p) * c + ch];
      y(b, ch) = acc / Scalar(hw);
    }
  return y;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor<Scalar> y = a;
  y.flat() += b.flat();
  return y;
}

/// Keeps pixels with i % stride == 0 and j % stride == 0.
template <typename Scalar>
Tensor<Scalar> subsample(const Tensor<Scalar>& x, Index stride) {
  if (x.rank() != 4) throw DimensionError("subsample: expected NHWC, got " + to_string(x.shape()));
  const Index n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const Index oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  Tensor<Scalar> y({n, oh, ow, c});
  for (Index b = 0; b < n; ++b)
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j)
        for (Index ch = 0; ch < c; ++ch) y(b, i, j, ch) = x(b, i * stride, j * stride, ch);
  return y;
}

}  // namespace halo
