#pragma once

// Blocking, haloing and unblocking in the persistent 5D layout
// (batch, H/b, W/b, positions, channels).

#include "halo/tensor.hpp"

#include <string>

namespace halo {

enum class PadMode { Zero, Circular };

inline const char* to_string(PadMode p) { return p == PadMode::Zero ? "zero" : "circular"; }

/// Non-overlapping b x b blocks. `data` has shape (n, H/b, W/b, b*b, c); the
/// b x b patch is flattened row-major (local index = row * b + col).
template <typename Scalar = double>
struct BlockedTensor {
  Index batch = 0;
  Index blocks_h = 0;
  Index blocks_w = 0;
  Index block_size = 0;
  Index channels = 0;
  Tensor<Scalar> data;

  Index block_len() const { return block_size * block_size; }
  Index height() const { return blocks_h * block_size; }
  Index width() const { return blocks_w * block_size; }
};

/// Per-block (b+2h)^2 neighborhoods. `data` has shape (n, H/b, W/b, (b+2h)^2, c).
template <typename Scalar = double>
struct HaloedTensor {
  Index batch = 0;
  Index blocks_h = 0;
  Index blocks_w = 0;
  Index block_size = 0;
  Index halo = 0;
  Index channels = 0;
  PadMode pad = PadMode::Zero;
  Tensor<Scalar> data;

  Index window() const { return block_size + 2 * halo; }
  Index window_len() const { return window() * window(); }
};

namespace detail {

inline void check_blockable(const Shape& s, Index b, const char* op) {
  if (s.size() != 4) throw DimensionError(std::string(op) + ": expected NHWC, got " + to_string(s));
  if (b < 1) throw ConfigError(std::string(op) + ": block size must be >= 1");
  if (s[1] % b != 0) {
    throw DivisibilityError(std::string(op) + ": height " + std::to_string(s[1]) +
                            " not divisible by block size " + std::to_string(b));
  }
  if (s[2] % b != 0) {
    throw DivisibilityError(std::string(op) + ": width " + std::to_string(s[2]) +
                            " not divisible by block size " + std::to_string(b));
  }
}

inline Index wrap(Index i, Index n) { return ((i % n) + n) % n; }

}  // namespace detail

template <typename Scalar>
BlockedTensor<Scalar> block(const Tensor<Scalar>& x, Index b) {
  detail::check_blockable(x.shape(), b, "block");
  const Index n = x.dim(0), H = x.dim(1), W = x.dim(2), c = x.dim(3);
  BlockedTensor<Scalar> out{n, H / b, W / b, b, c, Tensor<Scalar>({n, H / b, W / b, b * b, c})};
  for (Index bi = 0; bi < n; ++bi)
    for (Index i = 0; i < H; ++i)
      for (Index j = 0; j < W; ++j) {
        const Scalar* src = &x(bi, i, j, Index{0});
        Scalar* dst = &out.data(bi, i / b, j / b, (i % b) * b + (j % b), Index{0});
        std::copy(src, src + c, dst);
      }
  return out;
}

template <typename Scalar>
Tensor<Scalar> unblock(const BlockedTensor<Scalar>& x) {
  const Index b = x.block_size, c = x.channels;
  Tensor<Scalar> out({x.batch, x.height(), x.width(), c});
  for (Index bi = 0; bi < x.batch; ++bi)
    for (Index i = 0; i < x.height(); ++i)
      for (Index j = 0; j < x.width(); ++j) {
        const Scalar* src = &x.data(bi, i / b, j / b, (i % b) * b + (j % b), Index{0});
        std::copy(src, src + c, &out(bi, i, j, Index{0}));
      }
  return out;
}

/// Gathers, for every block (p, q), image rows [p*b - h, p*b + b + h) and the
/// matching columns. Cells outside the image are zero or wrapped.
template <typename Scalar>
HaloedTensor<Scalar> halo_gather(const Tensor<Scalar>& x, Index b, Index h, PadMode pad) {
  detail::check_blockable(x.shape(), b, "halo_gather");
  if (h < 0) throw ConfigError("halo_gather: halo must be >= 0");
  const Index n = x.dim(0), H = x.dim(1), W = x.dim(2), c = x.dim(3);
  const Index w = b + 2 * h;
  HaloedTensor<Scalar> out{n, H / b, W / b, b, h, c, pad,
                           Tensor<Scalar>({n, H / b, W / b, w * w, c})};
  for (Index bi = 0; bi < n; ++bi)
    for (Index p = 0; p < H / b; ++p)
      for (Index q = 0; q < W / b; ++q)
        for (Index wi = 0; wi < w; ++wi)
          for (Index wj = 0; wj < w; ++wj) {
            Index i = p * b - h + wi;
            Index j = q * b - h + wj;
            Scalar* dst = &out.data(bi, p, q, wi * w + wj, Index{0});
            if (pad == PadMode::Circular) {
              i = detail::wrap(i, H);
              j = detail::wrap(j, W);
            } else if (i < 0 || i >= H || j < 0 || j >= W) {
              continue;  // already zero
            }
            const Scalar* src = &x(bi, i, j, Index{0});
            std::copy(src, src + c, dst);
          }
  return out;
}

/// Adjoint of halo_gather: accumulates every window cell back onto the image
/// pixel it was copied from. Zero-padded cells are dropped.
template <typename Scalar>
Tensor<Scalar> halo_scatter_add(const HaloedTensor<Scalar>& g, Index H, Index W) {
  const Index b = g.block_size, h = g.halo, w = g.window(), c = g.channels;
  Tensor<Scalar> out({g.batch, H, W, c});
  for (Index bi = 0; bi < g.batch; ++bi)
    for (Index p = 0; p < g.blocks_h; ++p)
      for (Index q = 0; q < g.blocks_w; ++q)
        for (Index wi = 0; wi < w; ++wi)
          for (Index wj = 0; wj < w; ++wj) {
            Index i = p * b - h + wi;
            Index j = q * b - h + wj;
            if (g.pad == PadMode::Circular) {
              i = detail::wrap(i, H);
              j = detail::wrap(j, W);
            } else if (i < 0 || i >= H || j < 0 || j >= W) {
              continue;
            }
            const Scalar* src = &g.data(bi, p, q, wi * w + wj, Index{0});
            Scalar* dst = &out(bi, i, j, Index{0});
            for (Index ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
  return out;
}

/// Blocked-local neighborhood memory per batch item: HW/b^2 (b+2h)^2 c.
inline Index neighborhood_memory(Index H, Index W, Index c, Index b, Index h) {
  detail::check_blockable({1, H, W, c}, b, "neighborhood_memory");
  if (h < 0) throw ConfigError("neighborhood_memory: halo must be >= 0");
  return (H * W) / (b * b) * (b + 2 * h) * (b + 2 * h) * c;
}

/// Circular shift: out(i, j) = x(i - di, j - dj) with wrap-around.
template <typename Scalar>
Tensor<Scalar> circular_shift(const Tensor<Scalar>& x, Index di, Index dj) {
  if (x.rank() != 4) throw DimensionError("circular_shift: expected NHWC, got " + to_string(x.shape()));
  const Index n = x.dim(0), H = x.dim(1), W = x.dim(2), c = x.dim(3);
  Tensor<Scalar> out(x.shape());
  for (Index bi = 0; bi < n; ++bi)
    for (Index i = 0; i < H; ++i)
      for (Index j = 0; j < W; ++j) {
        const Scalar* src = &x(bi, detail::wrap(i - di, H), detail::wrap(j - dj, W), Index{0});
        std::copy(src, src + c, &out(bi, i, j, Index{0}));
      }
  return out;
}

/// Rolls the block grid of a haloed tensor by (dp, dq) block positions.
template <typename Scalar>
HaloedTensor<Scalar> roll_blocks(const HaloedTensor<Scalar>& x, Index dp, Index dq) {
  HaloedTensor<Scalar> out = x;
  const Index len = x.window_len() * x.channels;
  for (Index bi = 0; bi < x.batch; ++bi)
    for (Index p = 0; p < x.blocks_h; ++p)
      for (Index q = 0; q < x.blocks_w; ++q) {
        const Scalar* src = &x.data(bi, detail::wrap(p - dp, x.blocks_h),
                                    detail::wrap(q - dq, x.blocks_w), Index{0}, Index{0});
        std::copy(src, src + len, &out.data(bi, p, q, Index{0}, Index{0}));
      }
  return out;
}

}  // namespace halo
