#pragma once

// Brute-force references for verification. Nothing here touches the blocking
// code: projections are applied per pixel first and neighborhoods are read
// straight out of the image, so agreement with the blocked path is evidence
// rather than a tautology.

#include "halo/attention.hpp"
#include "halo/ops.hpp"
#include "halo/tensor.hpp"

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace halo::oracle {

namespace detail {

template <typename Scalar>
struct Projected {
  Tensor<Scalar> q, k, v;  // (n, H, W, width)
};

template <typename Scalar>
Projected<Scalar> project_pixels(const Tensor<Scalar>& x, const AttentionParams<Scalar>& p) {
  if (x.rank() != 4 || x.dim(3) != p.w_q.dim(0)) {
    throw DimensionError("oracle: input " + to_string(x.shape()) + " vs W_Q " + to_string(p.w_q.shape()));
  }
  const Index n = x.dim(0), H = x.dim(1), W = x.dim(2), c = x.dim(3);
  const Tensor<Scalar> flat = x.reshaped({n * H * W, c});
  return {matmul(flat, p.w_q).reshaped({n, H, W, p.w_q.dim(1)}),
          matmul(flat, p.w_k).reshaped({n, H, W, p.w_k.dim(1)}),
          matmul(flat, p.w_v).reshaped({n, H, W, p.w_v.dim(1)})};
}

inline Index wrap(Index i, Index n) { return ((i % n) + n) % n; }

}  // namespace detail

/// Per-pixel attention over the centered k x k window. Relative offsets are
/// measured from the window center and looked up in the tables at
/// offset + (table_len - 1) / 2.
template <typename Scalar>
Tensor<Scalar> sliding_window_attention(const Tensor<Scalar>& x, const AttentionParams<Scalar>& params,
                                        Index heads, Index k, PadMode pad, bool scale_logits = false) {
  if (k < 1 || k % 2 == 0) throw ConfigError("sliding_window_attention: k must be odd, got " + std::to_string(k));
  const Index r = k / 2;
  const Index table = params.rel.row_table.dim(0), half = params.rel.row_table.dim(1);
  if (table < k) throw DimensionError("sliding_window_attention: relative table shorter than window");
  const Index origin = (table - 1) / 2;
  const auto pr = detail::project_pixels(x, params);
  const Index n = x.dim(0), H = x.dim(1), W = x.dim(2);
  const Index d = params.w_q.dim(1) / heads, dv = params.w_v.dim(1) / heads;
  if (d != 2 * half) throw DimensionError("sliding_window_attention: table width must be d_head/2");
  const Scalar scale = scale_logits ? Scalar(1) / std::sqrt(Scalar(d)) : Scalar(1);

  Tensor<Scalar> y({n, H, W, heads * dv});
  std::vector<Scalar> logits(static_cast<std::size_t>(k * k));
  std::vector<Index> key_i(logits.size()), key_j(logits.size());
  std::vector<bool> present(logits.size());
  for (Index bi = 0; bi < n; ++bi)
    for (Index i = 0; i < H; ++i)
      for (Index j = 0; j < W; ++j)
        for (Index hd = 0; hd < heads; ++hd) {
          const Scalar* q = &pr.q(bi, i, j, hd * d);
          for (Index a = -r; a <= r; ++a)
            for (Index b = -r; b <= r; ++b) {
              const auto t = static_cast<std::size_t>((a + r) * k + (b + r));
              Index ii = i + a, jj = j + b;
              present[t] = true;
              if (pad == PadMode::Circular) {
                ii = detail::wrap(ii, H);
                jj = detail::wrap(jj, W);
              } else if (ii < 0 || ii >= H || jj < 0 || jj >= W) {
                present[t] = false;  // zero pixel: key and value are 0
              }
              key_i[t] = ii;
              key_j[t] = jj;
              Scalar content = 0;
              if (present[t]) {
                const Scalar* kv = &pr.k(bi, ii, jj, hd * d);
                for (Index e = 0; e < d; ++e) content += q[e] * kv[e];
              }
              const Scalar* row = params.rel.row_table.data() + (a + origin) * half;
              const Scalar* col = params.rel.col_table.data() + (b + origin) * half;
              Scalar rel = 0;
              for (Index e = 0; e < half; ++e) rel += q[e] * row[e];
              for (Index e = 0; e < half; ++e) rel += q[half + e] * col[e];
              logits[t] = (content + rel) * scale;
            }
          softmax_row(logits.data(), k * k);
          for (Index e = 0; e < dv; ++e) {
            Scalar acc = 0;
            for (std::size_t t = 0; t < logits.size(); ++t) {
              if (present[t]) acc += logits[t] * pr.v(bi, key_i[t], key_j[t], hd * dv + e);
            }
            y(bi, i, j, hd * dv + e) = acc;
          }
        }
  return y;
}

/// Every pixel attends to every pixel; content term only.
template <typename Scalar>
Tensor<Scalar> global_attention(const Tensor<Scalar>& x, const AttentionParams<Scalar>& params, Index heads,
                                bool scale_logits = false) {
  const auto pr = detail::project_pixels(x, params);
  const Index n = x.dim(0), HW = x.dim(1) * x.dim(2);
  const Index d = params.w_q.dim(1) / heads, dv = params.w_v.dim(1) / heads;
  const Index qkw = heads * d, vw = heads * dv;
  const Scalar scale = scale_logits ? Scalar(1) / std::sqrt(Scalar(d)) : Scalar(1);
  Tensor<Scalar> y({n, x.dim(1), x.dim(2), vw});
  std::vector<Scalar> logits(static_cast<std::size_t>(HW));
  for (Index bi = 0; bi < n; ++bi)
    for (Index p = 0; p < HW; ++p)
      for (Index hd = 0; hd < heads; ++hd) {
        const Scalar* q = pr.q.data() + (bi * HW + p) * qkw + hd * d;
        for (Index t = 0; t < HW; ++t) {
          const Scalar* kv = pr.k.data() + (bi * HW + t) * qkw + hd * d;
          Scalar acc = 0;
          for (Index e = 0; e < d; ++e) acc += q[e] * kv[e];
          logits[static_cast<std::size_t>(t)] = acc * scale;
        }
        softmax_row(logits.data(), HW);
        for (Index e = 0; e < dv; ++e) {
          Scalar acc = 0;
          for (Index t = 0; t < HW; ++t) acc += logits[static_cast<std::size_t>(t)] * pr.v[(bi * HW + t) * vw + hd * dv + e];
          y[(bi * HW + p) * vw + hd * dv + e] = acc;
        }
      }
  return y;
}

/// Central-difference probe of a scalar loss around `point`.
struct GradProbe {
  std::function<double(std::span<const double>)> loss;
  std::vector<double> point;
  double epsilon = 1e-5;
  std::string target;
};

std::vector<double> numeric_gradient(const GradProbe& probe);

}  // namespace halo::oracle
