#pragma once

// Multi-head blocked local self-attention with haloing.
//
// For every b x b query block the keys and values come from the block's
// (b+2h)^2 haloed neighborhood. Logits are q.k plus a factorized relative
// term q_row.row[di] + q_col.col[dj], where (di, dj) is the key position
// minus the query position. Masked mode keeps only |di|, |dj| <= h so each
// query sees exactly the pixel-centered (2h+1)^2 window.

#include "halo/blockops.hpp"
#include "halo/ops.hpp"
#include "halo/parallel.hpp"
#include "halo/tensor.hpp"

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

namespace halo {

struct AttentionConfig {
  Index b = 8;
  Index h = 3;
  Index heads = 1;
  Index d_head = 16;   // query/key channels per head
  Index d_value = 0;   // value channels per head; 0 means d_head
  Index stride = 1;
  bool masked = false;
  PadMode pad = PadMode::Zero;
  bool scale_logits = false;

  Index value_dim() const { return d_value > 0 ? d_value : d_head; }
  Index qk_width() const { return heads * d_head; }
  Index v_width() const { return heads * value_dim(); }
  Index window() const { return b + 2 * h; }
  Index window_len() const { return window() * window(); }
  Index query_block() const { return b / stride; }
  Index queries_per_block() const { return query_block() * query_block(); }
  Index table_len() const { return 2 * (b + h) - 1; }
  Index origin() const { return b + h - 1; }

  void validate() const {
    if (b < 1) throw ConfigError("attention: block size must be >= 1");
    if (h < 0) throw ConfigError("attention: halo must be >= 0");
    if (heads < 1) throw ConfigError("attention: heads must be >= 1");
    if (d_head < 2 || d_head % 2 != 0) {
      throw ConfigError("attention: d_head must be even and >= 2, got " + std::to_string(d_head));
    }
    if (d_value < 0) throw ConfigError("attention: d_value must be >= 0");
    if (stride < 1 || b % stride != 0) {
      throw ConfigError("attention: stride " + std::to_string(stride) +
                        " must divide block size " + std::to_string(b));
    }
  }
};

/// Row-major (b^2, (b+2h)^2) table of allowed query/key pairs.
using AttentionMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline AttentionMask build_mask(const AttentionConfig& cfg) {
  const Index b = cfg.b, h = cfg.h, w = cfg.window();
  AttentionMask m(b * b, w * w);
  for (Index qi = 0; qi < b; ++qi)
    for (Index qj = 0; qj < b; ++qj)
      for (Index ki = 0; ki < w; ++ki)
        for (Index kj = 0; kj < w; ++kj) {
          const Index di = ki - h - qi, dj = kj - h - qj;
          m(qi * b + qj, ki * w + kj) = std::abs(di) <= h && std::abs(dj) <= h;
        }
  return m;
}

inline constexpr double kMaskedLogit = -1e30;

/// Per-axis relative embedding tables, shared by all heads of a layer.
/// Row `origin()` holds offset 0.
template <typename Scalar = double>
struct RelEmbedding {
  Tensor<Scalar> row_table;  // [2(b+h)-1, d_head/2]
  Tensor<Scalar> col_table;

  Index length() const { return row_table.dim(0); }
  Index origin() const { return (length() - 1) / 2; }
  Index half() const { return row_table.dim(1); }
};

template <typename Scalar = double>
struct AttentionParams {
  Tensor<Scalar> w_q;  // [c_in, heads*d_head]
  Tensor<Scalar> w_k;  // [c_in, heads*d_head]
  Tensor<Scalar> w_v;  // [c_in, heads*d_value]
  RelEmbedding<Scalar> rel;

  Index in_channels() const { return w_q.dim(0); }
  Index count() const { return w_q.size() + w_k.size() + w_v.size() + rel.row_table.size() + rel.col_table.size(); }

  static AttentionParams zeros(const AttentionConfig& cfg, Index c_in) {
    return {Tensor<Scalar>({c_in, cfg.qk_width()}), Tensor<Scalar>({c_in, cfg.qk_width()}),
            Tensor<Scalar>({c_in, cfg.v_width()}),
            {Tensor<Scalar>({cfg.table_len(), cfg.d_head / 2}),
             Tensor<Scalar>({cfg.table_len(), cfg.d_head / 2})}};
  }

  /// Uniform(-a, a) with a = 1/sqrt(fan_in); embeddings use fan_in = d_head.
  template <typename Rng>
  static AttentionParams random(const AttentionConfig& cfg, Index c_in, Rng& rng) {
    AttentionParams p = zeros(cfg, c_in);
    auto fill = [&rng](Tensor<Scalar>& t, double a) {
      std::uniform_real_distribution<double> u(-a, a);
      for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(u(rng));
    };
    const double a_in = 1.0 / std::sqrt(static_cast<double>(c_in));
    fill(p.w_q, a_in);
    fill(p.w_k, a_in);
    fill(p.w_v, a_in);
    const double a_rel = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));
    fill(p.rel.row_table, a_rel);
    fill(p.rel.col_table, a_rel);
    return p;
  }

  void check(const AttentionConfig& cfg) const {
    const Index c_in = w_q.rank() == 2 ? w_q.dim(0) : -1;
    auto expect = [](const Tensor<Scalar>& t, const Shape& s, const char* name) {
      if (t.shape() != s) {
        throw DimensionError(std::string("attention params: ") + name + " has shape " +
                             to_string(t.shape()) + ", expected " + to_string(s));
      }
    };
    expect(w_q, {c_in, cfg.qk_width()}, "W_Q");
    expect(w_k, {c_in, cfg.qk_width()}, "W_K");
    expect(w_v, {c_in, cfg.v_width()}, "W_V");
    if (rel.row_table.rank() != 2 || rel.row_table.dim(0) < cfg.table_len() ||
        rel.row_table.dim(0) % 2 == 0) {
      throw DimensionError("attention params: row table " + to_string(rel.row_table.shape()) +
                           " does not cover offsets +-" + std::to_string(cfg.b + cfg.h - 1));
    }
    expect(rel.row_table, {rel.row_table.dim(0), cfg.d_head / 2}, "rel_row");
    expect(rel.col_table, rel.row_table.shape(), "rel_col");
  }
};

/// Multiply-accumulate counts of one forward call.
struct AttentionMacs {
  Index projection = 0;
  Index content = 0;  // q.k over every (query, key) pair
  Index relative = 0;
  Index value = 0;    // p.v aggregation
  Index queries = 0;

  /// Cost-model FLOPs: 2 per MAC of content and value terms.
  Index table_flops() const { return 2 * (content + value); }
};

template <typename Scalar = double>
struct AttentionCache {
  AttentionConfig cfg;
  AttentionParams<Scalar> params;
  Shape input_shape;
  Tensor<Scalar> x_query;    // (n, bh, bw, nq, c_in)
  HaloedTensor<Scalar> x_window;
  Tensor<Scalar> q;          // (n, bh, bw, nq, heads*d_head)
  Tensor<Scalar> k;          // (n, bh, bw, w^2, heads*d_head)
  Tensor<Scalar> v;          // (n, bh, bw, w^2, heads*d_value)
  Tensor<Scalar> logits;     // (n, bh, bw, heads, nq, w^2), pre-mask
  Tensor<Scalar> probs;      // same shape
  AttentionMacs macs;
};

template <typename Scalar = double>
struct AttentionResult {
  Tensor<Scalar> y;
  AttentionCache<Scalar> cache;
};

template <typename Scalar = double>
struct AttentionGrads {
  Tensor<Scalar> dx;
  Tensor<Scalar> dw_q;
  Tensor<Scalar> dw_k;
  Tensor<Scalar> dw_v;
  Tensor<Scalar> d_row;
  Tensor<Scalar> d_col;
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> project(const Tensor<Scalar>& rows5, const Tensor<Scalar>& w) {
  const Shape& s = rows5.shape();
  const Index c = s.back();
  Tensor<Scalar> out = matmul(rows5.reshaped({rows5.size() / c, c}), w);
  Shape os = s;
  os.back() = w.dim(1);
  return out.reshaped(os);
}

/// Offset of query q (index inside the strided query block) from the block
/// origin, in image pixels.
inline void query_pos(const AttentionConfig& cfg, Index qidx, Index& qi, Index& qj) {
  const Index qb = cfg.query_block();
  qi = (qidx / qb) * cfg.stride;
  qj = (qidx % qb) * cfg.stride;
}

}  // namespace detail

/// Relative logits for blocked queries `q` of shape (n, bh, bw, nq, heads*d_head).
/// Returns (n, bh, bw, heads, nq, (b+2h)^2).
template <typename Scalar>
Tensor<Scalar> rel_logits(const Tensor<Scalar>& q, const RelEmbedding<Scalar>& rel,
                          const AttentionConfig& cfg) {
  const Index n = q.dim(0), bh = q.dim(1), bw = q.dim(2), nq = q.dim(3);
  const Index heads = cfg.heads, d = cfg.d_head, half = d / 2;
  const Index w = cfg.window(), wl = cfg.window_len(), o = rel.origin();
  if (q.dim(4) != cfg.qk_width() || nq != cfg.queries_per_block()) {
    throw DimensionError("rel_logits: query tensor " + to_string(q.shape()) + " does not match config");
  }
  Tensor<Scalar> out({n, bh, bw, heads, nq, wl});
  const Scalar* rows = rel.row_table.data();
  const Scalar* cols = rel.col_table.data();
  parallel_for(n * bh * bw, [&](Index blk) {
    const Scalar* qb = q.data() + blk * nq * heads * d;
    Scalar* ob = out.data() + blk * heads * nq * wl;
    for (Index hd = 0; hd < heads; ++hd)
      for (Index qq = 0; qq < nq; ++qq) {
        Index qi, qj;
        detail::query_pos(cfg, qq, qi, qj);
        const Scalar* qv = qb + qq * heads * d + hd * d;
        for (Index ki = 0; ki < w; ++ki)
          for (Index kj = 0; kj < w; ++kj) {
            const Scalar* r = rows + (ki - cfg.h - qi + o) * half;
            const Scalar* c = cols + (kj - cfg.h - qj + o) * half;
            Scalar acc = 0;
            for (Index e = 0; e < half; ++e) acc += qv[e] * r[e];
            for (Index e = 0; e < half; ++e) acc += qv[half + e] * c[e];
            ob[(hd * nq + qq) * wl + ki * w + kj] = acc;
          }
      }
  });
  return out;
}

/// Blocked attention with an explicit mask (rows: b^2 query positions). Used
/// directly for fault injection; normal callers go through
/// halo_attention_forward / attention_downsample.
template <typename Scalar>
AttentionResult<Scalar> halo_attention_masked(const Tensor<Scalar>& x, const AttentionParams<Scalar>& params,
                                              const AttentionConfig& cfg, const AttentionMask* mask) {
  cfg.validate();
  params.check(cfg);
  if (x.rank() != 4 || x.dim(3) != params.in_channels()) {
    throw DimensionError("attention: input " + to_string(x.shape()) + " vs W_Q " +
                         to_string(params.w_q.shape()));
  }
  if (!x.all_finite()) throw DomainError("attention: non-finite value in input");
  if (mask && (mask->rows() != cfg.b * cfg.b || mask->cols() != cfg.window_len())) {
    throw DimensionError("attention: mask shape does not match (b^2, (b+2h)^2)");
  }

  AttentionResult<Scalar> res;
  auto& c = res.cache;
  c.cfg = cfg;
  c.params = params;
  c.input_shape = x.shape();

  detail::check_blockable(x.shape(), cfg.b, "attention");
  c.x_query = block(subsample(x, cfg.stride), cfg.query_block()).data;
  c.x_window = halo_gather(x, cfg.b, cfg.h, cfg.pad);
  c.q = detail::project(c.x_query, params.w_q);
  c.k = detail::project(c.x_window.data, params.w_k);
  c.v = detail::project(c.x_window.data, params.w_v);
  c.logits = rel_logits(c.q, params.rel, cfg);

  const Index n = x.dim(0), bh = x.dim(1) / cfg.b, bw = x.dim(2) / cfg.b;
  const Index nq = cfg.queries_per_block(), wl = cfg.window_len();
  const Index heads = cfg.heads, d = cfg.d_head, dv = cfg.value_dim();
  const Index qkw = cfg.qk_width(), vw = cfg.v_width();
  const Scalar scale = cfg.scale_logits ? Scalar(1) / std::sqrt(Scalar(d)) : Scalar(1);

  c.probs = Tensor<Scalar>(c.logits.shape());
  Tensor<Scalar> yb({n, bh, bw, nq, vw});
  parallel_for(n * bh * bw, [&](Index blk) {
    const Scalar* qb = c.q.data() + blk * nq * qkw;
    const Scalar* kb = c.k.data() + blk * wl * qkw;
    const Scalar* vb = c.v.data() + blk * wl * vw;
    Scalar* lb = c.logits.data() + blk * heads * nq * wl;
    Scalar* pb = c.probs.data() + blk * heads * nq * wl;
    Scalar* ob = yb.data() + blk * nq * vw;
    for (Index hd = 0; hd < heads; ++hd)
      for (Index qq = 0; qq < nq; ++qq) {
        Index qi, qj;
        detail::query_pos(cfg, qq, qi, qj);
        const Scalar* qv = qb + qq * qkw + hd * d;
        Scalar* lrow = lb + (hd * nq + qq) * wl;
        Scalar* prow = pb + (hd * nq + qq) * wl;
        for (Index kk = 0; kk < wl; ++kk) {
          const Scalar* kv = kb + kk * qkw + hd * d;
          Scalar acc = 0;
          for (Index e = 0; e < d; ++e) acc += qv[e] * kv[e];
          lrow[kk] = (acc + lrow[kk]) * scale;
        }
        for (Index kk = 0; kk < wl; ++kk) prow[kk] = lrow[kk];
        const Index mrow = qi * cfg.b + qj;
        if (mask) {
          for (Index kk = 0; kk < wl; ++kk)
            if (!(*mask)(mrow, kk)) prow[kk] = Scalar(kMaskedLogit);
        }
        softmax_row(prow, wl);
        if (mask) {
          for (Index kk = 0; kk < wl; ++kk)
            if (!(*mask)(mrow, kk)) prow[kk] = 0;
        }
        Scalar* out = ob + qq * vw + hd * dv;
        for (Index e = 0; e < dv; ++e) {
          Scalar acc = 0;
          for (Index kk = 0; kk < wl; ++kk) acc += prow[kk] * vb[kk * vw + hd * dv + e];
          out[e] = acc;
        }
      }
  });

  const Index blocks = n * bh * bw;
  c.macs.queries = blocks * nq;
  c.macs.projection = c.x_query.size() / x.dim(3) * params.w_q.size() +
                      c.x_window.data.size() / x.dim(3) * (params.w_k.size() + params.w_v.size());
  c.macs.content = blocks * nq * wl * qkw;
  c.macs.relative = blocks * nq * wl * qkw;
  c.macs.value = blocks * nq * wl * vw;

  BlockedTensor<Scalar> ybt{n, bh, bw, cfg.query_block(), vw, std::move(yb)};
  res.y = unblock(ybt);
  return res;
}

template <typename Scalar>
AttentionResult<Scalar> halo_attention_forward(const Tensor<Scalar>& x, const AttentionParams<Scalar>& params,
                                               const AttentionConfig& cfg) {
  if (cfg.stride != 1) {
    throw ConfigError("halo_attention_forward: stride must be 1, use attention_downsample");
  }
  if (cfg.masked) {
    const AttentionMask m = build_mask(cfg);
    return halo_attention_masked(x, params, cfg, &m);
  }
  return halo_attention_masked(x, params, cfg, static_cast<const AttentionMask*>(nullptr));
}

/// Strided attention: same neighborhoods as stride 1, queries only at pixels
/// whose coordinates are multiples of cfg.stride.
template <typename Scalar>
AttentionResult<Scalar> attention_downsample(const Tensor<Scalar>& x, const AttentionParams<Scalar>& params,
                                             const AttentionConfig& cfg) {
  if (cfg.masked) {
    cfg.validate();
    const AttentionMask m = build_mask(cfg);
    return halo_attention_masked(x, params, cfg, &m);
  }
  return halo_attention_masked(x, params, cfg, static_cast<const AttentionMask*>(nullptr));
}

/// Gradients of sum(y * dy) for the forward call that produced `c`.
template <typename Scalar>
AttentionGrads<Scalar> halo_attention_backward(const AttentionCache<Scalar>& c, const Tensor<Scalar>& dy) {
  const AttentionConfig& cfg = c.cfg;
  const Shape& xs = c.input_shape;
  const Index n = xs[0], H = xs[1], W = xs[2], c_in = xs[3];
  const Shape expected{n, H / cfg.stride, W / cfg.stride, cfg.v_width()};
  if (dy.shape() != expected) {
    throw DimensionError("attention backward: dy shape " + to_string(dy.shape()) + ", expected " +
                         to_string(expected));
  }
  const Index bh = H / cfg.b, bw = W / cfg.b;
  const Index nq = cfg.queries_per_block(), w = cfg.window(), wl = cfg.window_len();
  const Index heads = cfg.heads, d = cfg.d_head, half = d / 2, dv = cfg.value_dim();
  const Index qkw = cfg.qk_width(), vw = cfg.v_width();
  const Index o = c.params.rel.origin();
  const Scalar scale = cfg.scale_logits ? Scalar(1) / std::sqrt(Scalar(d)) : Scalar(1);

  const Tensor<Scalar> dyb = block(dy, cfg.query_block()).data;
  Tensor<Scalar> dq(c.q.shape()), dk(c.k.shape()), dv_t(c.v.shape());
  AttentionGrads<Scalar> g;
  g.d_row = Tensor<Scalar>(c.params.rel.row_table.shape());
  g.d_col = Tensor<Scalar>(c.params.rel.col_table.shape());
  const Scalar* rows = c.params.rel.row_table.data();
  const Scalar* cols = c.params.rel.col_table.data();

  std::vector<Scalar> dlogit(static_cast<std::size_t>(wl));
  // Sequential over blocks: the relative-table gradients are shared.
  for (Index blk = 0; blk < n * bh * bw; ++blk) {
    const Scalar* qb = c.q.data() + blk * nq * qkw;
    const Scalar* kb = c.k.data() + blk * wl * qkw;
    const Scalar* vb = c.v.data() + blk * wl * vw;
    const Scalar* pb = c.probs.data() + blk * heads * nq * wl;
    const Scalar* gy = dyb.data() + blk * nq * vw;
    Scalar* gq = dq.data() + blk * nq * qkw;
    Scalar* gk = dk.data() + blk * wl * qkw;
    Scalar* gv = dv_t.data() + blk * wl * vw;
    for (Index hd = 0; hd < heads; ++hd)
      for (Index qq = 0; qq < nq; ++qq) {
        Index qi, qj;
        detail::query_pos(cfg, qq, qi, qj);
        const Scalar* prow = pb + (hd * nq + qq) * wl;
        const Scalar* gyq = gy + qq * vw + hd * dv;
        const Scalar* qv = qb + qq * qkw + hd * d;
        Scalar weighted = 0;
        for (Index kk = 0; kk < wl; ++kk) {
          Scalar dp = 0;
          const Scalar* vv = vb + kk * vw + hd * dv;
          Scalar* gvv = gv + kk * vw + hd * dv;
          for (Index e = 0; e < dv; ++e) {
            dp += gyq[e] * vv[e];
            gvv[e] += prow[kk] * gyq[e];
          }
          dlogit[kk] = dp;
          weighted += prow[kk] * dp;
        }
        for (Index kk = 0; kk < wl; ++kk) dlogit[kk] = prow[kk] * (dlogit[kk] - weighted) * scale;

        Scalar* gqv = gq + qq * qkw + hd * d;
        for (Index ki = 0; ki < w; ++ki)
          for (Index kj = 0; kj < w; ++kj) {
            const Index kk = ki * w + kj;
            const Scalar dl = dlogit[kk];
            if (dl == Scalar(0)) continue;
            const Scalar* kv = kb + kk * qkw + hd * d;
            Scalar* gkv = gk + kk * qkw + hd * d;
            const Index ri = ki - cfg.h - qi + o, rj = kj - cfg.h - qj + o;
            const Scalar* r = rows + ri * half;
            const Scalar* cc = cols + rj * half;
            Scalar* gr = g.d_row.data() + ri * half;
            Scalar* gc = g.d_col.data() + rj * half;
            for (Index e = 0; e < d; ++e) {
              gqv[e] += dl * kv[e];
              gkv[e] += dl * qv[e];
            }
            for (Index e = 0; e < half; ++e) {
              gqv[e] += dl * r[e];
              gqv[half + e] += dl * cc[e];
              gr[e] += dl * qv[e];
              gc[e] += dl * qv[half + e];
            }
          }
      }
  }

  auto flat2 = [](const Tensor<Scalar>& t) { return t.reshaped({t.size() / t.shape().back(), t.shape().back()}); };
  const Tensor<Scalar> xq = flat2(c.x_query), xw = flat2(c.x_window.data);
  const Tensor<Scalar> dq2 = flat2(dq), dk2 = flat2(dk), dv2 = flat2(dv_t);
  const Tensor<Scalar> xq_t = transpose(xq), xw_t = transpose(xw);
  g.dw_q = matmul(xq_t, dq2);
  g.dw_k = matmul(xw_t, dk2);
  g.dw_v = matmul(xw_t, dv2);

  const Tensor<Scalar> dxq = matmul(dq2, transpose(c.params.w_q));
  Tensor<Scalar> dxw = matmul(dk2, transpose(c.params.w_k));
  dxw.flat() += matmul(dv2, transpose(c.params.w_v)).flat();

  HaloedTensor<Scalar> gw = c.x_window;
  gw.data = dxw.reshaped(c.x_window.data.shape());
  g.dx = halo_scatter_add(gw, H, W);

  const Index qb = cfg.query_block();
  BlockedTensor<Scalar> gqb{n, bh, bw, qb, c_in, dxq.reshaped({n, bh, bw, nq, c_in})};
  const Tensor<Scalar> dx_sub = unblock(gqb);
  for (Index bi = 0; bi < n; ++bi)
    for (Index i = 0; i < H / cfg.stride; ++i)
      for (Index j = 0; j < W / cfg.stride; ++j)
        for (Index ch = 0; ch < c_in; ++ch)
          g.dx(bi, i * cfg.stride, j * cfg.stride, ch) += dx_sub(bi, i, j, ch);
  return g;
}

// Parameter directory: W_Q.htnsr, W_K.htnsr, W_V.htnsr, rel_row.htnsr, rel_col.htnsr.
void save_params(const std::filesystem::path& dir, const AttentionParams<double>& p);
AttentionParams<double> load_params(const std::filesystem::path& dir);

}  // namespace halo
