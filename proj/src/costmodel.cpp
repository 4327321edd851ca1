#include "halo/costmodel.hpp"

#include "halo/blockops.hpp"

namespace halo::cost {

const char* to_string(Method m) {
  switch (m) {
    case Method::Global: return "global";
    case Method::PerPixelWindows: return "per-pixel-windows";
    case Method::Sasa: return "sasa";
    case Method::BlockedLocal: return "blocked-local";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (Method m : {Method::Global, Method::PerPixelWindows, Method::Sasa, Method::BlockedLocal}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown attention method '" + s + "'");
}

CostReport attention_cost(Index H, Index W, Index c, Method method, const AttentionGeometry& g) {
  CostReport r;
  r.method = to_string(method);
  const Index hw = H * W;
  switch (method) {
    case Method::Global:
      r.memory_elements = hw * c;
      r.flops_per_pixel = 4 * hw * c;
      r.flops_as_printed = 4 * hw * hw * c;
      break;
    case Method::PerPixelWindows:
      if (g.k < 1 || g.k % 2 == 0) throw ConfigError("per-pixel windows need odd k");
      r.memory_elements = hw * g.k * g.k * c;
      r.flops_per_pixel = 4 * g.k * g.k * c;
      r.flops_as_printed = r.flops_per_pixel;
      break;
    case Method::Sasa:
    case Method::BlockedLocal: {
      r.memory_elements = neighborhood_memory(H, W, c, g.b, g.h);
      const Index w = g.b + 2 * g.h;
      r.flops_per_pixel = 4 * w * w * c;
      r.flops_as_printed = r.flops_per_pixel;
      break;
    }
  }
  r.total_flops = hw * r.flops_per_pixel;
  // half the FLOPs form logits, half aggregate values
  r.breakdown = {{"logit_flops", r.total_flops / 2}, {"value_flops", r.total_flops / 2}};
  return r;
}

CostReport conv_cost(Index k, Index c_in, Index c_out, Index H, Index W) {
  CostReport r;
  r.method = "conv" + std::to_string(k) + "x" + std::to_string(k);
  r.params = k * k * c_in * c_out;
  r.memory_elements = H * W * c_in;
  r.flops_per_pixel = k * k * c_in * c_out;  // MACs
  r.flops_as_printed = r.flops_per_pixel;
  r.total_flops = H * W * r.flops_per_pixel;
  r.breakdown = {{"weights", r.params}};
  return r;
}

Rational footnote_flop_ratio(Index H, Index W, Index c, Index conv_k) {
  return Rational::of(H * W * c, conv_k * conv_k * c * c);
}

Index rel_embedding_params(Index b_or_k, Index h, Index d_head, RelMode mode) {
  if (d_head < 2 || d_head % 2 != 0) {
    throw ConfigError("rel_embedding_params: d_head must be even, got " + std::to_string(d_head));
  }
  const Index per_axis = mode == RelMode::CenteredWindow ? b_or_k : 2 * (b_or_k + h) - 1;
  return 2 * per_axis * (d_head / 2);
}

Index qkv_params(Index c_in, Index c_qk, Index c_v) { return c_in * (2 * c_qk + c_v); }

CostReport count_params(const HaloNetConfig& cfg) {
  validate(cfg);
  Index conv = 0, qkv = 0, rel = 0, norm = 0, classifier = 0;

  const Index sw = stem_width(cfg);
  conv += 7 * 7 * 3 * sw;
  norm += 2 * sw;
  Index c_in = sw;
  Index res = cfg.s / 4;
  for (int stage = 0; stage < 4; ++stage) {
    const StageWidths w = stage_widths(cfg, stage);
    for (Index j = 0; j < cfg.stage_layers[stage]; ++j) {
      const Index stride = (stage > 0 && j == 0) ? 2 : 1;
      conv += c_in * w.mid;
      norm += 2 * w.mid;
      if (cfg.conv_stage(stage + 1)) {
        conv += 9 * w.mid * w.attn;
      } else {
        qkv += qkv_params(w.mid, w.qk, w.attn);
        const Geometry g = effective_geometry(cfg.b, cfg.h, res);
        rel += rel_embedding_params(g.b, g.h, w.qk / cfg.heads[stage], RelMode::Blocked);
      }
      norm += 2 * w.attn;
      conv += w.attn * w.out;
      norm += 2 * w.out;
      if (stride != 1 || c_in != w.out) {
        conv += c_in * w.out;
        norm += 2 * w.out;
      }
      c_in = w.out;
      res /= stride;
    }
  }
  if (cfg.d_f) {
    conv += c_in * *cfg.d_f;
    norm += 2 * *cfg.d_f;
    c_in = *cfg.d_f;
  }
  classifier = c_in * cfg.classes + cfg.classes;

  CostReport r;
  r.method = cfg.model;
  r.breakdown = {{"conv", conv}, {"attention_qkv", qkv}, {"rel_embedding", rel},
                 {"norm", norm}, {"classifier", classifier}};
  r.params = r.breakdown_sum();
  return r;
}

CostReport count_params(const std::string& builtin) { return count_params(builtin_config(builtin)); }

Rational downsample_flop_ratio(const AttentionConfig& cfg, Index stride) {
  AttentionConfig strided = cfg;
  strided.stride = stride;
  strided.validate();
  // Same (b+2h)^2 neighborhood per block, (b/stride)^2 instead of b^2 queries.
  const Index w2 = cfg.window_len();
  return Rational::of(strided.queries_per_block() * w2, cfg.b * cfg.b * w2);
}

}  // namespace halo::cost
