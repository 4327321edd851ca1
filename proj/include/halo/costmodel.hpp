#pragma once

// Analytic memory / FLOP / parameter accounting for local self-attention and
// the HaloNet family.

#include "halo/halonet.hpp"
#include "halo/tensor.hpp"

#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace halo::cost {

struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Rational of(std::int64_t n, std::int64_t d) {
    if (d == 0) throw DomainError("rational with zero denominator");
    const std::int64_t g = std::gcd(n, d);
    const std::int64_t s = d < 0 ? -1 : 1;
    return {s * n / g, s * d / g};
  }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Rational&, const Rational&) = default;
};

enum class Method { Global, PerPixelWindows, Sasa, BlockedLocal };

const char* to_string(Method m);
Method parse_method(const std::string& s);

struct CostReport {
  std::string method;
  Index memory_elements = 0;  // neighborhood memory per image
  Index flops_per_pixel = 0;
  Index total_flops = 0;
  Index params = 0;
  /// Global row in the quadratic 4(HW)^2 c form; equals flops_per_pixel for the local methods.
  Index flops_as_printed = 0;
  std::vector<std::pair<std::string, Index>> breakdown;

  Index breakdown_sum() const {
    Index s = 0;
    for (const auto& [k, v] : breakdown) s += v;
    return s;
  }
};

/// Geometry for attention_cost: k for per-pixel windows, (b, h) for SASA and
/// blocked local; global ignores both.
struct AttentionGeometry {
  Index k = 7;
  Index b = 8;
  Index h = 3;
};

CostReport attention_cost(Index H, Index W, Index c, Method method, const AttentionGeometry& g);

/// Biasless k x k convolution; params and MACs per pixel are both k^2 c_in c_out.
CostReport conv_cost(Index k, Index c_in, Index c_out, Index H, Index W);

/// Global-attention MACs per pixel (HW c) over k x k conv MACs per pixel (k^2 c^2).
Rational footnote_flop_ratio(Index H, Index W, Index c, Index conv_k);

enum class RelMode { CenteredWindow, Blocked };

/// Factorized relative embedding size: two per-axis tables of d_head/2 channels.
Index rel_embedding_params(Index b_or_k, Index h, Index d_head, RelMode mode);

/// W_Q, W_K, W_V with no biases: c_in (2 c_qk + c_v).
Index qkv_params(Index c_in, Index c_qk, Index c_v);
inline Index qkv_params(Index d) { return qkv_params(d, d, d); }

CostReport count_params(const HaloNetConfig& cfg);
CostReport count_params(const std::string& builtin);

/// Strided attention FLOPs over stride-1 FLOPs: 1 / stride^2.
Rational downsample_flop_ratio(const AttentionConfig& cfg, Index stride);

}  // namespace halo::cost
