// Property suites behind `halo verify`.

#include "cli.hpp"

#include "halo/attention.hpp"
#include "halo/blockops.hpp"
#include "halo/costmodel.hpp"
#include "halo/oracle.hpp"
#include "halo/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

namespace halo::cli {
namespace {

using Rng = std::mt19937_64;

Tensor<double> random_tensor(const Shape& s, Rng& rng, double a = 1.0) {
  Tensor<double> t(s);
  std::uniform_real_distribution<double> u(-a, a);
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

CheckResult at_most(std::string suite, std::string name, double value, double tol, std::string note = {}) {
  return {std::move(suite), std::move(name), value, tol, value < tol, std::move(note)};
}

CheckResult exact(std::string suite, std::string name, double value, double expected, std::string note = {}) {
  return {std::move(suite), std::move(name), value, expected, value == expected, std::move(note)};
}

std::string bh(Index b, Index h) { return "(b=" + std::to_string(b) + ",h=" + std::to_string(h) + ")"; }

void roundtrip_suite(Rng& rng, std::vector<CheckResult>& out) {
  for (Index b : {1, 2, 4, 8}) {
    const Tensor<double> x = random_tensor({2, 8, 16, 3}, rng);
    const bool same = unblock(block(x, b)) == x;
    out.push_back(exact("roundtrip", "unblock(block(x)) b=" + std::to_string(b), same ? 0 : 1, 0));
    const bool zero_halo = halo_gather(x, b, 0, PadMode::Zero).data == block(x, b).data;
    out.push_back(exact("roundtrip", "halo_gather h=0 == block, b=" + std::to_string(b), zero_halo ? 0 : 1, 0));
  }
  const Tensor<double> t = random_tensor({3, 5, 7}, rng, 1e3);
  std::stringstream ss;
  write_tensor(ss, t);
  out.push_back(exact("roundtrip", "tensor file read(write(t))", read_tensor(ss) == t ? 0 : 1, 0));
}

void oracle_suite(Rng& rng, const std::string& fault, std::vector<CheckResult>& out) {
  const std::pair<Index, Index> geoms[] = {{2, 1}, {4, 1}, {4, 3}, {8, 3}};
  for (auto [b, h] : geoms) {
    for (PadMode pad : {PadMode::Zero, PadMode::Circular}) {
      AttentionConfig cfg;
      cfg.b = b;
      cfg.h = h;
      cfg.heads = 2;
      cfg.d_head = 4;
      cfg.masked = true;
      cfg.pad = pad;
      const auto params = AttentionParams<double>::random(cfg, 8, rng);
      const Tensor<double> x = random_tensor({1, 16, 16, 8}, rng);
      AttentionMask mask = build_mask(cfg);
      if (fault == "mask") mask(0, 0) = !mask(0, 0);
      const Tensor<double> fast = halo_attention_masked(x, params, cfg, &mask).y;
      const Tensor<double> ref = oracle::sliding_window_attention(x, params, cfg.heads, 2 * h + 1, pad);
      out.push_back(at_most("oracle", "masked vs per-pixel " + bh(b, h) + " pad=" + to_string(pad),
                            max_abs_diff(fast, ref), 1e-10));
    }
  }
  // One block covering the whole image, no halo, no relative term: global attention.
  AttentionConfig g;
  g.b = 8;
  g.h = 0;
  g.heads = 2;
  g.d_head = 4;
  auto params = AttentionParams<double>::random(g, 6, rng);
  params.rel.row_table.flat().setZero();
  params.rel.col_table.flat().setZero();
  const Tensor<double> x = random_tensor({1, 8, 8, 6}, rng);
  out.push_back(at_most("oracle", "single block vs global attention",
                        max_abs_diff(halo_attention_forward(x, params, g).y,
                                     oracle::global_attention(x, params, g.heads)),
                        1e-10));
}

double rel_error(const Tensor<double>& analytic, const std::vector<double>& numeric) {
  double worst = 0;
  for (Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[static_cast<std::size_t>(i)];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}));
  }
  return worst;
}

void grad_suite(std::uint64_t seed, std::vector<CheckResult>& out) {
  for (std::uint64_t inst = 0; inst < 5; ++inst) {
    Rng rng(seed * 1000 + inst);
    AttentionConfig cfg;
    cfg.b = 2;
    cfg.h = 1;
    cfg.heads = 1;
    cfg.d_head = 4;
    auto params = AttentionParams<double>::random(cfg, 4, rng);
    const Tensor<double> x = random_tensor({1, 4, 4, 4}, rng);
    const Tensor<double> dy = random_tensor({1, 4, 4, 4}, rng);
    const auto res = halo_attention_forward(x, params, cfg);
    const auto g = halo_attention_backward(res.cache, dy);

    auto loss_of = [&](auto mutate) {
      return [&, mutate](std::span<const double> theta) {
        auto p = params;
        Tensor<double> xx = x;
        mutate(p, xx, theta);
        const Tensor<double> y = halo_attention_forward(xx, p, cfg).y;
        double s = 0;
        for (Index i = 0; i < y.size(); ++i) s += y[i] * dy[i];
        return s;
      };
    };
    auto flat = [](const Tensor<double>& t) { return std::vector<double>(t.data(), t.data() + t.size()); };
    auto assign = [](Tensor<double>& t, std::span<const double> v) { std::copy(v.begin(), v.end(), t.data()); };

    struct Target {
      const char* name;
      const Tensor<double>* analytic;
      std::vector<double> point;
      std::function<void(AttentionParams<double>&, Tensor<double>&, std::span<const double>)> set;
    };
    const Target targets[] = {
        {"dX", &g.dx, flat(x), [&](auto&, auto& xx, auto v) { assign(xx, v); }},
        {"dW_Q", &g.dw_q, flat(params.w_q), [&](auto& p, auto&, auto v) { assign(p.w_q, v); }},
        {"dW_K", &g.dw_k, flat(params.w_k), [&](auto& p, auto&, auto v) { assign(p.w_k, v); }},
        {"dW_V", &g.dw_v, flat(params.w_v), [&](auto& p, auto&, auto v) { assign(p.w_v, v); }},
        {"d_rel_row", &g.d_row, flat(params.rel.row_table), [&](auto& p, auto&, auto v) { assign(p.rel.row_table, v); }},
        {"d_rel_col", &g.d_col, flat(params.rel.col_table), [&](auto& p, auto&, auto v) { assign(p.rel.col_table, v); }},
    };
    for (const auto& t : targets) {
      oracle::GradProbe probe{loss_of(t.set), t.point, 1e-5, t.name};
      const auto num = oracle::numeric_gradient(probe);
      out.push_back(at_most("grad", std::string(t.name) + " instance " + std::to_string(inst),
                            rel_error(*t.analytic, num), 1e-4));
    }
  }
}

void equivariance_suite(Rng& rng, std::vector<CheckResult>& out) {
  AttentionConfig cfg;
  cfg.b = 4;
  cfg.h = 2;
  cfg.heads = 2;
  cfg.d_head = 4;
  cfg.pad = PadMode::Circular;
  const auto params = AttentionParams<double>::random(cfg, 6, rng);
  const Tensor<double> x = random_tensor({1, 16, 16, 6}, rng);

  const Tensor<double> base = halo_attention_forward(x, params, cfg).y;
  for (auto [di, dj] : {std::pair<Index, Index>{4, 0}, {0, 8}, {12, 4}}) {
    const Tensor<double> shifted = halo_attention_forward(circular_shift(x, di, dj), params, cfg).y;
    out.push_back(at_most("equivariance",
                          "unmasked shift (" + std::to_string(di) + "," + std::to_string(dj) + ") multiple of b",
                          max_abs_diff(shifted, circular_shift(base, di, dj)), 1e-12));
  }
  const Tensor<double> by_one = halo_attention_forward(circular_shift(x, 1, 0), params, cfg).y;
  const double relaxed = max_abs_diff(by_one, circular_shift(base, 1, 0));
  out.push_back({"equivariance", "unmasked shift (1,0) breaks equivariance", relaxed, 1e-6, relaxed > 1e-6,
                 "must exceed tolerance"});

  AttentionConfig masked = cfg;
  masked.masked = true;
  const Tensor<double> mbase = halo_attention_forward(x, params, masked).y;
  for (auto [di, dj] : {std::pair<Index, Index>{1, 0}, {0, 3}, {5, 7}}) {
    const Tensor<double> shifted = halo_attention_forward(circular_shift(x, di, dj), params, masked).y;
    out.push_back(at_most("equivariance",
                          "masked shift (" + std::to_string(di) + "," + std::to_string(dj) + ")",
                          max_abs_diff(shifted, circular_shift(mbase, di, dj)), 1e-12));
  }
  const Tensor<double> obase = oracle::sliding_window_attention(x, params, cfg.heads, 5, PadMode::Circular);
  const Tensor<double> oshift =
      oracle::sliding_window_attention(circular_shift(x, 3, 2), params, cfg.heads, 5, PadMode::Circular);
  out.push_back(at_most("equivariance", "oracle shift (3,2)", max_abs_diff(oshift, circular_shift(obase, 3, 2)), 1e-12));

  const auto gx = halo_gather(x, cfg.b, cfg.h, PadMode::Circular);
  const auto gs = halo_gather(circular_shift(x, 8, 4), cfg.b, cfg.h, PadMode::Circular);
  out.push_back(exact("equivariance", "halo_gather commutes with block-multiple shift",
                      gs.data == roll_blocks(gx, 2, 1).data ? 0 : 1, 0));
}

void cost_suite(Rng& rng, std::vector<CheckResult>& out) {
  using namespace halo::cost;
  out.push_back(exact("cost", "rel params k=63 d_head=16", double(rel_embedding_params(63, 0, 16, RelMode::CenteredWindow)), 1008));
  out.push_back(exact("cost", "QKV params d=512", double(qkv_params(512)), 786432));
  const Rational fr = footnote_flop_ratio(128, 128, 64, 3);
  out.push_back(at_most("cost", "global vs 3x3 conv ratio 128x128 c=64 (28.44)", std::abs(fr.value() - 28.44), 0.01));
  AttentionConfig ac;
  const Rational dr = downsample_flop_ratio(ac, 2);
  out.push_back(exact("cost", "downsample FLOP ratio stride 2", dr == Rational{1, 4} ? 0 : 1, 0));

  struct Ref {
    const char* name;
    double published;
    double tol;
  };
  const Ref refs[] = {{"resnet50ref", 25.5, 0.02}, {"halonet50", 18.0, 0.02}, {"H0", 5.5, 0.10},
                      {"H1", 8.1, 0.10},           {"H2", 9.4, 0.10},       {"H3", 12.3, 0.10},
                      {"H4", 19.1, 0.10},          {"H5", 30.7, 0.15},      {"H6", 43.4, 0.15},
                      {"H7", 67.0, 0.15}};
  for (const auto& r : refs) {
    const double m = double(count_params(std::string(r.name)).params) / 1e6;
    out.push_back(at_most("cost", std::string("params ") + r.name + " vs " + std::to_string(r.published).substr(0, 4) + "M",
                          std::abs(m - r.published) / r.published, r.tol,
                          "count " + std::to_string(m).substr(0, 6) + "M"));
  }

  std::uniform_int_distribution<int> pick(1, 4);
  for (int i = 0; i < 10; ++i) {
    const Index b = pick(rng), h = pick(rng) - 1, c = pick(rng);
    const Index H = b * pick(rng), W = b * pick(rng);
    const Tensor<double> x({1, H, W, c});
    const Index measured = halo_gather(x, b, h, PadMode::Zero).data.size();
    const auto rep = attention_cost(H, W, c, Method::BlockedLocal, {2 * h + 1, b, h});
    out.push_back(exact("cost", "memory law H=" + std::to_string(H) + " W=" + std::to_string(W) + " " + bh(b, h),
                        double(rep.memory_elements), double(measured)));
    const auto sasa = attention_cost(H, W, c, Method::Sasa, {2 * h + 1, b, h});
    out.push_back(exact("cost", "sasa == blocked cost " + bh(b, h),
                        (sasa.memory_elements == rep.memory_elements && sasa.total_flops == rep.total_flops) ? 0 : 1, 0));
  }

  AttentionConfig cfg;
  cfg.b = 4;
  cfg.h = 1;
  cfg.heads = 2;
  cfg.d_head = 4;
  const auto params = AttentionParams<double>::random(cfg, 8, rng);
  const Tensor<double> x = random_tensor({1, 16, 16, 8}, rng);
  AttentionConfig masked = cfg;
  masked.masked = true;
  const auto mu = halo_attention_forward(x, params, cfg).cache.macs;
  const auto mm = halo_attention_forward(x, params, masked).cache.macs;
  out.push_back(exact("cost", "masked vs unmasked instrumented FLOPs", double(mm.table_flops()), double(mu.table_flops())));
  const auto rep = attention_cost(16, 16, 8, Method::BlockedLocal, {3, 4, 1});
  out.push_back(exact("cost", "instrumented FLOPs == cost model total", double(mu.table_flops()), double(rep.total_flops)));
}

}  // namespace

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"all", "oracle", "grad", "equivariance", "cost", "roundtrip"};
  return names;
}

std::vector<CheckResult> run_verify(const VerifyOptions& opts) {
  const auto& names = suite_names();
  if (std::find(names.begin(), names.end(), opts.suite) == names.end()) {
    throw ConfigError("unknown suite '" + opts.suite + "'");
  }
  std::vector<CheckResult> out;
  auto want = [&](const char* s) { return opts.suite == "all" || opts.suite == s; };
  if (want("roundtrip")) {
    Rng rng(opts.seed);
    roundtrip_suite(rng, out);
  }
  if (want("oracle")) {
    Rng rng(opts.seed + 1);
    oracle_suite(rng, opts.inject_fault, out);
  }
  if (want("grad")) grad_suite(opts.seed, out);
  if (want("equivariance")) {
    Rng rng(opts.seed + 3);
    equivariance_suite(rng, out);
  }
  if (want("cost")) {
    Rng rng(opts.seed + 4);
    cost_suite(rng, out);
  }
  return out;
}

}  // namespace halo::cli
