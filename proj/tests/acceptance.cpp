// Acceptance run: one line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "halo/attention.hpp"
#include "halo/blockops.hpp"
#include "halo/costmodel.hpp"
#include "halo/halonet.hpp"
#include "halo/oracle.hpp"
#include "halo/tensor_io.hpp"
#include "test_util.hpp"

#ifndef HALO_CLI_PATH
#error "HALO_CLI_PATH must point at the halo executable"
#endif

using namespace halo;
using halo::test::random_tensor;
using halo::test::small_config;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const std::string& title, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << (ok ? "PASS" : "FAIL") << " [" << id << "] " << title << ": " << detail << std::endl;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

double weighted_sum(const Tensor<double>& y, const Tensor<double>& dy) {
  double s = 0;
  for (Index i = 0; i < y.size(); ++i) s += y[i] * dy[i];
  return s;
}

void oracle_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  double worst = 0;
  for (auto [b, h] : {std::pair<Index, Index>{2, 1}, {4, 1}, {4, 3}, {8, 3}})
    for (PadMode pad : {PadMode::Zero, PadMode::Circular}) {
      auto cfg = small_config(b, h, 2, 4);
      cfg.masked = true;
      cfg.pad = pad;
      const auto x = random_tensor({1, 16, 16, 8}, rng);
      const auto p = AttentionParams<double>::random(cfg, 8, rng);
      const auto fast = halo_attention_forward(x, p, cfg).y;
      const auto ref = oracle::sliding_window_attention(x, p, cfg.heads, 2 * h + 1, pad);
      worst = std::max(worst, max_abs_diff(fast, ref));
    }
  const double secs = seconds_since(t0);
  report(1, "oracle equivalence", worst < 1e-10 && secs < 30.0,
         "max abs diff " + fmt(worst) + " (< 1e-10), " + fmt(secs) + " s (< 30)");
}

void memory_geometry() {
  std::mt19937_64 rng(1002);
  const Index c = 6;
  const auto g = halo_gather(random_tensor({1, 4, 4, c}, rng), 2, 1, PadMode::Zero);
  const bool four = g.blocks_h * g.blocks_w == 4 && g.window() == 4 && g.data.shape() == Shape{1, 2, 2, 16, c};

  std::uniform_int_distribution<Index> bd(1, 6), md(1, 4), hd(0, 4), cd(1, 9);
  int matches = 0;
  for (int t = 0; t < 20; ++t) {
    const Index b = bd(rng), H = b * md(rng), W = b * md(rng), h = hd(rng), ch = cd(rng);
    const Index formula = H * W / (b * b) * (b + 2 * h) * (b + 2 * h) * ch;
    const auto gathered = halo_gather(Tensor<double>({1, H, W, ch}), b, h, PadMode::Zero);
    if (gathered.data.size() == formula && neighborhood_memory(H, W, ch, b, h) == formula) ++matches;
  }
  report(2, "blocked memory geometry", four && matches == 20,
         std::string("4x4 image b=2 h=1 -> ") + (four ? "four [4,4,c] memories" : "wrong memories") + ", " +
             std::to_string(matches) + "/20 random configs match the memory formula");
}

void equivariance() {
  std::mt19937_64 rng(1003);
  const Index H = 16, W = 16, c = 5;
  const auto x = random_tensor({1, H, W, c}, rng);

  auto cfg = small_config(4, 2, 2, 4);
  cfg.pad = PadMode::Circular;
  const auto p = AttentionParams<double>::random(cfg, c, rng);
  const auto y = halo_attention_forward(x, p, cfg).y;
  double block_shift = 0;
  for (auto [di, dj] : {std::pair<Index, Index>{4, 0}, {0, 8}, {12, 4}}) {
    const auto ys = halo_attention_forward(circular_shift(x, di, dj), p, cfg).y;
    block_shift = std::max(block_shift, max_abs_diff(ys, circular_shift(y, di, dj)));
  }
  const double one_px =
      max_abs_diff(halo_attention_forward(circular_shift(x, 1, 0), p, cfg).y, circular_shift(y, 1, 0));

  auto mcfg = cfg;
  mcfg.masked = true;
  const auto ym = halo_attention_forward(x, p, mcfg).y;
  double any_shift = 0;
  for (auto [di, dj] : {std::pair<Index, Index>{1, 0}, {0, 3}, {5, 7}, {-2, 9}}) {
    const auto ys = halo_attention_forward(circular_shift(x, di, dj), p, mcfg).y;
    any_shift = std::max(any_shift, max_abs_diff(ys, circular_shift(ym, di, dj)));
  }
  report(3, "shift equivariance", block_shift < 1e-12 && any_shift < 1e-12 && one_px > 1e-6,
         "unmasked shift by b " + fmt(block_shift) + " (< 1e-12), masked any shift " + fmt(any_shift) +
             " (< 1e-12), unmasked shift by 1 " + fmt(one_px) + " (> 1e-6)");
}

/// Central differences with step eps over every entry of `target`.
double max_rel_error(Tensor<double>& target, const std::function<double()>& loss, const Tensor<double>& analytic) {
  const double eps = 1e-5;
  double worst = 0;
  for (Index i = 0; i < target.size(); ++i) {
    const double saved = target[i];
    target[i] = saved + eps;
    const double up = loss();
    target[i] = saved - eps;
    const double down = loss();
    target[i] = saved;
    const double num = (up - down) / (2 * eps), a = analytic[i];
    worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6}));
  }
  return worst;
}

void gradients() {
  const auto t0 = Clock::now();
  double worst = 0;
  for (int inst = 0; inst < 5; ++inst) {
    std::mt19937_64 rng(2000 + inst);
    const auto cfg = small_config(2, 1, 1, 4);
    Tensor<double> x = random_tensor({1, 4, 4, 4}, rng);
    auto p = AttentionParams<double>::random(cfg, 4, rng);
    const auto res = halo_attention_forward(x, p, cfg);
    const auto dy = random_tensor(res.y.shape(), rng);
    const auto g = halo_attention_backward(res.cache, dy);
    const std::function<double()> loss = [&] { return weighted_sum(halo_attention_forward(x, p, cfg).y, dy); };
    worst = std::max({worst, max_rel_error(x, loss, g.dx), max_rel_error(p.w_q, loss, g.dw_q),
                      max_rel_error(p.w_k, loss, g.dw_k), max_rel_error(p.w_v, loss, g.dw_v),
                      max_rel_error(p.rel.row_table, loss, g.d_row), max_rel_error(p.rel.col_table, loss, g.d_col)});
  }
  const double secs = seconds_since(t0);
  report(4, "gradient correctness", worst < 1e-4 && secs < 60.0,
         "max relative error " + fmt(worst) + " over dX, dW_Q, dW_K, dW_V, d_rel on 5 instances (< 1e-4), " +
             fmt(secs) + " s (< 60)");
}

void downsampling() {
  std::mt19937_64 rng(1005);
  bool exact = true;
  bool quarter_queries = true;
  for (auto [b, h, H] : {std::tuple<Index, Index, Index>{2, 1, 4}, {4, 1, 8}, {8, 3, 16}}) {
    auto cfg = small_config(b, h, 2, 4);
    const auto x = random_tensor({1, H, H, 6}, rng);
    const auto p = AttentionParams<double>::random(cfg, 6, rng);
    const auto full = halo_attention_forward(x, p, cfg);
    auto strided = cfg;
    strided.stride = 2;
    const auto down = attention_downsample(x, p, strided);
    exact = exact && down.y == subsample(full.y, 2);
    quarter_queries = quarter_queries && 4 * down.cache.macs.table_flops() == full.cache.macs.table_flops();
  }
  AttentionConfig ref;
  ref.b = 8;
  ref.h = 3;
  const cost::Rational r = cost::downsample_flop_ratio(ref, 2);
  report(5, "strided downsampling", exact && quarter_queries && r == cost::Rational{1, 4},
         std::string(exact ? "bit-exact" : "NOT bit-exact") + " vs subsampled stride-1 output, cost ratio " +
             std::to_string(r.num) + "/" + std::to_string(r.den) + ", instrumented ratio " +
             (quarter_queries ? "1/4" : "not 1/4"));
}

void parameter_arithmetic() {
  const Index rel = cost::rel_embedding_params(63, 0, 16, cost::RelMode::CenteredWindow);
  const Index qkv = cost::qkv_params(512);
  struct Row {
    const char* name;
    double published_m, tol;
  };
  const Row rows[] = {{"resnet50ref", 25.5, 0.02}, {"halonet50", 18.0, 0.02}, {"H0", 5.5, 0.10},
                      {"H1", 8.1, 0.10},           {"H2", 9.4, 0.10},         {"H3", 12.3, 0.10},
                      {"H4", 19.1, 0.10},          {"H5", 30.7, 0.15},        {"H6", 43.4, 0.15},
                      {"H7", 67.0, 0.15}};
  bool ok = rel == 1008 && qkv == 786432;
  std::ostringstream detail;
  detail << "rel " << rel << " (1008), qkv " << qkv << " (786432)";
  for (const Row& r : rows) {
    const double m = static_cast<double>(cost::count_params(r.name).params) / 1e6;
    const double dev = (m - r.published_m) / r.published_m;
    ok = ok && std::abs(dev) <= r.tol;
    detail << ", " << r.name << " " << std::fixed;
    detail.precision(2);
    detail << m << "M (" << std::showpos << dev * 100 << std::noshowpos << "% of +-" << r.tol * 100 << "%)";
    detail.unsetf(std::ios::fixed);
  }
  report(6, "parameter arithmetic", ok, detail.str());
}

void conv_ratio() {
  const double v = cost::footnote_flop_ratio(128, 128, 64, 3).value();
  report(7, "global vs conv FLOP ratio", std::abs(v - 28.44) <= 0.01, "ratio " + std::to_string(v) + " (28.44 +- 0.01)");
}

void cost_symmetry() {
  bool rows_equal = true;
  for (Index b : {1, 2, 4, 8, 10, 12})
    for (Index h : {0, 1, 2, 3, 4}) {
      const cost::AttentionGeometry g{2 * h + 1, b, h};
      const Index H = 2 * b;
      const auto s = cost::attention_cost(H, H, 16, cost::Method::Sasa, g);
      const auto bl = cost::attention_cost(H, H, 16, cost::Method::BlockedLocal, g);
      rows_equal = rows_equal && s.memory_elements == bl.memory_elements &&
                   s.flops_per_pixel == bl.flops_per_pixel && s.total_flops == bl.total_flops;
    }
  std::mt19937_64 rng(1008);
  auto cfg = small_config(4, 2, 2, 4);
  const auto x = random_tensor({1, 16, 16, 6}, rng);
  const auto p = AttentionParams<double>::random(cfg, 6, rng);
  const Index unmasked = halo_attention_forward(x, p, cfg).cache.macs.table_flops();
  cfg.masked = true;
  const Index masked = halo_attention_forward(x, p, cfg).cache.macs.table_flops();
  const Index table = cost::attention_cost(16, 16, cfg.qk_width(), cost::Method::BlockedLocal, {5, 4, 2}).total_flops;
  report(8, "cost symmetry", rows_equal && masked == unmasked && masked == table,
         std::string(rows_equal ? "sasa == blocked rows" : "sasa != blocked rows") + ", instrumented FLOPs masked " +
             std::to_string(masked) + " unmasked " + std::to_string(unmasked) + " table " + std::to_string(table));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int shell(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

void determinism() {
  std::mt19937_64 rng(1009);
  bool roundtrip = true;
  for (Index b : {1, 2, 3, 4, 6, 12}) {
    const auto x = random_tensor({2, 12, 12, 3}, rng);
    roundtrip = roundtrip && unblock(block(x, b)) == x;
  }

  auto cfg = small_config(4, 2, 2, 4);
  const auto x = random_tensor({1, 16, 16, 6}, rng);
  const auto p = AttentionParams<double>::random(cfg, 6, rng);
  bool repeat = halo_attention_forward(x, p, cfg).y == halo_attention_forward(x, p, cfg).y;
  const HaloNetConfig tiny = parse_config("b=4\nh=1\ns=32\nstage_layers=1,1,1,1\nclasses=10\n");
  const Model model = build(tiny, 4);
  const auto img = random_tensor({1, 32, 32, 3}, rng);
  repeat = repeat && forward(model, img) == forward(model, img);

  const fs::path dir = fs::temp_directory_path() / "halo_acceptance";
  fs::create_directories(dir);
  std::ofstream(dir / "tiny.cfg") << "b=4\nh=1\ns=32\nstage_layers=1,1,1,1\nclasses=10\n";
  save_tensor(dir / "in.htnsr", img);
  const std::string cli = HALO_CLI_PATH;
  auto run_cmd = [&](const char* out) {
    return shell("\"" + cli + "\" run --config \"" + (dir / "tiny.cfg").string() + "\" --input \"" +
                 (dir / "in.htnsr").string() + "\" --output \"" + (dir / out).string() + "\" --seed 11 > /dev/null");
  };
  const bool runs_ok = run_cmd("a.htnsr") == 0 && run_cmd("b.htnsr") == 0;
  const std::string a = slurp(dir / "a.htnsr");
  const bool bytes_equal = runs_ok && !a.empty() && a == slurp(dir / "b.htnsr");

  const auto t0 = Clock::now();
  const int verify_rc = shell("\"" + cli + "\" verify --suite all > /dev/null");
  const double verify_secs = seconds_since(t0);

  report(9, "determinism and round trips",
         roundtrip && repeat && bytes_equal && verify_rc == 0 && verify_secs < 300.0,
         std::string("unblock(block) ") + (roundtrip ? "exact" : "differs") + ", repeated forwards " +
             (repeat ? "identical" : "differ") + ", run output " + (bytes_equal ? "byte-identical" : "differs") +
             ", verify --suite all exit " + std::to_string(verify_rc) + " in " + fmt(verify_secs) + " s (< 300)");
}

}  // namespace

int main() {
  oracle_equivalence();
  memory_geometry();
  equivariance();
  gradients();
  downsampling();
  parameter_arithmetic();
  conv_ratio();
  cost_symmetry();
  determinism();
  std::cout << (9 - failures) << "/9 criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
