#include "cli.hpp"

#include "halo/attention.hpp"
#include "halo/costmodel.hpp"
#include "halo/halonet.hpp"
#include "halo/oracle.hpp"
#include "halo/tensor_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <thread>

namespace halo::cli {
namespace {

using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

struct Options {
  std::string suite = "all";
  std::string config;
  std::string model;
  std::uint64_t seed = 0;
  int iters = 3;
  std::string format = "text";
  std::string input;
  std::string output;
  std::string inject_fault;
  std::string dtype = "f64";
  std::vector<std::string> compare;
};

/// Manifest emitted at the end of every command.
struct RunManifest {
  std::string command;
  std::string config;
  std::uint64_t seed = 0;
  std::string suite;
  std::string format;
  json timings = json::object();

  json to_json() const {
    return {{"record", "manifest"}, {"command", command}, {"config", config}, {"seed", seed},
            {"suite", suite},       {"format", format},   {"timings", timings}};
  }
};

void emit_manifest(std::ostream& out, const RunManifest& m, const std::string& format) {
  if (format == "structured") {
    out << m.to_json().dump() << "\n";
  } else {
    out << "manifest " << m.to_json().dump() << "\n";
  }
}

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// ---- cost / bench geometry -------------------------------------------------

struct CostConfig {
  Index H = 32, W = 32, c = 64;
  Index b = 8, h = 3;
  Index k = 0;  // per-pixel window; 0 means 2h+1
  Index stride = 2;
  Index footnote_hw = 128, footnote_c = 64, conv_k = 3;
  Index heads = 4;

  Index window_k() const { return k > 0 ? k : 2 * h + 1; }
};

CostConfig load_cost_config(const std::string& path) {
  CostConfig c;
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  const std::map<std::string, Index*> keys = {
      {"H", &c.H},          {"W", &c.W},           {"c", &c.c},
      {"b", &c.b},          {"h", &c.h},           {"k", &c.k},
      {"stride", &c.stride}, {"footnote_hw", &c.footnote_hw}, {"footnote_c", &c.footnote_c},
      {"conv_k", &c.conv_k}, {"heads", &c.heads}};
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    raw.erase(std::remove_if(raw.begin(), raw.end(), [](unsigned char ch) { return std::isspace(ch); }), raw.end());
    if (raw.empty()) continue;
    const auto eq = raw.find('=');
    if (eq == std::string::npos) throw ConfigParseError(line, "expected key=value");
    const std::string key = raw.substr(0, eq), value = raw.substr(eq + 1);
    const auto it = keys.find(key);
    if (it == keys.end()) throw ConfigParseError(line, "unknown key '" + key + "'");
    try {
      std::size_t pos = 0;
      *it->second = std::stoll(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw ConfigParseError(line, key + ": expected integer, got '" + value + "'");
    }
  }
  return c;
}

json cost_record(const cost::CostReport& r) {
  json j = {{"record", "attention_cost"},
            {"method", r.method},
            {"memory_elements", r.memory_elements},
            {"flops_per_pixel", r.flops_per_pixel},
            {"flops_total", r.total_flops},
            {"flops_as_printed", r.flops_as_printed},
            {"params_total", r.params}};
  for (const auto& [k, v] : r.breakdown) j["params_breakdown." + k] = v;
  return j;
}

int cmd_cost(const Options& o, std::ostream& out) {
  const auto t0 = Clock::now();
  const CostConfig c = load_cost_config(o.config);
  const cost::AttentionGeometry g{c.window_k(), c.b, c.h};
  std::vector<cost::CostReport> rows;
  for (auto m : {cost::Method::Global, cost::Method::PerPixelWindows, cost::Method::Sasa, cost::Method::BlockedLocal}) {
    rows.push_back(cost::attention_cost(c.H, c.W, c.c, m, g));
  }
  const cost::Rational fr = cost::footnote_flop_ratio(c.footnote_hw, c.footnote_hw, c.footnote_c, c.conv_k);
  AttentionConfig ac;
  ac.b = c.b;
  ac.h = c.h;
  const cost::Rational dr = cost::downsample_flop_ratio(ac, c.stride);

  if (o.format == "structured") {
    for (const auto& r : rows) out << cost_record(r).dump() << "\n";
    out << json{{"record", "footnote_ratio"}, {"method", "footnote_flop_ratio"}, {"H", c.footnote_hw}, {"W", c.footnote_hw}, {"c", c.footnote_c},
                {"conv_k", c.conv_k}, {"num", fr.num}, {"den", fr.den}, {"value", fr.value()},
                {"convention", "MACs: HW*c per pixel vs k^2*c^2"}}
               .dump()
        << "\n";
    out << json{{"record", "downsample_ratio"}, {"method", "downsample_flop_ratio"}, {"stride", c.stride}, {"num", dr.num}, {"den", dr.den},
                {"value", dr.value()}}
               .dump()
        << "\n";
  } else {
    out << "attention cost  H=" << c.H << " W=" << c.W << " c=" << c.c << " b=" << c.b << " h=" << c.h
        << " k=" << c.window_k() << " heads=" << c.heads << " (heads do not change counts)\n";
    out << std::left << std::setw(20) << "method" << std::right << std::setw(16) << "memory" << std::setw(16)
        << "flops/pixel" << std::setw(18) << "flops total" << std::setw(22) << "flops/pixel printed" << "\n";
    for (const auto& r : rows) {
      out << std::left << std::setw(20) << r.method << std::right << std::setw(16) << r.memory_elements
          << std::setw(16) << r.flops_per_pixel << std::setw(18) << r.total_flops << std::setw(22)
          << r.flops_as_printed << "\n";
    }
    out << std::fixed << std::setprecision(1);
    out << "global vs conv: global attention at " << c.footnote_hw << "x" << c.footnote_hw << ", c=" << c.footnote_c
        << " costs " << fr.value() << "x the MACs of a " << c.conv_k << "x" << c.conv_k << " conv (" << fr.num
        << "/" << fr.den << ", MAC convention)\n";
    out << "downsample: stride " << c.stride << " attention FLOP ratio " << dr.num << "/" << dr.den << "\n";
    out.unsetf(std::ios::fixed);
  }
  RunManifest m{"cost", o.config, o.seed, "", o.format};
  m.timings["total_ms"] = ms_since(t0);
  emit_manifest(out, m, o.format);
  return kExitOk;
}

// ---- params / describe -----------------------------------------------------

HaloNetConfig resolve_config(const Options& o) {
  if (!o.config.empty()) return load_config(o.config);
  if (!o.model.empty()) return builtin_config(o.model);
  throw ConfigError("need --model or --config");
}

int cmd_params(const Options& o, std::ostream& out) {
  const auto t0 = Clock::now();
  const HaloNetConfig cfg = resolve_config(o);
  const cost::CostReport r = cost::count_params(cfg);
  const ModelDescription d = describe(cfg);
  if (o.format == "structured") {
    json j = cost_record(r);
    j["record"] = "params";
    j["model"] = cfg.model;
    j["total_layers"] = cfg.total_layers();
    if (cfg.published_params_m) {
      j["published_params_m"] = *cfg.published_params_m;
      j["deviation"] = double(r.params) / 1e6 / *cfg.published_params_m - 1.0;
    }
    out << j.dump() << "\n";
    for (const auto& l : d.layers) {
      out << json{{"record", "layer"}, {"layer", l.name}, {"kind", l.kind}, {"in_res", l.in_res}, {"out_res", l.out_res},
                  {"in_ch", l.in_ch}, {"out_ch", l.out_ch}, {"params", l.params}, {"detail", l.detail}}
                 .dump()
          << "\n";
    }
  } else {
    out << "model " << cfg.model << ": " << r.params << " parameters (" << std::fixed << std::setprecision(2)
        << double(r.params) / 1e6 << "M), " << cfg.total_layers() << " layers\n";
    for (const auto& [k, v] : r.breakdown) out << "  " << std::left << std::setw(16) << k << std::right << v << "\n";
    if (cfg.published_params_m) {
      const double dev = double(r.params) / 1e6 / *cfg.published_params_m - 1.0;
      out << "published: " << *cfg.published_params_m << "M, deviation " << std::showpos << dev * 100
          << std::noshowpos << "%\n";
    }
    out.unsetf(std::ios::fixed);
    out << "\n" << render(d);
  }
  RunManifest m{"params", o.config.empty() ? o.model : o.config, o.seed, "", o.format};
  m.timings["total_ms"] = ms_since(t0);
  emit_manifest(out, m, o.format);
  return kExitOk;
}

int cmd_describe(const Options& o, std::ostream& out) {
  const HaloNetConfig cfg = resolve_config(o);
  out << render(describe(cfg));
  return kExitOk;
}

// ---- verify ----------------------------------------------------------------

int cmd_verify(const Options& o, std::ostream& out) {
  const auto t0 = Clock::now();
  VerifyOptions vo{o.suite, o.seed, o.inject_fault};
  const auto results = run_verify(vo);
  bool ok = true;
  for (const auto& r : results) {
    ok = ok && r.passed;
    if (o.format == "structured") {
      out << json{{"record", "check"}, {"suite", r.suite}, {"check", r.name}, {"value", r.value}, {"tolerance", r.tolerance},
                  {"passed", r.passed}, {"note", r.note}}
                 .dump()
          << "\n";
    } else {
      out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(13) << r.suite << std::setw(58) << r.name
          << std::right << " value=" << std::setprecision(3) << std::scientific << r.value << " tol=" << r.tolerance
          << std::defaultfloat << (r.note.empty() ? "" : "  " + r.note) << "\n";
    }
  }
  const std::size_t failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.passed; });
  if (o.format != "structured") {
    out << results.size() - failed << "/" << results.size() << " checks passed (suite=" << o.suite
        << ", seed=" << o.seed << ")\n";
  }
  RunManifest m{"verify", o.config, o.seed, o.suite, o.format};
  m.timings["total_ms"] = ms_since(t0);
  emit_manifest(out, m, o.format);
  return ok ? kExitOk : kExitVerifyFailed;
}

// ---- bench -----------------------------------------------------------------

template <typename Scalar>
struct BenchRow {
  std::string variant;
  double median_ms = 0;
  Index flops = 0;
};

template <typename Scalar>
std::vector<BenchRow<Scalar>> bench_variants(const CostConfig& c, int iters, std::uint64_t seed,
                                             const std::vector<std::string>& variants) {
  std::mt19937_64 rng(seed);
  AttentionConfig cfg;
  cfg.b = c.b;
  cfg.h = c.h;
  cfg.heads = c.heads;
  cfg.d_head = c.c / c.heads;
  cfg.validate();
  const auto params64 = AttentionParams<double>::random(cfg, c.c, rng);
  AttentionParams<Scalar> params{params64.w_q.template cast<Scalar>(), params64.w_k.template cast<Scalar>(),
                                 params64.w_v.template cast<Scalar>(),
                                 {params64.rel.row_table.template cast<Scalar>(),
                                  params64.rel.col_table.template cast<Scalar>()}};
  Tensor<Scalar> x({1, c.H, c.W, c.c});
  std::uniform_real_distribution<double> u(-1, 1);
  for (Index i = 0; i < x.size(); ++i) x[i] = static_cast<Scalar>(u(rng));

  std::vector<BenchRow<Scalar>> rows;
  for (const auto& v : variants) {
    std::vector<double> times;
    Index flops = 0;
    for (int it = 0; it < iters; ++it) {
      const auto t0 = Clock::now();
      if (v == "per-pixel") {
        oracle::sliding_window_attention(x, params, cfg.heads, 2 * cfg.h + 1, PadMode::Zero);
        const Index k = 2 * cfg.h + 1;
        flops = 2 * c.H * c.W * k * k * (cfg.qk_width() + cfg.v_width());
      } else {
        AttentionConfig vc = cfg;
        vc.masked = v != "unmasked";
        flops = halo_attention_forward(x, params, vc).cache.macs.table_flops();
      }
      times.push_back(ms_since(t0));
    }
    std::sort(times.begin(), times.end());
    rows.push_back({v, times[times.size() / 2], flops});
  }
  return rows;
}

int cmd_bench(const Options& o, std::ostream& out) {
  if (o.iters < 1) throw ConfigError("--iters must be >= 1");
  const auto t0 = Clock::now();
  // Benchmarks default to every hardware thread; verification stays serial.
  if (!std::getenv("HALO_THREADS")) {
    ::setenv("HALO_THREADS", std::to_string(std::max(1u, std::thread::hardware_concurrency())).c_str(), 0);
  }
  const CostConfig c = load_cost_config(o.config);
  std::vector<std::string> variants = o.compare;
  if (variants.empty()) variants = {"blocked", "per-pixel", "masked", "unmasked"};
  for (const auto& v : variants) {
    if (v != "blocked" && v != "per-pixel" && v != "masked" && v != "unmasked") {
      throw ConfigError("unknown bench variant '" + v + "'");
    }
  }
  std::vector<std::pair<std::string, std::pair<double, Index>>> rows;
  if (o.dtype == "f32") {
    for (const auto& r : bench_variants<float>(c, o.iters, o.seed, variants)) rows.push_back({r.variant, {r.median_ms, r.flops}});
  } else if (o.dtype == "f64") {
    for (const auto& r : bench_variants<double>(c, o.iters, o.seed, variants)) rows.push_back({r.variant, {r.median_ms, r.flops}});
  } else {
    throw ConfigError("--dtype must be f64 or f32");
  }
  double blocked = -1, per_pixel = -1;
  for (const auto& [v, r] : rows) {
    if (v == "blocked") blocked = r.first;
    if (v == "per-pixel") per_pixel = r.first;
  }
  RunManifest m{"bench", o.config, o.seed, "", o.format};
  if (o.format == "structured") {
    for (const auto& [v, r] : rows) {
      out << json{{"record", "bench"}, {"variant", v}, {"median_ms", r.first}, {"flops", r.second}, {"iters", o.iters},
                  {"dtype", o.dtype}, {"hardware_dependent", true}}
                 .dump()
          << "\n";
    }
  } else {
    out << "bench H=" << c.H << " W=" << c.W << " c=" << c.c << " b=" << c.b << " h=" << c.h << " iters=" << o.iters
        << " dtype=" << o.dtype << " threads=" << thread_count() << "\n";
    out << "timings are hardware-dependent; only FLOP counts are structural\n";
    out << std::left << std::setw(12) << "variant" << std::right << std::setw(14) << "median ms" << std::setw(16)
        << "flops" << "\n";
    for (const auto& [v, r] : rows) {
      out << std::left << std::setw(12) << v << std::right << std::setw(14) << std::fixed << std::setprecision(3)
          << r.first << std::setw(16) << r.second << "\n";
    }
    out.unsetf(std::ios::fixed);
  }
  if (blocked >= 0 && per_pixel > 0) {
    const double ratio = blocked / per_pixel;
    m.timings["blocked_over_per_pixel"] = ratio;
    if (o.format != "structured") out << "blocked/per-pixel time ratio: " << ratio << "\n";
  }
  for (const auto& [v, r] : rows) m.timings[v + "_median_ms"] = r.first;
  m.timings["total_ms"] = ms_since(t0);
  emit_manifest(out, m, o.format);
  return kExitOk;
}

// ---- run -------------------------------------------------------------------

int cmd_run(const Options& o, std::ostream& out) {
  const auto t0 = Clock::now();
  if (o.input.empty() || o.output.empty()) throw ConfigError("run needs --input and --output");
  HaloNetConfig cfg = resolve_config(o);
  const std::uint64_t seed = o.seed ? o.seed : cfg.seed;
  const Tensor<double> x = load_tensor(o.input);
  if (x.rank() != 4 || x.dim(1) != cfg.s || x.dim(2) != cfg.s || x.dim(3) != 3) {
    throw DimensionError("input shape " + to_string(x.shape()) + " does not match [n," + std::to_string(cfg.s) + "," +
                         std::to_string(cfg.s) + ",3]");
  }
  const Model model = build(cfg, seed);
  const auto t1 = Clock::now();
  const Tensor<double> logits = forward(model, x);
  const double fwd_ms = ms_since(t1);
  save_tensor(o.output, logits);

  RunManifest m{"run", o.config.empty() ? o.model : o.config, seed, "", o.format};
  m.timings["forward_ms"] = fwd_ms;
  m.timings["total_ms"] = ms_since(t0);
  json mj = m.to_json();
  mj["input"] = o.input;
  mj["output"] = o.output;
  mj["params"] = model.param_count();
  std::ofstream(o.output + ".manifest.json") << mj.dump(2) << "\n";
  out << "wrote " << to_string(logits.shape()) << " logits to " << o.output << "\n";
  emit_manifest(out, m, o.format);
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Blocked local self-attention with haloing: verification, cost model and HaloNet builder", "halo"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "RNG seed (default 0)");
    sub->add_option("--format", o.format, "text or structured")->check(CLI::IsMember({"text", "structured"}));
  };
  auto* verify = app.add_subcommand("verify", "run property suites");
  verify->add_option("--suite", o.suite, "all, oracle, grad, equivariance, cost, roundtrip");
  verify->add_option("--config", o.config, "unused; recorded in the manifest");
  verify->add_option("--inject-fault", o.inject_fault, "fault injection for harness tests (mask)")
      ->check(CLI::IsMember({"", "mask"}));
  common(verify);

  auto* costc = app.add_subcommand("cost", "attention memory/FLOP table and cost ratios");
  costc->add_option("--config", o.config, "key=value file: H, W, c, b, h, k, stride, footnote_hw, footnote_c, conv_k, heads");
  common(costc);

  auto* params = app.add_subcommand("params", "parameter count and layer listing");
  params->add_option("--model", o.model, "builtin model name");
  params->add_option("--config", o.config, "HaloNet config file");
  common(params);

  auto* desc = app.add_subcommand("describe", "per-stage listing of a model");
  desc->add_option("--model", o.model, "builtin model name");
  desc->add_option("--config", o.config, "HaloNet config file");

  auto* bench = app.add_subcommand("bench", "micro-benchmark attention variants");
  bench->add_option("--config", o.config, "cost-style key=value file");
  bench->add_option("--iters", o.iters, "iterations per variant");
  bench->add_option("--compare", o.compare, "variants: blocked, per-pixel, masked, unmasked")->delimiter(',');
  bench->add_option("--dtype", o.dtype, "f64 or f32");
  common(bench);

  auto* runc = app.add_subcommand("run", "single forward pass writing logits");
  runc->add_option("--model", o.model, "builtin model name");
  runc->add_option("--config", o.config, "HaloNet config file");
  runc->add_option("--input", o.input, "input tensor file [n,s,s,3]");
  runc->add_option("--output", o.output, "logits tensor file");
  common(runc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*verify) return cmd_verify(o, out);
    if (*costc) return cmd_cost(o, out);
    if (*params) return cmd_params(o, out);
    if (*desc) return cmd_describe(o, out);
    if (*bench) return cmd_bench(o, out);
    if (*runc) return cmd_run(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace halo::cli
