#include "halo/halonet.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

namespace halo {
namespace {

struct Row {
  const char* name;
  Index b, h;
  double r_v, r_b;
  Index l3, s;
  Index d_f;  // 0 = none
  double params_m;
};

// Configurations of the H-family, one row per model.
constexpr Row kFamily[] = {
    {"H0", 8, 3, 1.0, 0.5, 7, 256, 0, 5.5},
    {"H1", 8, 3, 1.0, 1.0, 10, 256, 0, 8.1},
    {"H2", 8, 3, 1.0, 1.25, 11, 256, 0, 9.4},
    {"H3", 10, 3, 1.0, 1.5, 12, 320, 1024, 12.3},
    {"H4", 12, 2, 1.0, 3.0, 12, 384, 1280, 19.1},
    {"H5", 14, 2, 2.5, 2.0, 23, 448, 1536, 30.7},
    {"H6", 8, 4, 3.0, 2.75, 24, 512, 1536, 43.4},
    {"H7", 10, 3, 4.0, 3.5, 26, 600, 2048, 67.0},
};

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Index parse_int(const std::string& v, int line, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<Index>(x);
  } catch (const std::exception&) {
    throw ConfigParseError(line, key + ": expected integer, got '" + v + "'");
  }
}

double parse_double(const std::string& v, int line, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigParseError(line, key + ": expected number, got '" + v + "'");
  }
}

std::array<Index, 4> parse_quad(const std::string& v, int line, const std::string& key) {
  const auto items = split_list(v);
  if (items.size() != 4) throw ConfigParseError(line, key + ": expected 4 comma-separated integers");
  std::array<Index, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) out[i] = parse_int(items[i], line, key);
  return out;
}

std::string fmt_num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string res_label(int div) { return "s/" + std::to_string(div); }

Tensor<double> uniform(const Shape& shape, Index fan_in, std::mt19937_64& rng) {
  Tensor<double> t(shape);
  std::uniform_real_distribution<double> u(-1.0 / std::sqrt(double(fan_in)), 1.0 / std::sqrt(double(fan_in)));
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

Tensor<double> conv1x1(const Tensor<double>& x, const Tensor<double>& k, Index stride = 1) {
  return conv2d(x, k, stride);
}

// Layer plan shared by build() and describe().
struct Plan {
  std::vector<LayerInfo> layers;
  std::vector<StageRow> stages;
};

Plan make_plan(const HaloNetConfig& cfg) {
  validate(cfg);
  Plan plan;
  const Index sw = stem_width(cfg);
  const Index s = cfg.s;

  plan.layers.push_back({"stem.conv", "conv7x7", s, s / 2, 3, sw, 49 * 3 * sw + 2 * sw, "stride 2"});
  plan.layers.push_back({"stem.pool", "maxpool", s / 2, s / 4, sw, sw, 0, "3x3 stride 2"});
  plan.stages.push_back({res_label(4), s / 4,
                         "7x7 conv stride 2, " + std::to_string(sw) + "; 3x3 max pool stride 2",
                         49 * 3 * sw + 2 * sw});

  Index c_in = sw, res = s / 4;
  for (int stage = 0; stage < 4; ++stage) {
    const StageWidths w = stage_widths(cfg, stage);
    const bool conv = cfg.conv_stage(stage + 1);
    Index stage_params = 0;
    for (Index j = 0; j < cfg.stage_layers[stage]; ++j) {
      const Index stride = (stage > 0 && j == 0) ? 2 : 1;
      const std::string base = "stage" + std::to_string(stage + 1) + ".block" + std::to_string(j);
      const Index out_res = res / stride;
      auto add = [&](LayerInfo li) {
        stage_params += li.params;
        plan.layers.push_back(std::move(li));
      };
      add({base + ".reduce", "conv1x1", res, res, c_in, w.mid, c_in * w.mid + 2 * w.mid, ""});
      if (conv) {
        add({base + ".spatial", "conv3x3", res, out_res, w.mid, w.attn, 9 * w.mid * w.attn + 2 * w.attn,
             "stride " + std::to_string(stride)});
      } else {
        const Geometry g = effective_geometry(cfg.b, cfg.h, res);
        const Index d_head = w.qk / cfg.heads[stage];
        const Index p = w.mid * (2 * w.qk + w.attn) + 2 * (2 * (g.b + g.h) - 1) * (d_head / 2) + 2 * w.attn;
        add({base + ".spatial", "attention", res, out_res, w.mid, w.attn, p,
             "b=" + std::to_string(g.b) + " h=" + std::to_string(g.h) + " heads=" +
                 std::to_string(cfg.heads[stage]) + " stride " + std::to_string(stride)});
      }
      add({base + ".expand", "conv1x1", out_res, out_res, w.attn, w.out, w.attn * w.out + 2 * w.out, ""});
      if (stride != 1 || c_in != w.out) {
        add({base + ".shortcut", "conv1x1", res, out_res, c_in, w.out, c_in * w.out + 2 * w.out,
             "stride " + std::to_string(stride)});
      }
      c_in = w.out;
      res = out_res;
    }
    const std::string spatial = conv ? "3x3 conv, " + std::to_string(w.attn)
                                     : "attention(b=" + std::to_string(cfg.b) + ", h=" +
                                           std::to_string(cfg.h) + "), " + std::to_string(w.attn);
    plan.stages.push_back({res_label(4 << stage), res,
                           "{1x1, " + std::to_string(w.mid) + "; " + spatial + "; 1x1, " +
                               std::to_string(w.out) + "} x " + std::to_string(cfg.stage_layers[stage]),
                           stage_params});
  }
  if (cfg.d_f) {
    const Index df = *cfg.d_f;
    plan.layers.push_back({"final.conv", "conv1x1", res, res, c_in, df, c_in * df + 2 * df, ""});
    plan.stages.push_back({res_label(32), res, "1x1, " + std::to_string(df), c_in * df + 2 * df});
    c_in = df;
  }
  plan.layers.push_back({"head.pool", "gap", res, 1, c_in, c_in, 0, "global average pooling"});
  const Index fc = c_in * cfg.classes + cfg.classes;
  plan.layers.push_back({"head.fc", "fc", 1, 1, c_in, cfg.classes, fc, ""});
  plan.stages.push_back({"1x1", 1, "global average pooling; fc, " + std::to_string(cfg.classes), fc});
  return plan;
}

}  // namespace

Index HaloNetConfig::total_layers() const {
  Index blocks = 0;
  for (Index n : stage_layers) blocks += n;
  return 3 * blocks + 2;
}

std::vector<std::string> builtin_names() {
  std::vector<std::string> out;
  for (const auto& r : kFamily) out.emplace_back(r.name);
  out.emplace_back("halonet50");
  out.emplace_back("resnet50ref");
  return out;
}

HaloNetConfig builtin_config(const std::string& name) {
  HaloNetConfig c;
  c.model = name;
  for (const auto& r : kFamily) {
    if (name != r.name) continue;
    c.b = r.b;
    c.h = r.h;
    c.r_v = r.r_v;
    c.r_b = r.r_b;
    c.stage_layers = {3, 3, r.l3, 3};
    c.heads = {4, 8, 8, 8};
    c.s = r.s;
    if (r.d_f) c.d_f = r.d_f;
    c.activation = Activation::Silu;
    c.published_params_m = r.params_m;
    c.published_s = r.s;
    // The published H7 size (600) cannot be blocked at every stage; use the
    // smallest larger size where all stage resolutions are multiples of b.
    if (c.s % (32 * c.b) != 0) c.s = (c.s / (32 * c.b) + 1) * 32 * c.b;
    return c;
  }
  if (name == "halonet50" || name == "resnet50ref") {
    c.b = 8;
    c.h = 3;
    c.r_v = 1.0;
    c.r_b = 4.0;
    c.stage_layers = {3, 4, 6, 3};
    c.heads = {4, 8, 16, 32};  // 16 channels per head
    c.s = 256;
    c.activation = Activation::Relu;
    c.published_s = 256;
    if (name == "resnet50ref") {
      c.conv_stages = {1, 2, 3, 4};
      c.published_params_m = 25.5;
    } else {
      c.published_params_m = 18.0;
    }
    return c;
  }
  throw ConfigError("unknown model '" + name + "'");
}

HaloNetConfig parse_config(const std::string& text) {
  HaloNetConfig c;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  std::map<std::string, std::pair<std::string, int>> kv;
  std::vector<std::string> order;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigParseError(line, "expected key=value, got '" + body + "'");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (kv.count(key)) throw ConfigParseError(line, "duplicate key '" + key + "'");
    kv[key] = {value, line};
    order.push_back(key);
  }

  if (auto it = kv.find("model"); it != kv.end()) {
    try {
      if (it->second.first != "custom") c = builtin_config(it->second.first);
    } catch (const ConfigError& e) {
      throw ConfigParseError(it->second.second, e.what());
    }
  }
  std::optional<Index> l3;
  for (const auto& key : order) {
    const auto& [v, ln] = kv[key];
    if (key == "model") {
      c.model = v;
    } else if (key == "b") {
      c.b = parse_int(v, ln, key);
    } else if (key == "h") {
      c.h = parse_int(v, ln, key);
    } else if (key == "r_v") {
      c.r_v = parse_double(v, ln, key);
    } else if (key == "r_b") {
      c.r_b = parse_double(v, ln, key);
    } else if (key == "r_w") {
      c.r_w = parse_double(v, ln, key);
    } else if (key == "r_qk") {
      c.r_qk = parse_double(v, ln, key);
    } else if (key == "l3") {
      l3 = parse_int(v, ln, key);
    } else if (key == "s") {
      c.s = parse_int(v, ln, key);
    } else if (key == "d_f") {
      if (v.empty() || v == "none" || v == "0") {
        c.d_f.reset();
      } else {
        c.d_f = parse_int(v, ln, key);
      }
    } else if (key == "stage_layers") {
      c.stage_layers = parse_quad(v, ln, key);
    } else if (key == "heads") {
      c.heads = parse_quad(v, ln, key);
    } else if (key == "conv_stages") {
      c.conv_stages.clear();
      for (const auto& item : split_list(v)) {
        const Index st = parse_int(item, ln, key);
        if (st < 1 || st > 4) throw ConfigParseError(ln, "conv_stages entries must be in 1..4");
        c.conv_stages.insert(static_cast<int>(st));
      }
    } else if (key == "classes") {
      c.classes = parse_int(v, ln, key);
    } else if (key == "activation") {
      if (v == "relu") {
        c.activation = Activation::Relu;
      } else if (v == "silu") {
        c.activation = Activation::Silu;
      } else {
        throw ConfigParseError(ln, "activation must be relu or silu, got '" + v + "'");
      }
    } else if (key == "seed") {
      c.seed = static_cast<std::uint64_t>(parse_int(v, ln, key));
    } else {
      throw ConfigParseError(ln, "unknown key '" + key + "'");
    }
  }
  if (l3) c.stage_layers[2] = *l3;
  const std::size_t overrides = kv.size() - kv.count("model") - kv.count("seed");
  if (c.model != "custom" && overrides > 0) {
    // overrides make it no longer the published model
    c.published_params_m.reset();
  }
  return c;
}

HaloNetConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const HaloNetConfig& c) {
  std::ostringstream os;
  auto quad = [](const std::array<Index, 4>& a) {
    return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]) + "," +
           std::to_string(a[3]);
  };
  std::string convs;
  for (int st : c.conv_stages) convs += (convs.empty() ? "" : ",") + std::to_string(st);
  os << "model=custom\n"
     << "b=" << c.b << "\nh=" << c.h << "\nr_v=" << fmt_num(c.r_v) << "\nr_b=" << fmt_num(c.r_b)
     << "\nr_w=" << fmt_num(c.r_w) << "\nr_qk=" << fmt_num(c.r_qk) << "\ns=" << c.s
     << "\nd_f=" << (c.d_f ? std::to_string(*c.d_f) : "none") << "\nstage_layers=" << quad(c.stage_layers)
     << "\nheads=" << quad(c.heads) << "\nconv_stages=" << convs << "\nclasses=" << c.classes
     << "\nactivation=" << (c.activation == Activation::Relu ? "relu" : "silu") << "\nseed=" << c.seed << "\n";
  return os.str();
}

Geometry effective_geometry(Index b, Index h, Index res) {
  if (b + 2 * h >= res) return {res, 0};
  return {b, h};
}

Index stem_width(const HaloNetConfig& cfg) { return std::lround(64 * cfg.r_w); }

StageWidths stage_widths(const HaloNetConfig& cfg, int stage) {
  const Index mid = std::lround((64 << stage) * cfg.r_w);
  return {mid, std::lround(mid * cfg.r_qk), std::lround(mid * cfg.r_v), std::lround(mid * cfg.r_b)};
}

void validate(const HaloNetConfig& cfg) {
  if (cfg.s < 32 || cfg.s % 32 != 0) {
    throw ConfigError("image size s=" + std::to_string(cfg.s) + " must be a positive multiple of 32");
  }
  if (cfg.b < 1 || cfg.h < 0) throw ConfigError("need b >= 1 and h >= 0");
  for (double r : {cfg.r_v, cfg.r_b, cfg.r_w, cfg.r_qk}) {
    if (!(r > 0)) throw ConfigError("width multipliers must be positive");
  }
  if (cfg.classes < 1) throw ConfigError("classes must be >= 1");
  if (cfg.d_f && *cfg.d_f < 1) throw ConfigError("d_f must be positive");
  if (stem_width(cfg) < 1) throw ConfigError("stem width rounds to zero");
  Index res = cfg.s / 4;
  for (int stage = 0; stage < 4; ++stage) {
    const std::string name = "stage " + std::to_string(stage + 1);
    if (cfg.stage_layers[stage] < 1) throw ConfigError(name + ": needs at least one block");
    const StageWidths w = stage_widths(cfg, stage);
    if (w.mid < 1 || w.qk < 1 || w.attn < 1 || w.out < 1) throw ConfigError(name + ": a width rounds to zero");
    if (!cfg.conv_stage(stage + 1)) {
      const Index heads = cfg.heads[stage];
      if (heads < 1 || w.qk % heads != 0 || w.attn % heads != 0) {
        throw ConfigError(name + ": widths qk=" + std::to_string(w.qk) + " v=" + std::to_string(w.attn) +
                          " not divisible by " + std::to_string(heads) + " heads");
      }
      if ((w.qk / heads) % 2 != 0) throw ConfigError(name + ": per-head query width must be even");
      for (Index j = 0; j < cfg.stage_layers[stage]; ++j) {
        const Index in_res = (stage > 0 && j > 0) ? res / 2 : res;
        const Index stride = (stage > 0 && j == 0) ? 2 : 1;
        const Geometry g = effective_geometry(cfg.b, cfg.h, in_res);
        if (in_res % g.b != 0) {
          throw ConfigError(name + ": resolution " + std::to_string(in_res) + " not divisible by block size " +
                            std::to_string(g.b));
        }
        if (g.b % stride != 0) {
          throw ConfigError(name + ": stride " + std::to_string(stride) + " does not divide block size " +
                            std::to_string(g.b));
        }
      }
    }
    if (stage > 0) res /= 2;
  }
}

Norm::Norm(Index c)
    : scale(Tensor<double>::constant({c}, 1.0)),
      shift(Tensor<double>({c})),
      mean(Tensor<double>({c})),
      var(Tensor<double>::constant({c}, 1.0)) {}

Tensor<double> Norm::apply(const Tensor<double>& x) const { return affine_norm(x, scale, shift, mean, var, eps); }

Index Bottleneck::params() const {
  Index p = reduce.size() + norm1.params() + norm2.params() + expand.size() + norm3.params();
  if (const auto* c = std::get_if<ConvSpatial>(&spatial)) {
    p += c->kernel.size();
  } else {
    p += std::get<AttentionSpatial>(spatial).params.count();
  }
  if (shortcut) p += shortcut->size() + shortcut_norm->params();
  return p;
}

Index Model::param_count() const {
  Index p = stem.size() + stem_norm.params();
  for (const auto& b : blocks) p += b.params();
  if (final_conv) p += final_conv->size() + final_norm->params();
  return p + fc_weight.size() + fc_bias.size();
}

Model build(const HaloNetConfig& cfg, std::uint64_t seed) {
  Plan plan = make_plan(cfg);
  std::mt19937_64 rng(seed);
  Model m;
  m.cfg = cfg;
  m.cfg.seed = seed;
  m.layers = std::move(plan.layers);

  const Index sw = stem_width(cfg);
  m.stem = uniform({7, 7, 3, sw}, 49 * 3, rng);
  m.stem_norm = Norm(sw);
  Index c_in = sw, res = cfg.s / 4;
  for (int stage = 0; stage < 4; ++stage) {
    const StageWidths w = stage_widths(cfg, stage);
    for (Index j = 0; j < cfg.stage_layers[stage]; ++j) {
      Bottleneck blk;
      blk.stage = stage + 1;
      blk.index = j;
      blk.in_res = res;
      blk.stride = (stage > 0 && j == 0) ? 2 : 1;
      blk.reduce = uniform({1, 1, c_in, w.mid}, c_in, rng);
      blk.norm1 = Norm(w.mid);
      if (cfg.conv_stage(stage + 1)) {
        blk.spatial = ConvSpatial{uniform({3, 3, w.mid, w.attn}, 9 * w.mid, rng)};
      } else {
        const Geometry g = effective_geometry(cfg.b, cfg.h, res);
        AttentionConfig ac;
        ac.b = g.b;
        ac.h = g.h;
        ac.heads = cfg.heads[stage];
        ac.d_head = w.qk / ac.heads;
        ac.d_value = w.attn / ac.heads;
        ac.stride = blk.stride;
        ac.pad = PadMode::Zero;
        blk.spatial = AttentionSpatial{ac, AttentionParams<double>::random(ac, w.mid, rng)};
      }
      blk.norm2 = Norm(w.attn);
      blk.expand = uniform({1, 1, w.attn, w.out}, w.attn, rng);
      blk.norm3 = Norm(w.out);
      if (blk.stride != 1 || c_in != w.out) {
        blk.shortcut = uniform({1, 1, c_in, w.out}, c_in, rng);
        blk.shortcut_norm = Norm(w.out);
      }
      m.blocks.push_back(std::move(blk));
      c_in = w.out;
      res /= (stage > 0 && j == 0) ? 2 : 1;
    }
  }
  if (cfg.d_f) {
    m.final_conv = uniform({1, 1, c_in, *cfg.d_f}, c_in, rng);
    m.final_norm = Norm(*cfg.d_f);
    c_in = *cfg.d_f;
  }
  m.fc_weight = uniform({c_in, cfg.classes}, c_in, rng);
  m.fc_bias = Tensor<double>({cfg.classes});
  return m;
}

Tensor<double> forward(const Model& model, const Tensor<double>& x, ForwardTrace* trace) {
  const HaloNetConfig& cfg = model.cfg;
  if (x.rank() != 4 || x.dim(1) != cfg.s || x.dim(2) != cfg.s || x.dim(3) != 3) {
    throw DimensionError("forward: input " + to_string(x.shape()) + " does not match [n," + std::to_string(cfg.s) +
                         "," + std::to_string(cfg.s) + ",3]");
  }
  const Activation act = cfg.activation;
  Tensor<double> y = activation(model.stem_norm.apply(conv2d(x, model.stem, 2)), act);
  y = maxpool(y, 3, 2);
  if (trace) trace->stage_shapes.push_back(y.shape());

  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const Bottleneck& blk = model.blocks[i];
    Tensor<double> t = activation(blk.norm1.apply(conv1x1(y, blk.reduce)), act);
    if (const auto* c = std::get_if<ConvSpatial>(&blk.spatial)) {
      t = conv2d(t, c->kernel, blk.stride);
    } else {
      const auto& a = std::get<AttentionSpatial>(blk.spatial);
      auto r = blk.stride == 1 ? halo_attention_forward(t, a.params, a.cfg) : attention_downsample(t, a.params, a.cfg);
      if (trace) trace->attention_macs += r.cache.macs.content + r.cache.macs.value;
      t = std::move(r.y);
    }
    t = activation(blk.norm2.apply(t), act);
    t = blk.norm3.apply(conv1x1(t, blk.expand));
    const Tensor<double> sc = blk.shortcut ? blk.shortcut_norm->apply(conv1x1(y, *blk.shortcut, blk.stride)) : y;
    y = activation(add(t, sc), act);
    const bool last_in_stage = i + 1 == model.blocks.size() || model.blocks[i + 1].stage != blk.stage;
    if (trace && last_in_stage) trace->stage_shapes.push_back(y.shape());
  }
  if (model.final_conv) y = activation(model.final_norm->apply(conv1x1(y, *model.final_conv)), act);
  Tensor<double> logits = matmul(global_avg_pool(y), model.fc_weight);
  for (Index b = 0; b < logits.dim(0); ++b)
    for (Index k = 0; k < logits.dim(1); ++k) logits(b, k) += model.fc_bias[k];
  return logits;
}

ModelDescription describe(const HaloNetConfig& cfg) {
  Plan plan = make_plan(cfg);
  ModelDescription d;
  d.stages = std::move(plan.stages);
  d.layers = std::move(plan.layers);
  for (const auto& l : d.layers) d.total_params += l.params;
  return d;
}

std::string render(const ModelDescription& d) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "resolution" << std::setw(64) << "layers" << std::right << std::setw(12)
     << "params" << "\n";
  for (const auto& s : d.stages) {
    os << std::left << std::setw(12) << s.resolution << std::setw(64) << s.layers << std::right << std::setw(12)
       << s.params << "\n";
  }
  os << "\n"
     << std::left << std::setw(28) << "layer" << std::setw(11) << "kind" << std::right << std::setw(6) << "in"
     << std::setw(6) << "out" << std::setw(7) << "c_in" << std::setw(7) << "c_out" << std::setw(11) << "params"
     << "  detail\n";
  for (const auto& l : d.layers) {
    os << std::left << std::setw(28) << l.name << std::setw(11) << l.kind << std::right << std::setw(6) << l.in_res
       << std::setw(6) << l.out_res << std::setw(7) << l.in_ch << std::setw(7) << l.out_ch << std::setw(11)
       << l.params << "  " << l.detail << "\n";
  }
  os << "total params: " << d.total_params << "\n";
  return os.str();
}

}  // namespace halo
