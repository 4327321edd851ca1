#pragma once

// HaloNet backbone builder: 7x7 stem, four stages of bottleneck blocks whose
// spatial op is halo attention (or a 3x3 conv for hybrid stages), optional
// final 1x1 conv, global average pooling and a linear classifier.

#include "halo/attention.hpp"
#include "halo/ops.hpp"
#include "halo/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace halo {

struct HaloNetConfig {
  std::string model = "custom";
  Index b = 8;
  Index h = 3;
  double r_v = 1.0;
  double r_b = 4.0;
  double r_w = 1.0;
  double r_qk = 1.0;
  Index s = 256;
  std::optional<Index> d_f;
  std::array<Index, 4> stage_layers{3, 4, 6, 3};
  std::array<Index, 4> heads{4, 8, 8, 8};
  std::set<int> conv_stages;  // 1-based
  Index classes = 1000;
  Activation activation = Activation::Silu;
  std::uint64_t seed = 0;

  // Published reference values, set for builtins only.
  std::optional<double> published_params_m;
  std::optional<Index> published_s;

  Index l3() const { return stage_layers[2]; }
  bool conv_stage(int stage) const { return conv_stages.count(stage) != 0; }
  /// Depth: three per bottleneck plus stem and classifier.
  Index total_layers() const;
};

/// Config parse failure, carrying the 1-based line number (0 when not tied to a line).
class ConfigParseError : public ConfigError {
 public:
  ConfigParseError(int line, const std::string& msg)
      : ConfigError(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

std::vector<std::string> builtin_names();
/// Throws ConfigError for unknown names.
HaloNetConfig builtin_config(const std::string& name);

/// key=value lines; '#' starts a comment. A `model=` line loads that builtin
/// as the base, later keys override it.
HaloNetConfig parse_config(const std::string& text);
HaloNetConfig load_config(const std::string& path);
std::string format_config(const HaloNetConfig& cfg);

/// Throws ConfigError naming the stage on resolution or width violations.
void validate(const HaloNetConfig& cfg);

/// Block/halo actually used by an attention layer whose input is `res` x `res`:
/// once the haloed window would cover the whole map the layer becomes a
/// single global block.
struct Geometry {
  Index b;
  Index h;
};
Geometry effective_geometry(Index b, Index h, Index res);

struct StageWidths {
  Index mid;   // 1x1 reduce output
  Index qk;    // query/key width
  Index attn;  // spatial op output (value width)
  Index out;   // block output
};
StageWidths stage_widths(const HaloNetConfig& cfg, int stage);  // stage is 0-based
Index stem_width(const HaloNetConfig& cfg);

struct Norm {
  Tensor<double> scale, shift, mean, var;
  double eps = 1e-5;

  explicit Norm(Index c = 1);
  Index params() const { return scale.size() + shift.size(); }
  Tensor<double> apply(const Tensor<double>& x) const;
};

struct ConvSpatial {
  Tensor<double> kernel;  // [3, 3, mid, attn]
};

struct AttentionSpatial {
  AttentionConfig cfg;
  AttentionParams<double> params;
};

struct Bottleneck {
  int stage = 0;
  Index index = 0;
  Index in_res = 0;
  Index stride = 1;
  Tensor<double> reduce;  // [1, 1, c_in, mid]
  Norm norm1;
  std::variant<ConvSpatial, AttentionSpatial> spatial;
  Norm norm2;
  Tensor<double> expand;  // [1, 1, attn, out]
  Norm norm3;
  std::optional<Tensor<double>> shortcut;  // [1, 1, c_in, out]
  std::optional<Norm> shortcut_norm;

  Index params() const;
};

/// One row of a layer listing.
struct LayerInfo {
  std::string name;
  std::string kind;  // conv7x7, maxpool, conv1x1, conv3x3, attention, gap, fc
  Index in_res = 0;
  Index out_res = 0;
  Index in_ch = 0;
  Index out_ch = 0;
  Index params = 0;
  std::string detail;
};

struct Model {
  HaloNetConfig cfg;
  Tensor<double> stem;  // [7, 7, 3, 64 r_w]
  Norm stem_norm;
  std::vector<Bottleneck> blocks;
  std::optional<Tensor<double>> final_conv;  // [1, 1, c, d_f]
  std::optional<Norm> final_norm;
  Tensor<double> fc_weight;  // [c, classes]
  Tensor<double> fc_bias;    // [classes]
  std::vector<LayerInfo> layers;

  Index param_count() const;
};

Model build(const HaloNetConfig& cfg, std::uint64_t seed);
inline Model build(const HaloNetConfig& cfg) { return build(cfg, cfg.seed); }

/// Activations after the stem and after each stage, for shape checks.
struct ForwardTrace {
  std::vector<Shape> stage_shapes;  // stem output, then stages 1..4
  Index attention_macs = 0;
};

Tensor<double> forward(const Model& model, const Tensor<double>& x, ForwardTrace* trace = nullptr);

/// One listing row per group: stem, stages 1-4, optional final 1x1, head.
struct StageRow {
  std::string resolution;  // "s/4", ...
  Index resolution_px = 0;
  std::string layers;
  Index params = 0;
};

struct ModelDescription {
  std::vector<StageRow> stages;
  std::vector<LayerInfo> layers;
  Index total_params = 0;
};

ModelDescription describe(const HaloNetConfig& cfg);
std::string render(const ModelDescription& d);

}  // namespace halo
