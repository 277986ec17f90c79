#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "filtrank/embedding.hpp"
#include "filtrank/graph.hpp"
#include "filtrank/image.hpp"
#include "filtrank/rng.hpp"

namespace filtrank {

enum class Variant { AlexNetReduced, RapidReduced };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);

/// Resize-then-crop geometry for one experiment scale.
struct InputProfile {
  std::string name;
  int resize_side = 256;
  int input_side = 227;
};

/// "canonical" (256 -> 227 for AlexNetReduced, 256 -> 224 for RapidReduced),
/// "desk" (72 -> 64) and "tiny" (36 -> 32, gradient checks only).
InputProfile input_profile(std::string_view name, Variant variant);

struct Arch {
  Variant variant = Variant::RapidReduced;
  int input_side = 224;
  std::optional<int> spp_levels;  // AlexNetReduced only: inserted between pool5 and fc1
  ad::LrnAttrs lrn;
};

enum class LayerKind { Conv, Relu, Pool, Lrn, Spp, Fc };

struct LayerSpec {
  std::string name;
  LayerKind kind;
  int kernel = 0;
  int outputs = 0;  // conv channels / fc units
  int stride = 1;
  int pad = 0;
};

/// Ordered layer stack for the architecture, including relu/lrn layers.
std::vector<LayerSpec> layer_stack(const Arch& arch);

struct LayerShape {
  std::string name;
  std::array<int, 3> chw{};  // fc layers report {units, 1, 1}
};

/// Symbolic shape propagation for a square input of `side` pixels. Throws
/// IncompatibleInputSize when some layer would have no output.
std::vector<LayerShape> propagate_shapes(const Arch& arch, int side);

struct ModelConfig {
  Arch arch;
  bool category_head = false;  // fc 128 -> 8 on the reference column
  bool fusion = false;         // fc 256 -> 128 over [aesthetic, category]
  bool binary_head = false;    // fc 128 -> 2 quality classifier
  double init_scale = 1.0;
};

/// One set of column parameters plus optional heads. Every column of a
/// multi-column assembly reads this one store.
class ColumnModel {
 public:
  static ColumnModel build(const ModelConfig& config, Rng& rng);
  static ColumnModel from_parameters(const ModelConfig& config, ad::ParameterStore<float> params);

  const ModelConfig& config() const noexcept { return config_; }
  const Arch& arch() const noexcept { return config_.arch; }
  ad::ParameterStore<float>& parameters() noexcept { return params_; }
  const ad::ParameterStore<float>& parameters() const noexcept { return params_; }

 private:
  ModelConfig config_;
  ad::ParameterStore<float> params_;
};

template <typename T>
ad::ParameterStore<T> init_parameters(const ModelConfig& config, Rng& rng);

/// Appends one column reading the shared parameters; returns the [N,128]
/// embedding node.
template <typename T>
ad::NodeId append_column(ad::Graph<T>& g, const Arch& arch, ad::NodeId images);

template <typename T>
ad::NodeId append_category_head(ad::Graph<T>& g, ad::NodeId category_repr);

template <typename T>
ad::NodeId append_fusion(ad::Graph<T>& g, ad::NodeId aesthetic, ad::NodeId category_repr);

template <typename T>
ad::NodeId append_binary_head(ad::Graph<T>& g, ad::NodeId embedding);

/// [N,3,H,W] tensor with intensities shifted to [-0.5, 0.5]. All images must
/// share one size.
template <typename T>
ad::Tensor<T> images_to_tensor(std::span<const Image> images);

std::vector<AestheticEmbedding> embed_batch(const ColumnModel& m, std::span<const Image> images);
AestheticEmbedding embed(const ColumnModel& m, const Image& img);

std::array<double, kNumCategories> classify_category(const ColumnModel& m, const Image& ref);

/// Category representation: the reference column's 128-d output.
std::vector<float> category_representation(const ColumnModel& m, const Image& ref);

FusedEmbedding fuse(const ColumnModel& m, const AestheticEmbedding& aesthetic, std::span<const float> category_repr);

/// Fused embeddings of a batch of filtered images against one reference.
std::vector<FusedEmbedding> fuse_batch(const ColumnModel& m, std::span<const Image> filtered, const Image& ref);

/// P(high quality) for each image, from the binary head.
std::vector<double> quality_probability(const ColumnModel& m, std::span<const Image> images);

}  // namespace filtrank
