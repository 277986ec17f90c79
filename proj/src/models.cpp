#include "filtrank/models.hpp"

#include <algorithm>
#include <cmath>

#include "filtrank/error.hpp"

namespace filtrank {

std::string_view to_string(Variant v) {
  return v == Variant::AlexNetReduced ? "alexnet" : "rapid";
}

Variant parse_variant(std::string_view s) {
  if (s == "alexnet" || s == "AlexNetReduced") return Variant::AlexNetReduced;
  if (s == "rapid" || s == "RapidReduced") return Variant::RapidReduced;
  throw Error(ErrorCode::ConfigError, "unknown architecture '" + std::string(s) + "'");
}

InputProfile input_profile(std::string_view name, Variant variant) {
  if (name == "canonical") {
    return {"canonical", 256, variant == Variant::AlexNetReduced ? 227 : 224};
  }
  if (name == "desk") return {"desk", 72, 64};
  if (name == "tiny") return {"tiny", 36, 32};
  throw Error(ErrorCode::ConfigError, "unknown input profile '" + std::string(name) + "'");
}

std::vector<LayerSpec> layer_stack(const Arch& arch) {
  using K = LayerKind;
  std::vector<LayerSpec> s;
  if (arch.variant == Variant::AlexNetReduced) {
    s = {{"conv1", K::Conv, 11, 96, 4, 0}, {"relu1", K::Relu}, {"pool1", K::Pool, 3, 0, 2}, {"norm1", K::Lrn},
         {"conv2", K::Conv, 5, 256, 1, 2}, {"relu2", K::Relu}, {"pool2", K::Pool, 3, 0, 2}, {"norm2", K::Lrn},
         {"conv3", K::Conv, 3, 384, 1, 1}, {"relu3", K::Relu},
         {"conv4", K::Conv, 3, 384, 1, 1}, {"relu4", K::Relu},
         {"conv5", K::Conv, 3, 256, 1, 1}, {"relu5", K::Relu}, {"pool5", K::Pool, 3, 0, 2}};
    if (arch.spp_levels) s.push_back({"spp", K::Spp, *arch.spp_levels});
    s.push_back({"fc1", K::Fc, 0, 4096});
    s.push_back({"relu6", K::Relu});
    s.push_back({"fc2", K::Fc, 0, static_cast<int>(kEmbedDim)});
  } else {
    s = {{"conv1", K::Conv, 11, 64, 4, 0}, {"relu1", K::Relu}, {"pool1", K::Pool, 3, 0, 2}, {"norm1", K::Lrn},
         {"conv2", K::Conv, 5, 64, 1, 2}, {"relu2", K::Relu}, {"pool2", K::Pool, 3, 0, 2}, {"norm2", K::Lrn},
         {"conv3", K::Conv, 3, 64, 1, 1}, {"relu3", K::Relu},
         {"conv4", K::Conv, 3, 64, 1, 1}, {"relu4", K::Relu}};
    if (arch.spp_levels) s.push_back({"spp", K::Spp, *arch.spp_levels});
    s.push_back({"fc1", K::Fc, 0, static_cast<int>(kEmbedDim)});
  }
  return s;
}

std::vector<LayerShape> propagate_shapes(const Arch& arch, int side) {
  std::vector<LayerShape> out;
  std::array<int, 3> cur{3, side, side};
  auto fail = [&](const std::string& layer) {
    throw Error(ErrorCode::IncompatibleInputSize, std::to_string(side) + "px input leaves no output at " + layer);
  };
  for (const auto& l : layer_stack(arch)) {
    switch (l.kind) {
      case LayerKind::Conv: {
        const int h = (cur[1] + 2 * l.pad - l.kernel);
        if (h < 0) fail(l.name);
        cur = {l.outputs, h / l.stride + 1, (cur[2] + 2 * l.pad - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::Pool: {
        auto ext = [&](int in) {
          int o = static_cast<int>(std::ceil(static_cast<double>(in - l.kernel) / l.stride)) + 1;
          if (o > 0 && (o - 1) * l.stride >= in) --o;
          return o;
        };
        cur = {cur[0], ext(cur[1]), ext(cur[2])};
        if (cur[1] < 1 || cur[2] < 1) fail(l.name);
        break;
      }
      case LayerKind::Spp: {
        int bins = 0;
        for (int i = 1; i <= l.kernel; ++i) bins += i * i;
        cur = {cur[0] * bins, 1, 1};
        break;
      }
      case LayerKind::Fc:
        cur = {l.outputs, 1, 1};
        break;
      case LayerKind::Relu:
      case LayerKind::Lrn:
        break;
    }
    out.push_back({l.name, cur});
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
ad::Tensor<T> uniform_tensor(ad::Shape shape, double bound, Rng& rng) {
  ad::Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

// He-uniform for layers feeding a relu, LeCun-uniform for linear outputs.
double fan_in_bound(std::size_t fan_in, bool relu_follows, double scale) {
  return scale * std::sqrt((relu_follows ? 6.0 : 3.0) / static_cast<double>(fan_in));
}

template <typename T>
void add_fc(ad::ParameterStore<T>& p, const std::string& name, std::size_t in, std::size_t out, bool relu,
            double scale, Rng& rng) {
  p.add(name + ".weight", uniform_tensor<T>({out, in}, fan_in_bound(in, relu, scale), rng));
  p.add(name + ".bias", ad::Tensor<T>({out}));
}

}  // namespace

template <typename T>
ad::ParameterStore<T> init_parameters(const ModelConfig& config, Rng& rng) {
  const Arch& arch = config.arch;
  const auto stack = layer_stack(arch);
  const auto shapes = propagate_shapes(arch, arch.input_side);

  ad::ParameterStore<T> p;
  std::array<int, 3> prev{3, arch.input_side, arch.input_side};
  for (std::size_t i = 0; i < stack.size(); ++i) {
    const LayerSpec& l = stack[i];
    const bool relu_follows = i + 1 < stack.size() && stack[i + 1].kind == LayerKind::Relu;
    if (l.kind == LayerKind::Conv) {
      const auto fan_in = static_cast<std::size_t>(prev[0]) * l.kernel * l.kernel;
      p.add(l.name + ".weight",
            uniform_tensor<T>({static_cast<std::size_t>(l.outputs), static_cast<std::size_t>(prev[0]),
                               static_cast<std::size_t>(l.kernel), static_cast<std::size_t>(l.kernel)},
                              fan_in_bound(fan_in, relu_follows, config.init_scale), rng));
      p.add(l.name + ".bias", ad::Tensor<T>({static_cast<std::size_t>(l.outputs)}));
    } else if (l.kind == LayerKind::Fc) {
      const auto fan_in = static_cast<std::size_t>(prev[0]) * prev[1] * prev[2];
      add_fc(p, l.name, fan_in, static_cast<std::size_t>(l.outputs), relu_follows, config.init_scale, rng);
    }
    prev = shapes[i].chw;
  }
  if (config.category_head) add_fc(p, "category", kEmbedDim, kNumCategories, false, config.init_scale, rng);
  if (config.fusion) add_fc(p, "fusion", 2 * kEmbedDim, kEmbedDim, false, config.init_scale, rng);
  if (config.binary_head) add_fc(p, "binary", kEmbedDim, 2, false, config.init_scale, rng);
  return p;
}

template <typename T>
ad::NodeId append_column(ad::Graph<T>& g, const Arch& arch, ad::NodeId images) {
  ad::NodeId x = images;
  for (const auto& l : layer_stack(arch)) {
    switch (l.kind) {
      case LayerKind::Conv:
        x = g.conv2d(x, g.parameter(l.name + ".weight"), g.parameter(l.name + ".bias"), {l.stride, l.pad});
        break;
      case LayerKind::Relu:
        x = g.relu(x);
        break;
      case LayerKind::Pool:
        x = g.maxpool(x, {l.kernel, l.stride});
        break;
      case LayerKind::Lrn:
        x = g.lrn(x, arch.lrn);
        break;
      case LayerKind::Spp:
        x = g.spp(x, l.kernel);
        break;
      case LayerKind::Fc:
        x = g.fully_connected(x, g.parameter(l.name + ".weight"), g.parameter(l.name + ".bias"));
        break;
    }
  }
  return x;
}

template <typename T>
ad::NodeId append_category_head(ad::Graph<T>& g, ad::NodeId category_repr) {
  auto* p = g.parameters();
  if (!p || !p->contains("category.weight")) throw Error(ErrorCode::NoCategoryHead, "model has no category head");
  return g.fully_connected(category_repr, g.parameter("category.weight"), g.parameter("category.bias"));
}

template <typename T>
ad::NodeId append_fusion(ad::Graph<T>& g, ad::NodeId aesthetic, ad::NodeId category_repr) {
  auto* p = g.parameters();
  if (!p || !p->contains("fusion.weight")) throw Error(ErrorCode::MissingFusionLayer, "model has no fusion layer");
  const ad::NodeId joined = g.concat(aesthetic, category_repr);
  return g.fully_connected(joined, g.parameter("fusion.weight"), g.parameter("fusion.bias"));
}

template <typename T>
ad::NodeId append_binary_head(ad::Graph<T>& g, ad::NodeId embedding) {
  auto* p = g.parameters();
  if (!p || !p->contains("binary.weight")) throw Error(ErrorCode::ModelModeMismatch, "model has no binary head");
  return g.fully_connected(embedding, g.parameter("binary.weight"), g.parameter("binary.bias"));
}

template <typename T>
ad::Tensor<T> images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw Error(ErrorCode::ShapeMismatch, "empty image batch");
  const int w = images[0].width(), h = images[0].height();
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  ad::Tensor<T> t({images.size(), 3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.width() != w || img.height() != h) {
      throw Error(ErrorCode::ShapeMismatch, "mixed image sizes in batch");
    }
    const auto px = img.pixels();
    T* dst = t.data() + n * 3 * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      for (std::size_t c = 0; c < 3; ++c) dst[c * plane + i] = static_cast<T>(px[i * 3 + c]) - T(0.5);
    }
  }
  return t;
}

// ---------------------------------------------------------------------------

ColumnModel ColumnModel::build(const ModelConfig& config, Rng& rng) {
  if (config.arch.spp_levels && *config.arch.spp_levels < 1) {
    throw Error(ErrorCode::ConfigError, "spp levels must be >= 1");
  }
  ColumnModel m;
  m.config_ = config;
  m.params_ = init_parameters<float>(config, rng);
  return m;
}

ColumnModel ColumnModel::from_parameters(const ModelConfig& config, ad::ParameterStore<float> params) {
  Rng rng(0);
  const auto expected = init_parameters<float>(config, rng);
  for (const auto& e : expected.entries()) {
    if (!params.contains(e.name) || params.value(e.name).shape() != e.value.shape()) {
      throw Error(ErrorCode::CheckpointError, "parameter " + e.name + " missing or mis-shaped");
    }
  }
  ColumnModel m;
  m.config_ = config;
  m.params_ = std::move(params);
  return m;
}

namespace {

void check_input_size(const ColumnModel& m, const Image& img) {
  const Arch& a = m.arch();
  if (a.spp_levels) {
    if (img.width() != img.height()) {
      throw Error(ErrorCode::ShapeMismatch, "square inputs required");
    }
    propagate_shapes(a, img.width());  // throws when too small
    return;
  }
  if (img.width() != a.input_side || img.height() != a.input_side) {
    throw Error(ErrorCode::ShapeMismatch, "expected " + std::to_string(a.input_side) + "px input, got " +
                                              std::to_string(img.width()) + "x" + std::to_string(img.height()));
  }
}

std::vector<float> rows_of(const ad::Tensor<float>& t, std::size_t r) {
  const std::size_t width = t.size() / t.dim(0);
  return {t.data() + r * width, t.data() + (r + 1) * width};
}

}  // namespace

std::vector<AestheticEmbedding> embed_batch(const ColumnModel& m, std::span<const Image> images) {
  if (images.empty()) return {};
  for (const auto& img : images) check_input_size(m, img);
  auto& params = const_cast<ad::ParameterStore<float>&>(m.parameters());
  ad::Graph<float> g(&params);
  const auto x = g.input("images");
  const auto f = append_column(g, m.arch(), x);
  g.forward({{"images", images_to_tensor<float>(images)}});
  std::vector<AestheticEmbedding> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out[i].values = rows_of(g.value(f), i);
  return out;
}

AestheticEmbedding embed(const ColumnModel& m, const Image& img) {
  return embed_batch(m, std::span<const Image>(&img, 1)).front();
}

std::vector<float> category_representation(const ColumnModel& m, const Image& ref) {
  return embed(m, ref).values;
}

std::array<double, kNumCategories> classify_category(const ColumnModel& m, const Image& ref) {
  if (!m.config().category_head) throw Error(ErrorCode::NoCategoryHead, "model has no category head");
  check_input_size(m, ref);
  auto& params = const_cast<ad::ParameterStore<float>&>(m.parameters());
  ad::Graph<float> g(&params);
  const auto x = g.input("images");
  const auto logits = append_category_head(g, append_column(g, m.arch(), x));
  g.forward({{"images", images_to_tensor<float>(std::span<const Image>(&ref, 1))}});
  const auto& z = g.value(logits);
  std::array<double, kNumCategories> p{};
  const double mx = *std::max_element(z.values().begin(), z.values().end());
  double sum = 0.0;
  for (int k = 0; k < kNumCategories; ++k) sum += (p[k] = std::exp(static_cast<double>(z[k]) - mx));
  for (auto& v : p) v /= sum;
  return p;
}

FusedEmbedding fuse(const ColumnModel& m, const AestheticEmbedding& aesthetic, std::span<const float> category_repr) {
  if (!m.config().fusion) throw Error(ErrorCode::MissingFusionLayer, "model has no fusion layer");
  if (aesthetic.size() != kEmbedDim || category_repr.size() != kEmbedDim) {
    throw Error(ErrorCode::DimMismatch, "fusion inputs must both be 128-d");
  }
  auto& params = const_cast<ad::ParameterStore<float>&>(m.parameters());
  ad::Graph<float> g(&params);
  const auto a = g.input("a");
  const auto c = g.input("c");
  const auto f = append_fusion(g, a, c);
  g.forward({{"a", ad::Tensor<float>({1, kEmbedDim}, aesthetic.values)},
             {"c", ad::Tensor<float>({1, kEmbedDim}, std::vector<float>(category_repr.begin(), category_repr.end()))}});
  return {rows_of(g.value(f), 0)};
}

std::vector<FusedEmbedding> fuse_batch(const ColumnModel& m, std::span<const Image> filtered, const Image& ref) {
  if (!m.config().fusion) throw Error(ErrorCode::MissingFusionLayer, "model has no fusion layer");
  const auto aesthetic = embed_batch(m, filtered);
  const auto category = category_representation(m, ref);
  std::vector<FusedEmbedding> out;
  out.reserve(aesthetic.size());
  for (const auto& a : aesthetic) out.push_back(fuse(m, a, category));
  return out;
}

std::vector<double> quality_probability(const ColumnModel& m, std::span<const Image> images) {
  if (!m.config().binary_head) throw Error(ErrorCode::ModelModeMismatch, "model has no binary head");
  if (images.empty()) return {};
  for (const auto& img : images) check_input_size(m, img);
  auto& params = const_cast<ad::ParameterStore<float>&>(m.parameters());
  ad::Graph<float> g(&params);
  const auto x = g.input("images");
  const auto logits = append_binary_head(g, append_column(g, m.arch(), x));
  g.forward({{"images", images_to_tensor<float>(images)}});
  const auto& z = g.value(logits);
  std::vector<double> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const double z0 = z[i * 2], z1 = z[i * 2 + 1];
    out[i] = 1.0 / (1.0 + std::exp(z0 - z1));
  }
  return out;
}

template ad::ParameterStore<float> init_parameters<float>(const ModelConfig&, Rng&);
template ad::ParameterStore<double> init_parameters<double>(const ModelConfig&, Rng&);
template ad::NodeId append_column<float>(ad::Graph<float>&, const Arch&, ad::NodeId);
template ad::NodeId append_column<double>(ad::Graph<double>&, const Arch&, ad::NodeId);
template ad::NodeId append_category_head<float>(ad::Graph<float>&, ad::NodeId);
template ad::NodeId append_category_head<double>(ad::Graph<double>&, ad::NodeId);
template ad::NodeId append_fusion<float>(ad::Graph<float>&, ad::NodeId, ad::NodeId);
template ad::NodeId append_fusion<double>(ad::Graph<double>&, ad::NodeId, ad::NodeId);
template ad::NodeId append_binary_head<float>(ad::Graph<float>&, ad::NodeId);
template ad::NodeId append_binary_head<double>(ad::Graph<double>&, ad::NodeId);
template ad::Tensor<float> images_to_tensor<float>(std::span<const Image>);
template ad::Tensor<double> images_to_tensor<double>(std::span<const Image>);

}  // namespace filtrank
