#include <doctest.h>

#include "filtrank/error.hpp"
#include "filtrank/models.hpp"

using namespace filtrank;

namespace {

Image noise(int side, std::uint64_t seed) {
  Rng rng(seed);
  Image img(side, side);
  for (auto& v : img.pixels()) v = static_cast<float>(rng.uniform());
  return img;
}

ModelConfig desk(Variant v, bool cate = false) {
  ModelConfig mc;
  mc.arch.variant = v;
  mc.arch.input_side = 64;
  mc.category_head = cate;
  mc.fusion = cate;
  return mc;
}

}  // namespace

TEST_CASE("layer stacks match the reduced architectures") {
  Arch a;
  a.variant = Variant::AlexNetReduced;
  a.input_side = 227;
  const auto shapes = propagate_shapes(a, 227);
  CHECK(shapes.front().chw == std::array<int, 3>{96, 55, 55});
  CHECK(shapes.back().chw[0] == 128);

  Arch r;
  r.variant = Variant::RapidReduced;
  r.input_side = 224;
  const auto rs = propagate_shapes(r, 224);
  CHECK(rs.back().chw[0] == 128);
  Rng rng(1);
  ModelConfig mc;
  mc.arch = r;
  const auto m = ColumnModel::build(mc, rng);
  // fc1 consumes the flattened conv4 output
  const auto conv4 = rs[rs.size() - 2].chw;
  CHECK(m.parameters().value("fc1.weight").size() ==
        static_cast<std::size_t>(conv4[0] * conv4[1] * conv4[2]) * 128);
  CHECK_THROWS_AS(propagate_shapes(a, 20), Error);
}

TEST_CASE("build is deterministic per seed") {
  Rng a(4), b(4), c(5);
  const auto cfg = desk(Variant::RapidReduced);
  CHECK(ColumnModel::build(cfg, a).parameters() == ColumnModel::build(cfg, b).parameters());
  Rng d(4);
  CHECK_FALSE(ColumnModel::build(cfg, d).parameters() == ColumnModel::build(cfg, c).parameters());
}

TEST_CASE("embeddings are 128-d and columns share weights") {
  Rng rng(2);
  const auto m = ColumnModel::build(desk(Variant::RapidReduced), rng);
  const Image img = noise(64, 1);
  const auto e = embed(m, img);
  CHECK(e.size() == kEmbedDim);
  // two columns over one store see the same weights
  ad::Graph<float> g(const_cast<ad::ParameterStore<float>*>(&m.parameters()));
  const auto c1 = append_column(g, m.arch(), g.input("a"));
  const auto c2 = append_column(g, m.arch(), g.input("b"));
  ad::TensorMap<float> in;
  in.emplace("a", images_to_tensor<float>(std::vector<Image>{img}));
  in.emplace("b", images_to_tensor<float>(std::vector<Image>{img}));
  g.forward(in);
  CHECK(g.value(c1) == g.value(c2));
  CHECK(std::vector<float>(g.value(c1).values().begin(), g.value(c1).values().end()) == e.values);
  CHECK_THROWS_AS(embed(m, noise(48, 1)), Error);
}

TEST_CASE("SPP accepts several input sizes") {
  Rng rng(3);
  ModelConfig mc;
  mc.arch.variant = Variant::AlexNetReduced;
  mc.arch.input_side = 227;
  mc.arch.spp_levels = 3;
  const auto m = ColumnModel::build(mc, rng);
  CHECK(embed(m, noise(227, 1)).size() == kEmbedDim);
  CHECK(embed(m, noise(256, 2)).size() == kEmbedDim);
}

TEST_CASE("category head and fusion") {
  Rng rng(7);
  auto m = ColumnModel::build(desk(Variant::RapidReduced, true), rng);
  const auto p = classify_category(m, noise(64, 3));
  double sum = 0.0;
  for (double v : p) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

  AestheticEmbedding a{std::vector<float>(kEmbedDim, 0.5f)};
  AestheticEmbedding b{std::vector<float>(kEmbedDim, -0.25f)};
  AestheticEmbedding ab{std::vector<float>(kEmbedDim, 0.25f)};
  std::vector<float> zero(kEmbedDim, 0.0f);
  m.parameters().value("fusion.bias").fill(0.0f);
  const auto fa = fuse(m, a, zero), fb = fuse(m, b, zero), fab = fuse(m, ab, zero);
  for (std::size_t i = 0; i < kEmbedDim; ++i) CHECK(fab.values[i] == doctest::Approx(fa.values[i] + fb.values[i]).epsilon(1e-4));
  m.parameters().value("fusion.weight").fill(0.0f);
  for (float v : fuse(m, a, std::vector<float>(kEmbedDim, 1.0f)).values) CHECK(v == 0.0f);

  Rng r2(1);
  const auto plain = ColumnModel::build(desk(Variant::RapidReduced), r2);
  CHECK_THROWS_AS(classify_category(plain, noise(64, 1)), Error);
  CHECK_THROWS_AS(fuse(plain, a, zero), Error);
}

TEST_CASE("zero final layer gives zero embeddings") {
  Rng rng(2);
  auto m = ColumnModel::build(desk(Variant::AlexNetReduced), rng);
  m.parameters().value("fc2.weight").fill(0.0f);
  m.parameters().value("fc2.bias").fill(0.0f);
  for (float v : embed(m, Image(64, 64)).values) CHECK(v == 0.0f);
}
