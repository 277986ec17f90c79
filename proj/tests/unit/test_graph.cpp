#include <doctest.h>

#include "filtrank/checkpoint.hpp"
#include "filtrank/error.hpp"
#include "filtrank/graph.hpp"

using namespace filtrank;
using namespace filtrank::ad;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

double check(Graph<double>& g, NodeId loss, const TensorMap<double>& in, Rng& rng) {
  g.set_track_kinks(true);
  const auto r = grad_check(g, loss, in, 1e-5, 40, rng);
  CHECK(r.checked > 0);
  return r.max_rel_error;
}

}  // namespace

TEST_CASE("forward values of elementary ops") {
  Graph<double> g;
  const auto a = g.input("a");
  const auto b = g.input("b");
  const auto s = g.sq_norm(g.sub(a, b));
  const auto m = g.mean(g.mul(a, b));
  const auto c = g.concat(a, b);
  TensorMap<double> in;
  in.emplace("a", Tensor<double>({2, 2}, {1, 2, 3, 4}));
  in.emplace("b", Tensor<double>({2, 2}, {0, 1, 1, 0}));
  g.forward(in);
  CHECK(g.value(s)[0] == 2.0);   // row 0: 1+1
  CHECK(g.value(s)[1] == 20.0);  // row 1: 4+16
  CHECK(g.value(m)[0] == doctest::Approx((0 + 2 + 3 + 0) / 4.0));
  CHECK(g.value(c).shape() == Shape{2, 4});
  CHECK(g.value(c)[4] == 3.0);
  CHECK(g.value(c)[6] == 1.0);
}

TEST_CASE("ceil-mode pooling keeps the border window") {
  Graph<double> g;
  const auto p = g.maxpool(g.input("x"), {3, 2});
  TensorMap<double> in;
  Tensor<double> x({1, 1, 6, 6});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  in.emplace("x", x);
  g.forward(in);
  CHECK(g.value(p).shape() == Shape{1, 1, 3, 3});  // ceil((6-3)/2)+1
  CHECK(g.value(p)[8] == 35.0);
}

TEST_CASE("per-op gradient checks") {
  Rng rng(11);
  SUBCASE("conv, relu, pool, lrn, fc, xent") {
    ParameterStore<double> p;
    p.add("w", random_tensor({4, 3, 3, 3}, rng));
    p.add("b", random_tensor({4}, rng));
    p.add("fw", random_tensor({5, 4 * 4 * 4}, rng, -0.3, 0.3));
    p.add("fb", random_tensor({5}, rng));
    Graph<double> g(&p);
    auto h = g.conv2d(g.input("x"), g.parameter("w"), g.parameter("b"), {1, 1});
    h = g.lrn(g.relu(h), {});
    h = g.maxpool(h, {3, 2});
    const auto logits = g.fully_connected(h, g.parameter("fw"), g.parameter("fb"));
    const auto loss = g.softmax_xent(logits, g.input("y"));
    TensorMap<double> in;
    in.emplace("x", random_tensor({2, 3, 8, 8}, rng));
    in.emplace("y", Tensor<double>({2}, {1, 4}));
    CHECK(check(g, loss, in, rng) < 1e-5);
  }
  SUBCASE("spp, concat, sq_norm, sub, add, mul, mean, scale") {
    ParameterStore<double> p;
    p.add("w", random_tensor({2, 3, 3, 3}, rng));
    p.add("b", random_tensor({2}, rng));
    p.add("v", random_tensor({2, 10}, rng));
    Graph<double> g(&p);
    const auto f = g.spp(g.conv2d(g.input("x"), g.parameter("w"), g.parameter("b"), {2, 1}), 2);
    const auto j = g.concat(f, g.parameter("v"));
    const auto d = g.mul(g.sub(g.sq_norm(j), g.sq_norm(g.add(j, j))), g.input("s"));
    const auto loss = g.scale(g.mean(d), -0.5);
    TensorMap<double> in;
    in.emplace("x", random_tensor({2, 3, 9, 9}, rng));
    in.emplace("s", Tensor<double>({2}, {1, -1}));
    CHECK(check(g, loss, in, rng) < 1e-5);
  }
}

TEST_CASE("shape and loss errors") {
  Graph<double> g;
  const auto a = g.input("a");
  const auto s = g.add(a, g.input("b"));
  TensorMap<double> in;
  in.emplace("a", Tensor<double>({2}));
  in.emplace("b", Tensor<double>({3}));
  CHECK_THROWS_AS(g.forward(in), Error);
  in.erase("b");
  CHECK_THROWS_AS(g.forward(in), Error);  // missing input
  in.emplace("b", Tensor<double>({2}));
  g.forward(in);
  CHECK_THROWS_AS(g.backward(s), Error);  // not scalar
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(2);
  ParameterStore<float> p;
  p.add("a", random_tensor({3, 4}, rng).cast<float>());
  p.add("b", random_tensor({5}, rng).cast<float>());
  const nlohmann::json meta{{"x", 1}};
  const auto bytes = encode_checkpoint(p, meta);
  const auto back = decode_checkpoint<float>(bytes);
  CHECK(back.tensors == p);
  CHECK(back.meta == meta);
  CHECK(encode_checkpoint(back.tensors, back.meta) == bytes);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint<float>(bad), Error);
  bad = bytes;
  bad.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint<float>(bad), Error);
}
