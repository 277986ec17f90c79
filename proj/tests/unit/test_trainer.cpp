#include <doctest.h>

#include <filesystem>

#include "filtrank/error.hpp"
#include "filtrank/trainer.hpp"

using namespace filtrank;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  std::vector<ReferenceImage> refs;
  std::shared_ptr<MemoryImageSource> images;
  std::vector<LabelRecord> labels;
};

// `n` references per category at the given resize side, labeled by the
// synthetic annotator.
Fixture make_fixture(int per_category, int side) {
  Fixture f;
  std::vector<Image> imgs;
  Rng lab(3);
  for (int c = 0; c < kNumCategories; ++c) {
    for (int i = 0; i < per_category; ++i) {
      Rng rng(Rng::mix(9, static_cast<std::uint64_t>(c * 100 + i)));
      f.refs.push_back({"c" + std::to_string(c) + "-" + std::to_string(i), c, {}});
      imgs.push_back(generate_reference(c, side, rng));
      std::vector<Image> filtered;
      for (const auto id : filter_bank()) filtered.push_back(apply_filter(imgs.back(), id));
      const auto l = simulate_labels(SyntheticAnnotator::standard(), pair_design(), f.refs.back(), filtered, lab);
      f.labels.insert(f.labels.end(), l.begin(), l.end());
    }
  }
  f.images = std::make_shared<MemoryImageSource>(imgs, side);
  return f;
}

TrainConfig tiny(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.profile = "tiny";
  c.batch_size = 4;
  c.epochs = 2;
  c.max_pairs_per_epoch = 12;
  c.learning_rate = 1e-3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("config parsing") {
  const auto c = parse_train_config("mode = paircomp_cate  # comment\nlr = 0.5\narch = alexnet\nepochs=4\n\n");
  CHECK(c.mode == TrainMode::PairCompCate);
  CHECK(c.learning_rate == 0.5);
  CHECK(c.variant == Variant::AlexNetReduced);
  CHECK(c.epochs == 4);
  CHECK(train_config_from_json(to_json(c)).learning_rate == 0.5);
  CHECK_THROWS_AS(parse_train_config("colour = red\n"), Error);
  CHECK_THROWS_AS(parse_train_config("epochs = 0\n"), Error);
  CHECK_THROWS_AS(parse_train_config("lr = fast\n"), Error);
  CHECK_THROWS_AS(parse_train_config("mode = regression\n"), Error);
  CHECK_THROWS_AS(parse_train_config("cate_warmup_steps = 5\n"), Error);  // paircomp mode
}

TEST_CASE("sgd step") {
  ad::ParameterStore<float> p, v;
  p.add("w", ad::Tensor<float>({2}, {1.0f, -2.0f}));
  v.add("w", ad::Tensor<float>({2}));
  p.zero_grad();
  SUBCASE("zero gradient, no decay leaves weights") {
    sgd_step(p, v, {0.1, 0.9, 0.0, 10.0});
    CHECK(p.value("w")[0] == 1.0f);
  }
  SUBCASE("weight decay only") {
    sgd_step(p, v, {0.1, 0.9, 0.5, 10.0});
    CHECK(p.value("w")[0] == doctest::Approx(1.0 - 0.1 * 0.5 * 1.0));
    CHECK(p.value("w")[1] == doctest::Approx(-2.0 + 0.1 * 0.5 * 2.0));
  }
  SUBCASE("global norm clip") {
    p.grad("w")[0] = 60.0f;
    p.grad("w")[1] = 80.0f;
    CHECK(sgd_step(p, v, {1.0, 0.0, 0.0, 10.0}) == doctest::Approx(100.0));
    CHECK(v.value("w")[0] == doctest::Approx(6.0));
    CHECK(p.value("w")[1] == doctest::Approx(-10.0));
  }
  ad::ParameterStore<float> bad;
  bad.add("w", ad::Tensor<float>({3}));
  CHECK_THROWS_AS(sgd_step(p, bad, {}), Error);
}

TEST_CASE("single pair: loss decreases in at least 95% of 200 steps") {
  auto f = make_fixture(1, 36);
  TrainingData d{f.refs, f.images, {{0, FilterId(2), FilterId(5), 1.0f}}, {}, {}, {}};
  auto c = tiny(TrainMode::PairComp);
  c.batch_size = 1;
  c.epochs = 200;
  c.max_pairs_per_epoch = 0;
  c.augment = false;
  c.lr_decay = 1.0;
  c.learning_rate = 1e-4;
  c.momentum = 0.0;
  c.weight_decay = 0.0;
  Trainer t(c, d);
  double prev = t.step();
  int down = 0;
  for (int i = 1; i < 200; ++i) {
    const double l = t.step();
    down += l < prev;
    prev = l;
  }
  CHECK(down >= 189);
}

TEST_CASE("same seed gives identical checkpoint bytes") {
  auto f = make_fixture(1, 36);
  for (auto mode : {TrainMode::PairComp, TrainMode::PairCompCate, TrainMode::Binary}) {
    CAPTURE(to_string(mode));
    const auto c = tiny(mode);
    Trainer a(c, make_training_data(f.refs, f.images, f.labels, {}, mode));
    Trainer b(c, make_training_data(f.refs, f.images, f.labels, {}, mode));
    a.run();
    b.run();
    CHECK(a.finished());
    CHECK(a.checkpoint_bytes() == b.checkpoint_bytes());
    CHECK(a.history().size() == 2);
  }
}

TEST_CASE("resume continues the same trajectory") {
  auto f = make_fixture(1, 36);
  const auto dir = fs::temp_directory_path() / "filtrank-unit-resume";
  fs::create_directories(dir);
  for (auto mode : {TrainMode::PairComp, TrainMode::PairCompCate}) {
    auto c = tiny(mode);
    if (mode == TrainMode::PairCompCate) c.cate_warmup_steps = 2;
    Trainer full(c, make_training_data(f.refs, f.images, f.labels, {}, mode));
    full.run();

    Trainer part(c, make_training_data(f.refs, f.images, f.labels, {}, mode));
    for (int i = 0; i < 4; ++i) part.step();
    part.save(dir / "part.ckpt");
    auto resumed = Trainer::resume(dir / "part.ckpt", make_training_data(f.refs, f.images, f.labels, {}, mode));
    CHECK(resumed.global_step() == 4);
    resumed.run();
    CHECK(resumed.checkpoint_bytes() == full.checkpoint_bytes());
  }
}

TEST_CASE("swapped pair gives bit-identical updates") {
  auto f = make_fixture(1, 36);
  for (auto mode : {TrainMode::PairComp, TrainMode::PairCompCate}) {
    auto c = tiny(mode);
    c.batch_size = 1;
    c.epochs = 1;
    c.max_pairs_per_epoch = 0;
    TrainingData ab{f.refs, f.images, {{2, FilterId(1), FilterId(8), 1.0f}}, {}, {}, {}};
    TrainingData ba{f.refs, f.images, {{2, FilterId(8), FilterId(1), -1.0f}}, {}, {}, {}};
    Trainer x(c, ab), y(c, ba);
    CHECK(x.step() == y.step());
    CHECK(x.model().parameters() == y.model().parameters());
  }
}

TEST_CASE("test references never enter training") {
  auto f = make_fixture(1, 36);
  TrainingData d{f.refs, f.images, {{0, FilterId(1), FilterId(2), 1.0f}}, {}, {}, {f.refs[0].id}};
  CHECK_THROWS_AS(Trainer(tiny(TrainMode::PairComp), d), Error);

  const auto split = make_training_data(f.refs, f.images, f.labels, {f.refs[0].id}, TrainMode::PairComp);
  for (const auto& p : split.pairs) CHECK(p.ref != 0);
  CHECK(!split.validation.empty());
  for (const auto& p : split.validation) CHECK(p.ref == 0);
}

TEST_CASE("divergence aborts with a diagnostic") {
  auto f = make_fixture(1, 36);
  auto c = tiny(TrainMode::PairComp);
  c.learning_rate = 1e30;
  c.grad_clip = 0.0;
  c.init_scale = 10.0;
  Trainer t(c, make_training_data(f.refs, f.images, f.labels, {}, TrainMode::PairComp));
  try {
    for (int i = 0; i < 20; ++i) t.step();
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DivergenceDetected);
  }
}

TEST_CASE("pairs and quality labels from the log") {
  auto f = make_fixture(1, 36);
  auto labels = f.labels;
  const auto pairs = pairs_from_labels(f.refs, labels);
  std::size_t decided = 0;
  for (const auto& l : labels) decided += l.verdict != Verdict::Equal;
  CHECK(pairs.size() == decided);
  const auto q = quality_from_scores(f.refs, score_log(labels));
  for (const auto& e : q) CHECK((e.label == 0 || e.label == 1));
  labels[0].verdict = Verdict::Error;
  CHECK_THROWS_AS(pairs_from_labels(f.refs, labels), Error);
}

TEST_CASE("model scores per mode") {
  auto f = make_fixture(1, 36);
  const Image ref = f.images->reference(0);
  std::vector<Image> crops{center_crop(ref, 32, 32)};
  for (auto mode : {TrainMode::PairComp, TrainMode::PairCompCate, TrainMode::Binary}) {
    const auto c = tiny(mode);
    Rng rng(1);
    const auto m = ColumnModel::build(c.model_config(), rng);
    if (mode == TrainMode::PairCompCate) {
      CHECK_THROWS_AS(model_scores(m, mode, crops), Error);
      CHECK(model_scores(m, mode, crops, &crops[0]).size() == 1);
    } else {
      const auto s = model_scores(m, mode, crops);
      CHECK(s[0] >= 0.0);
      if (mode == TrainMode::Binary) CHECK(s[0] <= 1.0);
    }
  }
}
