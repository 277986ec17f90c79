#include "filtrank/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "filtrank/checkpoint.hpp"
#include "filtrank/error.hpp"
#include "filtrank/objectives.hpp"

namespace filtrank {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Binary: return "binary";
    case TrainMode::PairComp: return "paircomp";
    case TrainMode::PairCompCate: return "paircomp_cate";
  }
  return "?";
}

TrainMode parse_mode(std::string_view s) {
  if (s == "binary") return TrainMode::Binary;
  if (s == "paircomp") return TrainMode::PairComp;
  if (s == "paircomp_cate") return TrainMode::PairCompCate;
  throw Error(ErrorCode::ConfigError, "unknown mode '" + std::string(s) + "'");
}

// ---- config ----------------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigError, m); };
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) fail("lr_decay must be in (0, 1]");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!std::isfinite(grad_clip)) fail("grad_clip must be finite");
  if (batch_size < 1) fail("batch_size must be positive");
  if (epochs < 1) fail("epochs must be positive");
  if (!(lambda_cate >= 0.0)) fail("lambda_cate must be >= 0");
  if (!(init_scale > 0.0)) fail("init_scale must be positive");
  if (cate_warmup_steps < 0) fail("cate_warmup_steps must be >= 0");
  if (cate_warmup_steps > 0 && mode != TrainMode::PairCompCate) fail("cate_warmup_steps requires paircomp_cate");
  if (max_pairs_per_epoch < 0) fail("max_pairs_per_epoch must be >= 0");
  if (spp_levels && variant != Variant::AlexNetReduced) fail("spp_levels requires the alexnet variant");
  if (spp_levels && *spp_levels < 1) fail("spp_levels must be >= 1");
  const auto p = input();
  propagate_shapes(model_config().arch, p.input_side);
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.arch.variant = variant;
  m.arch.input_side = input_profile(profile, variant).input_side;
  m.arch.spp_levels = spp_levels;
  m.category_head = mode == TrainMode::PairCompCate;
  m.fusion = mode == TrainMode::PairCompCate;
  m.binary_head = mode == TrainMode::Binary;
  m.init_scale = init_scale;
  return m;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, key + ": expected a number, got '" + v + "'");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, key + ": expected an integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::ConfigError, key + ": expected true/false, got '" + v + "'");
}

void set_key(TrainConfig& c, const std::string& key, const std::string& v) {
  if (key == "mode") c.mode = parse_mode(v);
  else if (key == "variant" || key == "arch") c.variant = parse_variant(v);
  else if (key == "profile") c.profile = v;
  else if (key == "spp_levels") {
    const auto n = to_int(key, v);
    c.spp_levels = n > 0 ? std::optional<int>(static_cast<int>(n)) : std::nullopt;
  }
  else if (key == "learning_rate" || key == "lr") c.learning_rate = to_double(key, v);
  else if (key == "lr_decay") c.lr_decay = to_double(key, v);
  else if (key == "momentum") c.momentum = to_double(key, v);
  else if (key == "weight_decay") c.weight_decay = to_double(key, v);
  else if (key == "grad_clip") c.grad_clip = to_double(key, v);
  else if (key == "batch_size") c.batch_size = static_cast<int>(to_int(key, v));
  else if (key == "epochs") c.epochs = static_cast<int>(to_int(key, v));
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, v));
  else if (key == "lambda_cate") c.lambda_cate = to_double(key, v);
  else if (key == "init_scale") c.init_scale = to_double(key, v);
  else if (key == "cate_warmup_steps") c.cate_warmup_steps = static_cast<int>(to_int(key, v));
  else if (key == "max_pairs_per_epoch") c.max_pairs_per_epoch = static_cast<int>(to_int(key, v));
  else if (key == "augment") c.augment = to_bool(key, v);
  else if (key == "data_dir") c.data_dir = v;
  else throw Error(ErrorCode::ConfigError, "unknown config key '" + key + "'");
}

}  // namespace

TrainConfig parse_train_config(std::string_view text) {
  TrainConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(lineno) + ": expected key = value");
    }
    set_key(c, trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

json to_json(const TrainConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"variant", to_string(c.variant)},
          {"profile", c.profile},
          {"spp_levels", c.spp_levels ? *c.spp_levels : 0},
          {"learning_rate", c.learning_rate},
          {"lr_decay", c.lr_decay},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"grad_clip", c.grad_clip},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"lambda_cate", c.lambda_cate},
          {"init_scale", c.init_scale},
          {"cate_warmup_steps", c.cate_warmup_steps},
          {"max_pairs_per_epoch", c.max_pairs_per_epoch},
          {"augment", c.augment}};
}

TrainConfig train_config_from_json(const json& j) {
  try {
    TrainConfig c;
    c.mode = parse_mode(j.at("mode").get<std::string>());
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.profile = j.at("profile").get<std::string>();
    const int spp = j.value("spp_levels", 0);
    if (spp > 0) c.spp_levels = spp;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.lr_decay = j.value("lr_decay", 0.1);
    c.momentum = j.at("momentum").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.lambda_cate = j.at("lambda_cate").get<double>();
    c.init_scale = j.at("init_scale").get<double>();
    c.cate_warmup_steps = j.value("cate_warmup_steps", 0);
    c.max_pairs_per_epoch = j.value("max_pairs_per_epoch", 0);
    c.augment = j.value("augment", true);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CheckpointError, std::string("bad config snapshot: ") + e.what());
  }
}

// ---- image sources ---------------------------------------------------------

namespace {

Image fit(Image img, int side) {
  if (img.width() == side && img.height() == side) return img;
  return resize(img, side, side);
}

}  // namespace

MemoryImageSource::MemoryImageSource(std::vector<Image> refs, int resize_side, const FilterCatalog& catalog)
    : catalog_(&catalog) {
  refs_.reserve(refs.size());
  for (auto& r : refs) refs_.push_back(fit(std::move(r), resize_side));
}

Image MemoryImageSource::filtered(std::size_t ref, FilterId f) const {
  return catalog_->apply(refs_.at(ref), f);
}

DiskImageSource::DiskImageSource(std::vector<ReferenceImage> refs, fs::path filtered_dir, int resize_side)
    : refs_(std::move(refs)), dir_(std::move(filtered_dir)), side_(resize_side) {}

Image DiskImageSource::reference(std::size_t ref) const {
  return fit(load_image(refs_.at(ref).path), side_);
}

Image DiskImageSource::filtered(std::size_t ref, FilterId f) const {
  const auto path = dir_ / refs_.at(ref).id / (std::string(f.name()) + ".png");
  if (!fs::exists(path)) throw Error(ErrorCode::MissingFilteredImage, path.string());
  return fit(load_image(path), side_);
}

// ---- examples --------------------------------------------------------------

std::vector<PairExample> pairs_from_labels(std::span<const ReferenceImage> refs, std::span<const LabelRecord> labels) {
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < refs.size(); ++i) index.emplace(refs[i].id, i);
  std::vector<PairExample> out;
  for (const auto& l : labels) {
    if (l.verdict == Verdict::Error) throw Error(ErrorCode::ErrorVerdictPresent, l.ref_id);
    if (l.verdict == Verdict::Equal) continue;
    const auto it = index.find(l.ref_id);
    if (it == index.end()) throw Error(ErrorCode::ConfigError, "label for unknown reference " + l.ref_id);
    out.push_back({it->second, l.a, l.b, l.verdict == Verdict::Left ? 1.0f : -1.0f});
  }
  return out;
}

std::vector<QualityExample> quality_from_scores(std::span<const ReferenceImage> refs,
                                                const std::map<std::string, std::vector<FilterScore>>& scores) {
  std::vector<QualityExample> out;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto it = scores.find(refs[i].id);
    if (it == scores.end()) continue;
    for (const auto& s : it->second) {
      if (s.score != 0) out.push_back({i, s.filter, s.score > 0 ? 1 : 0});
    }
  }
  return out;
}

TrainingData make_training_data(std::vector<ReferenceImage> refs, std::shared_ptr<const ImageSource> images,
                                std::span<const LabelRecord> labels, std::set<std::string, std::less<>> test_ids,
                                TrainMode mode) {
  std::vector<LabelRecord> train, held;
  for (const auto& l : labels) (test_ids.contains(l.ref_id) ? held : train).push_back(l);
  TrainingData d;
  d.refs = std::move(refs);
  d.images = std::move(images);
  if (mode == TrainMode::Binary) d.quality = quality_from_scores(d.refs, score_log(train));
  else d.pairs = pairs_from_labels(d.refs, train);
  d.validation = pairs_from_labels(d.refs, held);
  d.test_ids = std::move(test_ids);
  return d;
}

// ---- optimizer -------------------------------------------------------------

double sgd_step(ad::ParameterStore<float>& params, ad::ParameterStore<float>& velocity, const SgdHyper& h) {
  auto& pe = params.entries();
  auto& ve = velocity.entries();
  if (pe.size() != ve.size()) throw Error(ErrorCode::ShapeMismatch, "velocity/parameter count mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < pe.size(); ++i) {
    if (pe[i].grad.shape() != pe[i].value.shape() || ve[i].value.shape() != pe[i].value.shape()) {
      throw Error(ErrorCode::ShapeMismatch, "parameter " + pe[i].name);
    }
    for (float g : pe[i].grad.values()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  const float clip = (h.grad_clip > 0.0 && norm > h.grad_clip) ? static_cast<float>(h.grad_clip / norm) : 1.0f;
  const float m = static_cast<float>(h.momentum);
  const float wd = static_cast<float>(h.weight_decay);
  const float lr = static_cast<float>(h.learning_rate);
  for (std::size_t i = 0; i < pe.size(); ++i) {
    float* w = pe[i].value.data();
    const float* g = pe[i].grad.data();
    float* v = ve[i].value.data();
    const std::size_t n = pe[i].value.size();
    for (std::size_t k = 0; k < n; ++k) {
      v[k] = m * v[k] + clip * g[k] + wd * w[k];
      w[k] -= lr * v[k];
    }
  }
  return norm;
}

// ---- trainer ---------------------------------------------------------------

namespace {

ad::ParameterStore<float> zeros_like(const ad::ParameterStore<float>& p) {
  ad::ParameterStore<float> out;
  for (const auto& e : p.entries()) {
    ad::Tensor<float> t(e.value.shape());
    t.fill(0.0f);
    out.add(e.name, std::move(t));
  }
  return out;
}

struct Crop {
  int x = 0;
  int y = 0;
  bool flip = false;
};

Image augment_one(const Image& img, const Crop& c, int side) {
  Image out = crop(img, c.x, c.y, side, side);
  return c.flip ? hflip(out) : out;
}

Crop draw_crop(Rng& rng, int resize_side, int input_side, bool augment) {
  Crop c;
  if (!augment) {
    c.x = c.y = (resize_side - input_side) / 2;
    return c;
  }
  c.x = static_cast<int>(rng.uniform_int(0, resize_side - input_side));
  c.y = static_cast<int>(rng.uniform_int(0, resize_side - input_side));
  c.flip = rng.bernoulli(0.5);
  return c;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, TrainingData data) : cfg_(std::move(cfg)), data_(std::move(data)) {
  cfg_.validate();
  if (!data_.images) throw Error(ErrorCode::ConfigError, "training data has no image source");
  check_leakage();
  if (cfg_.mode == TrainMode::Binary ? data_.quality.empty() : data_.pairs.empty()) {
    throw Error(ErrorCode::ConfigError, "no training examples for mode " + std::string(to_string(cfg_.mode)));
  }
  Rng init(Rng::mix(cfg_.seed, 0x1417));
  model_ = std::make_unique<ColumnModel>(ColumnModel::build(cfg_.model_config(), init));
  velocity_ = zeros_like(model_->parameters());
  build_graph();
}

void Trainer::check_leakage() const {
  auto check = [&](std::size_t ref) {
    if (ref >= data_.refs.size()) throw Error(ErrorCode::ConfigError, "example references unknown image");
    const auto& id = data_.refs[ref].id;
    if (data_.test_ids.contains(id)) throw Error(ErrorCode::DataLeakage, "test reference " + id + " in training data");
  };
  if (cfg_.mode == TrainMode::Binary) {
    for (const auto& q : data_.quality) check(q.ref);
  } else {
    for (const auto& p : data_.pairs) check(p.ref);
  }
}

void Trainer::build_graph() {
  graph_ = std::make_unique<ad::Graph<float>>(&model_->parameters());
  auto& g = *graph_;
  const Arch& arch = model_->arch();
  switch (cfg_.mode) {
    case TrainMode::Binary: {
      const auto x = g.input("images");
      const auto logits = append_binary_head(g, append_column(g, arch, x));
      loss_ = g.softmax_xent(logits, g.input("labels"));
      break;
    }
    case TrainMode::PairComp: {
      const auto fl = append_column(g, arch, g.input("left"));
      const auto fr = append_column(g, arch, g.input("right"));
      loss_ = append_paircomp_loss(g, fl, fr, g.input("sign"));
      break;
    }
    case TrainMode::PairCompCate: {
      const auto fl = append_column(g, arch, g.input("left"));
      const auto fr = append_column(g, arch, g.input("right"));
      const auto c = append_column(g, arch, g.input("ref"));
      // Fusion consumers of c come before the category head so the gradient
      // fold over c is symmetric in left/right.
      const auto ul = append_fusion(g, fl, c);
      const auto ur = append_fusion(g, fr, c);
      const auto pair = append_paircomp_loss(g, ul, ur, g.input("sign"));
      const auto logits = append_category_head(g, c);
      loss_ = append_multitask_loss(g, pair, logits, g.input("category"), cfg_.lambda_cate);
      if (cfg_.cate_warmup_steps > 0) {
        warmup_graph_ = std::make_unique<ad::Graph<float>>(&model_->parameters());
        auto& w = *warmup_graph_;
        const auto wl = append_category_head(w, append_column(w, arch, w.input("ref")));
        warmup_loss_ = w.scale(w.softmax_xent(wl, w.input("category")), cfg_.lambda_cate);
      }
      break;
    }
  }
}

std::size_t Trainer::epoch_size() const {
  const std::size_t n = cfg_.mode == TrainMode::Binary ? data_.quality.size() : data_.pairs.size();
  if (cfg_.max_pairs_per_epoch > 0) return std::min<std::size_t>(n, static_cast<std::size_t>(cfg_.max_pairs_per_epoch));
  return n;
}

std::size_t Trainer::batches_per_epoch() const {
  const std::size_t b = static_cast<std::size_t>(cfg_.batch_size);
  return (epoch_size() + b - 1) / b;
}

double Trainer::current_learning_rate() const {
  const std::int64_t total = static_cast<std::int64_t>(batches_per_epoch()) * cfg_.epochs;
  const std::int64_t phase = std::min<std::int64_t>(2, 3 * step_ / std::max<std::int64_t>(1, total));
  double lr = cfg_.learning_rate;
  for (std::int64_t i = 0; i < phase; ++i) lr *= cfg_.lr_decay;
  return lr;
}

std::vector<std::size_t> Trainer::epoch_order(int epoch) const {
  const std::size_t n = cfg_.mode == TrainMode::Binary ? data_.quality.size() : data_.pairs.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(Rng::mix(cfg_.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }
  order.resize(epoch_size());
  return order;
}

double Trainer::loss_on_batch(std::span<const std::size_t> batch, int epoch, std::size_t batch_index) {
  const auto prof = cfg_.input();
  Rng aug(Rng::mix(Rng::mix(cfg_.seed, static_cast<std::uint64_t>(epoch)), batch_index));
  const auto& src = *data_.images;
  ad::TensorMap<float> in;
  if (cfg_.mode == TrainMode::Binary) {
    std::vector<Image> imgs;
    ad::Tensor<float> labels({batch.size()});
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& q = data_.quality[batch[i]];
      const Crop c = draw_crop(aug, prof.resize_side, prof.input_side, cfg_.augment);
      imgs.push_back(augment_one(src.filtered(q.ref, q.filter), c, prof.input_side));
      labels[i] = static_cast<float>(q.label);
    }
    in.emplace("images", images_to_tensor<float>(imgs));
    in.emplace("labels", std::move(labels));
  } else {
    std::vector<Image> left, right, refs;
    ad::Tensor<float> sign({batch.size()});
    ad::Tensor<float> category({batch.size()});
    const bool cate = cfg_.mode == TrainMode::PairCompCate;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& p = data_.pairs[batch[i]];
      // One crop/flip per pair, shared by both images and the reference.
      const Crop c = draw_crop(aug, prof.resize_side, prof.input_side, cfg_.augment);
      left.push_back(augment_one(src.filtered(p.ref, p.left), c, prof.input_side));
      right.push_back(augment_one(src.filtered(p.ref, p.right), c, prof.input_side));
      if (cate) refs.push_back(augment_one(src.reference(p.ref), c, prof.input_side));
      sign[i] = p.sign;
      category[i] = static_cast<float>(data_.refs[p.ref].category);
    }
    in.emplace("left", images_to_tensor<float>(left));
    in.emplace("right", images_to_tensor<float>(right));
    in.emplace("sign", std::move(sign));
    if (cate) {
      in.emplace("ref", images_to_tensor<float>(refs));
      in.emplace("category", std::move(category));
    }
  }

  const bool warm = warmup_graph_ && step_ < cfg_.cate_warmup_steps;
  auto& graph = warm ? *warmup_graph_ : *graph_;
  const ad::NodeId loss_id = warm ? warmup_loss_ : loss_;
  if (warm) {
    in.erase("left");
    in.erase("right");
    in.erase("sign");
  }
  try {
    graph.forward(in);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFiniteValue) throw;
    throw Error(ErrorCode::DivergenceDetected, "epoch " + std::to_string(epoch) + " batch " +
                                                   std::to_string(batch_index) + ": " + e.what());
  }
  const double loss = graph.value(loss_id)[0];
  if (!std::isfinite(loss)) {
    throw Error(ErrorCode::DivergenceDetected,
                "epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index) + ": loss is not finite");
  }
  graph.backward(loss_id);
  return loss;
}

double Trainer::step() {
  if (finished()) throw Error(ErrorCode::UsageError, "training already finished");
  if (order_epoch_ != epoch_) {
    order_ = epoch_order(epoch_);
    order_epoch_ = epoch_;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t b = static_cast<std::size_t>(cfg_.batch_size);
  const std::size_t lo = batch_ * b;
  const std::size_t hi = std::min(order_.size(), lo + b);
  const double lr = current_learning_rate();
  const double loss = loss_on_batch(std::span<const std::size_t>(order_).subspan(lo, hi - lo), epoch_, batch_);
  sgd_step(model_->parameters(), velocity_, {lr, cfg_.momentum, cfg_.weight_decay, cfg_.grad_clip});
  for (const auto& e : model_->parameters().entries()) {
    for (float w : e.value.values()) {
      if (!std::isfinite(w)) {
        throw Error(ErrorCode::DivergenceDetected, "parameter " + e.name + " became non-finite at step " +
                                                       std::to_string(step_));
      }
    }
  }
  ++step_;
  ++batch_;
  epoch_loss_sum_ += loss;
  ++epoch_batches_;
  seconds_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (batch_ >= batches_per_epoch()) {
    EpochMetrics m;
    m.epoch = epoch_;
    m.loss = epoch_loss_sum_ / static_cast<double>(epoch_batches_);
    m.learning_rate = lr;
    m.pair_accuracy = validation_accuracy();
    m.seconds = seconds_;
    history_.push_back(m);
    ++epoch_;
    batch_ = 0;
    epoch_loss_sum_ = 0.0;
    epoch_batches_ = 0;
    seconds_ = 0.0;
  }
  return loss;
}

EpochMetrics Trainer::run_epoch() {
  if (finished()) throw Error(ErrorCode::UsageError, "training already finished");
  const int e = epoch_;
  while (epoch_ == e) step();
  return history_.back();
}

void Trainer::run(const std::function<void(const EpochMetrics&)>& on_epoch) {
  while (!finished()) {
    const auto m = run_epoch();
    if (on_epoch) on_epoch(m);
  }
}

std::vector<double> model_scores(const ColumnModel& m, TrainMode mode, std::span<const Image> images,
                                 const Image* ref) {
  switch (mode) {
    case TrainMode::Binary:
      return quality_probability(m, images);
    case TrainMode::PairComp: {
      std::vector<double> out;
      for (const auto& e : embed_batch(m, images)) out.push_back(aesthetic_score(e));
      return out;
    }
    case TrainMode::PairCompCate: {
      if (!ref) throw Error(ErrorCode::ModelModeMismatch, "paircomp_cate scoring needs the reference image");
      std::vector<double> out;
      for (const auto& e : fuse_batch(m, images, *ref)) out.push_back(aesthetic_score(e));
      return out;
    }
  }
  return {};
}

std::optional<double> Trainer::validation_accuracy() const {
  if (data_.validation.empty()) return std::nullopt;
  const auto prof = cfg_.input();
  const int off = (prof.resize_side - prof.input_side) / 2;
  const Crop c{off, off, false};
  std::map<std::size_t, std::vector<const PairExample*>> by_ref;
  for (const auto& p : data_.validation) by_ref[p.ref].push_back(&p);
  std::size_t correct = 0;
  for (const auto& [ref, pairs] : by_ref) {
    std::vector<Image> imgs;
    imgs.reserve(kNumFilters);
    for (int f = 0; f < kNumFilters; ++f) {
      imgs.push_back(augment_one(data_.images->filtered(ref, FilterId(f)), c, prof.input_side));
    }
    const Image r = augment_one(data_.images->reference(ref), c, prof.input_side);
    const auto s = model_scores(*model_, cfg_.mode, imgs, &r);
    for (const auto* p : pairs) {
      const double d = s[p->left.index()] - s[p->right.index()];
      if (d * p->sign > 0) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data_.validation.size());
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr std::string_view kVelocityPrefix = "velocity/";

json history_json(const std::vector<EpochMetrics>& h) {
  json out = json::array();
  for (const auto& m : h) {
    json e = {{"epoch", m.epoch}, {"loss", m.loss}, {"learning_rate", m.learning_rate}};
    e["pair_accuracy"] = m.pair_accuracy ? json(*m.pair_accuracy) : json(nullptr);
    out.push_back(e);
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> Trainer::checkpoint_bytes() const {
  ad::ParameterStore<float> all;
  for (const auto& e : model_->parameters().entries()) all.add(e.name, e.value);
  for (const auto& e : velocity_.entries()) all.add(std::string(kVelocityPrefix) + e.name, e.value);
  json meta = {{"kind", "filtrank-model"},
               {"config", to_json(cfg_)},
               {"epoch", epoch_},
               {"batch", batch_},
               {"step", step_},
               {"epoch_loss_sum", epoch_loss_sum_},
               {"epoch_batches", epoch_batches_},
               {"loss_trace", history_json(history_)}};
  return ad::encode_checkpoint(all, meta);
}

void Trainer::save(const fs::path& path) const {
  const auto bytes = checkpoint_bytes();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IOFailure, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw Error(ErrorCode::IOFailure, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IOFailure, "rename " + tmp.string() + ": " + ec.message());
}

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Decoded {
  TrainConfig config;
  ad::ParameterStore<float> params;
  ad::ParameterStore<float> velocity;
  json meta;
};

Decoded decode_model(const std::vector<std::uint8_t>& bytes) {
  auto data = ad::decode_checkpoint<float>(bytes);
  if (data.meta.value("kind", std::string()) != "filtrank-model") {
    throw Error(ErrorCode::CheckpointError, "not a filtrank model checkpoint");
  }
  Decoded d;
  d.config = train_config_from_json(data.meta.at("config"));
  for (auto& e : data.tensors.entries()) {
    if (e.name.starts_with(kVelocityPrefix)) {
      d.velocity.add(e.name.substr(kVelocityPrefix.size()), std::move(e.value));
    } else {
      d.params.add(e.name, std::move(e.value));
    }
  }
  d.meta = std::move(data.meta);
  return d;
}

}  // namespace

Trainer Trainer::resume(const fs::path& ckpt, TrainingData data) {
  auto d = decode_model(read_bytes(ckpt));
  Trainer t(d.config, std::move(data));
  t.model_ = std::make_unique<ColumnModel>(ColumnModel::from_parameters(d.config.model_config(), std::move(d.params)));
  if (d.velocity.size() != t.model_->parameters().size()) {
    throw Error(ErrorCode::CheckpointError, "checkpoint has no optimizer state");
  }
  for (const auto& e : t.model_->parameters().entries()) {
    if (!d.velocity.contains(e.name) || d.velocity.value(e.name).shape() != e.value.shape()) {
      throw Error(ErrorCode::CheckpointError, "velocity for " + e.name + " missing or mis-shaped");
    }
  }
  // Re-order velocity to match the parameter order.
  ad::ParameterStore<float> v;
  for (const auto& e : t.model_->parameters().entries()) v.add(e.name, d.velocity.value(e.name));
  t.velocity_ = std::move(v);
  t.build_graph();
  try {
    t.epoch_ = d.meta.at("epoch").get<int>();
    t.batch_ = d.meta.at("batch").get<std::size_t>();
    t.step_ = d.meta.at("step").get<std::int64_t>();
    t.epoch_loss_sum_ = d.meta.at("epoch_loss_sum").get<double>();
    t.epoch_batches_ = d.meta.at("epoch_batches").get<std::size_t>();
    for (const auto& e : d.meta.at("loss_trace")) {
      EpochMetrics m;
      m.epoch = e.at("epoch").get<int>();
      m.loss = e.at("loss").get<double>();
      m.learning_rate = e.at("learning_rate").get<double>();
      if (!e.at("pair_accuracy").is_null()) m.pair_accuracy = e.at("pair_accuracy").get<double>();
      t.history_.push_back(m);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CheckpointError, std::string("bad trainer state: ") + e.what());
  }
  return t;
}

TrainedModel trained_model_from_bytes(const std::vector<std::uint8_t>& bytes) {
  auto d = decode_model(bytes);
  TrainedModel m;
  m.mode = d.config.mode;
  m.profile = d.config.input();
  m.config = d.config;
  m.model = ColumnModel::from_parameters(d.config.model_config(), std::move(d.params));
  return m;
}

TrainedModel load_trained_model(const fs::path& ckpt) {
  return trained_model_from_bytes(read_bytes(ckpt));
}

}  // namespace filtrank
