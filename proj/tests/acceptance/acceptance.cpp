// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "filtrank/annotation.hpp"
#include "filtrank/error.hpp"
#include "filtrank/evaluation.hpp"
#include "filtrank/filters.hpp"
#include "filtrank/graph.hpp"
#include "filtrank/models.hpp"
#include "filtrank/objectives.hpp"
#include "filtrank/trainer.hpp"

using namespace filtrank;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// ---- pinned tolerances -----------------------------------------------------

constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 120.0;
constexpr double kRandomTarget = 0.168;
constexpr double kRandomTol = 0.01;
constexpr std::size_t kRandomTrials = 10000;
constexpr double kE2eSeconds = 30 * 60.0;
constexpr double kE2eRandomFactor = 2.0;
constexpr double kE2eCateMargin = 0.02;
constexpr int kScoringSets = 100;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const char* name, const std::function<Outcome()>& fn) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(Clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s  %-22s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), s);
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("filtrank-acceptance-" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// ---- gradient correctness --------------------------------------------------

ad::Tensor<double> random_tensor(ad::Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  ad::Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

double check_graph(ad::Graph<double>& g, ad::NodeId loss, const ad::TensorMap<double>& in, Rng& rng,
                   std::size_t samples) {
  g.set_track_kinks(true);
  const auto r = ad::grad_check(g, loss, in, 1e-5, samples, rng);
  if (r.checked == 0) return INFINITY;
  return r.max_rel_error;
}

Outcome gradients() {
  const auto t0 = Clock::now();
  Rng rng(11);
  std::set<ad::OpKind> covered;
  double worst = 0.0;
  auto note = [&](const ad::Graph<double>& g, double err) {
    for (std::size_t i = 0; i < g.size(); ++i) covered.insert(g.kind(static_cast<ad::NodeId>(i)));
    worst = std::max(worst, err);
  };

  {
    ad::ParameterStore<double> p;
    p.add("w", random_tensor({4, 3, 3, 3}, rng));
    p.add("b", random_tensor({4}, rng));
    p.add("fw", random_tensor({5, 64}, rng, -0.3, 0.3));
    p.add("fb", random_tensor({5}, rng));
    ad::Graph<double> g(&p);
    auto h = g.conv2d(g.input("x"), g.parameter("w"), g.parameter("b"), {1, 1});
    h = g.maxpool(g.lrn(g.relu(h), {}), {3, 2});
    const auto loss = g.softmax_xent(g.fully_connected(h, g.parameter("fw"), g.parameter("fb")), g.input("y"));
    ad::TensorMap<double> in;
    in.emplace("x", random_tensor({2, 3, 8, 8}, rng));
    in.emplace("y", ad::Tensor<double>({2}, {1, 4}));
    note(g, check_graph(g, loss, in, rng, 60));
  }
  {
    ad::ParameterStore<double> p;
    p.add("w", random_tensor({2, 3, 3, 3}, rng));
    p.add("b", random_tensor({2}, rng));
    p.add("v", random_tensor({2, 10}, rng));
    ad::Graph<double> g(&p);
    const auto f = g.spp(g.conv2d(g.input("x"), g.parameter("w"), g.parameter("b"), {2, 1}), 2);
    const auto j = g.concat(f, g.parameter("v"));
    const auto d = g.mul(g.sub(g.sq_norm(j), g.sq_norm(g.add(j, j))), g.input("s"));
    const auto loss = g.scale(g.mean(d), -0.5);
    ad::TensorMap<double> in;
    in.emplace("x", random_tensor({2, 3, 9, 9}, rng));
    in.emplace("s", ad::Tensor<double>({2}, {1, -1}));
    note(g, check_graph(g, loss, in, rng, 60));
  }

  // full columns at desk size: PairComp, and PairComp+Cate with fusion and head
  for (auto v : {Variant::RapidReduced, Variant::AlexNetReduced}) {
    for (bool cate : {false, true}) {
      ModelConfig mc;
      mc.arch.variant = v;
      mc.arch.input_side = input_profile("desk", v).input_side;
      mc.category_head = cate;
      mc.fusion = cate;
      Rng prng(3);
      auto p = init_parameters<double>(mc, prng);
      ad::Graph<double> g(&p);
      const auto fl = append_column(g, mc.arch, g.input("l"));
      const auto fr = append_column(g, mc.arch, g.input("r"));
      ad::NodeId loss;
      if (cate) {
        const auto c = append_column(g, mc.arch, g.input("c"));
        const auto pair = append_paircomp_loss(g, append_fusion(g, fl, c), append_fusion(g, fr, c), g.input("s"));
        loss = append_multitask_loss(g, pair, append_category_head(g, c), g.input("y"), 1.0);
      } else {
        loss = append_paircomp_loss(g, fl, fr, g.input("s"));
      }
      const auto side = static_cast<std::size_t>(mc.arch.input_side);
      ad::TensorMap<double> in;
      for (auto name : {"l", "r", "c"}) in.emplace(name, random_tensor({2, 3, side, side}, rng, -0.5, 0.5));
      in.emplace("s", ad::Tensor<double>({2}, {1, -1}));
      in.emplace("y", ad::Tensor<double>({2}, {3, 5}));
      note(g, check_graph(g, loss, in, rng, 60));
    }
  }

  std::vector<std::string> missing;
  for (int k = 0; k <= static_cast<int>(ad::OpKind::Scale); ++k) {
    const auto kind = static_cast<ad::OpKind>(k);
    if (kind == ad::OpKind::Input || kind == ad::OpKind::Parameter) continue;
    if (!covered.contains(kind)) missing.emplace_back(to_string(kind));
  }
  const double s = seconds_since(t0);
  std::string miss;
  for (const auto& m : missing) miss += " " + m;
  return {worst < kGradTol && missing.empty() && s < kGradSeconds,
          fmt("max rel err %.3g (< %g), %.0fs (< %.0fs)%s%s", worst, kGradTol, s, kGradSeconds,
              missing.empty() ? "" : ", untested:", miss.c_str())};
}

// ---- Eq. 1 -----------------------------------------------------------------

struct Corpus {
  std::vector<ReferenceImage> refs;
  std::vector<Image> images;
  std::vector<LabelRecord> labels;
  std::map<std::string, std::vector<FilterId>> gt;
};

// `per_category` references per category at `side`, labeled by the standard oracle.
Corpus make_corpus(int per_category, int side, std::uint64_t seed) {
  Corpus c;
  const auto oracle = SyntheticAnnotator::standard(0.0);
  Rng lrng(Rng::mix(seed, 77));
  for (int cat = 0; cat < kNumCategories; ++cat) {
    for (int i = 0; i < per_category; ++i) {
      const int n = cat * per_category + i;
      Rng rng(Rng::mix(1000 + seed, static_cast<std::uint64_t>(n)));
      c.refs.push_back({"r" + std::to_string(n), cat, {}});
      c.images.push_back(generate_reference(cat, side, rng));
      std::vector<Image> filtered;
      for (const auto f : filter_bank()) filtered.push_back(apply_filter(c.images.back(), f));
      auto l = simulate_labels(oracle, pair_design(), c.refs.back(), filtered, lrng);
      c.gt[c.refs.back().id] = ground_truth(score_images(l));
      c.labels.insert(c.labels.end(), l.begin(), l.end());
    }
  }
  return c;
}

Outcome eq1() {
  std::vector<std::string> bad;
  const std::vector<float> same{0.3f, -1.2f, 4.0f};
  if (paircomp_loss(same, same) != 0.0) bad.push_back("f_p=f_n");
  if (paircomp_loss(std::vector<float>{2.0f}, std::vector<float>{1.0f}) != -3.0) bad.push_back("[2] vs [1]");
  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    std::vector<float> p(kEmbedDim), n(kEmbedDim);
    for (auto& v : p) v = static_cast<float>(rng.uniform(-2, 2));
    for (auto& v : n) v = static_cast<float>(rng.uniform(-2, 2));
    if (paircomp_loss(p, n) != -paircomp_loss(n, p)) {
      bad.push_back("antisymmetry");
      break;
    }
  }

  // swapped pair with flipped sign: identical loss and parameters after one step
  const Corpus c = make_corpus(1, 36, 2);
  auto images = std::make_shared<MemoryImageSource>(c.images, 36);
  for (auto mode : {TrainMode::PairComp, TrainMode::PairCompCate}) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.profile = "tiny";
    cfg.batch_size = 1;
    cfg.epochs = 3;  // one pair per epoch
    cfg.seed = 5;
    TrainingData ab{c.refs, images, {{2, FilterId(1), FilterId(8), 1.0f}}, {}, {}, {}};
    TrainingData ba{c.refs, images, {{2, FilterId(8), FilterId(1), -1.0f}}, {}, {}, {}};
    Trainer x(cfg, ab), y(cfg, ba);
    for (int k = 0; k < 3; ++k) {
      if (x.step() != y.step() || !(x.model().parameters() == y.model().parameters())) {
        bad.push_back(std::string("swapped step ") + std::string(to_string(mode)));
        break;
      }
    }
  }
  std::string d = "examples exact, antisymmetric, swapped steps bit-identical";
  if (!bad.empty()) {
    d = "broken:";
    for (const auto& b : bad) d += " [" + b + "]";
  }
  return {bad.empty(), d};
}

// ---- pairing design --------------------------------------------------------

bool brute_force_ok(const PairDesign& d) {
  std::array<std::array<int, kNumFilters>, kNumFilters> adj{};
  for (const auto& e : d.edges) {
    const int a = e.a.index(), b = e.b.index();
    if (a == b) return false;
    ++adj[a][b];
    ++adj[b][a];
  }
  int edges = 0;
  for (int i = 0; i < kNumFilters; ++i) {
    int deg = 0;
    for (int j = 0; j < kNumFilters; ++j) {
      if (adj[i][j] > 1) return false;
      deg += adj[i][j];
      if (j > i) edges += adj[i][j];
    }
    if (deg != 3) return false;
  }
  return edges == 33 && d.edges.size() == 33;
}

bool rejected(const PairDesign& d, const fs::path& dir, const std::string& name) {
  std::ofstream(dir / name) << serialize_design(d);
  try {
    load_design(dir / name);
  } catch (const Error& e) {
    return e.code() == ErrorCode::InvalidDesign;
  }
  return false;
}

Outcome design() {
  const auto d = pair_design();
  const bool ok = brute_force_ok(d);
  bool accepted = true;
  try {
    validate_design(d);
  } catch (const Error&) {
    accepted = false;
  }

  const auto dir = temp_dir("design");
  std::vector<std::pair<std::string, PairDesign>> bad;
  auto loop = d;
  loop.edges[0].b = loop.edges[0].a;
  bad.emplace_back("self-loop", loop);
  auto dup = d;
  dup.edges[1] = dup.edges[0];
  bad.emplace_back("duplicate", dup);
  auto rev = d;
  rev.edges[1] = {d.edges[0].b, d.edges[0].a};
  bad.emplace_back("reversed duplicate", rev);
  auto short_ = d;
  short_.edges.pop_back();
  bad.emplace_back("32 edges", short_);
  auto long_ = d;
  long_.edges.push_back({FilterId(0), FilterId(5)});
  bad.emplace_back("34 edges", long_);
  // 33 distinct edges but degrees 4 and 2: move one endpoint
  auto skew = d;
  for (auto& e : skew.edges) {
    const int a = e.a.index();
    int b = -1;
    for (int cand = 0; cand < kNumFilters; ++cand) {
      bool used = cand == a;
      for (const auto& f : skew.edges) {
        if ((f.a.index() == a && f.b.index() == cand) || (f.b.index() == a && f.a.index() == cand)) used = true;
      }
      if (!used) {
        b = cand;
        break;
      }
    }
    if (b >= 0) {
      e.b = FilterId(b);
      break;
    }
  }
  bad.emplace_back("irregular", skew);

  int rejected_count = 0;
  std::string leaked;
  for (const auto& [name, design] : bad) {
    if (brute_force_ok(design)) leaked += " (fixture " + name + " is valid)";
    if (rejected(design, dir, name + ".jsonl")) ++rejected_count;
    else leaked += " " + name;
  }
  const bool pass = ok && accepted && rejected_count == static_cast<int>(bad.size());
  return {pass, fmt("built-in: 33 edges, 3-regular, simple = %s; %d/%zu bad designs rejected%s", ok ? "yes" : "no",
                    rejected_count, bad.size(), leaked.c_str())};
}

// ---- counting identities ---------------------------------------------------

Outcome counting() {
  bool ok = true;
  for (int n : {1, 7, 40}) {
    std::vector<ReferenceImage> refs;
    for (int i = 0; i < n; ++i) refs.push_back({"r" + std::to_string(i), i % kNumCategories, {}});
    ok = ok && filtered_manifest(refs).size() == 22u * n && pair_manifest(refs).size() == 33u * n;
  }
  std::vector<ReferenceImage> refs;
  for (int i = 0; i < 1280; ++i) refs.push_back({"r" + std::to_string(i), i % kNumCategories, {}});
  const auto f = filtered_manifest(refs).size();
  const auto p = pair_manifest(refs).size();
  return {ok && f == 28160 && p == 42240, fmt("N=1280: %zu filtered, %zu pairs (want 28160, 42240)", f, p)};
}

// ---- scoring oracle --------------------------------------------------------

Outcome scoring() {
  Rng rng(21);
  int mismatches = 0, out_of_range = 0, nonzero_total = 0;
  for (int t = 0; t < kScoringSets; ++t) {
    std::vector<LabelRecord> labels;
    for (const auto& e : pair_design().edges) {
      const auto v = static_cast<Verdict>(rng.uniform_int(0, 2));
      if (rng.bernoulli(0.5)) labels.push_back({"x", e.a, e.b, v, "t", 0});
      else labels.push_back({"x", e.b, e.a, v, "t", 0});
    }
    std::array<int, kNumFilters> expect{};
    for (const auto& l : labels) {
      if (l.verdict == Verdict::Left) {
        ++expect[l.a.index()];
        --expect[l.b.index()];
      } else if (l.verdict == Verdict::Right) {
        --expect[l.a.index()];
        ++expect[l.b.index()];
      }
    }
    const auto scores = score_images(labels);
    int total = 0;
    bool same = scores.size() == kNumFilters;
    for (const auto& s : scores) {
      same = same && expect[s.filter.index()] == s.score;
      if (s.score < -3 || s.score > 3) ++out_of_range;
      total += s.score;
    }
    if (!same) ++mismatches;
    if (total != 0) ++nonzero_total;
  }
  return {mismatches == 0 && out_of_range == 0 && nonzero_total == 0,
          fmt("%d sets: %d mismatches, %d out of range, %d nonzero totals", kScoringSets, mismatches, out_of_range,
              nonzero_total)};
}

// ---- random baseline -------------------------------------------------------

Outcome random_guess() {
  // 300 sets of size 3 and 700 of size 4: mean 3.7
  Rng rng(8);
  std::vector<std::vector<FilterId>> gts;
  for (int i = 0; i < 1000; ++i) {
    std::vector<int> idx(kNumFilters);
    std::iota(idx.begin(), idx.end(), 0);
    for (int k = kNumFilters - 1; k > 0; --k) std::swap(idx[k], idx[rng.uniform_int(0, k)]);
    auto& g = gts.emplace_back();
    for (int k = 0; k < (i < 300 ? 3 : 4); ++k) g.push_back(FilterId(idx[k]));
  }
  Rng trial_rng(9);
  const double r = random_baseline(gts, 1, kRandomTrials, trial_rng);
  return {std::abs(r - kRandomTarget) <= kRandomTol,
          fmt("mean |GT| 3.7: top-1 %.2f%% (want %.1f%% +/- %.0f)", 100 * r, 100 * kRandomTarget, 100 * kRandomTol)};
}

// ---- end to end ------------------------------------------------------------

// Settings for the desk-scale comparison; see the README for how they were chosen.
TrainConfig e2e_config(TrainMode mode, std::uint64_t seed) {
  TrainConfig c;
  c.mode = mode;
  c.variant = Variant::RapidReduced;
  c.profile = "desk";
  c.epochs = 1;
  c.seed = seed;
  c.learning_rate = 0.01;
  c.lr_decay = 0.1;
  if (mode == TrainMode::PairCompCate) c.cate_warmup_steps = 100;
  return c;
}

struct SeedResult {
  double paircomp = 0.0;
  double cate = 0.0;
  double random = 0.0;
};

struct E2eState {
  std::vector<SeedResult> seeds;
  // first seed's models and test set, reused by the norm-ranking check
  std::vector<TrainedModel> models;
  std::vector<ReferenceImage> test;
  std::vector<Image> test_images;
  double seconds = 0.0;
};

E2eState run_e2e() {
  E2eState st;
  const auto t0 = Clock::now();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Corpus c = make_corpus(40, 72, seed);
    Rng srng(seed);
    const auto split = split_references(c.refs, srng);
    std::set<std::string, std::less<>> test_ids;
    for (const auto& r : split.test) test_ids.insert(r.id);
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < c.refs.size(); ++i) idx[c.refs[i].id] = i;
    std::vector<Image> test_images;
    for (const auto& r : split.test) test_images.push_back(c.images[idx[r.id]]);
    auto images = std::make_shared<MemoryImageSource>(c.images, 72);

    SeedResult res;
    for (auto mode : {TrainMode::PairComp, TrainMode::PairCompCate}) {
      const auto cfg = e2e_config(mode, seed);
      Trainer t(cfg, make_training_data(c.refs, images, c.labels, test_ids, mode));
      t.run();
      TrainedModel m{mode, cfg.input(), t.model(), cfg};
      const auto rep = evaluate(m, split.test, test_images, c.gt, {2000, 0, false}, std::string(to_string(mode)));
      (mode == TrainMode::PairComp ? res.paircomp : res.cate) = rep.topk[0].accuracy;
      res.random = rep.random[0];
      if (seed == 1) st.models.push_back(std::move(m));
    }
    std::printf("      e2e seed %llu: paircomp %.3f  paircomp_cate %.3f  random %.3f  (%.0fs)\n",
                static_cast<unsigned long long>(seed), res.paircomp, res.cate, res.random, seconds_since(t0));
    std::fflush(stdout);
    st.seeds.push_back(res);
    if (seed == 1) {
      st.test = split.test;
      st.test_images = test_images;
    }
  }
  st.seconds = seconds_since(t0);
  return st;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Outcome e2e(const E2eState& st) {
  std::vector<double> pc, cate, rnd;
  for (const auto& s : st.seeds) {
    pc.push_back(s.paircomp);
    cate.push_back(s.cate);
    rnd.push_back(s.random);
  }
  const double mp = median(pc), mc = median(cate), mr = median(rnd);
  const bool a = mp >= kE2eRandomFactor * mr;
  const bool b = mc >= mp + kE2eCateMargin - 1e-12;
  const bool t = st.seconds < kE2eSeconds;
  return {a && b && t, fmt("median top-1: paircomp %.3f vs 2x random %.3f [%s]; cate %.3f vs paircomp+0.02 %.3f [%s]; "
                           "%.0fs < %.0fs [%s]",
                           mp, kE2eRandomFactor * mr, a ? "ok" : "no", mc, mp + kE2eCateMargin, b ? "ok" : "no",
                           st.seconds, kE2eSeconds, t ? "ok" : "no")};
}

// ---- norm ranking ----------------------------------------------------------

// Full 231-comparison tournament under D(i, j) = -paircomp_loss(f_i, f_j);
// counts pairs the norm ranking orders against D.
int tournament_against(const FilterRanking& r, const std::vector<std::vector<float>>& emb) {
  std::array<int, kNumFilters> pos{};
  for (std::size_t k = 0; k < r.entries.size(); ++k) pos[r.entries[k].filter.index()] = static_cast<int>(k);
  int bad = 0;
  for (int i = 0; i < kNumFilters; ++i) {
    for (int j = i + 1; j < kNumFilters; ++j) {
      const double d = -paircomp_loss(emb[i], emb[j]);
      const bool i_wins = d > 0 || (d == 0 && i < j);
      if (i_wins != (pos[i] < pos[j])) ++bad;
    }
  }
  return bad;
}

Outcome norm_ranking(const E2eState& st) {
  if (st.models.empty()) return {false, "no trained models"};
  int bad = 0;
  std::size_t refs = 0;
  for (const auto& m : st.models) {
    const int side = m.profile.input_side;
    for (std::size_t i = 0; i < st.test.size(); ++i) {
      const auto r = rank_filters(m, st.test_images[i], st.test[i].id);
      std::vector<Image> crops;
      for (const auto f : filter_bank()) crops.push_back(center_crop(apply_filter(st.test_images[i], f), side, side));
      std::vector<std::vector<float>> emb;
      if (m.mode == TrainMode::PairComp) {
        for (auto& e : embed_batch(m.model, crops)) emb.push_back(std::move(e.values));
      } else {
        const Image ref = center_crop(st.test_images[i], side, side);
        for (auto& e : fuse_batch(m.model, crops, ref)) emb.push_back(std::move(e.values));
      }
      bad += tournament_against(r, emb);
      ++refs;
    }
  }
  return {bad == 0, fmt("%zu rankings (both modes), %d disagreements with the pairwise tournament", refs, bad)};
}

// ---- annotation protocol ---------------------------------------------------

Submission honest(const Hit& h, const std::string& who) {
  Submission s{h.hit_id, {}, h.math_a + h.math_b, who};
  for (const auto& q : h.questions) s.answers.push_back(q.left.index() < q.right.index() ? Verdict::Left : Verdict::Right);
  return s;
}

bool rejected_for(const ValidationResult& r, RejectReason want) {
  return !r.accepted && std::find(r.reasons.begin(), r.reasons.end(), want) != r.reasons.end();
}

Outcome annotation() {
  const auto dir = temp_dir("annotation");
  std::vector<ReferenceImage> refs;
  for (int i = 0; i < 10; ++i) refs.push_back({"r" + std::to_string(i), i % kNumCategories, {}});
  AnnotationService svc(refs, {dir, 4, false});

  // contradictory: duplicate answered the same side as its original (order is swapped)
  auto h = svc.open_hit("liar");
  auto s = honest(h, "liar");
  s.answers[h.duplicate_index] = s.answers[h.original_index];
  const bool dup_rejected = rejected_for(svc.submit(s), RejectReason::DuplicateInconsistent);

  h = svc.open_hit("lazy");
  s = honest(h, "lazy");
  int set = 0;
  for (int i = 0; i < kHitQuestions && set < 2; ++i) {
    if (i == h.duplicate_index || i == h.original_index) continue;
    s.answers[i] = Verdict::Equal;
    ++set;
  }
  const bool eq_rejected = rejected_for(svc.submit(s), RejectReason::TooManyEqual);

  int hits = 0;
  bool all_accepted = true;
  while (svc.progress().pending > 0) {
    all_accepted = svc.submit(honest(svc.open_hit("honest"), "honest")).accepted && all_accepted;
    ++hits;
  }
  const auto p = svc.progress();
  const bool drained = p.pending == 0 && p.checked_out == 0 && p.labeled == 330;

  const auto live = score_log(svc.labels());
  const auto replayed = score_log(read_labels(dir / "labels.jsonl"));
  AnnotationService restarted(refs, {dir, 4, false});
  const bool replay = live == replayed && score_log(restarted.labels()) == live && restarted.progress().pending == 0;

  return {dup_rejected && eq_rejected && drained && all_accepted && replay,
          fmt("drained 330 pairs in %d HITs [%s], DuplicateInconsistent [%s], TooManyEqual [%s], replay [%s]", hits,
              drained && all_accepted ? "ok" : "no", dup_rejected ? "ok" : "no", eq_rejected ? "ok" : "no",
              replay ? "bit-exact" : "differs")};
}

// ---- filter bank -----------------------------------------------------------

Outcome filter_bank_check() {
  const Image chart = test_chart();
  int nondet = 0, out_of_range = 0, identity = 0, not_gray = 0;
  for (const auto f : filter_bank()) {
    const Image a = apply_filter(chart, f);
    if (!(a == apply_filter(chart, f))) ++nondet;
    for (float v : a.pixels()) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        ++out_of_range;
        break;
      }
    }
    if (a == chart) ++identity;
  }
  for (auto name : {"Inkwell", "Willow"}) {
    const Image g = apply_filter(chart, filter_by_name(name));
    for (int y = 0; y < g.height(); ++y) {
      for (int x = 0; x < g.width(); ++x) {
        if (g.at(x, y, 0) != g.at(x, y, 1) || g.at(x, y, 1) != g.at(x, y, 2)) ++not_gray;
      }
    }
  }
  return {filter_bank().size() == kNumFilters && nondet + out_of_range + identity + not_gray == 0,
          fmt("22 filters: %d nondeterministic, %d out of range, %d identity, %d non-gray Inkwell/Willow pixels",
              nondet, out_of_range, identity, not_gray)};
}

}  // namespace

int main(int argc, char** argv) {
  // --skip-e2e runs the fast criteria only (the e2e and norm-ranking lines then FAIL)
  const bool skip_e2e = argc > 1 && std::string(argv[1]) == "--skip-e2e";

  report("gradients", gradients);
  report("eq1-semantics", eq1);
  report("pairing-design", design);
  report("counting", counting);
  report("scoring-oracle", scoring);
  report("random-baseline", random_guess);

  E2eState st;
  if (!skip_e2e) {
    try {
      st = run_e2e();
    } catch (const std::exception& e) {
      std::printf("      e2e aborted: %s\n", e.what());
    }
  }
  report("norm-ranking", [&] { return norm_ranking(st); });
  report("end-to-end", [&] { return st.seeds.size() == 5 ? e2e(st) : Outcome{false, "not run"}; });
  report("annotation-protocol", annotation);
  report("filter-bank", filter_bank_check);

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
