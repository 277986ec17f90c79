#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "filtrank/dataset.hpp"
#include "filtrank/error.hpp"

using namespace filtrank;
namespace fs = std::filesystem;

namespace {

std::vector<LabelRecord> random_labels(const std::string& ref, Rng& rng) {
  std::vector<LabelRecord> out;
  for (const auto& e : pair_design().edges) {
    const auto v = static_cast<Verdict>(rng.uniform_int(0, 2));
    if (rng.bernoulli(0.5)) out.push_back({ref, e.a, e.b, v, "t", 0});
    else out.push_back({ref, e.b, e.a, v, "t", 0});
  }
  return out;
}

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("filtrank-unit-" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("built-in design is a simple 3-regular graph") {
  const auto d = pair_design();
  CHECK(d.edges.size() == 33);
  std::array<int, kNumFilters> deg{};
  std::set<std::pair<int, int>> seen;
  for (const auto& e : d.edges) {
    CHECK(e.a != e.b);
    CHECK(seen.insert(std::minmax(e.a.index(), e.b.index())).second);
    ++deg[e.a.index()];
    ++deg[e.b.index()];
  }
  for (int x : deg) CHECK(x == 3);
  CHECK_NOTHROW(validate_design(d));
}

TEST_CASE("bad designs are rejected") {
  auto d = pair_design();
  auto loop = d;
  loop.edges[0].b = loop.edges[0].a;
  CHECK_THROWS_AS(validate_design(loop), Error);
  auto dup = d;
  dup.edges[1] = dup.edges[0];
  CHECK_THROWS_AS(validate_design(dup), Error);
  auto short_ = d;
  short_.edges.pop_back();
  CHECK_THROWS_AS(validate_design(short_), Error);

  const auto dir = temp_dir("design");
  std::ofstream(dir / "ok.jsonl") << serialize_design(d);
  CHECK(load_design(dir / "ok.jsonl").edges.size() == 33);
  std::ofstream(dir / "bad.jsonl") << serialize_design(dup);
  CHECK_THROWS_AS(load_design(dir / "bad.jsonl"), Error);
}

TEST_CASE("counting identities") {
  std::vector<ReferenceImage> refs;
  for (int i = 0; i < 1280; ++i) refs.push_back({"r" + std::to_string(i), i % 8, {}});
  CHECK(filtered_manifest(refs).size() == 28160);
  CHECK(pair_manifest(refs).size() == 42240);
}

TEST_CASE("scoring folds wins and losses") {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    const auto labels = random_labels("x", rng);
    const auto scores = score_images(labels);
    REQUIRE(scores.size() == 22);
    int total = 0;
    for (const auto& s : scores) {
      CHECK(s.score >= -3);
      CHECK(s.score <= 3);
      total += s.score;
    }
    CHECK(total == 0);
  }
  const auto ok = random_labels("x", rng);
  auto err = ok;
  err[3].verdict = Verdict::Error;
  CHECK_THROWS_AS(score_images(err), Error);
  auto missing = ok;
  missing.pop_back();
  CHECK_THROWS_AS(score_images(missing), Error);
  auto twice = ok;
  twice.back() = twice.front();
  CHECK_THROWS_AS(score_images(twice), Error);
}

TEST_CASE("ground truth is the set of +3 filters") {
  std::vector<FilterScore> s;
  for (int i = 0; i < 22; ++i) s.push_back({"x", FilterId(i), i == 4 || i == 9 ? 3 : 0});
  CHECK(ground_truth(s) == std::vector<FilterId>{FilterId(4), FilterId(9)});
  s[4].score = 2;
  s[9].score = 2;
  CHECK(ground_truth(s).empty());
}

TEST_CASE("verdict strings") {
  for (auto v : {Verdict::Left, Verdict::Right, Verdict::Equal, Verdict::Error}) CHECK(parse_verdict(to_string(v)) == v);
  CHECK_THROWS_AS(parse_verdict("maybe"), Error);
}

TEST_CASE("split is stratified, seeded and disjoint") {
  std::vector<ReferenceImage> refs;
  for (int i = 0; i < 80; ++i) refs.push_back({"r" + std::to_string(i), i % 8, {}});
  Rng a(3), b(3);
  const auto s = split_references(refs, a);
  const auto t = split_references(refs, b);
  CHECK(s.train == t.train);
  CHECK(s.test.size() == 8);
  CHECK(s.train.size() == 72);
  std::array<int, 8> per{};
  for (const auto& r : s.test) ++per[r.category];
  for (int x : per) CHECK(x == 1);
  for (const auto& r : s.test) CHECK(std::find(s.train.begin(), s.train.end(), r) == s.train.end());
  refs.resize(40);
  CHECK_THROWS_AS(split_references(refs, a), Error);
}

TEST_CASE("synthetic annotator labels every design edge") {
  Rng rng(1);
  const Image ref = generate_reference(2, 48, rng);
  std::vector<Image> filtered;
  for (const auto f : filter_bank()) filtered.push_back(apply_filter(ref, f));
  const auto oracle = SyntheticAnnotator::standard();
  const ReferenceImage r{"x", 2, {}};
  Rng l1(5), l2(5);
  const auto labels = simulate_labels(oracle, pair_design(), r, filtered, l1);
  CHECK(labels.size() == 33);
  CHECK(labels == simulate_labels(oracle, pair_design(), r, filtered, l2));
  for (const auto& l : labels) {
    const double ua = oracle.utility(filtered[l.a.index()], 2), ub = oracle.utility(filtered[l.b.index()], 2);
    if (l.verdict == Verdict::Left) CHECK(ua > ub);
    if (l.verdict == Verdict::Right) CHECK(ub > ua);
  }
  CHECK_NOTHROW(score_images(labels));
}

TEST_CASE("jsonl manifests round trip") {
  const auto dir = temp_dir("jsonl");
  const LabelRecord l{"r1", FilterId(3), FilterId(7), Verdict::Right, "ann", 42};
  append_jsonl(dir / "labels.jsonl", to_json(l));
  append_jsonl(dir / "labels.jsonl", to_json(l));
  const auto back = read_labels(dir / "labels.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0] == l);
  const ReferenceImage r{"r1", 5, "references/r1.png"};
  write_jsonl(dir / "refs.jsonl", std::vector<nlohmann::json>{to_json(r)});
  const auto refs = read_references(dir / "refs.jsonl");
  CHECK(refs[0].path == dir / "references/r1.png");
  CHECK_THROWS_AS(read_labels(dir / "nope.jsonl"), Error);
  std::ofstream(dir / "broken.jsonl") << "{not json\n";
  CHECK_THROWS_AS(read_labels(dir / "broken.jsonl"), Error);
}

TEST_CASE("reference generation writes a manifest-ready set") {
  const auto dir = temp_dir("gen");
  const auto refs = generate_references(dir, 1, 32, 7);
  CHECK(refs.size() == 8);
  for (int c = 0; c < 8; ++c) CHECK(refs[c].category == c);
  CHECK(load_image(refs[3].path).width() == 32);
  const auto again = generate_references(temp_dir("gen2"), 1, 32, 7);
  CHECK(load_image(again[3].path) == load_image(refs[3].path));
  const auto res = generate_filtered(refs, dir / "filtered");
  CHECK(res.failures.empty());
  CHECK(res.images.size() == 8 * 22);
  CHECK(fs::exists(dir / "filtered" / refs[0].id / "Inkwell.png"));
}
