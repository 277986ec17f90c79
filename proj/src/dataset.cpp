#include "filtrank/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "filtrank/error.hpp"

namespace filtrank {

namespace fs = std::filesystem;
using nlohmann::json;

const std::array<std::string_view, kNumCategories>& category_names() {
  static const std::array<std::string_view, kNumCategories> names = {
      "animal", "flora", "landscape", "architecture", "food_and_drink", "portrait", "cityscape", "still_life"};
  return names;
}

int category_index(std::string_view name) {
  const auto& names = category_names();
  for (int i = 0; i < kNumCategories; ++i) {
    if (names[i] == name) return i;
  }
  throw Error(ErrorCode::ConfigError, "unknown category '" + std::string(name) + "'");
}

// ---- pair design -----------------------------------------------------------

PairDesign pair_design() {
  PairDesign d;
  for (int i = 0; i < kNumFilters; ++i) {
    d.edges.push_back({FilterId(i), FilterId((i + 1) % kNumFilters)});
  }
  for (int i = 0; i < kNumFilters / 2; ++i) {
    d.edges.push_back({FilterId(i), FilterId(i + kNumFilters / 2)});
  }
  return d;
}

void validate_design(const PairDesign& design) {
  std::array<int, kNumFilters> degree{};
  std::set<std::pair<int, int>> seen;
  for (const auto& e : design.edges) {
    int a = e.a.index(), b = e.b.index();
    if (a == b) throw Error(ErrorCode::InvalidDesign, "self-loop on " + std::string(e.a.name()));
    if (a > b) std::swap(a, b);
    if (!seen.insert({a, b}).second) {
      throw Error(ErrorCode::InvalidDesign, "duplicate edge " + std::string(FilterId(a).name()) + "-" +
                                                std::string(FilterId(b).name()));
    }
    ++degree[a];
    ++degree[b];
  }
  if (design.edges.size() != static_cast<std::size_t>(kPairsPerReference)) {
    throw Error(ErrorCode::InvalidDesign, "expected 33 edges, got " + std::to_string(design.edges.size()));
  }
  for (int i = 0; i < kNumFilters; ++i) {
    if (degree[i] != kPairsPerFilter) {
      throw Error(ErrorCode::InvalidDesign,
                  std::string(FilterId(i).name()) + " has degree " + std::to_string(degree[i]));
    }
  }
}

PairDesign load_design(const fs::path& path) {
  PairDesign d;
  for (const auto& j : read_jsonl(path)) {
    try {
      d.edges.push_back({filter_by_name(j.at("a").get<std::string>()), filter_by_name(j.at("b").get<std::string>())});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidDesign, std::string("malformed edge: ") + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidDesign, e.what());
    }
  }
  validate_design(d);
  return d;
}

std::string serialize_design(const PairDesign& design) {
  std::string out;
  for (const auto& e : design.edges) {
    out += json{{"a", e.a.name()}, {"b", e.b.name()}}.dump();
    out += '\n';
  }
  return out;
}

// ---- labels and scores -----------------------------------------------------

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Left: return "left";
    case Verdict::Right: return "right";
    case Verdict::Equal: return "equal";
    case Verdict::Error: return "error";
  }
  return "?";
}

Verdict parse_verdict(std::string_view s) {
  if (s == "left") return Verdict::Left;
  if (s == "right") return Verdict::Right;
  if (s == "equal") return Verdict::Equal;
  if (s == "error") return Verdict::Error;
  throw Error(ErrorCode::ConfigError, "unknown verdict '" + std::string(s) + "'");
}

namespace {

std::pair<int, int> edge_key(FilterId a, FilterId b) {
  return std::minmax(a.index(), b.index());
}

}  // namespace

std::vector<FilterScore> score_images(std::span<const LabelRecord> labels, const PairDesign& design) {
  for (const auto& l : labels) {
    if (l.verdict == Verdict::Error) {
      throw Error(ErrorCode::ErrorVerdictPresent,
                  l.ref_id + ": " + std::string(l.a.name()) + " vs " + std::string(l.b.name()));
    }
  }
  const std::string ref_id = labels.empty() ? std::string() : labels.front().ref_id;
  if (labels.size() != design.edges.size()) {
    throw Error(ErrorCode::IncompleteLabels, ref_id + ": " + std::to_string(labels.size()) + " labels for " +
                                                 std::to_string(design.edges.size()) + " pairs");
  }
  std::map<std::pair<int, int>, const LabelRecord*> by_edge;
  for (const auto& e : design.edges) by_edge[edge_key(e.a, e.b)] = nullptr;
  for (const auto& l : labels) {
    if (l.ref_id != ref_id) throw Error(ErrorCode::IncompleteLabels, "labels span several references");
    auto it = by_edge.find(edge_key(l.a, l.b));
    if (it == by_edge.end() || it->second != nullptr) {
      throw Error(ErrorCode::IncompleteLabels, ref_id + ": pair " + std::string(l.a.name()) + "-" +
                                                   std::string(l.b.name()) + " is not a single design edge");
    }
    it->second = &l;
  }

  std::array<int, kNumFilters> score{};
  for (const auto& l : labels) {
    if (l.verdict == Verdict::Left) {
      ++score[l.a.index()];
      --score[l.b.index()];
    } else if (l.verdict == Verdict::Right) {
      --score[l.a.index()];
      ++score[l.b.index()];
    }
  }
  std::vector<FilterScore> out;
  out.reserve(kNumFilters);
  for (int i = 0; i < kNumFilters; ++i) out.push_back({ref_id, FilterId(i), score[i]});
  return out;
}

std::map<std::string, std::vector<FilterScore>> score_log(std::span<const LabelRecord> labels,
                                                          const PairDesign& design) {
  std::map<std::string, std::vector<LabelRecord>> grouped;
  for (const auto& l : labels) grouped[l.ref_id].push_back(l);
  std::map<std::string, std::vector<FilterScore>> out;
  for (const auto& [ref, ls] : grouped) out.emplace(ref, score_images(ls, design));
  return out;
}

std::vector<FilterId> ground_truth(std::span<const FilterScore> scores) {
  std::vector<FilterId> out;
  for (const auto& s : scores) {
    if (s.score == kPairsPerFilter) out.push_back(s.filter);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---- manifests -------------------------------------------------------------

std::vector<FilteredImage> filtered_manifest(std::span<const ReferenceImage> refs, const fs::path& dir) {
  std::vector<FilteredImage> out;
  out.reserve(refs.size() * kNumFilters);
  for (const auto& r : refs) {
    for (int i = 0; i < kNumFilters; ++i) {
      const FilterId f(i);
      out.push_back({r.id, f, dir / r.id / (std::string(f.name()) + ".png")});
    }
  }
  return out;
}

std::vector<ReferencePair> pair_manifest(std::span<const ReferenceImage> refs, const PairDesign& design) {
  std::vector<ReferencePair> out;
  out.reserve(refs.size() * design.edges.size());
  for (const auto& r : refs) {
    for (const auto& e : design.edges) out.push_back({r.id, e});
  }
  return out;
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(n, std::thread::hardware_concurrency()));
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
}

}  // namespace

GenerationResult generate_filtered(std::span<const ReferenceImage> refs, const fs::path& out_dir,
                                   const FilterCatalog& catalog) {
  const auto manifest = filtered_manifest(refs, out_dir);
  std::vector<char> ok(manifest.size(), 0);
  std::vector<std::string> ref_failure(refs.size());
  std::vector<std::vector<std::string>> write_failures(refs.size());

  parallel_for(refs.size(), [&](std::size_t r) {
    Image src;
    try {
      src = load_image(refs[r].path);
    } catch (const Error& e) {
      ref_failure[r] = refs[r].id + ": " + e.what();
      return;
    }
    std::error_code ec;
    fs::create_directories(out_dir / refs[r].id, ec);
    for (int i = 0; i < kNumFilters; ++i) {
      const auto& entry = manifest[r * kNumFilters + i];
      try {
        save_image(catalog.apply(src, entry.filter), entry.path);
        ok[r * kNumFilters + i] = 1;
      } catch (const Error& e) {
        write_failures[r].push_back(refs[r].id + "/" + std::string(entry.filter.name()) + ": " + e.what());
      }
    }
  });

  GenerationResult res;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (ok[i]) res.images.push_back(manifest[i]);
  }
  for (std::size_t r = 0; r < refs.size(); ++r) {
    if (!ref_failure[r].empty()) res.failures.push_back(ref_failure[r]);
    for (auto& f : write_failures[r]) res.failures.push_back(std::move(f));
  }
  return res;
}

Split split_references(std::span<const ReferenceImage> refs, Rng& rng, int train_parts, int test_parts) {
  if (train_parts < 1 || test_parts < 1) throw Error(ErrorCode::ConfigError, "split ratio parts must be positive");
  const int parts = train_parts + test_parts;
  std::array<std::vector<std::size_t>, kNumCategories> by_cat;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].category < 0 || refs[i].category >= kNumCategories) {
      throw Error(ErrorCode::ConfigError, refs[i].id + ": category out of range");
    }
    by_cat[refs[i].category].push_back(i);
  }
  std::vector<char> is_test(refs.size(), 0);
  for (int c = 0; c < kNumCategories; ++c) {
    auto& idx = by_cat[c];
    if (idx.empty()) continue;
    if (idx.size() < static_cast<std::size_t>(parts)) {
      throw Error(ErrorCode::TooFewReferences, std::string(category_names()[c]) + " has " +
                                                   std::to_string(idx.size()) + " references, need at least " +
                                                   std::to_string(parts));
    }
    for (std::size_t i = idx.size() - 1; i > 0; --i) {
      std::swap(idx[i], idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    }
    const std::size_t n_test = idx.size() * test_parts / parts;
    for (std::size_t k = 0; k < n_test; ++k) is_test[idx[k]] = 1;
  }
  if (refs.empty()) throw Error(ErrorCode::TooFewReferences, "no references");
  Split s;
  for (std::size_t i = 0; i < refs.size(); ++i) (is_test[i] ? s.test : s.train).push_back(refs[i]);
  return s;
}

// ---- procedural references -------------------------------------------------

namespace {

using Rgb = std::array<float, 3>;

struct Canvas {
  Image img;
  int n;

  explicit Canvas(int side) : img(side, side), n(side) {}

  void put(int x, int y, Rgb c, float alpha = 1.0f) {
    if (x < 0 || y < 0 || x >= n || y >= n) return;
    for (int k = 0; k < 3; ++k) img.at(x, y, k) = img.at(x, y, k) * (1.0f - alpha) + c[k] * alpha;
  }

  // Vertical gradient from top to bottom color over rows [y0, y1).
  void vgradient(float y0, float y1, Rgb top, Rgb bottom) {
    const int a = static_cast<int>(y0 * n), b = static_cast<int>(y1 * n);
    for (int y = a; y < b; ++y) {
      const float t = b - a > 1 ? static_cast<float>(y - a) / (b - a - 1) : 0.0f;
      Rgb c{top[0] + t * (bottom[0] - top[0]), top[1] + t * (bottom[1] - top[1]), top[2] + t * (bottom[2] - top[2])};
      for (int x = 0; x < n; ++x) put(x, y, c);
    }
  }

  // Coordinates in [0,1] units of the side.
  void ellipse(float cx, float cy, float rx, float ry, Rgb c, float alpha = 1.0f) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const float dx = ((x + 0.5f) / n - cx) / rx, dy = ((y + 0.5f) / n - cy) / ry;
        if (dx * dx + dy * dy <= 1.0f) put(x, y, c, alpha);
      }
    }
  }

  void rect(float x0, float y0, float x1, float y1, Rgb c, float alpha = 1.0f) {
    for (int y = static_cast<int>(y0 * n); y < static_cast<int>(std::ceil(y1 * n)); ++y) {
      for (int x = static_cast<int>(x0 * n); x < static_cast<int>(std::ceil(x1 * n)); ++x) put(x, y, c, alpha);
    }
  }

  void triangle(float x0, float x1, float base, float peak_x, float peak_y, Rgb c) {
    for (int y = 0; y < n; ++y) {
      const float fy = (y + 0.5f) / n;
      if (fy < peak_y || fy > base) continue;
      const float t = (fy - peak_y) / (base - peak_y);
      const float l = peak_x + t * (x0 - peak_x), r = peak_x + t * (x1 - peak_x);
      for (int x = 0; x < n; ++x) {
        const float fx = (x + 0.5f) / n;
        if (fx >= l && fx <= r) put(x, y, c);
      }
    }
  }

  // Per-pixel multiplicative grain of the given amplitude.
  void grain(float amp, Rng& rng) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const float g = 1.0f + amp * static_cast<float>(rng.uniform(-1.0, 1.0));
        for (int k = 0; k < 3; ++k) img.at(x, y, k) *= g;
      }
    }
  }

  // Smooth low-frequency modulation inside a region.
  void blotches(float x0, float y0, float x1, float y1, float amp, int count, Rng& rng) {
    for (int i = 0; i < count; ++i) {
      const float cx = static_cast<float>(rng.uniform(x0, x1)), cy = static_cast<float>(rng.uniform(y0, y1));
      const float r = static_cast<float>(rng.uniform(0.04, 0.12));
      const float g = 1.0f + amp * static_cast<float>(rng.uniform(-1.0, 1.0));
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          const float dx = (x + 0.5f) / n - cx, dy = (y + 0.5f) / n - cy;
          if (dx * dx + dy * dy > r * r) continue;
          for (int k = 0; k < 3; ++k) img.at(x, y, k) *= g;
        }
      }
    }
  }
};

Rgb jitter(Rgb c, float amp, Rng& rng) {
  for (auto& v : c) v = std::clamp(v + amp * static_cast<float>(rng.uniform(-1.0, 1.0)), 0.0f, 1.0f);
  return c;
}

Rgb pick(std::span<const Rgb> palette, Rng& rng) {
  return palette[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(palette.size()) - 1))];
}

float u(Rng& rng, double lo, double hi) { return static_cast<float>(rng.uniform(lo, hi)); }

void draw_animal(Canvas& c, Rng& rng) {
  c.vgradient(0.0f, 1.0f, jitter({0.55f, 0.62f, 0.40f}, 0.08f, rng), jitter({0.40f, 0.48f, 0.28f}, 0.08f, rng));
  c.blotches(0, 0, 1, 1, 0.15f, 10, rng);
  const Rgb fur = jitter(pick(std::array<Rgb, 3>{{{0.55f, 0.36f, 0.20f}, {0.75f, 0.55f, 0.30f}, {0.30f, 0.22f, 0.16f}}},
                              rng),
                         0.06f, rng);
  const float cx = u(rng, 0.35, 0.65), cy = u(rng, 0.5, 0.65);
  c.ellipse(cx, cy, u(rng, 0.22, 0.3), u(rng, 0.14, 0.2), fur);
  c.ellipse(cx + u(rng, 0.18, 0.26), cy - u(rng, 0.12, 0.18), 0.1f, 0.09f, fur);
  c.ellipse(cx + 0.24f, cy - 0.17f, 0.018f, 0.018f, {0.05f, 0.05f, 0.05f});
  c.blotches(cx - 0.25f, cy - 0.15f, cx + 0.25f, cy + 0.15f, 0.25f, 14, rng);
}

void draw_flora(Canvas& c, Rng& rng) {
  c.vgradient(0.0f, 1.0f, jitter({0.20f, 0.45f, 0.18f}, 0.07f, rng), jitter({0.12f, 0.32f, 0.12f}, 0.07f, rng));
  c.blotches(0, 0, 1, 1, 0.3f, 16, rng);
  static constexpr std::array<Rgb, 5> petals{{{0.90f, 0.15f, 0.25f},
                                              {0.95f, 0.80f, 0.10f},
                                              {0.75f, 0.30f, 0.85f},
                                              {0.98f, 0.50f, 0.70f},
                                              {0.95f, 0.45f, 0.10f}}};
  const int flowers = static_cast<int>(rng.uniform_int(1, 3));
  for (int f = 0; f < flowers; ++f) {
    const Rgb col = jitter(pick(petals, rng), 0.05f, rng);
    const float cx = u(rng, 0.25, 0.75), cy = u(rng, 0.25, 0.75), r = u(rng, 0.08, 0.14);
    for (int p = 0; p < 6; ++p) {
      const float a = p * std::numbers::pi_v<float> / 3.0f;
      c.ellipse(cx + r * std::cos(a), cy + r * std::sin(a), r * 0.7f, r * 0.7f, col);
    }
    c.ellipse(cx, cy, r * 0.55f, r * 0.55f, {0.95f, 0.85f, 0.20f});
  }
}

void draw_landscape(Canvas& c, Rng& rng) {
  const float horizon = u(rng, 0.4, 0.6);
  c.vgradient(0.0f, horizon, jitter({0.35f, 0.55f, 0.85f}, 0.06f, rng), jitter({0.70f, 0.80f, 0.92f}, 0.05f, rng));
  const Rgb mountain = jitter({0.40f, 0.42f, 0.50f}, 0.06f, rng);
  const int peaks = static_cast<int>(rng.uniform_int(1, 3));
  for (int p = 0; p < peaks; ++p) {
    const float px = u(rng, 0.1, 0.9);
    c.triangle(px - u(rng, 0.2, 0.4), px + u(rng, 0.2, 0.4), horizon, px, horizon - u(rng, 0.12, 0.25), mountain);
  }
  c.vgradient(horizon, 1.0f, jitter({0.35f, 0.55f, 0.22f}, 0.07f, rng), jitter({0.45f, 0.40f, 0.25f}, 0.07f, rng));
  c.blotches(0, horizon, 1, 1, 0.15f, 10, rng);
}

void draw_architecture(Canvas& c, Rng& rng) {
  c.vgradient(0.0f, 1.0f, jitter({0.70f, 0.75f, 0.80f}, 0.06f, rng), jitter({0.80f, 0.82f, 0.84f}, 0.05f, rng));
  const Rgb facade = jitter(pick(std::array<Rgb, 3>{{{0.82f, 0.76f, 0.62f}, {0.70f, 0.70f, 0.70f}, {0.78f, 0.62f, 0.52f}}},
                                 rng),
                            0.05f, rng);
  const float x0 = u(rng, 0.05, 0.2), x1 = u(rng, 0.8, 0.95), top = u(rng, 0.12, 0.3);
  c.rect(x0, top, x1, 1.0f, facade);
  const int cols = static_cast<int>(rng.uniform_int(3, 5)), rows = static_cast<int>(rng.uniform_int(3, 5));
  const Rgb window = jitter({0.18f, 0.20f, 0.25f}, 0.05f, rng);
  for (int r = 0; r < rows; ++r) {
    for (int k = 0; k < cols; ++k) {
      const float cw = (x1 - x0) / cols, rh = (1.0f - top) / rows;
      const float wx = x0 + k * cw, wy = top + r * rh;
      c.rect(wx + cw * 0.25f, wy + rh * 0.2f, wx + cw * 0.75f, wy + rh * 0.75f, window);
    }
  }
  c.rect(x0, top, x1, top + 0.03f, {0.35f, 0.33f, 0.30f});
}

void draw_food(Canvas& c, Rng& rng) {
  c.vgradient(0.0f, 1.0f, jitter({0.50f, 0.32f, 0.18f}, 0.06f, rng), jitter({0.40f, 0.25f, 0.14f}, 0.06f, rng));
  c.blotches(0, 0, 1, 1, 0.12f, 10, rng);
  const float cx = u(rng, 0.4, 0.6), cy = u(rng, 0.45, 0.6), r = u(rng, 0.3, 0.38);
  c.ellipse(cx, cy, r, r * 0.85f, {0.94f, 0.93f, 0.90f});
  static constexpr std::array<Rgb, 4> food{
      {{0.85f, 0.25f, 0.12f}, {0.95f, 0.65f, 0.15f}, {0.55f, 0.75f, 0.20f}, {0.70f, 0.40f, 0.15f}}};
  const int items = static_cast<int>(rng.uniform_int(2, 4));
  for (int i = 0; i < items; ++i) {
    c.ellipse(cx + u(rng, -0.15, 0.15), cy + u(rng, -0.12, 0.12), u(rng, 0.06, 0.12), u(rng, 0.05, 0.1),
              jitter(pick(food, rng), 0.05f, rng));
  }
}

void draw_portrait(Canvas& c, Rng& rng) {
  c.vgradient(0.0f, 1.0f, jitter({0.25f, 0.27f, 0.30f}, 0.08f, rng), jitter({0.15f, 0.16f, 0.18f}, 0.06f, rng));
  const Rgb skin = jitter(pick(std::array<Rgb, 3>{{{0.92f, 0.76f, 0.64f}, {0.78f, 0.58f, 0.44f}, {0.52f, 0.36f, 0.26f}}},
                               rng),
                          0.04f, rng);
  const float cx = u(rng, 0.42, 0.58), cy = u(rng, 0.42, 0.52);
  c.ellipse(cx, 1.0f, 0.32f, 0.22f, jitter({0.30f, 0.30f, 0.45f}, 0.15f, rng));
  c.ellipse(cx, cy, 0.2f, 0.26f, skin);
  c.ellipse(cx, cy - 0.2f, 0.22f, 0.12f, jitter({0.18f, 0.12f, 0.08f}, 0.06f, rng));
  for (float dx : {-0.08f, 0.08f}) c.ellipse(cx + dx, cy - 0.02f, 0.03f, 0.018f, {0.10f, 0.08f, 0.07f});
  c.ellipse(cx, cy + 0.13f, 0.06f, 0.02f, {0.70f, 0.35f, 0.35f});
}

void draw_cityscape(Canvas& c, Rng& rng) {
  c.vgradient(0.0f, 1.0f, jitter({0.10f, 0.12f, 0.28f}, 0.05f, rng), jitter({0.35f, 0.30f, 0.45f}, 0.06f, rng));
  float x = 0.0f;
  while (x < 1.0f) {
    const float w = u(rng, 0.08, 0.18), top = u(rng, 0.2, 0.6);
    const Rgb body = jitter({0.12f, 0.13f, 0.16f}, 0.04f, rng);
    c.rect(x, top, std::min(1.0f, x + w), 1.0f, body);
    for (float wy = top + 0.03f; wy < 0.97f; wy += 0.06f) {
      for (float wx = x + 0.015f; wx < x + w - 0.02f; wx += 0.04f) {
        if (rng.bernoulli(0.45)) c.rect(wx, wy, wx + 0.02f, wy + 0.025f, {0.98f, 0.85f, 0.45f});
      }
    }
    x += w + u(rng, 0.0, 0.03);
  }
}

void draw_still_life(Canvas& c, Rng& rng) {
  const float table = u(rng, 0.55, 0.7);
  c.vgradient(0.0f, table, jitter({0.62f, 0.58f, 0.52f}, 0.05f, rng), jitter({0.55f, 0.52f, 0.48f}, 0.05f, rng));
  c.vgradient(table, 1.0f, jitter({0.45f, 0.38f, 0.32f}, 0.05f, rng), jitter({0.35f, 0.30f, 0.26f}, 0.05f, rng));
  static constexpr std::array<Rgb, 4> muted{
      {{0.60f, 0.45f, 0.40f}, {0.45f, 0.52f, 0.55f}, {0.70f, 0.65f, 0.50f}, {0.50f, 0.55f, 0.42f}}};
  const int objects = static_cast<int>(rng.uniform_int(2, 3));
  for (int i = 0; i < objects; ++i) {
    const float cx = u(rng, 0.2, 0.8);
    const Rgb col = jitter(pick(muted, rng), 0.04f, rng);
    c.ellipse(cx + 0.03f, table + 0.02f, 0.1f, 0.03f, {0.0f, 0.0f, 0.0f}, 0.3f);
    if (rng.bernoulli(0.5)) {
      c.ellipse(cx, table - 0.1f, u(rng, 0.08, 0.12), u(rng, 0.08, 0.12), col);
    } else {
      const float h = u(rng, 0.15, 0.35), w = u(rng, 0.05, 0.09);
      c.rect(cx - w, table - h, cx + w, table, col);
    }
  }
}

}  // namespace

Image generate_reference(int category, int side, Rng& rng) {
  if (side < 1) throw Error(ErrorCode::ZeroDimension, "reference side " + std::to_string(side));
  Canvas c(side);
  switch (category) {
    case 0: draw_animal(c, rng); break;
    case 1: draw_flora(c, rng); break;
    case 2: draw_landscape(c, rng); break;
    case 3: draw_architecture(c, rng); break;
    case 4: draw_food(c, rng); break;
    case 5: draw_portrait(c, rng); break;
    case 6: draw_cityscape(c, rng); break;
    case 7: draw_still_life(c, rng); break;
    default: throw Error(ErrorCode::ConfigError, "category index " + std::to_string(category));
  }
  // Global exposure and cast differences between "shots".
  const float exposure = u(rng, 0.6, 1.4);
  const Rgb cast{u(rng, 0.95, 1.05), u(rng, 0.95, 1.05), u(rng, 0.95, 1.05)};
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      for (int k = 0; k < 3; ++k) c.img.at(x, y, k) *= exposure * cast[k];
    }
  }
  c.grain(0.03f, rng);
  c.img.clamp();
  return std::move(c.img);
}

std::vector<ReferenceImage> generate_references(const fs::path& dir, int per_category, int side, std::uint64_t seed) {
  if (per_category < 1) throw Error(ErrorCode::ConfigError, "per_category must be positive");
  std::vector<ReferenceImage> refs;
  for (int c = 0; c < kNumCategories; ++c) {
    for (int i = 0; i < per_category; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "ref-%05d", c * per_category + i);
      refs.push_back({id, c, dir / (std::string(id) + ".png")});
    }
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IOFailure, "cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::string> failures(refs.size());
  parallel_for(refs.size(), [&](std::size_t i) {
    Rng rng(Rng::mix(seed, i));
    try {
      save_image(generate_reference(refs[i].category, side, rng), refs[i].path);
    } catch (const Error& e) {
      failures[i] = e.what();
    }
  });
  for (const auto& f : failures) {
    if (!f.empty()) throw Error(ErrorCode::IOFailure, f);
  }
  return refs;
}

// ---- synthetic annotator ---------------------------------------------------

ImageStats image_stats(const Image& img) {
  const auto px = img.pixels();
  const std::size_t n = px.size() / 3;
  double sat = 0, warm = 0, luma = 0, luma2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = px[3 * i], g = px[3 * i + 1], b = px[3 * i + 2];
    sat += std::max({r, g, b}) - std::min({r, g, b});
    warm += r - b;
    const double l = 0.299 * r + 0.587 * g + 0.114 * b;
    luma += l;
    luma2 += l * l;
  }
  ImageStats s;
  s.saturation = sat / n;
  s.warmth = warm / n;
  s.brightness = luma / n;
  s.contrast = std::sqrt(std::max(0.0, luma2 / n - s.brightness * s.brightness));
  return s;
}

SyntheticAnnotator::SyntheticAnnotator(std::array<Weights, kNumCategories> weights, double epsilon)
    : weights_(weights), epsilon_(epsilon) {
  if (!(epsilon >= 0.0)) throw Error(ErrorCode::ConfigError, "epsilon must be >= 0");
}

SyntheticAnnotator::SyntheticAnnotator(UtilityFn utility, double epsilon) : fn_(std::move(utility)), epsilon_(epsilon) {
  if (!(epsilon >= 0.0)) throw Error(ErrorCode::ConfigError, "epsilon must be >= 0");
}

SyntheticAnnotator SyntheticAnnotator::standard(double epsilon) {
  // saturation, contrast, warmth, exposure, target brightness
  std::array<Weights, kNumCategories> w{{
      {0.5, 1.0, 1.0, 6.0, 0.50},    // animal
      {2.0, 0.5, 0.0, 4.0, 0.55},    // flora
      {0.5, 0.5, -2.0, 4.0, 0.50},   // landscape
      {-1.5, 2.0, 0.0, 4.0, 0.50},   // architecture
      {1.0, 0.3, 1.5, 6.0, 0.60},    // food_and_drink
      {-0.5, -1.5, 1.0, 6.0, 0.55},  // portrait
      {0.3, 1.5, -1.5, 3.0, 0.40},   // cityscape
      {-2.0, 0.5, 0.5, 4.0, 0.45},   // still_life
  }};
  return SyntheticAnnotator(w, epsilon);
}

double SyntheticAnnotator::utility(const Image& img, int category) const {
  if (category < 0 || category >= kNumCategories) {
    throw Error(ErrorCode::LabelOutOfRange, "category " + std::to_string(category));
  }
  if (fn_) return fn_(img, category);
  const auto s = image_stats(img);
  const auto& w = weights_[category];
  const double d = s.brightness - w.target_brightness;
  return w.saturation * s.saturation + w.contrast * s.contrast + w.warmth * s.warmth - w.exposure * d * d;
}

std::vector<LabelRecord> simulate_labels(const SyntheticAnnotator& oracle, const PairDesign& design,
                                         const ReferenceImage& ref, std::span<const Image> filtered, Rng& rng,
                                         std::string_view annotator_id, std::int64_t first_timestamp) {
  if (filtered.size() != static_cast<std::size_t>(kNumFilters)) {
    throw Error(ErrorCode::MissingFilteredImage,
                ref.id + ": " + std::to_string(filtered.size()) + " of 22 filtered images");
  }
  std::array<double, kNumFilters> util{};
  for (int i = 0; i < kNumFilters; ++i) {
    if (filtered[i].empty()) throw Error(ErrorCode::MissingFilteredImage, ref.id + "/" + std::string(FilterId(i).name()));
    util[i] = oracle.utility(filtered[i], ref.category);
  }
  std::vector<LabelRecord> out;
  out.reserve(design.edges.size());
  std::int64_t ts = first_timestamp;
  for (const auto& e : design.edges) {
    LabelRecord l;
    l.ref_id = ref.id;
    if (rng.bernoulli(0.5)) {
      l.a = e.a;
      l.b = e.b;
    } else {
      l.a = e.b;
      l.b = e.a;
    }
    const double d = util[l.a.index()] - util[l.b.index()];
    l.verdict = std::abs(d) < oracle.epsilon() ? Verdict::Equal : (d > 0 ? Verdict::Left : Verdict::Right);
    l.annotator_id = std::string(annotator_id);
    l.timestamp = ts++;
    out.push_back(std::move(l));
  }
  return out;
}

// ---- json ------------------------------------------------------------------

json to_json(const ReferenceImage& r) {
  return {{"id", r.id}, {"category", category_names()[r.category]}, {"path", r.path.generic_string()}};
}

json to_json(const FilteredImage& f) {
  return {{"ref_id", f.ref_id}, {"filter", f.filter.name()}, {"path", f.path.generic_string()}};
}

json to_json(const ReferencePair& p) {
  return {{"ref_id", p.ref_id}, {"a", p.edge.a.name()}, {"b", p.edge.b.name()}};
}

json to_json(const LabelRecord& l) {
  return {{"ref_id", l.ref_id},
          {"a", l.a.name()},
          {"b", l.b.name()},
          {"verdict", to_string(l.verdict)},
          {"annotator_id", l.annotator_id},
          {"timestamp", l.timestamp}};
}

json to_json(const FilterScore& s) {
  return {{"ref_id", s.ref_id}, {"filter", s.filter.name()}, {"score", s.score}};
}

namespace {

template <typename Fn>
auto parse_record(const json& j, const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("malformed ") + what + " record " + j.dump() + ": " + e.what());
  }
}

}  // namespace

ReferenceImage reference_from_json(const json& j) {
  return parse_record(j, "reference", [&] {
    return ReferenceImage{j.at("id").get<std::string>(), category_index(j.at("category").get<std::string>()),
                          fs::path(j.at("path").get<std::string>())};
  });
}

LabelRecord label_from_json(const json& j) {
  return parse_record(j, "label", [&] {
    return LabelRecord{j.at("ref_id").get<std::string>(),
                       filter_by_name(j.at("a").get<std::string>()),
                       filter_by_name(j.at("b").get<std::string>()),
                       parse_verdict(j.at("verdict").get<std::string>()),
                       j.value("annotator_id", std::string()),
                       j.value("timestamp", std::int64_t{0})};
  });
}

FilterScore score_from_json(const json& j) {
  return parse_record(j, "score", [&] {
    return FilterScore{j.at("ref_id").get<std::string>(), filter_by_name(j.at("filter").get<std::string>()),
                       j.at("score").get<int>()};
  });
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::vector<json> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::ConfigError, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const fs::path& path, std::span<const json> records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IOFailure, "cannot write " + tmp.string());
    for (const auto& r : records) out << r.dump() << '\n';
    if (!out.flush()) throw Error(ErrorCode::IOFailure, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IOFailure, "rename " + tmp.string() + ": " + ec.message());
}

void append_jsonl(const fs::path& path, const json& record) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error(ErrorCode::IOFailure, "cannot append to " + path.string());
  out << record.dump() << '\n';
  if (!out.flush()) throw Error(ErrorCode::IOFailure, "append failed: " + path.string());
}

std::vector<ReferenceImage> read_references(const fs::path& path) {
  std::vector<ReferenceImage> out;
  for (const auto& j : read_jsonl(path)) {
    auto r = reference_from_json(j);
    if (r.path.is_relative()) r.path = path.parent_path() / r.path;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<LabelRecord> read_labels(const fs::path& path) {
  std::vector<LabelRecord> out;
  for (const auto& j : read_jsonl(path)) out.push_back(label_from_json(j));
  return out;
}

}  // namespace filtrank
