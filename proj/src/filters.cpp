#include "filtrank/filters.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "filtrank/error.hpp"
#include "filter_catalog_data.hpp"

namespace filtrank {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kNumFilters> kNames = {
    "1977",     "Amaro",     "Apollo",  "Brannan",   "Earlybird", "Gotham",
    "Hefe",     "Hudson",    "Inkwell", "Lofi",      "LordKevin", "Mayfair",
    "Nashville", "Poprocket", "Rise",   "Sierra",    "Sutro",     "Toaster",
    "Valencia", "Walden",    "Willow",  "XProII"};

// Rec. 601 luma weights
constexpr float kLumaR = 0.299f;
constexpr float kLumaG = 0.587f;
constexpr float kLumaB = 0.114f;

inline float clamp01(float v) { return v > 0.0f ? (v < 1.0f ? v : 1.0f) : 0.0f; }

float eval_curve(const std::vector<std::array<float, 2>>& pts, float x) {
  if (x <= pts.front()[0]) return pts.front()[1];
  if (x >= pts.back()[0]) return pts.back()[1];
  auto hi = std::upper_bound(pts.begin(), pts.end(), x,
                             [](float v, const std::array<float, 2>& p) { return v < p[0]; });
  auto lo = hi - 1;
  const float t = (x - (*lo)[0]) / ((*hi)[0] - (*lo)[0]);
  return (*lo)[1] + t * ((*hi)[1] - (*lo)[1]);
}

struct Applier {
  Image& img;

  void operator()(const ToneCurve& s) const {
    auto px = img.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
      const auto c = static_cast<int>(i % Image::kChannels);
      const bool hit = s.channel == Channel::All || (s.channel == Channel::Red && c == 0) ||
                       (s.channel == Channel::Green && c == 1) ||
                       (s.channel == Channel::Blue && c == 2);
      if (hit) px[i] = clamp01(eval_curve(s.points, px[i]));
    }
  }

  void operator()(const Saturation& s) const {
    auto px = img.pixels();
    for (std::size_t i = 0; i < px.size(); i += 3) {
      const float luma = kLumaR * px[i] + kLumaG * px[i + 1] + kLumaB * px[i + 2];
      for (std::size_t c = 0; c < 3; ++c) px[i + c] = clamp01(luma + s.factor * (px[i + c] - luma));
    }
  }

  void operator()(const BrightnessContrast& s) const {
    for (float& v : img.pixels()) v = clamp01((v - 0.5f) * s.gain + 0.5f + s.offset);
  }

  void operator()(const Tint& s) const {
    auto px = img.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = clamp01(px[i] * s.multiplier[i % 3]);
  }

  // gain = 1 - strength * sin^2(pi/2 * t), t the normalized distance past `inner`
  void operator()(const Vignette& s) const {
    const double cx = 0.5 * (img.width() - 1);
    const double cy = 0.5 * (img.height() - 1);
    const double rmax = std::max(std::hypot(cx, cy), 1e-12);
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        const double d = std::hypot(x - cx, y - cy) / rmax;
        double gain = 1.0;
        if (d > s.inner) {
          const double t = std::min(1.0, (d - s.inner) / std::max(1e-12, 1.0 - s.inner));
          const double sn = std::sin(0.5 * std::numbers::pi * t);
          gain = 1.0 - s.strength * sn * sn;
        }
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = clamp01(static_cast<float>(img.at(x, y, c) * gain));
      }
    }
  }

  void operator()(const Grayscale&) const {
    auto px = img.pixels();
    for (std::size_t i = 0; i < px.size(); i += 3) {
      const float luma = clamp01(kLumaR * px[i] + kLumaG * px[i + 1] + kLumaB * px[i + 2]);
      px[i] = px[i + 1] = px[i + 2] = luma;
    }
  }
};

Channel parse_channel(const std::string& s) {
  if (s == "all") return Channel::All;
  if (s == "red") return Channel::Red;
  if (s == "green") return Channel::Green;
  if (s == "blue") return Channel::Blue;
  throw Error(ErrorCode::CatalogError, "unknown channel '" + s + "'");
}

std::string_view channel_name(Channel c) {
  switch (c) {
    case Channel::All: return "all";
    case Channel::Red: return "red";
    case Channel::Green: return "green";
    case Channel::Blue: return "blue";
  }
  return "all";
}

Primitive parse_step(const json& j) {
  const std::string op = j.at("op").get<std::string>();
  if (op == "tone_curve") {
    ToneCurve t;
    t.channel = parse_channel(j.value("channel", std::string("all")));
    for (const auto& p : j.at("points")) t.points.push_back({p.at(0).get<float>(), p.at(1).get<float>()});
    if (t.points.size() < 2) throw Error(ErrorCode::CatalogError, "tone curve needs >= 2 points");
    for (std::size_t i = 1; i < t.points.size(); ++i) {
      if (!(t.points[i][0] > t.points[i - 1][0])) {
        throw Error(ErrorCode::CatalogError, "tone curve x must be strictly increasing");
      }
    }
    for (std::size_t i = 1; i < t.points.size(); ++i) {
      if (t.points[i][1] < t.points[i - 1][1]) {
        throw Error(ErrorCode::CatalogError, "tone curve must be monotone");
      }
    }
    return t;
  }
  if (op == "saturation") {
    Saturation s{j.at("factor").get<float>()};
    if (s.factor < 0.0f) throw Error(ErrorCode::CatalogError, "saturation factor must be >= 0");
    return s;
  }
  if (op == "brightness_contrast") {
    return BrightnessContrast{j.value("offset", 0.0f), j.value("gain", 1.0f)};
  }
  if (op == "tint") {
    Tint t;
    const auto& m = j.at("multiplier");
    for (int c = 0; c < 3; ++c) t.multiplier[c] = m.at(c).get<float>();
    return t;
  }
  if (op == "vignette") {
    Vignette v{j.at("strength").get<float>(), j.value("inner", 0.0f)};
    if (v.strength < 0.0f || v.strength > 1.0f || v.inner < 0.0f || v.inner >= 1.0f) {
      throw Error(ErrorCode::CatalogError, "vignette strength/inner out of range");
    }
    return v;
  }
  if (op == "grayscale") return Grayscale{};
  throw Error(ErrorCode::CatalogError, "unknown primitive '" + op + "'");
}

json step_to_json(const Primitive& p) {
  return std::visit(
      [](const auto& s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ToneCurve>) {
          json pts = json::array();
          for (const auto& pt : s.points) pts.push_back({pt[0], pt[1]});
          return {{"op", "tone_curve"}, {"channel", channel_name(s.channel)}, {"points", pts}};
        } else if constexpr (std::is_same_v<T, Saturation>) {
          return {{"op", "saturation"}, {"factor", s.factor}};
        } else if constexpr (std::is_same_v<T, BrightnessContrast>) {
          return {{"op", "brightness_contrast"}, {"offset", s.offset}, {"gain", s.gain}};
        } else if constexpr (std::is_same_v<T, Tint>) {
          return {{"op", "tint"}, {"multiplier", s.multiplier}};
        } else if constexpr (std::is_same_v<T, Vignette>) {
          return {{"op", "vignette"}, {"strength", s.strength}, {"inner", s.inner}};
        } else {
          return {{"op", "grayscale"}};
        }
      },
      p);
}

}  // namespace

FilterId::FilterId(int index) : index_(index) {
  if (index < 0 || index >= kNumFilters) {
    throw Error(ErrorCode::UnknownFilter, "filter index " + std::to_string(index));
  }
}

std::string_view FilterId::name() const { return kNames[index_]; }

const std::array<std::string_view, kNumFilters>& filter_names() { return kNames; }

std::vector<FilterId> filter_bank() {
  std::vector<FilterId> out;
  out.reserve(kNumFilters);
  for (int i = 0; i < kNumFilters; ++i) out.emplace_back(i);
  return out;
}

FilterId filter_by_name(std::string_view name) {
  const auto it = std::find(kNames.begin(), kNames.end(), name);
  if (it == kNames.end()) throw Error(ErrorCode::UnknownFilter, std::string(name));
  return FilterId(static_cast<int>(it - kNames.begin()));
}

void apply_primitive(Image& img, const Primitive& step) { std::visit(Applier{img}, step); }

const FilterCatalog& FilterCatalog::builtin() {
  static const FilterCatalog catalog = parse(detail::kBuiltinFilterCatalog);
  return catalog;
}

FilterCatalog FilterCatalog::parse(std::string_view text) {
  FilterCatalog cat;
  std::array<bool, kNumFilters> seen{};
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::CatalogError, "line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!header) {
      if (j.value("schema", "") != "filtrank-filter-catalog") {
        throw Error(ErrorCode::CatalogError, "missing catalog header");
      }
      if (j.value("version", 0) != kVersion) {
        throw Error(ErrorCode::CatalogError, "unsupported catalog version");
      }
      header = true;
      continue;
    }
    try {
      const FilterId id = filter_by_name(j.at("name").get<std::string>());
      if (seen[id.index()]) throw Error(ErrorCode::CatalogError, "duplicate recipe " + std::string(id.name()));
      seen[id.index()] = true;
      FilterRecipe r;
      r.name = std::string(id.name());
      r.provenance = j.value("provenance", "");
      for (const auto& s : j.at("steps")) r.steps.push_back(parse_step(s));
      cat.recipes_[id.index()] = std::move(r);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::CatalogError, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw Error(ErrorCode::CatalogError, "empty catalog");
  for (int i = 0; i < kNumFilters; ++i) {
    if (!seen[i]) throw Error(ErrorCode::CatalogError, "missing recipe " + std::string(kNames[i]));
  }
  return cat;
}

FilterCatalog FilterCatalog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string FilterCatalog::serialize() const {
  std::string out = json{{"schema", "filtrank-filter-catalog"}, {"version", kVersion}}.dump() + "\n";
  for (const auto& r : recipes_) {
    json steps = json::array();
    for (const auto& s : r.steps) steps.push_back(step_to_json(s));
    out += json{{"name", r.name}, {"provenance", r.provenance}, {"steps", steps}}.dump() + "\n";
  }
  return out;
}

Image FilterCatalog::apply(const Image& img, FilterId id) const {
  Image out = img;
  for (const auto& step : recipes_[id.index()].steps) apply_primitive(out, step);
  return out;
}

Image apply_filter(const Image& img, FilterId id) { return FilterCatalog::builtin().apply(img, id); }

Image test_chart(int side) {
  Image img(side, side);
  const int band = std::max(1, side / 4);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const float u = static_cast<float>(x) / static_cast<float>(std::max(1, side - 1));
      const float v = static_cast<float>(y) / static_cast<float>(std::max(1, side - 1));
      float r, g, b;
      if (y < band) {
        r = g = b = u;  // gray ramp
      } else if (y < 3 * band) {
        // hue sweep, brightness varying down the band
        const float h = u * 6.0f;
        const float k = 0.35f + 0.6f * (v - 0.25f) * 2.0f;
        r = std::clamp(std::fabs(h - 3.0f) - 1.0f, 0.0f, 1.0f) * k;
        g = std::clamp(2.0f - std::fabs(h - 2.0f), 0.0f, 1.0f) * k;
        b = std::clamp(2.0f - std::fabs(h - 4.0f), 0.0f, 1.0f) * k;
      } else {
        // skin, foliage, sky, neutral patches
        static constexpr float patches[4][3] = {
            {0.85f, 0.62f, 0.50f}, {0.25f, 0.55f, 0.20f}, {0.40f, 0.60f, 0.90f}, {0.50f, 0.50f, 0.50f}};
        const int p = std::min(3, x * 4 / side);
        r = patches[p][0];
        g = patches[p][1];
        b = patches[p][2];
      }
      img.at(x, y, 0) = r;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = b;
    }
  }
  img.clamp();
  return img;
}

}  // namespace filtrank
