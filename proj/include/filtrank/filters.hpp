#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "filtrank/image.hpp"

namespace filtrank {

inline constexpr int kNumFilters = 22;

/// Index into the fixed 22-filter bank. Order is the catalog/index order.
class FilterId {
 public:
  constexpr FilterId() = default;
  explicit FilterId(int index);

  int index() const noexcept { return index_; }
  std::string_view name() const;

  friend auto operator<=>(const FilterId&, const FilterId&) = default;

 private:
  int index_ = 0;
};

const std::array<std::string_view, kNumFilters>& filter_names();

/// All 22 filters in index order.
std::vector<FilterId> filter_bank();

/// Throws UnknownFilter for names outside the bank.
FilterId filter_by_name(std::string_view name);

enum class Channel { All, Red, Green, Blue };

// Recipe primitives. Each one is pixel-local except Vignette.
struct ToneCurve {
  Channel channel = Channel::All;
  std::vector<std::array<float, 2>> points;  // strictly increasing in x
};
struct Saturation {
  float factor = 1.0f;
};
struct BrightnessContrast {
  float offset = 0.0f;
  float gain = 1.0f;
};
struct Tint {
  std::array<float, 3> multiplier{1.0f, 1.0f, 1.0f};
};
struct Vignette {
  float strength = 0.0f;  // gain at the far corner is 1 - strength
  float inner = 0.0f;     // normalized radius where falloff starts
};
struct Grayscale {};

using Primitive = std::variant<ToneCurve, Saturation, BrightnessContrast, Tint, Vignette, Grayscale>;

struct FilterRecipe {
  std::string name;
  std::string provenance;
  std::vector<Primitive> steps;
};

/// Applies one primitive in place. Clamps the result to [0, 1].
void apply_primitive(Image& img, const Primitive& step);

/// Versioned line-delimited recipe catalog.
///
/// Line 1 is a header record {"schema": "filtrank-filter-catalog", "version": 1};
/// every following line is one recipe. The catalog must define exactly the 22
/// bank names.
class FilterCatalog {
 public:
  static constexpr int kVersion = 1;

  static const FilterCatalog& builtin();
  static FilterCatalog parse(std::string_view text);
  static FilterCatalog load(const std::filesystem::path& path);

  const FilterRecipe& recipe(FilterId id) const { return recipes_[id.index()]; }
  Image apply(const Image& img, FilterId id) const;

  std::string serialize() const;

 private:
  std::array<FilterRecipe, kNumFilters> recipes_;
};

/// Apply a bank filter using the built-in catalog.
Image apply_filter(const Image& img, FilterId id);

/// Deterministic 64x64 chart: hue sweep, gray ramp, and saturated patches.
Image test_chart(int side = 64);

}  // namespace filtrank
