#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "filtrank/embedding.hpp"
#include "filtrank/filters.hpp"
#include "filtrank/image.hpp"
#include "filtrank/rng.hpp"

namespace filtrank {

inline constexpr int kPairsPerReference = 33;
inline constexpr int kPairsPerFilter = 3;

const std::array<std::string_view, kNumCategories>& category_names();
int category_index(std::string_view name);

struct ReferenceImage {
  std::string id;
  int category = 0;
  std::filesystem::path path;

  friend bool operator==(const ReferenceImage&, const ReferenceImage&) = default;
};

struct FilteredImage {
  std::string ref_id;
  FilterId filter;
  std::filesystem::path path;
};

struct PairEdge {
  FilterId a;
  FilterId b;
};

struct PairDesign {
  std::vector<PairEdge> edges;
};

/// Circulant graph on the 22 filters with offsets {1, 11}: filter i meets
/// i-1, i+1 and i+11 (mod 22). 3-regular, 33 edges.
PairDesign pair_design();

/// Throws InvalidDesign unless the design is a simple 3-regular graph with
/// exactly 33 edges over the 22 filters.
void validate_design(const PairDesign& design);

PairDesign load_design(const std::filesystem::path& path);
std::string serialize_design(const PairDesign& design);

enum class Verdict { Left, Right, Equal, Error };
std::string_view to_string(Verdict v);
Verdict parse_verdict(std::string_view s);

/// One pairwise vote. `a` was shown on the left, `b` on the right.
struct LabelRecord {
  std::string ref_id;
  FilterId a;
  FilterId b;
  Verdict verdict = Verdict::Equal;
  std::string annotator_id;
  std::int64_t timestamp = 0;

  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

struct FilterScore {
  std::string ref_id;
  FilterId filter;
  int score = 0;  // in [-3, 3]

  friend bool operator==(const FilterScore&, const FilterScore&) = default;
};

/// +1 per win, -1 per loss, 0 per "equal", summed over each filter's three
/// design pairs. Needs exactly one non-error label per design edge.
std::vector<FilterScore> score_images(std::span<const LabelRecord> labels, const PairDesign& design = pair_design());

/// Scores for every reference in a label log, keyed by ref id.
std::map<std::string, std::vector<FilterScore>> score_log(std::span<const LabelRecord> labels,
                                                          const PairDesign& design = pair_design());

/// Filters with score +3. May be empty or plural.
std::vector<FilterId> ground_truth(std::span<const FilterScore> scores);

/// All (ref, filter) entries; paths follow <dir>/<ref_id>/<filter>.png.
std::vector<FilteredImage> filtered_manifest(std::span<const ReferenceImage> refs,
                                             const std::filesystem::path& dir = "filtered");

struct ReferencePair {
  std::string ref_id;
  PairEdge edge;
};
std::vector<ReferencePair> pair_manifest(std::span<const ReferenceImage> refs, const PairDesign& design = pair_design());

struct GenerationResult {
  std::vector<FilteredImage> images;
  std::vector<std::string> failures;  // one message per unreadable/unwritable image
};

/// Applies every filter to every reference image on disk and writes PNGs
/// under `out_dir`. Per-image IO failures are collected, not thrown.
GenerationResult generate_filtered(std::span<const ReferenceImage> refs, const std::filesystem::path& out_dir,
                                   const FilterCatalog& catalog = FilterCatalog::builtin());

struct Split {
  std::vector<ReferenceImage> train;
  std::vector<ReferenceImage> test;
};

/// Category-stratified split: floor(n_c * test_parts / (train_parts + test_parts))
/// test references per category, chosen by a seeded shuffle.
Split split_references(std::span<const ReferenceImage> refs, Rng& rng, int train_parts = 7, int test_parts = 1);

/// Procedural stand-in for a photo of the given category.
Image generate_reference(int category, int side, Rng& rng);

/// Writes `per_category` procedural references per category as
/// <dir>/ref-NNNNN.png. Image i is drawn from Rng(Rng::mix(seed, i)).
std::vector<ReferenceImage> generate_references(const std::filesystem::path& dir, int per_category, int side,
                                                std::uint64_t seed);

struct ImageStats {
  double saturation = 0.0;  // mean per-pixel chroma (max - min)
  double contrast = 0.0;    // RMS of luma
  double warmth = 0.0;      // mean (R - B)
  double brightness = 0.0;  // mean luma
};
ImageStats image_stats(const Image& img);

/// Simulated annotator with per-category preferences over image statistics.
///
/// utility = w_sat*saturation + w_con*contrast + w_warm*warmth
///           - w_exp*(brightness - target)^2
/// A pair whose utilities differ by less than epsilon is voted "equal".
class SyntheticAnnotator {
 public:
  struct Weights {
    double saturation = 0.0;
    double contrast = 0.0;
    double warmth = 0.0;
    double exposure = 0.0;
    double target_brightness = 0.5;
  };
  using UtilityFn = std::function<double(const Image&, int category)>;

  SyntheticAnnotator(std::array<Weights, kNumCategories> weights, double epsilon);
  SyntheticAnnotator(UtilityFn utility, double epsilon);

  /// Category-dependent preferences used for desk-scale experiments.
  static SyntheticAnnotator standard(double epsilon = 0.0);

  double utility(const Image& img, int category) const;
  double epsilon() const noexcept { return epsilon_; }

 private:
  std::array<Weights, kNumCategories> weights_{};
  UtilityFn fn_;
  double epsilon_;
};

/// One vote per design edge; the left/right presentation order is drawn from
/// `rng`. `filtered` holds the 22 images in filter index order.
std::vector<LabelRecord> simulate_labels(const SyntheticAnnotator& oracle, const PairDesign& design,
                                         const ReferenceImage& ref, std::span<const Image> filtered, Rng& rng,
                                         std::string_view annotator_id = "sim", std::int64_t first_timestamp = 0);

// Line-delimited manifests. Field names are stable; see README.
nlohmann::json to_json(const ReferenceImage& r);
nlohmann::json to_json(const FilteredImage& f);
nlohmann::json to_json(const ReferencePair& p);
nlohmann::json to_json(const LabelRecord& l);
nlohmann::json to_json(const FilterScore& s);

ReferenceImage reference_from_json(const nlohmann::json& j);
LabelRecord label_from_json(const nlohmann::json& j);
FilterScore score_from_json(const nlohmann::json& j);

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, std::span<const nlohmann::json> records);
void append_jsonl(const std::filesystem::path& path, const nlohmann::json& record);

std::vector<ReferenceImage> read_references(const std::filesystem::path& path);
std::vector<LabelRecord> read_labels(const std::filesystem::path& path);

}  // namespace filtrank
