#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "filtrank/dataset.hpp"
#include "filtrank/trainer.hpp"

namespace filtrank {

struct RankedFilter {
  FilterId filter;
  double score = 0.0;
};

struct FilterRanking {
  std::string ref_id;
  std::vector<RankedFilter> entries;  // 22, descending score, ties by index

  std::vector<FilterId> top(std::size_t k) const;
};

/// Sorts precomputed per-filter scores (indexed by filter) into a ranking.
FilterRanking ranking_from_scores(std::string ref_id, std::span<const double> scores);

/// Applies all 22 filters to `ref`, center-crops to the model input and
/// ranks by the mode's score. `ref` should be at the profile's resize side.
/// Throws ModelModeMismatch when `mode` does not match the model's heads.
FilterRanking rank_filters(const ColumnModel& m, TrainMode mode, const Image& ref, std::string ref_id = {},
                           const FilterCatalog& catalog = FilterCatalog::builtin());
FilterRanking rank_filters(const TrainedModel& m, const Image& ref, std::string ref_id = {});

/// Number of filter pairs whose order in `r` disagrees with the pairwise
/// decision D(a, b) = score(a) - score(b) >= 0 (ties resolved by index),
/// checked over all 231 pairs.
int tournament_disagreements(const FilterRanking& r);

struct TopKResult {
  double accuracy = 0.0;
  std::size_t evaluated = 0;
  std::size_t excluded_empty = 0;  // refs with empty ground truth
};

/// Fraction of refs whose top-K intersects ground truth. Refs with empty
/// ground truth are excluded; a ranking without a ground-truth entry throws
/// MissingGroundTruth.
TopKResult topk_accuracy(std::span<const FilterRanking> rankings,
                         const std::map<std::string, std::vector<FilterId>>& ground_truth, std::size_t k);

/// Monte-Carlo top-K accuracy of a uniformly random ranking.
double random_baseline(std::span<const std::vector<FilterId>> ground_truth, std::size_t k, std::size_t trials,
                       Rng& rng);

struct PreferenceHistogram {
  std::string group;  // category name or "all"
  std::size_t refs = 0;
  std::array<double, kNumFilters> ratio{};
};

/// Per-filter ratio of refs where the filter is ground truth.
std::vector<PreferenceHistogram> ground_truth_distribution(
    std::span<const ReferenceImage> refs, const std::map<std::string, std::vector<FilterId>>& ground_truth,
    bool by_category);

/// Per-filter ratio of refs where the filter is ranked first.
std::vector<PreferenceHistogram> top1_distribution(std::span<const ReferenceImage> refs,
                                                   std::span<const FilterRanking> rankings, bool by_category);

struct EvalReport {
  std::string model_name;
  std::array<TopKResult, 3> topk{};  // K = 1, 3, 5
  std::array<double, 3> random{};    // Monte-Carlo baselines for the same K
  std::map<std::string, std::array<double, 3>> per_category;
  std::size_t tournament_disagreements = 0;
  std::vector<PreferenceHistogram> gt_histogram;
  std::vector<PreferenceHistogram> predicted_histogram;
};

struct EvalOptions {
  std::size_t random_trials = 10000;
  std::uint64_t seed = 0;
  bool by_category = true;
};

/// Ranks every test ref, scores top-1/3/5 and collects the histograms.
/// `ref_images` are aligned with `refs`.
EvalReport evaluate(const TrainedModel& m, std::span<const ReferenceImage> refs, std::span<const Image> ref_images,
                    const std::map<std::string, std::vector<FilterId>>& ground_truth, const EvalOptions& opt = {},
                    std::string model_name = {});

nlohmann::json to_json(const EvalReport& r);
nlohmann::json to_json(const FilterRanking& r);
/// Inverse of to_json(EvalReport); throws ConfigError on malformed input.
EvalReport eval_report_from_json(const nlohmann::json& j);

/// Plain-text table in the layout "Method | Top-1 | Top-3 | Top-5".
std::string format_table(std::span<const EvalReport> reports);

/// Tab-separated histogram columns: group, filter, ground_truth, predicted.
std::string format_histograms(const EvalReport& r);

}  // namespace filtrank
