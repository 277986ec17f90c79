#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "filtrank/dataset.hpp"
#include "filtrank/filters.hpp"
#include "filtrank/graph.hpp"
#include "filtrank/models.hpp"

namespace filtrank {

enum class TrainMode { Binary, PairComp, PairCompCate };
std::string_view to_string(TrainMode m);
TrainMode parse_mode(std::string_view s);

struct TrainConfig {
  TrainMode mode = TrainMode::PairComp;
  Variant variant = Variant::RapidReduced;
  std::string profile = "desk";
  std::optional<int> spp_levels;
  double learning_rate = 0.01;
  double lr_decay = 0.1;  // applied at each third of training
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double grad_clip = 10.0;  // global L2 norm; <= 0 disables clipping
  int batch_size = 16;
  int epochs = 3;
  std::uint64_t seed = 1;
  double lambda_cate = 1.0;
  int cate_warmup_steps = 0;  // paircomp_cate: first steps train the category head only
  double init_scale = 1.0;
  int max_pairs_per_epoch = 0;  // 0 = all
  bool augment = true;          // false: center crop, no flip
  std::string data_dir;         // used by the CLI only

  /// Throws ConfigError on non-positive sizes/rates or incompatible settings.
  void validate() const;
  InputProfile input() const { return input_profile(profile, variant); }
  ModelConfig model_config() const;
};

/// key = value lines; '#' starts a comment. Unknown keys are ConfigError.
TrainConfig parse_train_config(std::string_view text);
TrainConfig load_train_config(const std::filesystem::path& path);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Supplies reference and filtered images at the profile's resize side.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual Image reference(std::size_t ref) const = 0;
  virtual Image filtered(std::size_t ref, FilterId f) const = 0;
};

/// Reference images held in memory; filtered variants computed on demand.
class MemoryImageSource final : public ImageSource {
 public:
  MemoryImageSource(std::vector<Image> refs, int resize_side, const FilterCatalog& catalog = FilterCatalog::builtin());
  Image reference(std::size_t ref) const override { return refs_.at(ref); }
  Image filtered(std::size_t ref, FilterId f) const override;

 private:
  std::vector<Image> refs_;
  const FilterCatalog* catalog_;
};

/// Reads <filtered_dir>/<ref_id>/<filter>.png (as written by generate_filtered).
class DiskImageSource final : public ImageSource {
 public:
  DiskImageSource(std::vector<ReferenceImage> refs, std::filesystem::path filtered_dir, int resize_side);
  Image reference(std::size_t ref) const override;
  Image filtered(std::size_t ref, FilterId f) const override;

 private:
  std::vector<ReferenceImage> refs_;
  std::filesystem::path dir_;
  int side_;
};

/// One preference: `left` was shown left; sign = +1 when it was preferred.
struct PairExample {
  std::size_t ref = 0;
  FilterId left;
  FilterId right;
  float sign = 1.0f;
};

struct QualityExample {
  std::size_t ref = 0;
  FilterId filter;
  int label = 0;  // 1 = high quality
};

struct TrainingData {
  std::vector<ReferenceImage> refs;
  std::shared_ptr<const ImageSource> images;
  std::vector<PairExample> pairs;
  std::vector<QualityExample> quality;
  std::vector<PairExample> validation;  // held-out pairs for the metrics file
  std::set<std::string, std::less<>> test_ids;
};

/// Preference pairs from labels; "equal" votes are dropped. Throws
/// ErrorVerdictPresent on "error" votes and ConfigError on unknown refs.
std::vector<PairExample> pairs_from_labels(std::span<const ReferenceImage> refs, std::span<const LabelRecord> labels);

/// Binary-baseline labels from filter scores: score > 0 high, score < 0 low,
/// zero scores skipped.
std::vector<QualityExample> quality_from_scores(std::span<const ReferenceImage> refs,
                                                const std::map<std::string, std::vector<FilterScore>>& scores);

/// Training stream over `refs`: labels of refs in `test_ids` become held-out
/// validation pairs, the rest become training pairs (binary mode: quality
/// labels from the training refs' scores instead).
TrainingData make_training_data(std::vector<ReferenceImage> refs, std::shared_ptr<const ImageSource> images,
                                std::span<const LabelRecord> labels, std::set<std::string, std::less<>> test_ids,
                                TrainMode mode);

struct SgdHyper {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double grad_clip = 10.0;
};

/// v <- momentum*v + g' + weight_decay*w ; w <- w - lr*v, where g' is the
/// gradient scaled so its global L2 norm is at most grad_clip. Returns the
/// pre-clip gradient norm.
double sgd_step(ad::ParameterStore<float>& params, ad::ParameterStore<float>& velocity, const SgdHyper& h);

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
  std::optional<double> pair_accuracy;  // on validation pairs
  double seconds = 0.0;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, TrainingData data);

  /// Restores parameters, velocity and position from a checkpoint written by
  /// save(). The config must match the one stored in the checkpoint.
  static Trainer resume(const std::filesystem::path& ckpt, TrainingData data);

  /// One mini-batch update; returns the batch loss before the update.
  double step();
  /// Runs to the end of the current epoch.
  EpochMetrics run_epoch();
  /// Runs all remaining epochs, calling `on_epoch` after each.
  void run(const std::function<void(const EpochMetrics&)>& on_epoch = {});

  bool finished() const noexcept { return epoch_ >= cfg_.epochs; }
  int epoch() const noexcept { return epoch_; }
  std::int64_t global_step() const noexcept { return step_; }
  std::size_t batches_per_epoch() const;
  double current_learning_rate() const;

  const TrainConfig& config() const noexcept { return cfg_; }
  const ColumnModel& model() const noexcept { return *model_; }
  ColumnModel& model() noexcept { return *model_; }
  const ad::ParameterStore<float>& velocity() const noexcept { return velocity_; }
  const std::vector<EpochMetrics>& history() const noexcept { return history_; }

  /// Validation pair accuracy: fraction of pairs ranked the labeled way.
  std::optional<double> validation_accuracy() const;

  std::vector<std::uint8_t> checkpoint_bytes() const;
  void save(const std::filesystem::path& path) const;

 private:
  void check_leakage() const;
  std::vector<std::size_t> epoch_order(int epoch) const;
  std::size_t epoch_size() const;
  void build_graph();
  double loss_on_batch(std::span<const std::size_t> batch, int epoch, std::size_t batch_index);

  TrainConfig cfg_;
  TrainingData data_;
  std::unique_ptr<ColumnModel> model_;  // heap-held so graph_ survives moves
  ad::ParameterStore<float> velocity_;
  std::unique_ptr<ad::Graph<float>> graph_;
  ad::NodeId loss_ = -1;
  std::unique_ptr<ad::Graph<float>> warmup_graph_;  // category-only loss
  ad::NodeId warmup_loss_ = -1;
  int epoch_ = 0;
  std::size_t batch_ = 0;  // next batch within epoch_
  std::int64_t step_ = 0;
  std::vector<std::size_t> order_;
  int order_epoch_ = -1;
  double epoch_loss_sum_ = 0.0;
  std::size_t epoch_batches_ = 0;
  double seconds_ = 0.0;
  std::vector<EpochMetrics> history_;
};

/// Per-image ranking scores: ||f||^2 (paircomp), fused ||f||^2 against `ref`
/// (paircomp_cate) or P(high quality) (binary). Images must be input-sized.
std::vector<double> model_scores(const ColumnModel& m, TrainMode mode, std::span<const Image> images,
                                 const Image* ref = nullptr);

/// A trained model plus the settings needed to run it.
struct TrainedModel {
  TrainMode mode = TrainMode::PairComp;
  InputProfile profile;
  ColumnModel model;
  TrainConfig config;
};

TrainedModel load_trained_model(const std::filesystem::path& ckpt);
TrainedModel trained_model_from_bytes(const std::vector<std::uint8_t>& bytes);

}  // namespace filtrank
