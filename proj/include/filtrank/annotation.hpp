#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "filtrank/dataset.hpp"
#include "filtrank/rng.hpp"

namespace filtrank {

inline constexpr int kUniqueQuestions = 9;
inline constexpr int kHitQuestions = kUniqueQuestions + 1;

struct Question {
  std::string ref_id;
  FilterId left;
  FilterId right;

  friend bool operator==(const Question&, const Question&) = default;
};

struct Hit {
  std::string hit_id;
  std::array<Question, kHitQuestions> questions;
  int math_a = 0;
  int math_b = 0;
  int duplicate_index = 0;  // never sent to clients
  int original_index = 0;   // question the duplicate mirrors
  std::array<bool, kHitQuestions> filler{};  // padding at the queue tail; never recorded
};

struct Submission {
  std::string hit_id;
  std::vector<std::optional<Verdict>> answers;  // nullopt = unanswered
  int math_answer = 0;
  std::string annotator_id;
};

enum class RejectReason { Incomplete, TooManyEqual, DuplicateInconsistent, MathFailed };
std::string_view to_string(RejectReason r);

struct ValidationResult {
  bool accepted = false;
  std::vector<RejectReason> reasons;  // empty iff accepted
};

/// Takes 9 pairs from the front of `pending` and builds a HIT: each pair's
/// left/right order is drawn, one pair is repeated order-swapped at a uniform
/// position among the 10 slots, and a math question a+b with a, b in [1, 20]
/// is attached. Throws InsufficientPendingPairs (queue untouched).
Hit build_hit(std::deque<ReferencePair>& pending, Rng& rng, std::string hit_id);

/// The three quality-control checks plus the math check. Equal votes are
/// counted over the 9 unique questions; a duplicate or original answered
/// "error" is not judged for consistency.
ValidationResult validate_submission(const Hit& hit, const Submission& sub);

/// Labels for the unique, non-filler questions (duplicate discarded), timestamps
/// first_timestamp, first_timestamp+1, ...
std::vector<LabelRecord> hit_labels(const Hit& hit, const Submission& sub, std::int64_t first_timestamp);

/// Client view: questions and math operands, no duplicate mapping.
nlohmann::json hit_to_client_json(const Hit& hit);
/// Parses {"hit_id", "answers": [verdict|null...], "math_answer", "annotator_id"}.
Submission submission_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ValidationResult& r);

struct Progress {
  std::size_t pending = 0;      // waiting to be put in a HIT
  std::size_t checked_out = 0;  // in open HITs
  std::size_t labeled = 0;      // pairs with an accepted label
  std::size_t accepted_hits = 0;
  std::size_t rejected_hits = 0;
};
nlohmann::json to_json(const Progress& p);

/// Thread-safe collection state over a data directory:
///   labels.jsonl  append-only accepted label log
///   queue.jsonl   pending-pair snapshot, replaced by atomic rename
/// On start the pending set is every design pair of every reference minus
/// the pairs already in the label log, in snapshot order where available.
class AnnotationService {
 public:
  struct Options {
    std::filesystem::path data_dir;
    std::uint64_t seed = 0;
    /// Rejected pairs are not offered again to the annotator who failed them.
    bool require_new_annotator = false;
  };

  AnnotationService(std::vector<ReferenceImage> refs, Options opt);

  /// Opens a HIT for `annotator_id`; throws InsufficientPendingPairs.
  Hit open_hit(std::string_view annotator_id = {});
  /// Validates against the open HIT, records or re-queues, closes the HIT.
  /// Throws UnknownHit / AlreadyClosed.
  ValidationResult submit(const Submission& sub);

  Progress progress() const;
  std::vector<LabelRecord> labels() const;
  const std::vector<ReferenceImage>& references() const noexcept { return refs_; }
  /// Rewrites queue.jsonl (pending plus checked-out pairs).
  void compact() const;

 private:
  struct Pending {
    ReferencePair pair;
    std::set<std::string, std::less<>> excluded;
  };
  void compact_locked() const;

  std::vector<ReferenceImage> refs_;
  Options opt_;
  mutable std::mutex mu_;
  Rng rng_;
  std::deque<Pending> pending_;
  std::map<std::string, std::pair<Hit, std::vector<Pending>>, std::less<>> open_;
  std::set<std::string, std::less<>> closed_;
  std::vector<LabelRecord> labels_;
  std::uint64_t next_hit_ = 1;
  std::size_t accepted_ = 0;
  std::size_t rejected_ = 0;
  static constexpr int kCompactEvery = 64;
  int since_compact_ = 0;
};

}  // namespace filtrank
