#include "filtrank/annotation.hpp"

#include <algorithm>
#include <tuple>

#include "filtrank/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace filtrank {

std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::Incomplete: return "Incomplete";
    case RejectReason::TooManyEqual: return "TooManyEqual";
    case RejectReason::DuplicateInconsistent: return "DuplicateInconsistent";
    case RejectReason::MathFailed: return "MathFailed";
  }
  return "?";
}

Hit build_hit(std::deque<ReferencePair>& pending, Rng& rng, std::string hit_id) {
  if (pending.size() < static_cast<std::size_t>(kUniqueQuestions)) {
    throw Error(ErrorCode::InsufficientPendingPairs,
                std::to_string(pending.size()) + " pending, need " + std::to_string(kUniqueQuestions));
  }
  std::vector<Question> unique;
  for (int i = 0; i < kUniqueQuestions; ++i) {
    const ReferencePair p = pending.front();
    pending.pop_front();
    if (rng.bernoulli(0.5)) unique.push_back({p.ref_id, p.edge.a, p.edge.b});
    else unique.push_back({p.ref_id, p.edge.b, p.edge.a});
  }
  const int orig = static_cast<int>(rng.uniform_int(0, kUniqueQuestions - 1));
  const int dup = static_cast<int>(rng.uniform_int(0, kHitQuestions - 1));

  Hit h;
  h.hit_id = std::move(hit_id);
  const Question swapped{unique[orig].ref_id, unique[orig].right, unique[orig].left};
  for (int slot = 0, u = 0; slot < kHitQuestions; ++slot) {
    if (slot == dup) {
      h.questions[slot] = swapped;
    } else {
      if (u == orig) h.original_index = slot;
      h.questions[slot] = unique[u++];
    }
  }
  h.duplicate_index = dup;
  h.math_a = static_cast<int>(rng.uniform_int(1, 20));
  h.math_b = static_cast<int>(rng.uniform_int(1, 20));
  return h;
}

namespace {

Verdict mirrored(Verdict v) {
  if (v == Verdict::Left) return Verdict::Right;
  if (v == Verdict::Right) return Verdict::Left;
  return v;
}

}  // namespace

ValidationResult validate_submission(const Hit& hit, const Submission& sub) {
  ValidationResult r;
  const bool complete = sub.answers.size() == static_cast<std::size_t>(kHitQuestions) &&
                        std::all_of(sub.answers.begin(), sub.answers.end(), [](const auto& a) { return a.has_value(); });
  if (!complete) r.reasons.push_back(RejectReason::Incomplete);

  int equal = 0;
  for (std::size_t i = 0; i < sub.answers.size() && i < static_cast<std::size_t>(kHitQuestions); ++i) {
    if (static_cast<int>(i) != hit.duplicate_index && sub.answers[i] == Verdict::Equal) ++equal;
  }
  if (equal > 1) r.reasons.push_back(RejectReason::TooManyEqual);

  if (complete) {
    const Verdict o = *sub.answers[hit.original_index];
    const Verdict d = *sub.answers[hit.duplicate_index];
    if (o != Verdict::Error && d != Verdict::Error && mirrored(o) != d) {
      r.reasons.push_back(RejectReason::DuplicateInconsistent);
    }
  }
  if (sub.math_answer != hit.math_a + hit.math_b) r.reasons.push_back(RejectReason::MathFailed);
  r.accepted = r.reasons.empty();
  return r;
}

std::vector<LabelRecord> hit_labels(const Hit& hit, const Submission& sub, std::int64_t first_timestamp) {
  std::vector<LabelRecord> out;
  for (int i = 0; i < kHitQuestions; ++i) {
    if (i == hit.duplicate_index || hit.filler[i]) continue;
    const auto& q = hit.questions[i];
    out.push_back({q.ref_id, q.left, q.right, sub.answers.at(i).value(), sub.annotator_id, first_timestamp++});
  }
  return out;
}

json hit_to_client_json(const Hit& hit) {
  json qs = json::array();
  for (const auto& q : hit.questions) {
    qs.push_back({{"ref_id", q.ref_id},
                  {"left", q.left.name()},
                  {"right", q.right.name()},
                  {"left_image", "/api/image/" + q.ref_id + "/" + std::string(q.left.name())},
                  {"right_image", "/api/image/" + q.ref_id + "/" + std::string(q.right.name())}});
  }
  return {{"hit_id", hit.hit_id}, {"questions", qs}, {"math", {{"a", hit.math_a}, {"b", hit.math_b}}}};
}

Submission submission_from_json(const json& j) {
  try {
    Submission s;
    s.hit_id = j.at("hit_id").get<std::string>();
    for (const auto& a : j.at("answers")) {
      if (a.is_null()) s.answers.emplace_back();
      else s.answers.emplace_back(parse_verdict(a.get<std::string>()));
    }
    s.math_answer = j.at("math_answer").get<int>();
    s.annotator_id = j.value("annotator_id", std::string("anonymous"));
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("bad submission: ") + e.what());
  }
}

json to_json(const ValidationResult& r) {
  json reasons = json::array();
  for (auto x : r.reasons) reasons.push_back(to_string(x));
  return {{"accepted", r.accepted}, {"reasons", reasons}};
}

json to_json(const Progress& p) {
  return {{"pending", p.pending},
          {"checked_out", p.checked_out},
          {"labeled", p.labeled},
          {"accepted_hits", p.accepted_hits},
          {"rejected_hits", p.rejected_hits}};
}

// ---- service -----------------------------------------------------------------

namespace {

using PairKey = std::tuple<std::string, int, int>;

PairKey key_of(const std::string& ref, FilterId a, FilterId b) {
  return {ref, std::min(a.index(), b.index()), std::max(a.index(), b.index())};
}

}  // namespace

AnnotationService::AnnotationService(std::vector<ReferenceImage> refs, Options opt)
    : refs_(std::move(refs)), opt_(std::move(opt)), rng_(Rng::mix(opt_.seed, 0xa11)) {
  fs::create_directories(opt_.data_dir);
  const fs::path log = opt_.data_dir / "labels.jsonl";
  if (fs::exists(log)) labels_ = read_labels(log);

  std::set<PairKey> labeled;
  for (const auto& l : labels_) labeled.insert(key_of(l.ref_id, l.a, l.b));

  std::map<PairKey, ReferencePair> todo;
  for (const auto& p : pair_manifest(refs_)) {
    const auto k = key_of(p.ref_id, p.edge.a, p.edge.b);
    if (!labeled.contains(k)) todo.emplace(k, p);
  }
  // Snapshot order first, then anything the snapshot missed (e.g. pairs that
  // were checked out when the process stopped) in manifest order.
  const fs::path queue = opt_.data_dir / "queue.jsonl";
  if (fs::exists(queue)) {
    for (const auto& j : read_jsonl(queue)) {
      const auto ref = j.at("ref_id").get<std::string>();
      const auto a = filter_by_name(j.at("a").get<std::string>());
      const auto b = filter_by_name(j.at("b").get<std::string>());
      const auto it = todo.find(key_of(ref, a, b));
      if (it == todo.end()) continue;
      pending_.push_back({it->second, {}});
      todo.erase(it);
    }
  }
  for (const auto& p : pair_manifest(refs_)) {
    if (todo.contains(key_of(p.ref_id, p.edge.a, p.edge.b))) pending_.push_back({p, {}});
  }
  compact_locked();
}

Hit AnnotationService::open_hit(std::string_view annotator_id) {
  std::lock_guard lock(mu_);
  std::vector<std::size_t> take;
  for (std::size_t i = 0; i < pending_.size() && take.size() < static_cast<std::size_t>(kUniqueQuestions); ++i) {
    if (!opt_.require_new_annotator || !pending_[i].excluded.contains(annotator_id)) take.push_back(i);
  }
  std::deque<ReferencePair> pairs;
  std::vector<Pending> held;
  for (auto i : take) {
    pairs.push_back(pending_[i].pair);
    held.push_back(pending_[i]);
  }
  // Tail of the queue: 33N pairs need not be a multiple of 9. Once nothing
  // else can come back from open HITs, pad with already-labeled pairs whose
  // answers are then discarded.
  std::set<PairKey> fillers;
  if (take.size() < static_cast<std::size_t>(kUniqueQuestions) && !take.empty() && open_.empty()) {
    for (const auto& l : labels_) {
      if (pairs.size() >= static_cast<std::size_t>(kUniqueQuestions)) break;
      const auto k = key_of(l.ref_id, l.a, l.b);
      if (fillers.insert(k).second) pairs.push_back({l.ref_id, {l.a, l.b}});
    }
  }
  if (pairs.size() < static_cast<std::size_t>(kUniqueQuestions)) {
    throw Error(ErrorCode::InsufficientPendingPairs,
                std::to_string(take.size()) + " pairs available, need " + std::to_string(kUniqueQuestions));
  }
  for (auto it = take.rbegin(); it != take.rend(); ++it) pending_.erase(pending_.begin() + static_cast<long>(*it));

  char id[32];
  std::snprintf(id, sizeof id, "hit-%06llu", static_cast<unsigned long long>(next_hit_++));
  Hit h = build_hit(pairs, rng_, id);
  for (int i = 0; i < kHitQuestions; ++i) {
    const auto& q = h.questions[i];
    h.filler[i] = fillers.contains(key_of(q.ref_id, q.left, q.right));
  }
  open_.emplace(h.hit_id, std::make_pair(h, std::move(held)));
  return h;
}

ValidationResult AnnotationService::submit(const Submission& sub) {
  std::lock_guard lock(mu_);
  const auto it = open_.find(sub.hit_id);
  if (it == open_.end()) {
    if (closed_.contains(sub.hit_id)) throw Error(ErrorCode::AlreadyClosed, sub.hit_id);
    throw Error(ErrorCode::UnknownHit, sub.hit_id);
  }
  auto& [hit, held] = it->second;
  const auto result = validate_submission(hit, sub);
  if (result.accepted) {
    const fs::path log = opt_.data_dir / "labels.jsonl";
    for (auto& l : hit_labels(hit, sub, static_cast<std::int64_t>(labels_.size()))) {
      if (l.verdict == Verdict::Error) {
        // image failed to load for the annotator; ask again later
        for (auto& p : held) {
          if (key_of(p.pair.ref_id, p.pair.edge.a, p.pair.edge.b) == key_of(l.ref_id, l.a, l.b)) pending_.push_back(p);
        }
        continue;
      }
      append_jsonl(log, to_json(l));
      labels_.push_back(std::move(l));
    }
    ++accepted_;
  } else {
    for (auto& p : held) {
      if (opt_.require_new_annotator) p.excluded.insert(sub.annotator_id);
      pending_.push_back(std::move(p));
    }
    ++rejected_;
  }
  closed_.insert(sub.hit_id);
  open_.erase(it);
  // The snapshot only preserves queue order; the label log alone decides
  // what is still pending, so compaction can be infrequent.
  if (++since_compact_ >= kCompactEvery) {
    compact_locked();
    since_compact_ = 0;
  }
  return result;
}

Progress AnnotationService::progress() const {
  std::lock_guard lock(mu_);
  Progress p;
  p.pending = pending_.size();
  for (const auto& [id, o] : open_) p.checked_out += o.second.size();
  p.labeled = labels_.size();
  p.accepted_hits = accepted_;
  p.rejected_hits = rejected_;
  return p;
}

std::vector<LabelRecord> AnnotationService::labels() const {
  std::lock_guard lock(mu_);
  return labels_;
}

void AnnotationService::compact() const {
  std::lock_guard lock(mu_);
  compact_locked();
}

void AnnotationService::compact_locked() const {
  std::vector<json> rows;
  for (const auto& p : pending_) rows.push_back(to_json(p.pair));
  for (const auto& [id, o] : open_) {
    for (const auto& p : o.second) rows.push_back(to_json(p.pair));
  }
  write_jsonl(opt_.data_dir / "queue.jsonl", rows);
}

}  // namespace filtrank
