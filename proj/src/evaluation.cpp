#include "filtrank/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "filtrank/error.hpp"

namespace filtrank {

using nlohmann::json;

std::vector<FilterId> FilterRanking::top(std::size_t k) const {
  std::vector<FilterId> out;
  for (std::size_t i = 0; i < std::min(k, entries.size()); ++i) out.push_back(entries[i].filter);
  return out;
}

FilterRanking ranking_from_scores(std::string ref_id, std::span<const double> scores) {
  if (scores.size() != static_cast<std::size_t>(kNumFilters)) {
    throw Error(ErrorCode::ShapeMismatch, "expected 22 scores, got " + std::to_string(scores.size()));
  }
  FilterRanking r;
  r.ref_id = std::move(ref_id);
  for (int i = 0; i < kNumFilters; ++i) {
    if (!std::isfinite(scores[i])) throw Error(ErrorCode::NonFiniteValue, "score of " + std::string(FilterId(i).name()));
    r.entries.push_back({FilterId(i), scores[i]});
  }
  std::stable_sort(r.entries.begin(), r.entries.end(),
                   [](const RankedFilter& a, const RankedFilter& b) { return a.score > b.score; });
  return r;
}

namespace {

void check_mode(const ColumnModel& m, TrainMode mode) {
  const auto& c = m.config();
  const bool ok = (mode == TrainMode::Binary) == c.binary_head && (mode == TrainMode::PairCompCate) == c.fusion;
  if (!ok) {
    throw Error(ErrorCode::ModelModeMismatch, "model heads do not match mode " + std::string(to_string(mode)));
  }
}

}  // namespace

FilterRanking rank_filters(const ColumnModel& m, TrainMode mode, const Image& ref, std::string ref_id,
                           const FilterCatalog& catalog) {
  check_mode(m, mode);
  const int side = m.arch().input_side;
  if (ref.width() < side || ref.height() < side) {
    throw Error(ErrorCode::CropLargerThanImage, "reference smaller than model input");
  }
  std::vector<Image> imgs;
  imgs.reserve(kNumFilters);
  for (int f = 0; f < kNumFilters; ++f) imgs.push_back(center_crop(catalog.apply(ref, FilterId(f)), side, side));
  const Image r = center_crop(ref, side, side);
  const auto s = model_scores(m, mode, imgs, &r);
  return ranking_from_scores(std::move(ref_id), s);
}

FilterRanking rank_filters(const TrainedModel& m, const Image& ref, std::string ref_id) {
  const int side = m.profile.resize_side;
  const Image sized = (ref.width() == side && ref.height() == side) ? ref : resize(ref, side, side);
  return rank_filters(m.model, m.mode, sized, std::move(ref_id));
}

int tournament_disagreements(const FilterRanking& r) {
  int bad = 0;
  for (std::size_t i = 0; i < r.entries.size(); ++i) {
    for (std::size_t j = i + 1; j < r.entries.size(); ++j) {
      const auto& a = r.entries[i];
      const auto& b = r.entries[j];
      const double d = a.score - b.score;
      const bool a_first = d > 0 || (d == 0 && a.filter.index() < b.filter.index());
      if (!a_first) ++bad;
    }
  }
  return bad;
}

TopKResult topk_accuracy(std::span<const FilterRanking> rankings,
                         const std::map<std::string, std::vector<FilterId>>& ground_truth, std::size_t k) {
  TopKResult res;
  std::size_t hits = 0;
  for (const auto& r : rankings) {
    const auto it = ground_truth.find(r.ref_id);
    if (it == ground_truth.end()) throw Error(ErrorCode::MissingGroundTruth, r.ref_id);
    if (it->second.empty()) {
      ++res.excluded_empty;
      continue;
    }
    ++res.evaluated;
    const auto top = r.top(k);
    const bool hit = std::any_of(top.begin(), top.end(), [&](FilterId f) {
      return std::find(it->second.begin(), it->second.end(), f) != it->second.end();
    });
    if (hit) ++hits;
  }
  res.accuracy = res.evaluated ? static_cast<double>(hits) / static_cast<double>(res.evaluated) : 0.0;
  return res;
}

double random_baseline(std::span<const std::vector<FilterId>> ground_truth, std::size_t k, std::size_t trials,
                       Rng& rng) {
  if (trials < 1) throw Error(ErrorCode::ConfigError, "trials must be >= 1");
  k = std::min<std::size_t>(k, kNumFilters);
  std::vector<std::array<bool, kNumFilters>> sets;
  for (const auto& gt : ground_truth) {
    if (gt.empty()) continue;
    std::array<bool, kNumFilters> s{};
    for (auto f : gt) s[f.index()] = true;
    sets.push_back(s);
  }
  if (sets.empty()) return 0.0;
  std::array<int, kNumFilters> perm{};
  std::size_t hits = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    for (const auto& s : sets) {
      std::iota(perm.begin(), perm.end(), 0);
      bool hit = false;
      for (std::size_t i = 0; i < k; ++i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), kNumFilters - 1));
        std::swap(perm[i], perm[j]);
        hit = hit || s[perm[i]];
      }
      if (hit) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(trials * sets.size());
}

namespace {

template <typename Fn>
std::vector<PreferenceHistogram> histograms(std::span<const ReferenceImage> refs, bool by_category, Fn&& add) {
  if (refs.empty()) throw Error(ErrorCode::EmptySource, "no references to aggregate");
  std::vector<PreferenceHistogram> out;
  PreferenceHistogram all{"all", 0, {}};
  std::array<PreferenceHistogram, kNumCategories> cats;
  for (int c = 0; c < kNumCategories; ++c) cats[c].group = std::string(category_names()[c]);
  for (const auto& r : refs) {
    add(r, all);
    if (by_category) add(r, cats[r.category]);
  }
  auto finish = [](PreferenceHistogram& h) {
    if (h.refs == 0) return;
    for (auto& v : h.ratio) v /= static_cast<double>(h.refs);
  };
  finish(all);
  out.push_back(all);
  if (by_category) {
    for (auto& h : cats) {
      finish(h);
      out.push_back(h);
    }
  }
  return out;
}

}  // namespace

std::vector<PreferenceHistogram> ground_truth_distribution(
    std::span<const ReferenceImage> refs, const std::map<std::string, std::vector<FilterId>>& ground_truth,
    bool by_category) {
  return histograms(refs, by_category, [&](const ReferenceImage& r, PreferenceHistogram& h) {
    const auto it = ground_truth.find(r.id);
    if (it == ground_truth.end()) throw Error(ErrorCode::MissingGroundTruth, r.id);
    ++h.refs;
    for (auto f : it->second) h.ratio[f.index()] += 1.0;
  });
}

std::vector<PreferenceHistogram> top1_distribution(std::span<const ReferenceImage> refs,
                                                   std::span<const FilterRanking> rankings, bool by_category) {
  std::map<std::string, const FilterRanking*, std::less<>> by_id;
  for (const auto& r : rankings) by_id[r.ref_id] = &r;
  return histograms(refs, by_category, [&](const ReferenceImage& r, PreferenceHistogram& h) {
    const auto it = by_id.find(r.id);
    if (it == by_id.end() || it->second->entries.empty()) {
      throw Error(ErrorCode::EmptySource, "no ranking for " + r.id);
    }
    ++h.refs;
    h.ratio[it->second->entries.front().filter.index()] += 1.0;
  });
}

EvalReport evaluate(const TrainedModel& m, std::span<const ReferenceImage> refs, std::span<const Image> ref_images,
                    const std::map<std::string, std::vector<FilterId>>& ground_truth, const EvalOptions& opt,
                    std::string model_name) {
  if (refs.size() != ref_images.size()) throw Error(ErrorCode::ShapeMismatch, "refs and images differ in length");
  if (refs.empty()) throw Error(ErrorCode::EmptySource, "no test references");
  EvalReport rep;
  rep.model_name = model_name.empty() ? std::string(to_string(m.mode)) : std::move(model_name);
  std::vector<FilterRanking> rankings;
  rankings.reserve(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!ground_truth.contains(refs[i].id)) throw Error(ErrorCode::MissingGroundTruth, refs[i].id);
    rankings.push_back(rank_filters(m, ref_images[i], refs[i].id));
    rep.tournament_disagreements += static_cast<std::size_t>(tournament_disagreements(rankings.back()));
  }
  constexpr std::array<std::size_t, 3> ks{1, 3, 5};
  std::vector<std::vector<FilterId>> gts;
  for (const auto& r : refs) gts.push_back(ground_truth.at(r.id));
  for (int i = 0; i < 3; ++i) {
    rep.topk[i] = topk_accuracy(rankings, ground_truth, ks[i]);
    Rng rng(Rng::mix(opt.seed, ks[i]));
    rep.random[i] = random_baseline(gts, ks[i], opt.random_trials, rng);
  }
  if (opt.by_category) {
    for (int c = 0; c < kNumCategories; ++c) {
      std::vector<FilterRanking> sub;
      for (std::size_t i = 0; i < refs.size(); ++i) {
        if (refs[i].category == c) sub.push_back(rankings[i]);
      }
      if (sub.empty()) continue;
      std::array<double, 3> acc{};
      for (int i = 0; i < 3; ++i) acc[i] = topk_accuracy(sub, ground_truth, ks[i]).accuracy;
      rep.per_category[std::string(category_names()[c])] = acc;
    }
  }
  rep.gt_histogram = ground_truth_distribution(refs, ground_truth, opt.by_category);
  rep.predicted_histogram = top1_distribution(refs, rankings, opt.by_category);
  return rep;
}

json to_json(const FilterRanking& r) {
  json entries = json::array();
  for (const auto& e : r.entries) entries.push_back({{"filter", e.filter.name()}, {"score", e.score}});
  return {{"ref_id", r.ref_id}, {"ranking", entries}};
}

json to_json(const EvalReport& r) {
  auto hist = [](const std::vector<PreferenceHistogram>& hs) {
    json out = json::array();
    for (const auto& h : hs) {
      json ratios = json::object();
      for (int i = 0; i < kNumFilters; ++i) ratios[std::string(FilterId(i).name())] = h.ratio[i];
      out.push_back({{"group", h.group}, {"refs", h.refs}, {"ratio", ratios}});
    }
    return out;
  };
  json j;
  j["model"] = r.model_name;
  const char* names[] = {"top1", "top3", "top5"};
  for (int i = 0; i < 3; ++i) {
    j[names[i]] = r.topk[i].accuracy;
    j["random_" + std::string(names[i])] = r.random[i];
  }
  j["evaluated"] = r.topk[0].evaluated;
  j["excluded_empty_ground_truth"] = r.topk[0].excluded_empty;
  j["tournament_disagreements"] = r.tournament_disagreements;
  json cats = json::object();
  for (const auto& [c, acc] : r.per_category) cats[c] = {{"top1", acc[0]}, {"top3", acc[1]}, {"top5", acc[2]}};
  j["per_category"] = cats;
  j["ground_truth_histogram"] = hist(r.gt_histogram);
  j["predicted_histogram"] = hist(r.predicted_histogram);
  return j;
}

EvalReport eval_report_from_json(const json& j) {
  auto hist = [](const json& a) {
    std::vector<PreferenceHistogram> out;
    for (const auto& h : a) {
      PreferenceHistogram p;
      p.group = h.at("group").get<std::string>();
      p.refs = h.at("refs").get<std::size_t>();
      for (int i = 0; i < kNumFilters; ++i) p.ratio[i] = h.at("ratio").at(std::string(FilterId(i).name())).get<double>();
      out.push_back(std::move(p));
    }
    return out;
  };
  try {
    EvalReport r;
    r.model_name = j.at("model").get<std::string>();
    const char* names[] = {"top1", "top3", "top5"};
    for (int i = 0; i < 3; ++i) {
      r.topk[i].accuracy = j.at(names[i]).get<double>();
      r.topk[i].evaluated = j.at("evaluated").get<std::size_t>();
      r.topk[i].excluded_empty = j.at("excluded_empty_ground_truth").get<std::size_t>();
      r.random[i] = j.at("random_" + std::string(names[i])).get<double>();
    }
    r.tournament_disagreements = j.at("tournament_disagreements").get<std::size_t>();
    for (const auto& [c, acc] : j.at("per_category").items()) {
      r.per_category[c] = {acc.at("top1").get<double>(), acc.at("top3").get<double>(), acc.at("top5").get<double>()};
    }
    r.gt_histogram = hist(j.at("ground_truth_histogram"));
    r.predicted_histogram = hist(j.at("predicted_histogram"));
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("bad eval report: ") + e.what());
  }
}

std::string format_table(std::span<const EvalReport> reports) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %8s %8s %8s\n", "Method", "Top-1", "Top-3", "Top-5");
  out << line;
  if (!reports.empty()) {
    const auto& r0 = reports.front();
    std::snprintf(line, sizeof line, "%-24s %7.2f%% %7.2f%% %7.2f%%\n", "Random Guess", 100 * r0.random[0],
                  100 * r0.random[1], 100 * r0.random[2]);
    out << line;
  }
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-24s %7.2f%% %7.2f%% %7.2f%%\n", r.model_name.c_str(),
                  100 * r.topk[0].accuracy, 100 * r.topk[1].accuracy, 100 * r.topk[2].accuracy);
    out << line;
  }
  return out.str();
}

std::string format_histograms(const EvalReport& r) {
  std::ostringstream out;
  out << "group\tfilter\tground_truth\tpredicted\n";
  for (std::size_t g = 0; g < r.gt_histogram.size(); ++g) {
    const auto& gt = r.gt_histogram[g];
    const auto* pr = g < r.predicted_histogram.size() ? &r.predicted_histogram[g] : nullptr;
    for (int i = 0; i < kNumFilters; ++i) {
      out << gt.group << '\t' << FilterId(i).name() << '\t' << gt.ratio[i] << '\t' << (pr ? pr->ratio[i] : 0.0)
          << '\n';
    }
  }
  return out.str();
}

}  // namespace filtrank
