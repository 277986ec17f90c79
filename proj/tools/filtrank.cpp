// filtrank: command-line front end. Every subcommand is a thin wrapper over
// library calls; see README for the data directory layout.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "filtrank/annotation.hpp"
#include "filtrank/dataset.hpp"
#include "filtrank/error.hpp"
#include "filtrank/evaluation.hpp"
#include "filtrank/image.hpp"
#include "filtrank/server.hpp"
#include "filtrank/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace filtrank;

namespace {

struct Paths {
  fs::path root;
  fs::path references() const { return root / "references.jsonl"; }
  fs::path reference_dir() const { return root / "references"; }
  fs::path filtered() const { return root / "filtered.jsonl"; }
  fs::path filtered_dir() const { return root / "filtered"; }
  fs::path pairs() const { return root / "pairs.jsonl"; }
  fs::path labels() const { return root / "labels.jsonl"; }
  fs::path scores() const { return root / "scores.jsonl"; }
  fs::path train() const { return root / "train.jsonl"; }
  fs::path test() const { return root / "test.jsonl"; }
};

template <typename T>
std::vector<json> rows(const std::vector<T>& xs) {
  std::vector<json> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(to_json(x));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << text)) throw Error(ErrorCode::IOFailure, "cannot write " + path.string());
}

std::set<std::string, std::less<>> ids_of(const std::vector<ReferenceImage>& refs) {
  std::set<std::string, std::less<>> out;
  for (const auto& r : refs) out.insert(r.id);
  return out;
}

std::map<std::string, std::vector<FilterId>> ground_truth_of(std::span<const LabelRecord> labels,
                                                             const std::set<std::string, std::less<>>& only) {
  std::vector<LabelRecord> keep;
  for (const auto& l : labels) {
    if (only.contains(l.ref_id)) keep.push_back(l);
  }
  std::map<std::string, std::vector<FilterId>> gt;
  for (const auto& [id, s] : score_log(keep)) gt[id] = ground_truth(s);
  return gt;
}

HttpServer* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pairwise filter-recommendation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", "filtrank 0.1.0");

  Paths paths;
  std::string data_dir = ".";
  std::uint64_t seed = 0;
  app.add_option("--data-dir", data_dir, "Persistence root")->envname("FILTRANK_DATA_DIR");
  app.add_option("--seed", seed, "Seed for every random draw");

  // gen-dataset
  auto* gen = app.add_subcommand("gen-dataset", "Write procedural reference images and references.jsonl");
  int per_category = 40;
  int side = 72;
  gen->add_option("--per-category", per_category)->check(CLI::PositiveNumber);
  gen->add_option("--side", side, "Image side in pixels")->check(CLI::Range(8, 4096));

  // apply
  auto* apply = app.add_subcommand("apply", "Apply all 22 filters to every reference");

  // pair-design
  auto* design = app.add_subcommand("pair-design", "Print or check the 33-pair design");
  bool print_design = false;
  std::string check_design;
  auto* print_opt = design->add_flag("--print", print_design, "Print the built-in design as JSONL");
  design->add_option("--check", check_design, "Validate a design file")->excludes(print_opt);

  // simulate-labels
  auto* sim = app.add_subcommand("simulate-labels", "Label every design pair with the synthetic annotator");
  double epsilon = 0.0;
  sim->add_option("--epsilon", epsilon, "Utility gap below which the vote is 'equal'")->check(CLI::NonNegativeNumber);

  // score
  auto* score = app.add_subcommand("score", "Fold a label log into per-filter scores");
  std::string labels_path, score_out;
  score->add_option("--labels", labels_path, "Label log (default: <data>/labels.jsonl)");
  score->add_option("--out", score_out, "Output file, '-' for stdout (default: <data>/scores.jsonl)");

  // split
  auto* split = app.add_subcommand("split", "Category-stratified 7:1 train/test split");

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  std::string config_path, ckpt_out, metrics_out;
  std::vector<std::string> overrides;
  train->add_option("--config", config_path, "key = value config file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", ckpt_out, "Checkpoint path")->required();
  train->add_option("--metrics", metrics_out, "Per-epoch metrics JSONL (default: <out>.metrics.jsonl)");
  train->add_option("--set", overrides, "Override a config key (key=value)");
  bool resume = false;
  train->add_flag("--resume", resume, "Continue from --out if it exists");

  // eval
  auto* eval = app.add_subcommand("eval", "Top-K accuracy of checkpoints on the test split");
  std::vector<std::string> eval_ckpts, eval_names;
  std::string eval_json;
  std::size_t trials = 10000;
  eval->add_option("--ckpt", eval_ckpts, "Checkpoint(s)")->required()->check(CLI::ExistingFile);
  eval->add_option("--name", eval_names, "Row names, one per checkpoint");
  eval->add_option("--json", eval_json, "Write the reports as JSON");
  eval->add_option("--trials", trials, "Random-baseline Monte-Carlo trials")->check(CLI::PositiveNumber);

  // recommend
  auto* rec = app.add_subcommand("recommend", "Top-K filters for one image");
  std::string rec_ckpt, rec_image;
  int k = 3;
  rec->add_option("--ckpt", rec_ckpt)->required()->check(CLI::ExistingFile);
  rec->add_option("--image", rec_image)->required()->check(CLI::ExistingFile);
  rec->add_option("--k", k)->check(CLI::Range(1, kNumFilters));
  bool rec_json = false;
  rec->add_flag("--json", rec_json, "Print the ranking as JSON");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the annotation HTTP service");
  ServerOptions sopt;
  std::string serve_model;
  bool new_annotator = false;
  serve->add_option("--host", sopt.host);
  serve->add_option("--port", sopt.port)->check(CLI::Range(0, 65535));
  serve->add_option("--model", serve_model, "Checkpoint for /api/recommend")->check(CLI::ExistingFile);
  serve->add_flag("--require-new-annotator", new_annotator, "Re-queued pairs go to a different annotator");

  // report
  auto* report = app.add_subcommand("report", "Tables and preference histograms from eval JSON");
  std::string report_in;
  report->add_option("--eval", report_in, "Output of eval --json")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  paths.root = data_dir;

  try {
    if (*gen) {
      const auto refs = generate_references(paths.reference_dir(), per_category, side, seed);
      auto r = rows(refs);
      for (auto& j : r) j["path"] = fs::relative(j["path"].get<std::string>(), paths.root).generic_string();
      write_jsonl(paths.references(), r);
      std::cout << refs.size() << " references\n";
    } else if (*apply) {
      const auto refs = read_references(paths.references());
      const auto res = generate_filtered(refs, paths.filtered_dir());
      auto r = rows(res.images);
      for (auto& j : r) j["path"] = fs::relative(j["path"].get<std::string>(), paths.root).generic_string();
      write_jsonl(paths.filtered(), r);
      write_jsonl(paths.pairs(), rows(pair_manifest(refs)));
      for (const auto& f : res.failures) std::cerr << "warning: " << f << '\n';
      std::cout << res.images.size() << " filtered images, " << refs.size() * kPairsPerReference << " pairs\n";
      if (!res.failures.empty()) throw Error(ErrorCode::IOFailure, std::to_string(res.failures.size()) + " images failed");
    } else if (*design) {
      if (!check_design.empty()) {
        const auto d = load_design(check_design);
        std::cout << "ok: " << d.edges.size() << " edges\n";
      } else {
        const auto d = pair_design();
        validate_design(d);
        std::cout << serialize_design(d);
      }
    } else if (*sim) {
      const auto refs = read_references(paths.references());
      const auto oracle = SyntheticAnnotator::standard(epsilon);
      Rng rng(Rng::mix(seed, 77));
      std::vector<json> out;
      std::int64_t ts = 0;
      for (const auto& r : refs) {
        const Image img = load_image(r.path);
        std::vector<Image> filtered;
        for (const auto f : filter_bank()) filtered.push_back(apply_filter(img, f));
        for (const auto& l : simulate_labels(oracle, pair_design(), r, filtered, rng, "sim", ts)) out.push_back(to_json(l));
        ts += kPairsPerReference;
      }
      write_jsonl(paths.labels(), out);
      std::cout << out.size() << " labels\n";
    } else if (*score) {
      const auto labels = read_labels(labels_path.empty() ? paths.labels() : fs::path(labels_path));
      std::string text;
      for (const auto& [id, scores] : score_log(labels)) {
        for (const auto& s : scores) text += to_json(s).dump() + '\n';
      }
      write_text(score_out.empty() ? paths.scores() : fs::path(score_out), text);
    } else if (*split) {
      const auto refs = read_references(paths.references());
      Rng rng(seed);
      const auto s = split_references(refs, rng);
      auto rel = [&](std::vector<json> r) {
        for (auto& j : r) j["path"] = fs::relative(j["path"].get<std::string>(), paths.root).generic_string();
        return r;
      };
      write_jsonl(paths.train(), rel(rows(s.train)));
      write_jsonl(paths.test(), rel(rows(s.test)));
      std::cout << s.train.size() << " train, " << s.test.size() << " test\n";
    } else if (*train) {
      std::ifstream in(config_path);
      std::stringstream text;
      text << in.rdbuf() << '\n';
      for (const auto& o : overrides) text << o << '\n';
      if (app.count("--seed")) text << "seed = " << seed << '\n';
      const TrainConfig cfg = parse_train_config(text.str());

      auto refs = read_references(paths.train());
      const auto test = read_references(paths.test());
      refs.insert(refs.end(), test.begin(), test.end());
      auto images = std::make_shared<DiskImageSource>(refs, paths.filtered_dir(), cfg.input().resize_side);
      auto data = make_training_data(refs, images, read_labels(paths.labels()), ids_of(test), cfg.mode);

      const fs::path metrics = metrics_out.empty() ? fs::path(ckpt_out + ".metrics.jsonl") : fs::path(metrics_out);
      Trainer t = (resume && fs::exists(ckpt_out)) ? Trainer::resume(ckpt_out, std::move(data))
                                                    : Trainer(cfg, std::move(data));
      if (!resume) write_jsonl(metrics, std::vector<json>{});
      t.run([&](const EpochMetrics& m) {
        json j{{"epoch", m.epoch}, {"loss", m.loss}, {"learning_rate", m.learning_rate}, {"seconds", m.seconds}};
        j["pair_accuracy"] = m.pair_accuracy ? json(*m.pair_accuracy) : json(nullptr);
        append_jsonl(metrics, j);
        std::cerr << j.dump() << '\n';
        t.save(ckpt_out);
      });
      t.save(ckpt_out);
    } else if (*eval) {
      if (!eval_names.empty() && eval_names.size() != eval_ckpts.size()) {
        throw Error(ErrorCode::UsageError, "--name must be given once per --ckpt");
      }
      const auto test = read_references(paths.test());
      std::vector<Image> images;
      for (const auto& r : test) images.push_back(load_image(r.path));
      const auto gt = ground_truth_of(read_labels(paths.labels()), ids_of(test));
      std::vector<EvalReport> reports;
      json all = json::array();
      for (std::size_t i = 0; i < eval_ckpts.size(); ++i) {
        const auto m = load_trained_model(eval_ckpts[i]);
        const std::string name = eval_names.empty() ? std::string(to_string(m.mode)) : eval_names[i];
        reports.push_back(evaluate(m, test, images, gt, {trials, seed, true}, name));
        all.push_back(to_json(reports.back()));
      }
      std::cout << format_table(reports);
      if (!eval_json.empty()) write_text(eval_json, all.dump(2) + '\n');
    } else if (*rec) {
      const auto m = load_trained_model(rec_ckpt);
      const auto r = rank_filters(m, load_image(rec_image), fs::path(rec_image).stem().string());
      if (rec_json) {
        auto j = to_json(r);
        j["entries"].erase(j["entries"].begin() + k, j["entries"].end());
        std::cout << j.dump() << '\n';
      } else {
        for (int i = 0; i < k; ++i) {
          std::printf("%s\t%.6g\n", std::string(r.entries[i].filter.name()).c_str(), r.entries[i].score);
        }
      }
    } else if (*serve) {
      if (!serve_model.empty()) sopt.model_path = serve_model;
      sopt.filtered_dir = paths.filtered_dir();
      AnnotationService service(read_references(paths.references()), {paths.root, seed, new_annotator});
      HttpServer server(service, sopt);
      const int port = server.bind();
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << sopt.host << ':' << port << std::endl;
      server.serve();
      g_server = nullptr;
      service.compact();
    } else if (*report) {
      std::ifstream in(report_in);
      json all;
      try {
        all = json::parse(in);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, report_in + ": " + e.what());
      }
      std::vector<EvalReport> reports;
      for (const auto& r : all) reports.push_back(eval_report_from_json(r));
      std::cout << format_table(reports);
      for (const auto& r : reports) std::cout << "\n# " << r.model_name << '\n' << format_histograms(r);
    }
  } catch (const Error& e) {
    std::cerr << "filtrank: error code=" << to_string(e.code()) << " message=" << json(e.what()).dump() << '\n';
    return e.code() == ErrorCode::UsageError ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "filtrank: error code=Internal message=" << json(e.what()).dump() << '\n';
    return 1;
  }
  return 0;
}
