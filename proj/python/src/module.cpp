#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <set>
#include <sstream>

#include "filtrank/dataset.hpp"
#include "filtrank/error.hpp"
#include "filtrank/evaluation.hpp"
#include "filtrank/filters.hpp"
#include "filtrank/image.hpp"
#include "filtrank/objectives.hpp"
#include "filtrank/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using nlohmann::json;
using namespace filtrank;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// Images cross the boundary as float32 (H, W, 3) arrays in [0, 1].
Image to_image(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw Error(ErrorCode::ShapeMismatch, "expected an (H, W, 3) array");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy_n(a.data(), img.pixels().size(), img.pixels().data());
  return img;
}

FloatArray to_array(const Image& img) {
  FloatArray a({img.height(), img.width(), Image::kChannels});
  std::copy(img.pixels().begin(), img.pixels().end(), a.mutable_data());
  return a;
}

std::vector<LabelRecord> labels_from(const std::string& text) {
  std::vector<LabelRecord> out;
  for (const auto& j : json::parse(text)) out.push_back(label_from_json(j));
  return out;
}

py::list ranking_list(const FilterRanking& r, std::size_t k) {
  py::list out;
  for (std::size_t i = 0; i < std::min(k, r.entries.size()); ++i) {
    out.append(py::make_tuple(std::string(r.entries[i].filter.name()), r.entries[i].score));
  }
  return out;
}

// Same data layout as the CLI: train.jsonl, test.jsonl, labels.jsonl, filtered/.
py::list train_dir(const fs::path& root, const std::string& config_text, const fs::path& out) {
  const TrainConfig cfg = parse_train_config(config_text);
  auto refs = read_references(root / "train.jsonl");
  const auto test = read_references(root / "test.jsonl");
  std::set<std::string, std::less<>> test_ids;
  for (const auto& r : test) test_ids.insert(r.id);
  refs.insert(refs.end(), test.begin(), test.end());
  auto images = std::make_shared<DiskImageSource>(refs, root / "filtered", cfg.input().resize_side);
  auto data = make_training_data(refs, images, read_labels(root / "labels.jsonl"), test_ids, cfg.mode);

  py::list history;
  Trainer t(cfg, std::move(data));
  {
    py::gil_scoped_release nogil;
    t.run([&](const EpochMetrics&) { t.save(out); });
    t.save(out);
  }
  for (const auto& m : t.history()) {
    py::dict d;
    d["epoch"] = m.epoch;
    d["loss"] = m.loss;
    d["learning_rate"] = m.learning_rate;
    d["pair_accuracy"] = m.pair_accuracy ? py::cast(*m.pair_accuracy) : py::none();
    d["seconds"] = m.seconds;
    history.append(d);
  }
  return history;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "filtrank native core";

  // leaked on purpose: must outlive interpreter teardown
  static auto* exc = new py::object(py::exception<Error>(m, "FiltrankError"));
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = (*exc)(std::string(e.what()));
      err.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(exc->ptr(), err.ptr());
    } catch (const json::exception& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def("filter_names", [] {
    std::vector<std::string> out;
    for (auto n : filter_names()) out.emplace_back(n);
    return out;
  });
  m.def("category_names", [] {
    std::vector<std::string> out;
    for (auto n : category_names()) out.emplace_back(n);
    return out;
  });

  m.def("load_image", [](const fs::path& p) { return to_array(load_image(p)); }, py::arg("path"));
  m.def("save_image", [](const FloatArray& a, const fs::path& p) { save_image(to_image(a), p); }, py::arg("image"),
        py::arg("path"));
  m.def("apply_filter", [](const FloatArray& a, const std::string& name) {
    return to_array(apply_filter(to_image(a), filter_by_name(name)));
  }, py::arg("image"), py::arg("filter"));
  m.def("test_chart", [](int side) { return to_array(test_chart(side)); }, py::arg("side") = 64);

  m.def("pair_design", [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : pair_design().edges) out.emplace_back(e.a.name(), e.b.name());
    return out;
  });

  m.def("paircomp_loss", [](std::vector<float> pos, std::vector<float> neg) { return paircomp_loss(pos, neg); },
        py::arg("positive"), py::arg("negative"));

  m.def("_score_labels", [](const std::string& labels) {
    const auto recs = labels_from(labels);
    std::map<std::string, std::map<std::string, int>> out;
    for (const auto& [id, scores] : score_log(recs)) {
      for (const auto& s : scores) out[id][std::string(s.filter.name())] = s.score;
    }
    return out;
  });
  m.def("_ground_truth", [](const std::string& labels) {
    const auto recs = labels_from(labels);
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& [id, scores] : score_log(recs)) {
      auto& v = out[id];
      for (auto f : ground_truth(scores)) v.emplace_back(f.name());
    }
    return out;
  });

  m.def("random_baseline", [](const std::vector<std::vector<std::string>>& gt, std::size_t k, std::size_t trials,
                              std::uint64_t seed) {
    std::vector<std::vector<FilterId>> ids;
    for (const auto& g : gt) {
      auto& v = ids.emplace_back();
      for (const auto& n : g) v.push_back(filter_by_name(n));
    }
    Rng rng(seed);
    return random_baseline(ids, k, trials, rng);
  }, py::arg("ground_truth"), py::arg("k"), py::arg("trials") = 10000, py::arg("seed") = 0);

  m.def("_train", &train_dir, py::arg("data_dir"), py::arg("config"), py::arg("out"));

  py::class_<TrainedModel>(m, "Model")
      .def(py::init([](const fs::path& p) { return load_trained_model(p); }), py::arg("checkpoint"))
      .def_property_readonly("mode", [](const TrainedModel& t) { return std::string(to_string(t.mode)); })
      .def_property_readonly("profile", [](const TrainedModel& t) { return t.profile.name; })
      .def_property_readonly("input_side", [](const TrainedModel& t) { return t.profile.input_side; })
      .def("rank", [](const TrainedModel& t, const FloatArray& a, std::size_t k) {
        const Image img = to_image(a);
        FilterRanking r;
        {
          py::gil_scoped_release nogil;
          r = rank_filters(t, img);
        }
        return ranking_list(r, k);
      }, py::arg("image"), py::arg("k") = kNumFilters);
}
