#include <doctest.h>

#include <set>

#include "filtrank/error.hpp"
#include "filtrank/filters.hpp"

using namespace filtrank;

TEST_CASE("bank has 22 distinct names in index order") {
  const auto bank = filter_bank();
  REQUIRE(bank.size() == 22);
  std::set<std::string_view> names;
  for (int i = 0; i < 22; ++i) {
    CHECK(bank[i].index() == i);
    names.insert(bank[i].name());
    CHECK(filter_by_name(bank[i].name()) == bank[i]);
  }
  CHECK(names.size() == 22);
  CHECK_THROWS_AS(filter_by_name("Clarendon"), Error);
}

TEST_CASE("every filter is deterministic, in range and not identity") {
  const Image chart = test_chart();
  for (const auto f : filter_bank()) {
    const Image a = apply_filter(chart, f);
    CHECK(a == apply_filter(chart, f));
    for (float v : a.pixels()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    CHECK_FALSE(a == chart);
  }
}

TEST_CASE("Inkwell and Willow are gray") {
  const Image chart = test_chart();
  for (auto name : {"Inkwell", "Willow"}) {
    const Image g = apply_filter(chart, filter_by_name(name));
    for (int y = 0; y < g.height(); ++y)
      for (int x = 0; x < g.width(); ++x) {
        CHECK(g.at(x, y, 0) == g.at(x, y, 1));
        CHECK(g.at(x, y, 1) == g.at(x, y, 2));
      }
  }
}

TEST_CASE("catalog serialization round trips") {
  const auto& cat = FilterCatalog::builtin();
  const auto again = FilterCatalog::parse(cat.serialize());
  const Image chart = test_chart(32);
  for (const auto f : filter_bank()) CHECK(again.apply(chart, f) == cat.apply(chart, f));
}

TEST_CASE("malformed catalogs are rejected") {
  CHECK_THROWS_AS(FilterCatalog::parse(""), Error);
  CHECK_THROWS_AS(FilterCatalog::parse("{\"schema\":\"filtrank-filter-catalog\",\"version\":1}\n"), Error);
  std::string text = FilterCatalog::builtin().serialize();
  CHECK_THROWS_AS(FilterCatalog::parse(text.substr(0, text.rfind('{'))), Error);
}

TEST_CASE("primitives") {
  Image img(2, 1, 0.5f);
  apply_primitive(img, BrightnessContrast{0.1f, 1.0f});
  CHECK(img.at(0, 0, 0) == doctest::Approx(0.6f));
  apply_primitive(img, Tint{{2.0f, 1.0f, 0.0f}});
  CHECK(img.at(1, 0, 0) == 1.0f);
  CHECK(img.at(1, 0, 2) == 0.0f);
  apply_primitive(img, Grayscale{});
  CHECK(img.at(0, 0, 0) == img.at(0, 0, 2));
}
