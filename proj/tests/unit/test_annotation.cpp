#include <doctest.h>

#include <filesystem>
#include <thread>

#include <httplib.h>

#include "filtrank/annotation.hpp"
#include "filtrank/error.hpp"
#include "filtrank/server.hpp"

using namespace filtrank;
namespace fs = std::filesystem;

namespace {

std::deque<ReferencePair> queue_of(int refs) {
  std::vector<ReferenceImage> r;
  for (int i = 0; i < refs; ++i) r.push_back({"r" + std::to_string(i), 0, {}});
  const auto m = pair_manifest(r);
  return {m.begin(), m.end()};
}

// Honest answers: the lower filter index wins.
Submission honest(const Hit& h, std::string annotator = "honest") {
  Submission s{h.hit_id, {}, h.math_a + h.math_b, std::move(annotator)};
  for (const auto& q : h.questions) s.answers.push_back(q.left.index() < q.right.index() ? Verdict::Left : Verdict::Right);
  return s;
}

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("filtrank-unit-" + name);
  fs::remove_all(d);
  return d;
}

std::vector<ReferenceImage> refs_on_disk(const fs::path& dir, int n) {
  std::vector<ReferenceImage> refs;
  fs::create_directories(dir / "references");
  for (int i = 0; i < n; ++i) {
    refs.push_back({"r" + std::to_string(i), i % 8, dir / "references" / ("r" + std::to_string(i) + ".png")});
    save_image(Image(16, 16, 0.1f * static_cast<float>(i % 9)), refs.back().path);
  }
  return refs;
}

}  // namespace

TEST_CASE("HIT layout") {
  auto q = queue_of(1);
  Rng rng(1);
  const auto h = build_hit(q, rng, "h1");
  CHECK(q.size() == 33 - 9);
  CHECK(h.questions.size() == 10);
  const auto& d = h.questions[h.duplicate_index];
  const auto& o = h.questions[h.original_index];
  CHECK(h.duplicate_index != h.original_index);
  CHECK(d.left == o.right);
  CHECK(d.right == o.left);
  CHECK(h.math_a >= 1);
  CHECK(h.math_b <= 20);
  const auto client = hit_to_client_json(h);
  CHECK(client.dump().find("duplicate") == std::string::npos);
  std::deque<ReferencePair> few(q.begin(), q.begin() + 8);
  CHECK_THROWS_AS(build_hit(few, rng, "h2"), Error);
  CHECK(few.size() == 8);
}

TEST_CASE("duplicate position is uniform over the 10 slots") {
  Rng rng(7);
  std::array<int, 10> count{};
  for (int i = 0; i < 1000; ++i) {
    auto q = queue_of(1);
    ++count[build_hit(q, rng, "h").duplicate_index];
  }
  double chi2 = 0.0;
  for (int c : count) chi2 += (c - 100.0) * (c - 100.0) / 100.0;
  CHECK(chi2 < 21.67);  // 9 dof, p = 0.01
}

TEST_CASE("submission checks") {
  auto q = queue_of(1);
  Rng rng(3);
  const auto h = build_hit(q, rng, "h");
  CHECK(validate_submission(h, honest(h)).accepted);

  auto s = honest(h);
  s.answers[h.duplicate_index] = s.answers[h.original_index];
  auto r = validate_submission(h, s);
  CHECK_FALSE(r.accepted);
  CHECK(r.reasons == std::vector<RejectReason>{RejectReason::DuplicateInconsistent});

  s = honest(h);
  int set = 0;
  for (int i = 0; i < 10 && set < 2; ++i) {
    if (i == h.duplicate_index || i == h.original_index) continue;
    s.answers[i] = Verdict::Equal;
    ++set;
  }
  CHECK(validate_submission(h, s).reasons == std::vector<RejectReason>{RejectReason::TooManyEqual});

  s = honest(h);
  s.answers[h.original_index] = Verdict::Equal;
  s.answers[h.duplicate_index] = Verdict::Equal;
  CHECK(validate_submission(h, s).accepted);  // consistent single tie

  s = honest(h);
  s.math_answer += 1;
  CHECK(validate_submission(h, s).reasons == std::vector<RejectReason>{RejectReason::MathFailed});

  s = honest(h);
  s.answers[4].reset();
  CHECK(validate_submission(h, s).reasons.front() == RejectReason::Incomplete);
  s.answers.pop_back();
  CHECK_FALSE(validate_submission(h, s).accepted);

  const auto labels = hit_labels(h, honest(h), 10);
  CHECK(labels.size() == 9);
  CHECK(labels.front().timestamp == 10);
}

TEST_CASE("service drains the queue and survives restarts") {
  const auto dir = temp_dir("service");
  std::vector<ReferenceImage> refs;
  for (int i = 0; i < 4; ++i) refs.push_back({"r" + std::to_string(i), i, {}});  // 132 pairs, not a multiple of 9
  {
    AnnotationService svc(refs, {dir, 1, false});
    CHECK(svc.progress().pending == 132);
    const auto h = svc.open_hit("a");
    CHECK(svc.progress().pending == 123);
    CHECK(svc.progress().checked_out == 9);
    auto bad = honest(h, "a");
    bad.math_answer = -1;
    CHECK_FALSE(svc.submit(bad).accepted);
    CHECK(svc.progress().pending == 132);
    CHECK_THROWS_AS(svc.submit(honest(h)), Error);
    try {
      svc.submit(honest(h));
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::AlreadyClosed);
    }
    Submission unknown{"nope", {}, 0, "a"};
    CHECK_THROWS_AS(svc.submit(unknown), Error);
    for (int i = 0; i < 5; ++i) CHECK(svc.submit(honest(svc.open_hit("a"))).accepted);
    CHECK(svc.progress().labeled == 45);
    svc.open_hit("a");  // left open across the restart
  }
  AnnotationService svc(refs, {dir, 1, false});
  CHECK(svc.progress().pending == 132 - 45);
  CHECK(svc.labels().size() == 45);
  while (svc.progress().pending > 0) CHECK(svc.submit(honest(svc.open_hit())).accepted);
  CHECK(svc.progress().checked_out == 0);
  const auto labels = svc.labels();
  CHECK(labels.size() == 132);
  const auto scores = score_log(labels);
  CHECK(scores.size() == 4);
  CHECK(score_log(read_labels(dir / "labels.jsonl")) == scores);
  CHECK_THROWS_AS(svc.open_hit(), Error);
}

TEST_CASE("rejected pairs can be kept from the same annotator") {
  const auto dir = temp_dir("exclusive");
  std::vector<ReferenceImage> refs{{"r0", 0, {}}};
  AnnotationService svc(refs, {dir, 2, true});
  for (int i = 0; i < 3; ++i) {
    auto s = honest(svc.open_hit("cheat"), "cheat");
    s.math_answer = 0;
    svc.submit(s);
  }
  // 27 of 33 pairs were failed by "cheat"; only 6 remain for them
  CHECK_THROWS_AS(svc.open_hit("cheat"), Error);
  CHECK_NOTHROW(svc.open_hit("other"));
}

TEST_CASE("HTTP endpoints") {
  const auto dir = temp_dir("http");
  const auto refs = refs_on_disk(dir, 2);
  AnnotationService svc(refs, {dir, 3, false});
  HttpServer server(svc, {"127.0.0.1", 0, dir / "filtered", std::nullopt});
  const int port = server.bind();
  std::thread th([&] { server.serve(); });
  httplib::Client cli("127.0.0.1", port);

  auto res = cli.Get("/api/hit?annotator=t");
  REQUIRE(res);
  REQUIRE(res->status == 200);
  const auto hit = nlohmann::json::parse(res->body);
  CHECK(hit["questions"].size() == 10);
  CHECK(!hit.contains("duplicate_index"));

  auto img = cli.Get(hit["questions"][0]["left_image"].get<std::string>());
  REQUIRE(img);
  CHECK(img->status == 200);
  CHECK(decode_png(std::vector<std::uint8_t>(img->body.begin(), img->body.end())).width() == 16);
  CHECK(cli.Get("/api/image/r0/original")->status == 200);
  CHECK(cli.Get("/api/image/zz/Lofi")->status == 404);
  CHECK(cli.Get("/api/image/r0/Sepia")->status == 404);

  // answer by looking up the duplicate the way a client cannot: via the question pairs
  nlohmann::json answers = nlohmann::json::array();
  for (const auto& q : hit["questions"]) {
    answers.push_back(filter_by_name(q["left"].get<std::string>()).index() <
                              filter_by_name(q["right"].get<std::string>()).index()
                          ? "left"
                          : "right");
  }
  const nlohmann::json body{{"answers", answers},
                            {"math_answer", hit["math"]["a"].get<int>() + hit["math"]["b"].get<int>()},
                            {"annotator_id", "t"}};
  const std::string url = "/api/hit/" + hit["hit_id"].get<std::string>();
  auto post = cli.Post(url, body.dump(), "application/json");
  REQUIRE(post);
  CHECK(post->status == 200);
  CHECK(nlohmann::json::parse(post->body)["accepted"] == true);
  auto again = cli.Post(url, body.dump(), "application/json");
  CHECK(again->status == 409);
  CHECK(cli.Post("/api/hit/hit-999999", body.dump(), "application/json")->status == 404);
  CHECK(cli.Post(url, "{oops", "application/json")->status == 400);

  const auto prog = nlohmann::json::parse(cli.Get("/api/progress")->body);
  CHECK(prog["labeled"] == 9);
  CHECK(prog["pending"] == 66 - 9);
  CHECK(cli.Get("/api/recommend?ref=r0&k=3")->status == 404);  // no model loaded

  server.stop();
  th.join();
}
