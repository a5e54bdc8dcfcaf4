#include <random>

#include "asot/metrics.hpp"
#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"

using namespace asot;

TEST_CASE("hungarian on the identity cost") {
  Matrix c = Matrix::Ones(3, 3) - Matrix::Identity(3, 3);
  CHECK(hungarian(c) == std::vector<int>{0, 1, 2});
}

TEST_CASE("hungarian on a rectangular cost matches every row") {
  Matrix c(2, 3);
  c << 4, 1, 3, 2, 0, 5;
  const auto m = hungarian(c);
  CHECK(m[0] != -1);
  CHECK(m[1] != -1);
  CHECK(m[0] != m[1]);
  CHECK(assignment_cost(c, m) == oracle::brute_force_assignment(c));

  const auto t = hungarian(c.transpose());
  int matched = 0;
  for (int x : t) matched += x != -1;
  CHECK(matched == 2);
  CHECK(assignment_cost(c.transpose(), t) == oracle::brute_force_assignment(c.transpose()));
}

TEST_CASE("hungarian equals the exhaustive minimum up to 6x6") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index r = 1 + static_cast<Index>(rng() % 6);
    const Index c = 1 + static_cast<Index>(rng() % 6);
    Matrix cost(r, c);
    for (Index e = 0; e < cost.size(); ++e) cost.data()[e] = static_cast<double>(rng() % 10);
    const auto m = hungarian(cost);
    REQUIRE(assignment_cost(cost, m) == oracle::brute_force_assignment(cost));
  }
}

TEST_CASE("hungarian picks the lexicographically smallest optimum") {
  CHECK(hungarian(Matrix::Zero(3, 3)) == std::vector<int>{0, 1, 2});
  CHECK(hungarian(Matrix::Zero(3, 2)) == std::vector<int>{0, 1, -1});
}

TEST_CASE("evaluate is perfect for identical and permuted predictions") {
  const std::vector<std::vector<int>> gt{{0, 0, 1, 1, 2}, {2, 2, 0, 1}};
  for (MatchMode mode : {MatchMode::kPerVideo, MatchMode::kFullDataset}) {
    const std::vector<Segmentation> same{Segmentation(gt[0]), Segmentation(gt[1])};
    const EvalResult a = evaluate(same, gt, mode).aggregate;
    CHECK(a.mof == 1.0);
    CHECK(a.f1 == 1.0);
    CHECK(a.miou == 1.0);

    const std::vector<Segmentation> perm{Segmentation({7, 7, 3, 3, 5}), Segmentation({5, 5, 7, 3})};
    const EvalResult b = evaluate(perm, gt, mode).aggregate;
    CHECK(b.mof == 1.0);
    CHECK(b.f1 == 1.0);
    CHECK(b.miou == 1.0);
  }
  const EvalResult full = evaluate({Segmentation({7, 7, 3, 3, 5})}, {gt[0]}, MatchMode::kFullDataset).aggregate;
  CHECK(full.matching == std::map<int, int>{{7, 0}, {3, 1}, {5, 2}});
}

TEST_CASE("evaluate on a hand-enumerated two-video case") {
  // Pooled contingency: cluster 5 -> {gt0: 4, gt1: 1}, cluster 6 -> {gt0: 1, gt1: 2}.
  const std::vector<std::vector<int>> gt{{0, 0, 1, 1}, {0, 0, 0, 1}};
  const std::vector<Segmentation> pred{Segmentation({5, 5, 5, 6}), Segmentation({6, 5, 5, 6})};

  const EvalReport full = evaluate(pred, gt, MatchMode::kFullDataset);
  CHECK(full.aggregate.matching == std::map<int, int>{{5, 0}, {6, 1}});
  CHECK(full.aggregate.mof == doctest::Approx(6.0 / 8.0));
  // IoU(class 0) = 4/6, IoU(class 1) = 2/4.
  CHECK(full.aggregate.miou == doctest::Approx(7.0 / 12.0));

  const EvalReport per = evaluate(pred, gt, MatchMode::kPerVideo);
  REQUIRE(per.per_video.size() == 2);
  CHECK(per.per_video[0].mof == doctest::Approx(0.75));
  CHECK(per.per_video[1].mof == doctest::Approx(0.75));
  CHECK(per.per_video[0].miou == doctest::Approx(7.0 / 12.0));
  CHECK(per.per_video[1].miou == doctest::Approx(7.0 / 12.0));
  CHECK(per.aggregate.mof == doctest::Approx(0.75));
}

TEST_CASE("unmatched ground-truth classes score zero IoU") {
  // Two gt classes, one predicted cluster.
  const EvalResult r = evaluate({Segmentation({1, 1, 1, 1})}, {{0, 0, 0, 1}}, MatchMode::kFullDataset).aggregate;
  CHECK(r.mof == doctest::Approx(0.75));
  CHECK(r.miou == doctest::Approx(0.75 / 2.0));
}

TEST_CASE("per-video MoF is at least full-dataset MoF") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Segmentation> pred;
    std::vector<std::vector<int>> gt;
    for (int v = 0; v < 4; ++v) {
      std::vector<int> g(30), p(30);
      for (int i = 0; i < 30; ++i) {
        g[static_cast<std::size_t>(i)] = i / 10;
        p[static_cast<std::size_t>(i)] = static_cast<int>((i / 10 + v + (rng() % 4 == 0 ? 1 : 0)) % 3);
      }
      pred.emplace_back(p);
      gt.push_back(g);
    }
    CHECK(evaluate(pred, gt, MatchMode::kPerVideo).aggregate.mof >=
          evaluate(pred, gt, MatchMode::kFullDataset).aggregate.mof);
  }
}

TEST_CASE("evaluate rejects mismatched lengths with the video index") {
  try {
    evaluate({Segmentation({0, 0}), Segmentation({0})}, {{0, 0}, {0, 0}}, MatchMode::kFullDataset);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidInput);
    CHECK(std::string(e.what()).find("video 1") != std::string::npos);
  }
}

TEST_CASE("segment F1") {
  const Segmentation gt(std::vector<int>(10, 0));
  CHECK(f1_segment(gt, gt) == 1.0);
  // 6 of 10 correct, then a spurious segment of the wrong label.
  const Segmentation pred({0, 0, 0, 0, 0, 0, 1, 1, 1, 1});
  CHECK(f1_segment(pred, gt) == doctest::Approx(2.0 / 3.0));
  CHECK(f1_segment(Segmentation(std::vector<int>(10, 4)), gt) == 0.0);
}

TEST_CASE("segmental edit score") {
  CHECK(edit_distance(Segmentation({0, 1, 1, 2}), Segmentation({0, 0, 1, 2})) == 1.0);
  CHECK(edit_distance(Segmentation({0}), Segmentation({1})) == 0.0);
  CHECK(edit_distance(Segmentation({0, 1, 2}), Segmentation({0, 2})) == doctest::Approx(2.0 / 3.0));
  CHECK(edit_distance(Segmentation(std::vector<int>{}), Segmentation(std::vector<int>{})) == 1.0);
}

TEST_CASE("overlap F1") {
  const Segmentation s({0, 0, 1, 1, 1, 2});
  CHECK(f1_at_tau(s, s, 0.5) == 1.0);
  const Segmentation half({0, 0});
  const Segmentation full({0, 0, 0, 0});
  CHECK(f1_at_tau(half, full, 0.25) == 1.0);
  CHECK(f1_at_tau(half, full, 0.5) == 0.0);
  CHECK(f1_at_tau(Segmentation({1, 1}), Segmentation({0, 0}), 0.1) == 0.0);
  CHECK_THROWS_AS(f1_at_tau(s, s, 0.0), Error);
  CHECK_THROWS_AS(f1_at_tau(s, s, 1.0), Error);
}

TEST_CASE("overlap F1 is non-increasing in tau") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> a(40), b(40);
    for (int i = 0; i < 40; ++i) {
      a[static_cast<std::size_t>(i)] = i / 8;
      b[static_cast<std::size_t>(i)] = (i + static_cast<int>(rng() % 5)) / 8;
    }
    double prev = 1.0;
    for (double tau = 0.05; tau < 1.0; tau += 0.05) {
      const double f = f1_at_tau(Segmentation(b), Segmentation(a), tau);
      CHECK(f <= prev);
      CHECK(f >= 0.0);
      prev = f;
    }
  }
}

TEST_CASE("evaluation report serializes") {
  const EvalReport r = evaluate({Segmentation({1, 1, 0})}, {{0, 0, 1}}, MatchMode::kPerVideo);
  const auto j = nlohmann::json::parse(to_json(r));
  CHECK(j.contains("aggregate"));
  CHECK(j["aggregate"]["mof"] == 1.0);
}
