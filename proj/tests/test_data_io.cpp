#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "asot/costs.hpp"
#include "asot/data_io.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace asot;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "asot_test_io";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInternal;
}

}  // namespace

TEST_CASE("feature files round-trip bitwise") {
  std::mt19937_64 rng(1);
  // f32-representable values so the round-trip is exact.
  Matrix x = oracle::random_matrix(13, 5, rng, -3, 3).cast<float>().cast<double>();
  const fs::path p = scratch("a.feat");
  write_features(p, x);
  CHECK(fs::file_size(p) == kFeatureHeaderBytes + 13 * 5 * 4);
  CHECK(read_features(p) == x);
  const std::string first = slurp(p);
  write_features(p, read_features(p));
  CHECK(slurp(p) == first);

  write_features(p, Matrix(0, 4));
  CHECK(read_features(p).rows() == 0);
}

TEST_CASE("feature file errors carry distinct codes") {
  const fs::path p = scratch("b.feat");
  write_features(p, Matrix::Ones(4, 3));
  const std::string good = slurp(p);

  dump(p, good.substr(0, good.size() - 2));
  CHECK(code_of([&] { read_features(p); }) == ErrorCode::kTruncated);

  dump(p, good.substr(0, 10));
  CHECK(code_of([&] { read_features(p); }) == ErrorCode::kTruncated);

  std::string bad = good;
  bad[0] = 'X';
  dump(p, bad);
  CHECK(code_of([&] { read_features(p); }) == ErrorCode::kFormat);

  bad = good;
  bad[8] = 9;
  dump(p, bad);
  CHECK(code_of([&] { read_features(p); }) == ErrorCode::kFormat);

  dump(p, good + "zz");
  CHECK(code_of([&] { read_features(p); }) == ErrorCode::kFormat);

  bad = good;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bad.data() + kFeatureHeaderBytes + 4 * 4, &nan, 4);  // row 1, column 1
  dump(p, bad);
  try {
    read_features(p);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFinite);
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }

  CHECK(code_of([&] { read_features(scratch("missing.feat")); }) == ErrorCode::kIo);
}

TEST_CASE("label parsing") {
  CHECK(parse_labels("0\n0\n1\n") == std::vector<int>{0, 0, 1});
  CHECK(parse_labels("").empty());
  CHECK(parse_labels("3\r\n4") == std::vector<int>{3, 4});
  try {
    parse_labels("x");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParse);
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
  try {
    parse_labels("1\n2\n2.5\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  const fs::path p = scratch("l.txt");
  const std::vector<int> labels{5, 5, 0, 2, 2, 2};
  write_labels(p, labels);
  CHECK(read_labels(p) == labels);
}

TEST_CASE("synthetic generator") {
  SynthSpec spec;
  spec.n_videos = 6;
  spec.noise_sigma = 0.0;
  spec.seed = 12;
  const SynthDataset ds = synth_generate(spec);
  REQUIRE(ds.features.size() == 6);
  REQUIRE(ds.labels.size() == 6);
  CHECK(ds.prototypes.rows() == spec.n_actions);

  SUBCASE("prototypes are unit and well separated") {
    for (Index a = 0; a < ds.prototypes.rows(); ++a) {
      CHECK(std::abs(ds.prototypes.row(a).norm() - 1.0) <= 1e-12);
      for (Index b = 0; b < a; ++b) CHECK(ds.prototypes.row(a).dot(ds.prototypes.row(b)) <= 0.3);
    }
  }
  SUBCASE("noiseless frames classify to their labels") {
    for (std::size_t v = 0; v < ds.features.size(); ++v) {
      const Matrix c = build_kot_cost(ds.features[v], ds.prototypes);
      for (Index i = 0; i < c.rows(); ++i) {
        Index best;
        c.row(i).minCoeff(&best);
        REQUIRE(best == ds.labels[v][static_cast<std::size_t>(i)]);
      }
    }
  }
  SUBCASE("deterministic per seed") {
    const SynthDataset again = synth_generate(spec);
    CHECK(again.features[3] == ds.features[3]);
    CHECK(again.labels == ds.labels);
    spec.seed = 13;
    CHECK(synth_generate(spec).labels != ds.labels);
  }
}

TEST_CASE("synthetic generator without order variation shares one ordering") {
  SynthSpec spec;
  spec.n_videos = 5;
  spec.order_variation = false;
  spec.repeat_actions = false;
  const SynthDataset ds = synth_generate(spec);
  auto order_of = [](const std::vector<int>& labels) {
    std::vector<int> seen;
    for (int l : labels)
      if (std::find(seen.begin(), seen.end(), l) == seen.end()) seen.push_back(l);
    return seen;
  };
  for (const auto& labels : ds.labels) {
    const auto o = order_of(labels);
    // Every video follows the canonical order, possibly skipping actions.
    std::size_t at = 0;
    for (int a : o) {
      while (at < ds.canonical_order.size() && ds.canonical_order[at] != a) ++at;
      CHECK(at < ds.canonical_order.size());
    }
  }
}

TEST_CASE("synthetic spec validation") {
  SynthSpec spec;
  spec.n_actions = 0;
  CHECK_THROWS_AS(synth_generate(spec), Error);
  spec = SynthSpec{};
  spec.noise_sigma = -1;
  CHECK_THROWS_AS(synth_generate(spec), Error);
  // Too many nearly orthogonal prototypes for the dimension.
  spec = SynthSpec{};
  spec.n_actions = 40;
  spec.dim = 2;
  try {
    synth_generate(spec);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK((msg.find("smaller") != std::string::npos || msg.find("larger") != std::string::npos));
  }
}
