#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "face/dataset.hpp"

using namespace face;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  auto p = fs::temp_directory_path() / (std::string("face_data_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("dataset round trip through the directory format") {
  auto subjects = data::synth_generate(2, 10, 3, 62, 5, 0.5f, 1);
  REQUIRE(subjects.size() == 2);
  CHECK(subjects[0].num_samples() == 30);
  CHECK(subjects[0].channels() == 62);
  CHECK(subjects[0].bands() == 5);

  auto dir = temp_dir("roundtrip");
  data::save_features(dir, subjects, data::ElectrodeMap::standard62().names);
  auto loaded = data::load_features(dir);
  REQUIRE(loaded.size() == 2);
  for (size_t s = 0; s < 2; ++s) {
    CHECK(loaded[s].subject_id == subjects[s].subject_id);
    CHECK(loaded[s].labels == subjects[s].labels);
    CHECK(loaded[s].samples.vec() == subjects[s].samples.vec());
  }
}

TEST_CASE("loader validation: NaN is reported with subject and offset") {
  auto subjects = data::synth_generate(1, 4, 2, 4, 2, 0.0f, 3);
  auto dir = temp_dir("nan");
  data::save_features(dir, subjects);
  {
    std::fstream f(dir / "s00.f32", std::ios::in | std::ios::out | std::ios::binary);
    const float nan = std::numeric_limits<float>::quiet_NaN();
    f.seekp(5 * 4);
    f.write(reinterpret_cast<const char*>(&nan), 4);
  }
  try {
    data::load_features(dir);
    FAIL("expected load error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("s00") != std::string::npos);
    CHECK(msg.find("5") != std::string::npos);
  }
}

TEST_CASE("loader validation: truncated feature file and bad label") {
  auto subjects = data::synth_generate(1, 3, 2, 4, 2, 0.0f, 4);
  auto dir = temp_dir("trunc");
  data::save_features(dir, subjects);
  fs::resize_file(dir / "s00.f32", 10);
  CHECK_THROWS_AS(data::load_features(dir), Error);

  data::save_features(dir, subjects);
  {
    std::fstream f(dir / "s00.labels", std::ios::in | std::ios::out | std::ios::binary);
    char bad = 9;
    f.write(&bad, 1);
  }
  CHECK_THROWS_AS(data::load_features(dir), Error);
}

TEST_CASE("synthetic generation is deterministic in the seed") {
  auto a = data::synth_generate(3, 5, 2, 6, 3, 1.0f, 99);
  auto b = data::synth_generate(3, 5, 2, 6, 3, 1.0f, 99);
  for (size_t s = 0; s < a.size(); ++s) CHECK(a[s].samples.vec() == b[s].samples.vec());
  auto c = data::synth_generate(3, 5, 2, 6, 3, 1.0f, 100);
  CHECK(a[0].samples.vec() != c[0].samples.vec());
}

TEST_CASE("zero shift strength keeps subjects identically distributed") {
  auto subjects = data::synth_generate(4, 200, 2, 4, 2, 0.0f, 12);
  // Empirical per-subject means should agree within a few standard errors.
  const int64_t dim = 8;
  std::vector<double> means;
  for (const auto& s : subjects) {
    double m = 0;
    for (int64_t i = 0; i < s.samples.numel(); ++i) m += s.samples.at(i);
    means.push_back(m / s.samples.numel());
  }
  const double se = 0.6 / std::sqrt(400.0 * dim);
  for (double m : means) CHECK(std::abs(m - means[0]) < 6 * se);
}

TEST_CASE("shift monotonicity: stronger shift spreads subject means further apart") {
  int wins = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto spread = [&](float shift) {
      auto subjects = data::synth_generate(4, 50, 2, 6, 3, shift, seed);
      const int64_t dim = 18;
      std::vector<std::vector<double>> mu;
      for (const auto& s : subjects) {
        std::vector<double> m(dim, 0.0);
        for (int64_t i = 0; i < s.num_samples(); ++i)
          for (int64_t d = 0; d < dim; ++d) m[d] += s.samples.at(i * dim + d);
        for (auto& v : m) v /= s.num_samples();
        mu.push_back(std::move(m));
      }
      double total = 0;
      int pairs = 0;
      for (size_t i = 0; i < mu.size(); ++i)
        for (size_t j = i + 1; j < mu.size(); ++j, ++pairs) {
          double d2 = 0;
          for (int64_t d = 0; d < dim; ++d) d2 += (mu[i][d] - mu[j][d]) * (mu[i][d] - mu[j][d]);
          total += std::sqrt(d2);
        }
      return total / pairs;
    };
    if (spread(2.0f) > spread(0.25f)) ++wins;
  }
  CHECK(wins >= 9);
}

TEST_CASE("electrode map: standard layout, config loading, validation") {
  auto std62 = data::ElectrodeMap::standard62();
  CHECK(std62.channels() == 62);
  CHECK(std62.grid_h == 9);
  CHECK(std62.grid_w == 9);
  std62.validate();

  const fs::path cfg = fs::path(TEST_SOURCE_DIR) / ".." / "configs" / "electrode_map_62.json";
  auto loaded = data::ElectrodeMap::load(cfg, std62.names);
  CHECK(loaded.names == std62.names);
  CHECK(loaded.cells == std62.cells);

  CHECK_THROWS_AS(data::ElectrodeMap::load(cfg, {"NOT_A_CHANNEL"}), Error);

  data::ElectrodeMap bad = std62;
  bad.cells[1] = bad.cells[0];
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("spatial projection: indicator, unit case, conservation, inverse") {
  auto map = data::ElectrodeMap::standard62();
  Tensor ones = Tensor::full({62, 5}, 1.0f);
  Tensor grid = data::spatial_project(ones, map);
  for (int64_t b = 0; b < 5; ++b) {
    double s = 0;
    for (int64_t i = 0; i < 81; ++i) s += grid.at(b * 81 + i);
    CHECK(s == doctest::Approx(62.0));
  }

  Tensor unit = Tensor::zeros({62, 5});
  unit.at(7 * 5 + 2) = 5.0f;  // channel 7, band 2
  Tensor g2 = data::spatial_project(unit, map);
  int nonzero = 0;
  for (int64_t i = 0; i < g2.numel(); ++i)
    if (g2.at(i) != 0) {
      ++nonzero;
      CHECK(g2.at(i) == 5.0f);
    }
  CHECK(nonzero == 1);

  std::mt19937_64 rng(2);
  Tensor x = Tensor::randn({62, 5}, rng);
  Tensor projected = data::spatial_project(x, map);
  CHECK(data::spatial_unproject(projected, map).vec() == x.vec());
}

TEST_CASE("grid resize: constant, corners, linear ramp") {
  Tensor constant = Tensor::full({2, 9, 9}, 3.25f);
  Tensor rc = data::resize_grid(constant, 32, 32);
  for (int64_t i = 0; i < rc.numel(); ++i) CHECK(rc.at(i) == doctest::Approx(3.25f));

  std::mt19937_64 rng(1);
  Tensor g = Tensor::randn({1, 9, 9}, rng);
  Tensor r = data::resize_grid(g, 32, 32);
  CHECK(r.at(0) == g.at(0));
  CHECK(r.at(31) == g.at(8));
  CHECK(r.at(31 * 32) == g.at(8 * 9));
  CHECK(r.at(31 * 32 + 31) == g.at(80));

  // Bilinear interpolation reproduces a linear ramp exactly.
  Tensor ramp({1, 9, 9});
  for (int64_t i = 0; i < 9; ++i)
    for (int64_t j = 0; j < 9; ++j) ramp.at(i * 9 + j) = 2.0f * i - 3.0f * j + 1.0f;
  Tensor rr = data::resize_grid(ramp, 32, 32);
  for (int64_t i = 0; i < 32; ++i)
    for (int64_t j = 0; j < 32; ++j) {
      const double y = i * 8.0 / 31.0, x = j * 8.0 / 31.0;
      CHECK(rr.at(i * 32 + j) == doctest::Approx(2.0 * y - 3.0 * x + 1.0).epsilon(1e-6));
    }

  CHECK_THROWS_AS(data::resize_grid(Tensor::zeros({2, 9}), 32, 32), Error);
}

TEST_CASE("episode sampling: counts, balance, determinism, errors") {
  auto fsd = data::synth_generate(1, 20, 3, 4, 2, 0.0f, 5)[0];

  auto ep1 = data::sample_episode(fsd, 1, 9, uint64_t{0});
  CHECK(ep1.support.size() == 3);

  auto ep5 = data::sample_episode(fsd, 5, 20, uint64_t{1});
  CHECK(ep5.support.size() == 15);
  CHECK(ep5.query.size() == 20);
  std::set<int64_t> sup(ep5.support.begin(), ep5.support.end());
  for (int64_t q : ep5.query) CHECK(!sup.count(q));

  // Support is exactly K per class.
  std::map<int, int> per_class;
  for (int64_t i : ep5.support) ++per_class[fsd.labels[i]];
  for (auto [k, n] : per_class) CHECK(n == 5);

  auto again = data::sample_episode(fsd, 5, 20, uint64_t{1});
  CHECK(again.support == ep5.support);
  CHECK(again.query == ep5.query);

  CHECK_THROWS_AS(data::sample_episode(fsd, 21, 1, uint64_t{0}), Error);
  CHECK_THROWS_AS(data::sample_episode(fsd, 20, 1, uint64_t{0}), Error);  // empty pool
}

TEST_CASE("property: support/query disjoint over 1000 random episodes") {
  auto fsd = data::synth_generate(1, 12, 3, 3, 2, 0.0f, 8)[0];
  std::mt19937_64 rng(0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int shots = 1 + static_cast<int>(rng() % 5);
    const int query = 1 + static_cast<int>(rng() % 10);
    auto ep = data::sample_episode(fsd, shots, query, rng);
    std::set<int64_t> sup(ep.support.begin(), ep.support.end());
    CHECK(sup.size() == ep.support.size());
    for (int64_t q : ep.query) REQUIRE(!sup.count(q));
  }
}

TEST_CASE("loso splits partition the subject set") {
  for (int n : {2, 3, 15}) {
    auto splits = data::loso_splits(n);
    REQUIRE(static_cast<int>(splits.size()) == n);
    for (const auto& s : splits) {
      CHECK(static_cast<int>(s.sources.size()) == n - 1);
      std::set<int> all(s.sources.begin(), s.sources.end());
      CHECK(!all.count(s.target));
      all.insert(s.target);
      CHECK(static_cast<int>(all.size()) == n);
    }
  }
  CHECK_THROWS_AS(data::loso_splits(1), Error);
}
