// SPDX-License-Identifier: Apache-2.0
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "doctest.h"
#include "drl/data/dataset.hpp"
#include "drl/error.hpp"

using namespace drl;
using namespace drl::data;
namespace fs = std::filesystem;

namespace {

GeneratorConfig noiseless() {
  GeneratorConfig c;
  c.noise_sigma = 0;
  c.n_subjects = 50;
  return c;
}

double mean_of_channel(const Subject& s, std::size_t channel) {
  const std::size_t plane = s.image.size() / 2;
  double m = 0;
  for (std::size_t i = 0; i < plane; ++i) m += s.image[channel * plane + i];
  return m / double(plane);
}

// Pearson chi-square p-value of observed counts against expected probabilities.
double chi_square_p(const std::vector<double>& observed, const std::vector<double>& probs) {
  const double n = std::accumulate(observed.begin(), observed.end(), 0.0);
  double stat = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double e = n * probs[i];
    stat += (observed[i] - e) * (observed[i] - e) / e;
  }
  boost::math::chi_squared dist(double(observed.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace

TEST_CASE("generator determinism") {
  auto c = noiseless();
  auto a = generate_subject("sub-1", 40, "site-a", c);
  auto b = generate_subject("sub-1", 40, "site-a", c);
  CHECK(a.image == b.image);
  CHECK(a.extents == nn::Shape{2, 32, 32});
  c.noise_sigma = 0.1;
  auto n1 = generate_subject("sub-1", 40, "site-a", c);
  auto n2 = generate_subject("sub-1", 40, "site-a", c);
  CHECK(n1.image == n2.image);
  auto other = generate_subject("sub-2", 40, "site-a", c);
  CHECK(other.image != n1.image);
}

TEST_CASE("intensity channel mean increases with age") {
  auto c = noiseless();
  double prev = -1;
  for (int tau = 0; tau <= 100; ++tau) {
    const double m = mean_of_channel(generate_subject("s", tau, "site-b", c), 1);
    CHECK(m > prev);
    prev = m;
  }
}

TEST_CASE("disk radius reaches its configured maximum at A") {
  auto c = noiseless();
  CHECK(disk_radius(100, c) == doctest::Approx(0.9 * 16));
  CHECK(disk_radius(0, c) == 0);
  c.centre_jitter = 0;
  c.extents = {40, 36};
  auto s = generate_subject("s", 100, "site-a", c);
  // Along the row through the centre, coverage is full inside r - 0.5 and zero beyond r + 0.5.
  const double r = disk_radius(100, c), cy = 19.5, cx = 17.5;
  for (std::size_t row : {std::size_t(19), std::size_t(20)})
    for (std::size_t x = 0; x < 36; ++x) {
      const double d = std::hypot(double(x) - cx, double(row) - cy);
      const float v = s.image[row * 36 + x];
      if (d <= r - 0.5) CHECK(v == 1.0f);
      if (d >= r + 0.5) CHECK(v == 0.0f);
    }
  CHECK_THROWS_AS(generate_subject("s", 100.01, "site-a", c), ValidationError);
  CHECK_THROWS_AS(generate_subject("s", -1, "site-a", c), ValidationError);
  CHECK_THROWS_AS(generate_subject("s", 1, "nowhere", c), ValidationError);
}

TEST_CASE("noiseless intensity mean recovers age linearly") {
  auto c = noiseless();
  c.n_subjects = 300;
  auto subjects = generate_dataset(c);
  std::vector<double> x, y;
  for (const auto& s : subjects) {
    x.push_back(mean_of_channel(s, 1));
    y.push_back(s.tau);
  }
  const double n = double(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  // A least-squares line's fit correlates with the target exactly as |r(x, y)|.
  CHECK(sxy / std::sqrt(sxx * syy) > 0.999);
}

TEST_CASE("generator validation") {
  GeneratorConfig c;
  c.extents = {16, 32};
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.extents = {32};
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.extents = {32, 32, 32};
  CHECK_NOTHROW(c.validate());
  c.noise_sigma = -0.1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("parallel and serial generation agree") {
  GeneratorConfig c;
  c.n_subjects = 37;
  auto serial = generate_dataset(c, 1);
  auto parallel = generate_dataset(c, 4);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].id == parallel[i].id);
    CHECK(serial[i].tau == parallel[i].tau);
    CHECK(serial[i].fold == parallel[i].fold);
    CHECK(serial[i].image == parallel[i].image);
  }
  std::set<std::string> cohorts;
  for (const auto& s : serial) cohorts.insert(s.cohort);
  CHECK(cohorts.size() == 3);
}

TEST_CASE("uniform ages cover [0, A]") {
  GeneratorConfig c;
  std::vector<double> counts(10, 0);
  for (std::size_t i = 0; i < 5000; ++i) {
    const double tau = draw_age(i, c);
    REQUIRE(tau >= 0);
    REQUIRE(tau <= 100);
    counts[std::min<std::size_t>(9, std::size_t(tau / 10))] += 1;
  }
  CHECK(chi_square_p(counts, std::vector<double>(10, 0.1)) > 0.01);
}

TEST_CASE("mixture ages follow the configured weights") {
  GeneratorConfig c;
  c.age_distribution = AgeDistribution::mixture;
  std::vector<double> counts(10, 0);
  for (std::size_t i = 0; i < 20000; ++i) counts[std::min<std::size_t>(9, std::size_t(draw_age(i, c) / 10))] += 1;
  // Truncated-mixture bin probabilities from the normal CDF.
  std::vector<double> probs(10, 0);
  double total = 0;
  for (const auto& m : c.mixture) {
    boost::math::normal nd(m.mean, m.stddev);
    for (int b = 0; b < 10; ++b) probs[b] += m.weight * (cdf(nd, 10.0 * (b + 1)) - cdf(nd, 10.0 * b));
  }
  for (double p : probs) total += p;
  for (double& p : probs) p /= total;
  CHECK(chi_square_p(counts, probs) > 0.01);
  // Heavy mass in the 15-30 band.
  CHECK(counts[1] + counts[2] > 0.35 * 20000);

  // A uniform histogram is rejected by the same test.
  GeneratorConfig u;
  std::vector<double> ucounts(10, 0);
  for (std::size_t i = 0; i < 20000; ++i) ucounts[std::min<std::size_t>(9, std::size_t(draw_age(i, u) / 10))] += 1;
  CHECK(chi_square_p(ucounts, probs) < 1e-6);
}

TEST_CASE("folds") {
  auto check_partition = [](std::size_t n, std::size_t k, std::uint64_t seed) {
    auto f = make_folds(n, k, seed);
    REQUIRE(f.size() == n);
    std::vector<std::size_t> sizes(k, 0);
    for (int v : f) {
      REQUIRE(v >= 0);
      REQUIRE(std::size_t(v) < k);
      ++sizes[std::size_t(v)];
    }
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    CHECK(*hi - *lo <= 1);
    return sizes;
  };
  CHECK(check_partition(10, 5, 1) == std::vector<std::size_t>{2, 2, 2, 2, 2});
  auto big = check_partition(6049, 5, 3);
  std::sort(big.begin(), big.end());
  CHECK(big == std::vector<std::size_t>{1209, 1210, 1210, 1210, 1210});
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const std::size_t k = 2 + rng() % 9, n = k + rng() % 300;
    check_partition(n, k, rng());
  }
  CHECK(make_folds(100, 5, 9) == make_folds(100, 5, 9));
  CHECK(make_folds(100, 5, 9) != make_folds(100, 5, 10));
  CHECK_THROWS_AS(make_folds(4, 5, 1), ValidationError);
  CHECK_THROWS_AS(make_folds(10, 1, 1), ValidationError);
}

TEST_CASE("pair sampler") {
  SUBCASE("batch size and distinct elements") {
    std::vector<double> taus;
    for (int i = 0; i < 50; ++i) taus.push_back(i * 2.0);
    auto pairs = sample_pair_batch(taus, 20, 100, 1);
    CHECK(pairs.size() == 20);
    for (auto [x, y] : pairs) CHECK(x != y);
    CHECK(PairSampler::kDefaultBatch == 20);
    CHECK(PairSampler::kDefaultGroups == 100);
  }
  SUBCASE("group boundaries") {
    PairSampler s({0, 100}, 100);
    CHECK(s.group_of(0) == 0);
    CHECK(s.group_of(0.999) == 0);
    CHECK(s.group_of(1) == 1);
    CHECK(s.group_of(100) == 99);
    CHECK_THROWS_AS(s.group_of(100.5), ValidationError);
  }
  SUBCASE("one group reduces to uniform over its members") {
    std::vector<double> taus(8, 42.5);
    PairSampler s(taus, 100);
    CHECK(s.nonempty_groups() == 1);
    std::mt19937_64 rng(2);
    std::vector<double> counts(8, 0);
    for (int i = 0; i < 8000; ++i) counts[s.draw(rng)] += 1;
    CHECK(chi_square_p(counts, std::vector<double>(8, 1.0 / 8)) > 0.01);
  }
  SUBCASE("groups are chosen uniformly regardless of size") {
    std::vector<double> taus(1000, 20.5);
    taus.insert(taus.end(), 10, 70.5);
    PairSampler s(taus, 100);
    std::mt19937_64 rng(3);
    std::vector<double> counts(2, 0);
    for (int i = 0; i < 10000; ++i) counts[s.draw(rng) >= 1000] += 1;
    CHECK(chi_square_p(counts, {0.5, 0.5}) > 0.01);
  }
  SUBCASE("self pairs only when enabled") {
    PairSampler s({30, 30.2}, 100, 100, true);
    std::mt19937_64 rng(4);
    int same = 0;
    for (auto [x, y] : s.sample(2000, rng)) same += x == y;
    CHECK(same > 800);
    CHECK(same < 1200);
  }
  CHECK_THROWS_AS(PairSampler({}, 100), ValidationError);
  CHECK_THROWS_AS(PairSampler({5}, 100), ValidationError);
}

TEST_CASE("raster and manifest files") {
  const fs::path dir = fs::temp_directory_path() / "drl_data_test";
  fs::remove_all(dir);
  GeneratorConfig c;
  c.n_subjects = 12;
  auto subjects = generate_dataset(c);
  const auto manifest = save_dataset(dir.string(), subjects);
  auto loaded = load_dataset(manifest);
  REQUIRE(loaded.size() == 12);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(loaded[i].id == subjects[i].id);
    CHECK(loaded[i].tau == subjects[i].tau);
    CHECK(loaded[i].cohort == subjects[i].cohort);
    CHECK(loaded[i].fold == subjects[i].fold);
    CHECK(loaded[i].image == subjects[i].image);
  }
  auto batch = stack_images(loaded, {3, 1});
  CHECK(batch.shape() == nn::Shape{2, 2, 32, 32});
  CHECK(batch.values()[0] == loaded[3].image[0]);

  // Raster header: magic, version 1, rank, extents.
  std::ifstream in(dir / "images" / (subjects[0].id + ".drlr"), std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  CHECK(std::string(magic, 8) == "DRLRAST1");
  CHECK(fs::file_size(dir / "images" / (subjects[0].id + ".drlr")) == 8 + 4 + 4 + 3 * 8 + 2048 * 4);

  {
    std::ofstream bad(dir / "bad.drlr", std::ios::binary);
    bad << "DRLRAST1xx";
  }
  CHECK_THROWS_AS(read_raster((dir / "bad.drlr").string()), ValidationError);
  fs::remove_all(dir);
}
