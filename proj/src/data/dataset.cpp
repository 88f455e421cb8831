// SPDX-License-Identifier: Apache-2.0
#include "drl/data/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include "drl/error.hpp"
#include "util/csv.hpp"
#include "util/hash.hpp"

namespace drl::data {

namespace fs = std::filesystem;

namespace {

constexpr char kRasterMagic[8] = {'D', 'R', 'L', 'R', 'A', 'S', 'T', '1'};
constexpr std::uint32_t kRasterVersion = 1;

static_assert(std::endian::native == std::endian::little, "raster I/O assumes a little-endian host");

enum Stream : std::uint64_t { kAge = 1, kCohort = 2, kRender = 3, kFolds = 4 };

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t key, Stream s) {
  return std::mt19937_64(util::mix64(util::mix64(seed, key), s));
}

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V get(std::istream& in, const std::string& path) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw ValidationError("raster '" + path + "' is truncated");
  return v;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (!(max_age > 0) || !std::isfinite(max_age)) throw ValidationError("max_age must be positive");
  if (n_subjects == 0) throw ValidationError("n_subjects must be positive");
  if (extents.size() != 2 && extents.size() != 3)
    throw ValidationError("image extents need 2 or 3 spatial axes, got " +
                          std::to_string(extents.size()));
  const std::size_t min_extent = std::size_t(1) << kPools;
  for (std::size_t e : extents)
    if (e < min_extent)
      throw ValidationError("image extent " + std::to_string(e) + " does not survive " +
                            std::to_string(kPools) + " halvings; every extent must be >= " +
                            std::to_string(min_extent));
  if (!(noise_sigma >= 0)) throw ValidationError("noise_sigma must be >= 0");
  if (!(max_radius_fraction > 0 && max_radius_fraction <= 1))
    throw ValidationError("max_radius_fraction must lie in (0, 1]");
  if (!(centre_jitter >= 0)) throw ValidationError("centre_jitter must be >= 0");
  if (cohorts.empty()) throw ValidationError("at least one cohort is required");
  for (const auto& c : cohorts) util::check_field(c.name);
  if (age_distribution == AgeDistribution::mixture) {
    if (mixture.empty()) throw ValidationError("mixture distribution needs components");
    double total = 0;
    for (const auto& m : mixture) {
      if (!(m.weight >= 0) || !(m.stddev > 0))
        throw ValidationError("mixture components need weight >= 0 and stddev > 0");
      total += m.weight;
    }
    if (!(total > 0)) throw ValidationError("mixture weights sum to zero");
  }
  if (folds < 2) throw ValidationError("fold count must be >= 2");
}

std::string to_string(AgeDistribution d) {
  return d == AgeDistribution::uniform ? "uniform" : "mixture";
}

AgeDistribution parse_age_distribution(const std::string& s) {
  if (s == "uniform") return AgeDistribution::uniform;
  if (s == "mixture") return AgeDistribution::mixture;
  throw ValidationError("unknown age distribution '" + s + "' (expected uniform or mixture)");
}

double disk_radius(double tau, const GeneratorConfig& config) {
  const double half = 0.5 * double(*std::min_element(config.extents.begin(), config.extents.end()));
  return config.max_radius_fraction * half * tau / config.max_age;
}

std::string subject_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sub-%05zu", index);
  return buf;
}

Subject generate_subject(const std::string& id, double tau, const std::string& cohort,
                         const GeneratorConfig& config) {
  if (!(tau >= 0 && tau <= config.max_age))
    throw ValidationError("tau = " + util::format_double(tau) + " lies outside [0, " +
                          util::format_double(config.max_age) + "]");
  auto spec = std::find_if(config.cohorts.begin(), config.cohorts.end(),
                           [&](const CohortSpec& c) { return c.name == cohort; });
  if (spec == config.cohorts.end()) throw ValidationError("unknown cohort '" + cohort + "'");

  auto rng = stream_rng(config.seed, util::fnv1a64(id), kRender);
  std::uniform_real_distribution<double> jitter(-config.centre_jitter, config.centre_jitter);
  const std::size_t dims = config.extents.size();
  std::array<double, 3> centre{};
  for (std::size_t a = 0; a < dims; ++a)
    centre[a] = 0.5 * double(config.extents[a] - 1) + (config.centre_jitter > 0 ? jitter(rng) : 0);

  Subject s;
  s.id = id;
  s.tau = tau;
  s.cohort = cohort;
  s.extents = {GeneratorConfig::kChannels};
  s.extents.insert(s.extents.end(), config.extents.begin(), config.extents.end());
  const std::size_t plane = nn::numel(config.extents);
  s.image.resize(GeneratorConfig::kChannels * plane);

  const double radius = disk_radius(tau, config);
  const double level = tau / config.max_age;
  const double ramp_den = double(std::max<std::size_t>(config.extents[0] - 1, 1));
  std::array<std::size_t, 3> coord{};
  for (std::size_t p = 0; p < plane; ++p) {
    std::size_t rest = p;
    for (std::size_t a = dims; a-- > 0;) {
      coord[a] = rest % config.extents[a];
      rest /= config.extents[a];
    }
    double d2 = 0;
    for (std::size_t a = 0; a < dims; ++a) d2 += (coord[a] - centre[a]) * (coord[a] - centre[a]);
    // Anti-aliased edge: coverage varies continuously with the radius.
    const double coverage = std::clamp(radius - std::sqrt(d2) + 0.5, 0.0, 1.0);
    s.image[p] = float(spec->background + spec->contrast * coverage);
    s.image[plane + p] = float(level * (0.5 + 0.5 * double(coord[0]) / ramp_den));
  }
  if (config.noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, config.noise_sigma);
    for (auto& v : s.image) v = float(v + noise(rng));
  }
  return s;
}

double draw_age(std::size_t index, const GeneratorConfig& config) {
  auto rng = stream_rng(config.seed, index, kAge);
  if (config.age_distribution == AgeDistribution::uniform)
    return std::uniform_real_distribution<double>(0.0, config.max_age)(rng);
  std::vector<double> weights;
  for (const auto& m : config.mixture) weights.push_back(m.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const auto& m = config.mixture[pick(rng)];
    const double tau = std::normal_distribution<double>(m.mean, m.stddev)(rng);
    if (tau >= 0 && tau <= config.max_age) return tau;
  }
  throw ValidationError("age mixture places almost no mass inside [0, max_age]");
}

std::vector<Subject> generate_dataset(const GeneratorConfig& config, std::size_t workers) {
  config.validate();
  const std::size_t n = config.n_subjects;
  std::vector<Subject> out(n);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto crng = stream_rng(config.seed, i, kCohort);
      const auto& cohort =
          config.cohorts[std::uniform_int_distribution<std::size_t>(0, config.cohorts.size() - 1)(crng)];
      out[i] = generate_subject(subject_id(i), draw_age(i, config), cohort.name, config);
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, n);
  if (workers == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w)
      threads.emplace_back(work, n * w / workers, n * (w + 1) / workers);
    for (auto& t : threads) t.join();
  }
  const auto folds = make_folds(n, config.folds, util::mix64(config.seed, kFolds));
  for (std::size_t i = 0; i < n; ++i) out[i].fold = folds[i];
  return out;
}

std::vector<int> make_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("fold count must be >= 2, got " + std::to_string(k));
  if (n < k)
    throw ValidationError("cannot split " + std::to_string(n) + " subjects into " +
                          std::to_string(k) + " folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold(n);
  for (std::size_t pos = 0; pos < n; ++pos) fold[order[pos]] = int(pos % k);
  return fold;
}

void write_raster(const std::string& path, const nn::Shape& extents,
                  const std::vector<float>& values) {
  if (nn::numel(extents) != values.size())
    throw ValidationError("raster extents " + nn::shape_str(extents) + " hold " +
                          std::to_string(nn::numel(extents)) + " values, got " +
                          std::to_string(values.size()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write raster '" + path + "'");
  out.write(kRasterMagic, sizeof kRasterMagic);
  put<std::uint32_t>(out, kRasterVersion);
  put<std::uint32_t>(out, std::uint32_t(extents.size()));
  for (auto e : extents) put<std::uint64_t>(out, e);
  out.write(reinterpret_cast<const char*>(values.data()), std::streamsize(values.size() * 4));
  if (!out) throw RuntimeFailure("write failed for raster '" + path + "'");
}

std::pair<nn::Shape, std::vector<float>> read_raster(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open raster '" + path + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kRasterMagic, 8) != 0)
    throw ValidationError("'" + path + "' is not a raster file");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kRasterVersion)
    throw ValidationError("raster '" + path + "' has unsupported version " + std::to_string(version));
  const auto rank = get<std::uint32_t>(in, path);
  if (rank == 0 || rank > 8) throw ValidationError("raster '" + path + "' has invalid rank");
  nn::Shape extents(rank);
  for (auto& e : extents) e = get<std::uint64_t>(in, path);
  std::vector<float> values(nn::numel(extents));
  if (!in.read(reinterpret_cast<char*>(values.data()), std::streamsize(values.size() * 4)))
    throw ValidationError("raster '" + path + "' is truncated");
  return {extents, values};
}

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
  util::CsvWriter out(path, {"id", "tau_years", "cohort", "fold", "image_path"});
  for (const auto& r : rows)
    out.row({r.id, util::format_double(r.tau), r.cohort, std::to_string(r.fold), r.image_path});
  out.close();
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::vector<ManifestRow> rows;
  for (auto& f : util::read_csv(path, {"id", "tau_years", "cohort", "fold", "image_path"})) {
    ManifestRow r{f[0], util::parse_double(f[1], "tau_years"), f[2],
                  int(util::parse_int(f[3], "fold")), f[4]};
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string save_dataset(const std::string& dir, const std::vector<Subject>& subjects) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) throw RuntimeFailure("cannot create '" + dir + "': " + ec.message());
  std::vector<ManifestRow> rows;
  for (const auto& s : subjects) {
    const std::string rel = "images/" + s.id + ".drlr";
    write_raster((fs::path(dir) / rel).string(), s.extents, s.image);
    rows.push_back({s.id, s.tau, s.cohort, s.fold, rel});
  }
  const std::string manifest = (fs::path(dir) / "manifest.csv").string();
  write_manifest(manifest, rows);
  return manifest;
}

std::vector<Subject> load_dataset(const std::string& manifest_path) {
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<Subject> out;
  for (auto& row : read_manifest(manifest_path)) {
    auto [extents, values] = read_raster((base / row.image_path).string());
    out.push_back({row.id, row.tau, row.cohort, row.fold, extents, std::move(values)});
  }
  if (!out.empty())
    for (const auto& s : out)
      if (s.extents != out.front().extents)
        throw ValidationError("subject '" + s.id + "' has extents " + nn::shape_str(s.extents) +
                              ", others have " + nn::shape_str(out.front().extents));
  return out;
}

nn::Tensor<float> stack_images(const std::vector<Subject>& subjects,
                               const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ValidationError("cannot stack an empty batch");
  const auto& first = subjects.at(indices.front());
  nn::Shape shape{indices.size()};
  shape.insert(shape.end(), first.extents.begin(), first.extents.end());
  const std::size_t per = first.image.size();
  std::vector<float> values(indices.size() * per);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& s = subjects.at(indices[b]);
    if (s.extents != first.extents) throw ValidationError("batch mixes image extents");
    std::copy(s.image.begin(), s.image.end(), values.begin() + long(b * per));
  }
  return nn::Tensor<float>::from(std::move(shape), std::move(values));
}

// ---------------------------------------------------------------------------

PairSampler::PairSampler(const std::vector<double>& taus, double max_age, std::size_t groups,
                         bool allow_self_pairs)
    : max_age_(max_age), groups_(groups), allow_self_(allow_self_pairs), count_(taus.size()) {
  if (taus.empty()) throw ValidationError("pair sampler needs a nonempty training set");
  if (!(max_age > 0)) throw ValidationError("max_age must be positive");
  if (groups == 0) throw ValidationError("group count must be positive");
  if (!allow_self_pairs && taus.size() < 2)
    throw ValidationError("distinct pairs need at least two training subjects");
  members_.resize(groups);
  for (std::size_t i = 0; i < taus.size(); ++i) members_[group_of(taus[i])].push_back(i);
  for (std::size_t g = 0; g < groups; ++g)
    if (!members_[g].empty()) nonempty_.push_back(g);
}

std::size_t PairSampler::group_of(double tau) const {
  if (!(tau >= 0 && tau <= max_age_))
    throw ValidationError("age " + util::format_double(tau) + " lies outside [0, " +
                          util::format_double(max_age_) + "]");
  return std::min(groups_ - 1, std::size_t(tau / max_age_ * double(groups_)));
}

std::size_t PairSampler::draw(std::mt19937_64& rng) const {
  const auto& g = members_[nonempty_[std::uniform_int_distribution<std::size_t>(
      0, nonempty_.size() - 1)(rng)]];
  return g[std::uniform_int_distribution<std::size_t>(0, g.size() - 1)(rng)];
}

std::vector<std::pair<std::size_t, std::size_t>> PairSampler::sample(std::size_t batch_size,
                                                                     std::mt19937_64& rng) const {
  if (batch_size == 0) throw ValidationError("batch size must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t x = draw(rng);
    std::size_t y = draw(rng);
    while (!allow_self_ && y == x) y = draw(rng);
    out.emplace_back(x, y);
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> sample_pair_batch(
    const std::vector<double>& train_taus, std::size_t batch_size, double max_age,
    std::uint64_t seed) {
  PairSampler sampler(train_taus, max_age);
  std::mt19937_64 rng(seed);
  return sampler.sample(batch_size, rng);
}

}  // namespace drl::data
