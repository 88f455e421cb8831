// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "drl/numerics/tensor.hpp"

namespace drl::data {

struct Subject {
  std::string id;
  double tau = 0;  // years
  std::string cohort;
  int fold = -1;  // -1 until assigned
  nn::Shape extents;         // (channels, spatial...)
  std::vector<float> image;  // row-major, numel(extents) values
};

enum class AgeDistribution { uniform, mixture };

struct MixtureComponent {
  double weight = 1;
  double mean = 50;  // years
  double stddev = 10;
};

// A cohort changes how the structural channel is rendered (contrast and
// background), standing in for scanner differences. The intensity channel is
// shared so the age signal stays comparable across cohorts.
struct CohortSpec {
  std::string name;
  double contrast = 1.0;
  double background = 0.0;
};

struct GeneratorConfig {
  double max_age = 100;  // A
  std::size_t n_subjects = 2000;
  std::vector<std::size_t> extents{32, 32};  // spatial extents
  double noise_sigma = 0.05;
  double max_radius_fraction = 0.9;  // disk radius at tau = A, relative to half the smallest extent
  double centre_jitter = 2.0;        // pixels, per subject
  AgeDistribution age_distribution = AgeDistribution::uniform;
  std::vector<MixtureComponent> mixture{{0.5, 22, 5}, {0.3, 50, 15}, {0.2, 75, 10}};
  std::vector<CohortSpec> cohorts{{"site-a", 1.0, 0.0}, {"site-b", 0.85, 0.05}, {"site-c", 1.15, -0.03}};
  std::size_t folds = 5;
  std::uint64_t seed = 7;

  static constexpr std::size_t kChannels = 2;
  static constexpr std::size_t kPools = 5;

  void validate() const;
};

std::string to_string(AgeDistribution d);
AgeDistribution parse_age_distribution(const std::string& s);

/// Radius in pixels of the structural disk for age tau.
double disk_radius(double tau, const GeneratorConfig& config);

/// Subject id of the i-th generated subject.
std::string subject_id(std::size_t index);

/// Renders one subject. All randomness derives from (config.seed, id), so any
/// subset can be regenerated independently.
Subject generate_subject(const std::string& id, double tau, const std::string& cohort,
                         const GeneratorConfig& config);

/// Draws ages and cohorts and renders every subject; folds assigned with make_folds.
/// Output is identical for any worker count.
std::vector<Subject> generate_dataset(const GeneratorConfig& config, std::size_t workers = 1);

/// Age of the i-th subject under the configured distribution.
double draw_age(std::size_t index, const GeneratorConfig& config);

/// Fold index per element: a seeded permutation dealt round-robin into k folds.
std::vector<int> make_folds(std::size_t n, std::size_t k, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Files.

/// Raster container, little-endian:
///   "DRLRAST1" | u32 version (1) | u32 rank | u64 extents[rank] | f32 values
void write_raster(const std::string& path, const nn::Shape& extents,
                  const std::vector<float>& values);
std::pair<nn::Shape, std::vector<float>> read_raster(const std::string& path);

struct ManifestRow {
  std::string id;
  double tau = 0;
  std::string cohort;
  int fold = -1;
  std::string image_path;  // relative to the manifest's directory
};

/// Header: id,tau_years,cohort,fold,image_path
void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::string& path);

/// Writes rasters under <dir>/images and <dir>/manifest.csv; returns the manifest path.
std::string save_dataset(const std::string& dir, const std::vector<Subject>& subjects);
std::vector<Subject> load_dataset(const std::string& manifest_path);

/// (N, channels, spatial...) batch of the listed subjects.
nn::Tensor<float> stack_images(const std::vector<Subject>& subjects,
                               const std::vector<std::size_t>& indices);

// ---------------------------------------------------------------------------
// Age-group pair sampler.

class PairSampler {
 public:
  static constexpr std::size_t kDefaultGroups = 100;
  static constexpr std::size_t kDefaultBatch = 20;

  /// Groups are equal-width bins over [0, max_age].
  PairSampler(const std::vector<double>& taus, double max_age,
              std::size_t groups = kDefaultGroups, bool allow_self_pairs = false);

  std::size_t group_of(double tau) const;
  std::size_t nonempty_groups() const { return nonempty_.size(); }

  /// One element: a uniformly chosen nonempty group, then a uniform member.
  std::size_t draw(std::mt19937_64& rng) const;

  /// Pairs of indices into the constructor's list. x and y are drawn
  /// independently; y is redrawn while it equals x unless self pairs are allowed.
  std::vector<std::pair<std::size_t, std::size_t>> sample(std::size_t batch_size,
                                                          std::mt19937_64& rng) const;

 private:
  double max_age_;
  std::size_t groups_;
  bool allow_self_;
  std::size_t count_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::size_t> nonempty_;
};

std::vector<std::pair<std::size_t, std::size_t>> sample_pair_batch(
    const std::vector<double>& train_taus, std::size_t batch_size, double max_age,
    std::uint64_t seed);

}  // namespace drl::data
