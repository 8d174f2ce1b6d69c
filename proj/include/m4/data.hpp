#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "m4/tensor.hpp"

namespace m4 {

inline constexpr std::int8_t kMissingLabel = -1;

struct GridCoord {
  std::uint16_t row = 0;
  std::uint16_t col = 0;
  friend bool operator==(const GridCoord&, const GridCoord&) = default;
};

/// One slide: N instance feature rows of width d plus bag-level labels.
/// Features are float32 on disk and float64 in memory.
struct Bag {
  std::string id;
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> features;      // n×d row-major
  std::vector<GridCoord> grid;       // empty, or one (row, col) per instance
  std::vector<std::int8_t> labels;   // per task: 0, 1 or kMissingLabel

  void validate() const;
  ad::Tensor tensor() const;
  // Labels as 0/1 doubles (missing → 0) and the matching presence mask.
  std::vector<double> label_values() const;
  std::vector<std::uint8_t> label_mask() const;
};

// "MBG1" bag files: magic, u32 N, u32 d, u8 has_grid, N×(u16 row, u16 col)
// when has_grid, then N·d float32, all little-endian.
std::vector<std::uint8_t> encode_bag(const Bag& bag);
Bag decode_bag(std::span<const std::uint8_t> bytes);
void write_bag(const Bag& bag, const std::filesystem::path& path);
Bag read_bag(const std::filesystem::path& path);

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the manifest's directory unless absolute
  std::vector<std::int8_t> labels;
};

/// Comma-separated table "id,path,<task1>,…,<taskn>"; label cells are
/// "0", "1" or empty for missing.
struct Manifest {
  std::vector<std::string> task_names;
  std::vector<ManifestEntry> entries;
};

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);
// Reads every referenced bag and attaches its id and labels.
std::vector<Bag> load_bags(const Manifest& manifest, const std::filesystem::path& base_dir);

/// Parameters of the synthetic multi-task bag generator.
///
/// Each bag draws a latent vector z; task i is positive when
/// loadings_i·z + label noise clears a threshold calibrated to the target
/// prevalence. A signal_fraction subset of the bag's instances receives
/// signal_strength times the unit direction of every positive task, where
/// a task's direction is its loading row applied to random latent basis
/// directions. Tasks sharing loading columns therefore share both label
/// correlation and feature subspace.
struct SyntheticSpec {
  std::size_t tasks = 10;
  std::size_t bags = 400;
  std::size_t min_instances = 16;
  std::size_t max_instances = 48;
  std::size_t dim = 64;
  std::vector<double> prevalence;     // per task, in (0, 1)
  std::size_t latent_dim = 0;
  std::vector<double> task_loadings;  // tasks × latent_dim
  double label_noise_sd = 0.5;
  double signal_fraction = 0.25;
  double signal_strength = 2.0;
  double noise_sd = 0.5;
  std::uint64_t seed = 0;

  void validate() const;

  // n tasks with `shared` common latent factors plus one private factor per
  // task. shared_weight scales the common columns against the private one.
  static std::vector<double> correlated_loadings(std::size_t tasks, std::size_t shared,
                                                 double shared_weight);
  // Prevalences falling geometrically from `first` to `last`.
  static std::vector<double> descending_prevalence(std::size_t tasks, double first, double last);
};

struct SyntheticDataset {
  std::vector<std::string> task_names;
  std::vector<Bag> bags;
  std::vector<std::vector<std::uint8_t>> signal_mask;  // per bag, 1 for planted instances
  std::vector<double> achieved_prevalence;
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

// Writes bags/<id>.mbg, manifest.csv and signal.csv under out_dir.
Manifest write_dataset(const SyntheticDataset& data, const std::filesystem::path& out_dir);
std::vector<std::vector<std::uint8_t>> read_signal_masks(const std::filesystem::path& path,
                                                        const std::vector<Bag>& bags);

/// Column-wise min-max map onto [−1, 1]; constant columns map to 0.
class FeatureScaler {
 public:
  void fit(std::span<const double> features, std::size_t cols);
  void fit(const std::vector<Bag>& bags);
  void transform(std::span<double> features) const;
  void transform(std::vector<Bag>& bags) const;
  std::size_t cols() const { return lo_.size(); }
  const std::vector<double>& lower() const { return lo_; }
  const std::vector<double>& upper() const { return hi_; }
  static FeatureScaler from_bounds(std::vector<double> lower, std::vector<double> upper);

 private:
  std::vector<double> lo_;
  std::vector<double> hi_;
};

std::vector<double> normalize_features(std::span<const double> features, std::size_t cols);
// Fits on the whole dataset and rescales every bag in place.
void normalize_bags(std::vector<Bag>& bags);

struct TrainTestSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

struct FoldSplit {
  std::vector<std::vector<std::string>> folds;
  std::vector<std::string> test;
};

// Seeded shuffle, then the last round(|ids|·test/(train+test)) go to test.
TrainTestSplit split_train_test(const std::vector<std::string>& ids, std::uint64_t seed,
                                std::size_t train_parts = 4, std::size_t test_parts = 1);
// Seeded shuffle, then contiguous folds; the first |ids| mod k folds get
// one extra id.
std::vector<std::vector<std::string>> kfold(const std::vector<std::string>& ids, std::size_t k,
                                            std::uint64_t seed);

}  // namespace m4
