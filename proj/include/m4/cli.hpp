#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "m4/data.hpp"
#include "m4/model.hpp"
#include "m4/train.hpp"

namespace m4::cli {

enum ExitCode : int { kOk = 0, kVerificationFailed = 1, kUsageError = 2, kIoError = 3 };

struct ConfigKey {
  enum class Kind { Count, Seed, Real, Flag, Name };
  std::string key;
  Kind kind;
  std::string default_value;
  std::string help;
};

// Every accepted key with its default; the source of --help text.
const std::vector<ConfigKey>& config_schema();

/// Plain-text run configuration, one "key = value" per line. Blank lines and
/// lines starting with '#' are ignored; unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();

  static RunConfig parse(const std::string& text, const std::string& source = "config");
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool is_set(const std::string& key) const { return explicit_.count(key) != 0; }

  const std::string& text(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t seed(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;

  SyntheticSpec synthetic_spec() const;
  // Dims other than input_dim and tasks come from the config; those two
  // come from the data.
  ModelConfig model_config(std::size_t input_dim, std::size_t tasks) const;
  TrainConfig train_config() const;
  CrossValidationConfig cv_config(std::size_t input_dim, std::size_t tasks) const;
  GradcheckConfig gradcheck_config() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
};

std::string schema_help();

// Commands return an exit code and never throw; diagnostics go to `err`.
int cmd_synth(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& out,
              std::ostream& err);

struct TrainPaths {
  std::filesystem::path manifest;
  std::filesystem::path model;   // MPR1 output
  std::filesystem::path report;  // empty → <model stem>.report.csv beside the model
};
int cmd_train(const RunConfig& config, const TrainPaths& paths, std::ostream& out, std::ostream& err);

// Trains each ablation-ladder variant; files are <prefix>_<variant>.mpr and
// <prefix>_<variant>.report.csv.
int cmd_ablation(const RunConfig& config, const std::filesystem::path& manifest,
                 const std::filesystem::path& prefix, std::ostream& out, std::ostream& err);

// When `config` is given, its model section must match the saved model.
int cmd_eval(const std::optional<RunConfig>& config, const std::filesystem::path& model,
             const std::filesystem::path& manifest, const std::filesystem::path& report,
             std::ostream& out, std::ostream& err);

int cmd_heatmap(const std::filesystem::path& model, const std::filesystem::path& bag,
                const std::filesystem::path& prefix, std::size_t fold, std::ostream& out,
                std::ostream& err);

int cmd_gradcheck(const RunConfig& config, bool corrupt, std::ostream& out, std::ostream& err);

/// Heatmap scores for one bag as written by cmd_heatmap.
struct HeatmapTable {
  std::size_t bag_size = 0;
  std::vector<std::vector<double>> expert;  // attention row × N
  std::vector<std::vector<double>> task;    // task × N
};
HeatmapTable heatmap_scores(const M4Model& model, const Bag& bag);

// P5 graymap, side = ceil(sqrt(N)), patch k at row-major cell k, scores
// min-max scaled to 0..255 (constant scores → 128), padding cells 0.
std::vector<std::uint8_t> encode_graymap(const std::vector<double>& scores);

}  // namespace m4::cli
