#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "m4/data.hpp"
#include "m4/model.hpp"

namespace m4 {

/// Adam moments for one parameter list, in parameter order.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState for_parameters(const ParameterList& params, double lr);
};

// One bias-corrected Adam update of `param` in place.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::uint64_t t, const AdamState& hp);

// Advances state.t and updates every parameter from grads (parameter order).
void adam_step(const ParameterList& params, std::span<const std::span<const double>> grads,
               AdamState& state);
// Same, reading each parameter's accumulated gradient (absent → zero).
void adam_step(const ParameterList& params, AdamState& state);

struct TrainConfig {
  double lr = 1e-4;
  std::size_t epochs = 30;
  bool shuffle = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean per-bag loss of each epoch
  std::size_t steps = 0;
};

// Batch size 1: one forward, backward and Adam step per bag, bags visited in
// a seeded shuffled order each epoch. `on_epoch` (if set) sees each epoch's
// mean loss as it completes.
TrainResult train(M4Model& model, const std::vector<Bag>& bags, const TrainConfig& config,
                  const std::function<void(std::size_t, double)>& on_epoch = {});

// Mann–Whitney AUC with average ranks for ties. Throws UndefinedAucError
// unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);
// O(P·Q) reference: (wins + ties/2) / (P·Q).
double auc_pairwise(std::span<const double> scores, std::span<const int> labels);

// Sigmoid outputs, bags × tasks.
std::vector<std::vector<double>> predict(const M4Model& model, const std::vector<Bag>& bags);

struct TaskScore {
  std::optional<double> auc;  // empty when the task lacks one of the classes
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

// Per-task AUC over bags whose label for the task is present.
std::vector<TaskScore> evaluate(const M4Model& model, const std::vector<Bag>& bags);

// Arithmetic mean over tasks with a defined AUC; NaN if there are none.
double mean_auc(const std::vector<TaskScore>& scores);

/// Per-task AUC of each fold model on the fixed test set.
struct EvalReport {
  std::vector<std::string> task_names;
  std::vector<std::vector<TaskScore>> folds;  // fold × task

  std::size_t fold_count() const { return folds.size(); }
  // Mean over folds with a defined AUC for the task.
  std::optional<double> task_mean(std::size_t task) const;
  // Mean of the defined task means.
  double mean_auc() const;
  // Tasks skipped in at least one fold.
  std::vector<std::string> skipped_tasks() const;

  // Rows = tasks (plus a final "mean" row), columns = folds, mean, and the
  // test-set class counts. Undefined AUCs print as NA.
  std::string to_csv() const;
  void write_csv(const std::string& path) const;
};

struct CrossValidationConfig {
  ModelConfig model;
  TrainConfig train;
  std::size_t folds = 5;     // 1 trains a single model on the whole train split
  std::size_t workers = 1;   // fold models trained concurrently
  std::uint64_t split_seed = 0;
};

struct CrossValidationResult {
  TrainTestSplit split;
  std::vector<M4Model> models;                  // one per fold
  std::vector<std::vector<double>> trajectories;  // per fold epoch losses
  EvalReport report;
};

// 4:1 train/test split, k folds over the train ids; fold f trains on the
// other k−1 folds with seed = base + f and is scored on the test split.
CrossValidationResult cross_validate(const std::vector<Bag>& bags,
                                     const std::vector<std::string>& task_names,
                                     const CrossValidationConfig& config);

// Scores already-trained fold models on the test split (the eval command).
EvalReport evaluate_folds(const std::vector<M4Model>& models, const std::vector<Bag>& test_bags,
                          const std::vector<std::string>& task_names);

// Picks bags by id, preserving the order of `ids`.
std::vector<Bag> select_bags(const std::vector<Bag>& bags, const std::vector<std::string>& ids);

struct GradcheckConfig {
  ModelConfig model;         // desk-scale dims; tasks, experts, seed used
  std::size_t bag_size = 10;
  std::size_t literal_bag_size = 25;  // literal stride-3 k=7 needs side ≥ 5
  double h = 1e-5;
  double threshold = 1e-4;
  // Scales every analytic gradient by this factor; 1.01 checks the checker.
  double corrupt_factor = 1.0;

  static GradcheckConfig desk();
};

struct GradcheckEntry {
  std::string group;   // "layer" or "variant"
  std::string target;  // layer / variant name
  std::string parameter;
  double max_rel_error = 0.0;
  bool passed = false;
};

std::vector<GradcheckEntry> gradcheck_suite(const GradcheckConfig& config);

}  // namespace m4
