#include "m4/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "m4/errors.hpp"
#include "m4/random.hpp"

namespace m4 {

AdamState AdamState::for_parameters(const ParameterList& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.size(), 0.0);
    s.v.emplace_back(p.tensor.size(), 0.0);
  }
  return s;
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::uint64_t t, const AdamState& hp) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw ShapeError("Adam update: parameter, gradient and moment sizes differ (" +
                     std::to_string(param.size()) + ", " + std::to_string(grad.size()) + ", " +
                     std::to_string(m.size()) + ", " + std::to_string(v.size()) + ")");
  }
  if (t == 0) throw ConfigError("Adam step counter must be >= 1 when updating");
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    // Coordinates without gradient this step are left alone, moments included.
    if (g == 0.0) continue;
    m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
    v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    param[i] -= hp.lr * m_hat / (std::sqrt(v_hat) + hp.eps);
  }
}

void adam_step(const ParameterList& params, std::span<const std::span<const double>> grads,
               AdamState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("Adam step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients and " +
                     std::to_string(state.m.size()) + " moment slots");
  }
  ++state.t;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    adam_update(p.mutable_values(), grads[i], state.m[i], state.v[i], state.t, state);
  }
}

void adam_step(const ParameterList& params, AdamState& state) {
  std::vector<std::vector<double>> zeros;
  std::vector<std::span<const double>> grads;
  grads.reserve(params.size());
  zeros.reserve(params.size());
  for (const auto& p : params) {
    if (p.tensor.has_grad()) {
      grads.push_back(p.tensor.grad());
    } else {
      zeros.emplace_back(p.tensor.size(), 0.0);
      grads.push_back(zeros.back());
    }
  }
  adam_step(params, grads, state);
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
}

TrainResult train(M4Model& model, const std::vector<Bag>& bags, const TrainConfig& config,
                  const std::function<void(std::size_t, double)>& on_epoch) {
  config.validate();
  if (bags.empty()) throw ConfigError("cannot train on an empty set of bags");

  struct Prepared {
    std::size_t source;
    Tensor features;
    std::vector<double> labels;
    std::vector<std::uint8_t> mask;
  };
  std::vector<Prepared> data;
  data.reserve(bags.size());
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const auto& b = bags[i];
    if (b.labels.size() != model.config.tasks) {
      throw ShapeError("bag '" + b.id + "' has " + std::to_string(b.labels.size()) +
                       " labels, model has " + std::to_string(model.config.tasks) + " tasks");
    }
    auto mask = b.label_mask();
    if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) continue;
    data.push_back({i, b.tensor(), b.label_values(), std::move(mask)});
  }
  if (data.empty()) throw ConfigError("no training bag carries any label");

  const ParameterList params = model.parameters();
  AdamState state = AdamState::for_parameters(params, config.lr);
  Rng rng(derive_seed(config.seed, 0x7a11));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  Tape tape;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    for (std::size_t idx : order) {
      const auto& ex = data[idx];
      model.zero_grad();
      tape.reset();
      double loss_value = 0.0;
      try {
        auto out = model.forward(tape, ex.features);
        Tensor loss = multi_task_loss(tape, out, ex.labels, ex.mask);
        loss_value = loss.item();
        tape.backward(loss);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ", bag '" +
                           bags[ex.source].id + "': " + e.what());
      }
      adam_step(params, state);
      total += loss_value;
      ++result.steps;
    }
    const double mean = total / static_cast<double>(data.size());
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

namespace {

void check_auc_inputs(std::span<const double> scores, std::span<const int> labels,
                      std::size_t& positives, std::size_t& negatives) {
  if (scores.size() != labels.size()) {
    throw ShapeError("AUC: " + std::to_string(scores.size()) + " scores but " +
                     std::to_string(labels.size()) + " labels");
  }
  positives = negatives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      ++positives;
    } else if (labels[i] == 0) {
      ++negatives;
    } else {
      throw ConfigError("AUC labels must be 0 or 1");
    }
    if (std::isnan(scores[i])) throw NumericError("AUC: NaN score");
  }
  if (positives == 0 || negatives == 0) {
    throw UndefinedAucError("AUC is undefined with " + std::to_string(positives) + " positives and " +
                            std::to_string(negatives) + " negatives");
  }
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  std::size_t pos = 0, neg = 0;
  check_auc_inputs(scores, labels, pos, neg);
  const std::size_t m = scores.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Ranks are 1-based; a tie block spanning positions i..j−1 shares (i+1+j)/2.
  // Doubled ranks keep the sum integral.
  std::uint64_t doubled_rank_sum = 0;
  for (std::size_t i = 0; i < m;) {
    std::size_t j = i + 1;
    while (j < m && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t doubled = i + 1 + j;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) doubled_rank_sum += doubled;
    }
    i = j;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  const double u = static_cast<double>(doubled_rank_sum) / 2.0 - p * (p + 1.0) / 2.0;
  return u / (p * q);
}

double auc_pairwise(std::span<const double> scores, std::span<const int> labels) {
  std::size_t pos = 0, neg = 0;
  check_auc_inputs(scores, labels, pos, neg);
  std::uint64_t doubled_wins = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j]) {
        doubled_wins += 2;
      } else if (scores[i] == scores[j]) {
        doubled_wins += 1;
      }
    }
  }
  return static_cast<double>(doubled_wins) / 2.0 / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::vector<std::vector<double>> predict(const M4Model& model, const std::vector<Bag>& bags) {
  std::vector<std::vector<double>> out;
  out.reserve(bags.size());
  Tape tape(Tape::Mode::Inference);
  for (const auto& b : bags) out.push_back(model.forward(tape, b.tensor()).probs);
  return out;
}

std::vector<TaskScore> evaluate(const M4Model& model, const std::vector<Bag>& bags) {
  const auto probs = predict(model, bags);
  const std::size_t n = model.config.tasks;
  std::vector<TaskScore> result(n);
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t b = 0; b < bags.size(); ++b) {
      if (bags[b].labels.size() != n) throw ShapeError("bag '" + bags[b].id + "' label count mismatch");
      const auto l = bags[b].labels[t];
      if (l == kMissingLabel) continue;
      scores.push_back(probs[b][t]);
      labels.push_back(l);
    }
    auto& r = result[t];
    r.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    r.negatives = labels.size() - r.positives;
    if (r.positives > 0 && r.negatives > 0) r.auc = auc(scores, labels);
  }
  return result;
}

double mean_auc(const std::vector<TaskScore>& scores) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : scores) {
    if (!s.auc) continue;
    total += *s.auc;
    ++count;
  }
  return count == 0 ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(count);
}

std::optional<double> EvalReport::task_mean(std::size_t task) const {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& fold : folds) {
    if (task >= fold.size()) throw ShapeError("report task index out of range");
    if (!fold[task].auc) continue;
    total += *fold[task].auc;
    ++count;
  }
  if (count == 0) return std::nullopt;
  return total / static_cast<double>(count);
}

double EvalReport::mean_auc() const {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < task_names.size(); ++t) {
    if (auto m = task_mean(t)) {
      total += *m;
      ++count;
    }
  }
  return count == 0 ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(count);
}

std::vector<std::string> EvalReport::skipped_tasks() const {
  std::vector<std::string> out;
  for (std::size_t t = 0; t < task_names.size(); ++t) {
    for (const auto& fold : folds) {
      if (!fold[t].auc) {
        out.push_back(task_names[t]);
        break;
      }
    }
  }
  return out;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  auto cell = [&](const std::optional<double>& v) {
    if (v) {
      os << *v;
    } else {
      os << "NA";
    }
  };
  os << "task";
  for (std::size_t f = 0; f < folds.size(); ++f) os << ",fold" << f + 1;
  os << ",mean,positives,negatives\n";
  for (std::size_t t = 0; t < task_names.size(); ++t) {
    os << task_names[t];
    for (const auto& fold : folds) {
      os << ',';
      cell(fold[t].auc);
    }
    os << ',';
    cell(task_mean(t));
    const auto& counts = folds.empty() ? TaskScore{} : folds.front()[t];
    os << ',' << counts.positives << ',' << counts.negatives << '\n';
  }
  os << "mean";
  for (const auto& fold : folds) {
    os << ',';
    const double m = m4::mean_auc(fold);
    cell(std::isnan(m) ? std::nullopt : std::optional<double>(m));
  }
  os << ',';
  const double overall = mean_auc();
  cell(std::isnan(overall) ? std::nullopt : std::optional<double>(overall));
  os << ",,\n";
  return os.str();
}

void EvalReport::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path);
  out << to_csv();
  if (!out) throw IoError("short write to " + path);
}

std::vector<Bag> select_bags(const std::vector<Bag>& bags, const std::vector<std::string>& ids) {
  std::map<std::string, const Bag*> by_id;
  for (const auto& b : bags) by_id[b.id] = &b;
  std::vector<Bag> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ConfigError("unknown bag id '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

EvalReport evaluate_folds(const std::vector<M4Model>& models, const std::vector<Bag>& test_bags,
                          const std::vector<std::string>& task_names) {
  EvalReport report;
  report.task_names = task_names;
  for (const auto& m : models) {
    if (m.config.tasks != task_names.size()) {
      throw ConfigError("model has " + std::to_string(m.config.tasks) + " tasks but the data has " +
                        std::to_string(task_names.size()));
    }
    report.folds.push_back(evaluate(m, test_bags));
  }
  return report;
}

CrossValidationResult cross_validate(const std::vector<Bag>& bags,
                                     const std::vector<std::string>& task_names,
                                     const CrossValidationConfig& config) {
  if (config.folds == 0) throw ConfigError("folds must be >= 1");
  config.train.validate();
  std::vector<std::string> ids;
  ids.reserve(bags.size());
  for (const auto& b : bags) ids.push_back(b.id);

  CrossValidationResult result;
  result.split = split_train_test(ids, config.split_seed);
  std::vector<std::vector<std::string>> fold_ids;
  if (config.folds > 1) fold_ids = kfold(result.split.train, config.folds, config.split_seed);

  const std::size_t k = config.folds;
  result.models.resize(k);
  result.trajectories.resize(k);
  const auto test_bags = select_bags(bags, result.split.test);

  auto run_fold = [&](std::size_t f) {
    std::vector<std::string> train_ids;
    if (k == 1) {
      train_ids = result.split.train;
    } else {
      for (std::size_t g = 0; g < k; ++g) {
        if (g != f) train_ids.insert(train_ids.end(), fold_ids[g].begin(), fold_ids[g].end());
      }
    }
    ModelConfig mc = config.model;
    mc.seed = config.model.seed + f;
    TrainConfig tc = config.train;
    tc.seed = config.train.seed + f;
    M4Model model = M4Model::build(mc);
    auto traj = train(model, select_bags(bags, train_ids), tc);
    result.models[f] = std::move(model);
    result.trajectories[f] = std::move(traj.epoch_loss);
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(config.workers, k));
  if (workers == 1) {
    for (std::size_t f = 0; f < k; ++f) run_fold(f);
  } else {
    std::vector<std::exception_ptr> errors(k);
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t f = next++; f < k; f = next++) {
          try {
            run_fold(f);
          } catch (...) {
            errors[f] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  result.report = evaluate_folds(result.models, test_bags, task_names);
  return result;
}

}  // namespace m4
