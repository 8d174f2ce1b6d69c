#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "m4/errors.hpp"
#include "m4/params_io.hpp"
#include "m4/train.hpp"

using namespace m4;
using testing::TempDir;

namespace {

ModelConfig tiny(Variant v, std::size_t d, std::size_t tasks, std::uint64_t seed) {
  ModelConfig c;
  c.input_dim = d;
  c.expert_dim = 8;
  c.gate_dim = 8;
  c.attention_dim = 4;
  c.tower_hidden = 4;
  c.experts = 2;
  c.tasks = tasks;
  c.variant = v;
  c.seed = seed;
  return c;
}

SyntheticDataset dataset(std::size_t bags, std::size_t tasks, double strength, std::uint64_t seed) {
  SyntheticSpec s;
  s.tasks = tasks;
  s.bags = bags;
  s.dim = 16;
  s.min_instances = 6;
  s.max_instances = 12;
  s.prevalence = SyntheticSpec::descending_prevalence(tasks, 0.5, 0.3);
  s.latent_dim = 1 + tasks;
  s.task_loadings = SyntheticSpec::correlated_loadings(tasks, 1, 1.0);
  s.signal_strength = strength;
  s.seed = seed;
  auto d = generate_synthetic(s);
  normalize_bags(d.bags);
  return d;
}

std::vector<double> snapshot(const M4Model& m) {
  std::vector<double> out;
  for (const auto& p : m.parameters()) out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

}  // namespace

TEST_CASE("first Adam step moves each coordinate by lr against the gradient sign") {
  std::vector<double> theta{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -4.0, 1e-3};
  std::vector<double> m(3, 0.0), v(3, 0.0);
  AdamState hp;
  hp.lr = 0.01;
  adam_update(theta, g, m, v, 1, hp);
  CHECK(theta[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(theta[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(theta[2] == doctest::Approx(0.5 - 0.01).epsilon(1e-4));
}

TEST_CASE("zero gradient leaves parameters and moments unchanged") {
  Tensor p({2}, {0.4, -0.7}, true);
  ParameterList ps{{"p", p}};
  AdamState st = AdamState::for_parameters(ps, 0.1);
  st.m[0] = {0.2, -0.1};
  st.v[0] = {0.05, 0.02};
  st.t = 3;
  const std::vector<double> zero(2, 0.0);
  const std::span<const double> grads[] = {zero};
  adam_step(ps, grads, st);
  CHECK(st.t == 4);
  CHECK(p.at(0) == 0.4);
  CHECK(p.at(1) == -0.7);
  CHECK(st.m[0] == std::vector<double>{0.2, -0.1});
  adam_step(ps, st);  // no accumulated gradient at all
  CHECK(p.at(0) == 0.4);
}

TEST_CASE("Adam minimises a quadratic") {
  Tensor theta({1}, {1.0}, true);
  ParameterList ps{{"theta", theta}};
  AdamState st = AdamState::for_parameters(ps, 0.1);
  for (int i = 0; i < 200; ++i) {
    theta.zero_grad();
    Tape tape;
    tape.backward(ad::sum(tape, ad::mul(tape, theta, theta)));
    adam_step(ps, st);
  }
  CHECK(std::abs(theta.at(0)) < 0.05);
}

TEST_CASE("training is deterministic and lr=0 is a no-op") {
  auto data = dataset(30, 2, 2.0, 1);
  M4Model a = M4Model::build(tiny(Variant::M4, 16, 2, 3));
  M4Model b = M4Model::build(tiny(Variant::M4, 16, 2, 3));
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 3;
  cfg.seed = 4;
  auto ra = train(a, data.bags, cfg);
  auto rb = train(b, data.bags, cfg);
  CHECK(ra.epoch_loss == rb.epoch_loss);
  CHECK(ra.steps == 90);
  CHECK(snapshot(a) == snapshot(b));

  M4Model c = M4Model::build(tiny(Variant::MmoeAmil, 16, 2, 3));
  const auto before = snapshot(c);
  cfg.lr = 0.0;
  train(c, data.bags, cfg);
  CHECK(snapshot(c) == before);
  cfg.lr = -1.0;
  CHECK_THROWS_AS(train(c, data.bags, cfg), ConfigError);
}

TEST_CASE("loss falls on separable data") {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto data = dataset(40, 2, 3.0, seed);
    M4Model m = M4Model::build(tiny(Variant::M4, 16, 2, seed));
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.epochs = 30;
    cfg.seed = seed;
    auto r = train(m, data.bags, cfg);
    CHECK(r.epoch_loss.back() < r.epoch_loss.front());
    for (double l : r.epoch_loss) CHECK(l >= 0.0);
  }
}

TEST_CASE("AUC examples and pairwise oracle") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(auc(s, y) == 0.75);
  CHECK(auc_pairwise(s, y) == 0.75);
  CHECK(auc(std::vector<double>{0.1, 0.2, 0.9}, std::vector<int>{0, 1, 1}) == 1.0);
  CHECK(auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, y) == 0.5);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), UndefinedAucError);

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> sc(30);
    std::vector<int> lb(30);
    for (std::size_t i = 0; i < 30; ++i) {
      sc[i] = std::round(rng.uniform(0.0, 5.0));  // plenty of ties
      lb[i] = i % 3 == 0 ? 1 : 0;
    }
    const double a = auc(sc, lb);
    CHECK(a == auc_pairwise(sc, lb));
    std::vector<double> warped(sc.size());
    for (std::size_t i = 0; i < sc.size(); ++i) warped[i] = std::exp(2.0 * sc[i]) - 7.0;
    CHECK(auc(warped, lb) == a);
  }
}

TEST_CASE("cross-validation structure and determinism") {
  auto data = dataset(30, 2, 2.0, 6);
  CrossValidationConfig cfg;
  cfg.model = tiny(Variant::MmoeMpAmil, 16, 2, 7);
  cfg.train.lr = 1e-3;
  cfg.train.epochs = 2;
  cfg.folds = 3;
  cfg.split_seed = 8;
  auto r = cross_validate(data.bags, data.task_names, cfg);
  CHECK(r.models.size() == 3);
  CHECK(r.trajectories.size() == 3);
  CHECK(r.report.fold_count() == 3);
  CHECK(r.split.test.size() == 6);
  std::set<std::string> test(r.split.test.begin(), r.split.test.end());
  for (const auto& id : r.split.train) CHECK(test.count(id) == 0);

  cfg.workers = 3;
  auto again = cross_validate(data.bags, data.task_names, cfg);
  CHECK(again.trajectories == r.trajectories);
  CHECK(again.report.to_csv() == r.report.to_csv());

  const std::string csv = r.report.to_csv();
  CHECK(csv.rfind("task,fold1,fold2,fold3,mean,positives,negatives\n", 0) == 0);
  CHECK(csv.find("\nmean,") != std::string::npos);

  auto rescored = evaluate_folds(r.models, select_bags(data.bags, r.split.test), data.task_names);
  CHECK(rescored.to_csv() == csv);
}

TEST_CASE("report handles single-class tasks") {
  EvalReport rep;
  rep.task_names = {"a", "b"};
  rep.folds = {{TaskScore{0.8, 3, 4}, TaskScore{std::nullopt, 0, 7}}, {TaskScore{0.6, 3, 4}, TaskScore{std::nullopt, 0, 7}}};
  CHECK(*rep.task_mean(0) == doctest::Approx(0.7));
  CHECK_FALSE(rep.task_mean(1).has_value());
  CHECK(rep.mean_auc() == doctest::Approx(0.7));
  CHECK(rep.skipped_tasks() == std::vector<std::string>{"b"});
  CHECK(rep.to_csv().find("b,NA,NA,NA,0,7") != std::string::npos);
}

TEST_CASE("high-signal data is learnable, signal-free data is not") {
  double strong = 0.0, none = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (double strength : {2.0, 0.0}) {
      auto data = dataset(300, 3, strength, seed);
      CrossValidationConfig cfg;
      cfg.model = tiny(Variant::AmilSingle, 16, 3, seed);
      cfg.train.lr = 1e-3;
      cfg.train.epochs = 10;
      cfg.train.seed = seed;
      cfg.folds = 1;
      cfg.split_seed = seed;
      const double m = cross_validate(data.bags, data.task_names, cfg).report.mean_auc();
      (strength > 0 ? strong : none) += m / 3.0;
    }
  }
  CHECK(strong >= 0.8);
  CHECK(std::abs(none - 0.5) <= 0.05);
}

TEST_CASE("gradcheck suite passes and flags a corrupted gradient") {
  auto cfg = GradcheckConfig::desk();
  auto report = gradcheck_suite(cfg);
  std::set<std::string> variants;
  for (const auto& e : report) {
    CHECK_MESSAGE(e.passed, e.target << "/" << e.parameter << " " << e.max_rel_error);
    if (e.group == "variant") variants.insert(e.target);
  }
  for (const char* v : {"AMIL_single", "MMoE_AMIL", "MMoE_MPAMIL", "M4", "M4_literal"}) CHECK(variants.count(v) == 1);
  cfg.corrupt_factor = 1.01;
  bool flagged = false;
  for (const auto& e : gradcheck_suite(cfg)) flagged = flagged || !e.passed;
  CHECK(flagged);
}

TEST_CASE("saved runs round trip and reject mismatched configs") {
  TempDir dir;
  SavedRun run;
  run.models.push_back(M4Model::build(tiny(Variant::M4, 16, 2, 1)));
  run.models.push_back(M4Model::build(tiny(Variant::M4, 16, 2, 2)));
  run.scaler = FeatureScaler::from_bounds({0.0, -1.0}, {2.0, 3.0});
  run.split_seed = 0x123456789abcULL;
  save_run(run, dir / "run.mpr");
  SavedRun back = load_run(dir / "run.mpr", run.models[0].config);
  REQUIRE(back.models.size() == 2);
  CHECK(back.split_seed == run.split_seed);
  CHECK(back.scaler->upper() == std::vector<double>{2.0, 3.0});
  for (std::size_t f = 0; f < 2; ++f) {
    CHECK(snapshot(back.models[f]) == snapshot(run.models[f]));
    CHECK(back.models[f].config.seed == run.models[f].config.seed);
  }
  ModelConfig other = run.models[0].config;
  other.experts = 3;
  CHECK_THROWS_WITH_AS(load_run(dir / "run.mpr", other), doctest::Contains("experts"), ConfigError);

  auto bytes = encode_params(pack_run(run));
  CHECK(std::equal(bytes.begin(), bytes.begin() + 4, "MPR1"));
  bytes.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_params(bytes), TruncatedError);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_params(bytes), BadMagicError);
}
