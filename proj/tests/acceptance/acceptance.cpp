// Acceptance suite: one PASS/FAIL line per criterion, details indented below.
// A criterion fails if any of its requirements fails. The exit code ignores
// directional requirements, which are reported but are not hard gates.
#include <algorithm>
#include <bit>
#include <map>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "m4/cli.hpp"
#include "m4/data.hpp"
#include "m4/errors.hpp"
#include "m4/model.hpp"
#include "m4/ops.hpp"
#include "m4/params_io.hpp"
#include "m4/random.hpp"
#include "m4/train.hpp"

namespace fs = std::filesystem;
using namespace m4;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  bool hard_pass = true;
  std::vector<std::string> details;

  void note(const std::string& s) { details.push_back(s); }
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = hard_pass = false;
      note("failed: " + what);
    }
  }
  void directional(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      note("failed (directional): " + what);
    }
  }
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

Tensor random_bag(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<double> v(n * d);
  for (auto& x : v) x = rng.normal();
  return Tensor({n, d}, std::move(v));
}

ModelConfig desk_config(Variant v, std::size_t experts, std::size_t tasks) {
  ModelConfig c;
  c.variant = v;
  c.experts = experts;
  c.tasks = tasks;
  return c;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  Outcome o;
  const auto t0 = Clock::now();
  auto cfg = GradcheckConfig::desk();
  const auto report = gradcheck_suite(cfg);
  double worst = 0.0;
  std::vector<std::string> variants;
  for (const auto& e : report) {
    worst = std::max(worst, e.max_rel_error);
    o.require(e.passed, e.group + " " + e.target + " " + e.parameter + " rel err " + fmt(e.max_rel_error, 8));
    if (e.group == "variant" && std::find(variants.begin(), variants.end(), e.target) == variants.end()) {
      variants.push_back(e.target);
    }
  }
  for (Variant v : kAblationLadder) {
    o.require(std::find(variants.begin(), variants.end(), to_string(v)) != variants.end(),
              "variant " + to_string(v) + " checked");
  }
  const double elapsed = seconds_since(t0);
  o.require(elapsed < 120.0, "runtime under 2 minutes");
  std::ostringstream os;
  os << report.size() << " parameter checks, max relative error " << std::scientific << std::setprecision(2)
     << worst << ", " << fmt(elapsed, 1) << " s";
  o.note(os.str());
  return o;
}

Outcome criterion2() {
  Outcome o;
  Rng rng(2024);
  double worst = 0.0;
  std::size_t rows = 0;
  const Variant variants[] = {Variant::AmilSingle, Variant::MmoeAmil, Variant::MmoeMpAmil, Variant::M4};
  for (std::size_t n : {1, 2, 7, 9, 50, 100}) {
    for (Variant v : variants) {
      for (ShapeMode mode : {ShapeMode::Preserve, ShapeMode::Literal}) {
        const bool mp = v == Variant::MmoeMpAmil || v == Variant::M4;
        if (mode == ShapeMode::Literal && (!mp || n < 17)) continue;
        for (int rep = 0; rep < 3; ++rep) {
          auto c = desk_config(v, 5, 10);
          c.shape_mode = mode;
          c.seed = rng.index(1u << 30);
          const auto model = M4Model::build(c);
          Tape tape(Tape::Mode::Inference);
          const auto out = model.forward(tape, random_bag(n, c.input_dim, rng));
          for (std::size_t r = 0; r < out.attention_rows; ++r) {
            auto row = out.attention_row(r);
            worst = std::max(worst, std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0));
            ++rows;
          }
          for (std::size_t t = 0; t < out.tasks; ++t) {
            for (std::size_t s = 0; s < out.gate_segments; ++s) {
              double total = 0.0;
              for (std::size_t e = 0; e < out.attention_rows; ++e) total += out.gate(t, s, e);
              worst = std::max(worst, std::abs(total - 1.0));
              ++rows;
            }
          }
        }
      }
    }
  }
  o.require(worst <= 1e-12, "attention and gate rows sum to 1 within 1e-12");
  std::ostringstream os;
  os << rows << " attention/gate rows, max |sum - 1| = " << std::scientific << std::setprecision(2) << worst;
  o.note(os.str());
  return o;
}

Outcome criterion3() {
  Outcome o;
  Rng rng(33);
  // (a) identity branches.
  double worst_a = 0.0;
  for (std::size_t n : {1, 4, 10, 23, 64}) {
    Rng init(100 + n);
    auto mp = MPAmilParams::init(64, 32, 16, init);
    set_identity_branches(mp);
    AmilParams amil{mp.embed, mp.attention};
    const Tensor h = random_bag(n, 64, rng);
    Tape tape(Tape::Mode::Inference);
    const auto a = amil_forward(tape, h, amil);
    const auto b = mp_amil_forward(tape, h, mp, ShapeMode::Preserve);
    for (std::size_t i = 0; i < a.pooled.size(); ++i) {
      worst_a = std::max(worst_a, std::abs(a.pooled.at(i) - b.pooled.at(i)));
    }
    for (std::size_t i = 0; i < a.attention.size(); ++i) {
      worst_a = std::max(worst_a, std::abs(a.attention.at(i) - b.attention.at(i)));
    }
  }
  o.require(worst_a <= 1e-12, "(a) identity-branch MP-AMIL equals AMIL within 1e-12");
  o.note("(a) max |MP-AMIL - AMIL| = " + fmt(worst_a, 17));

  // (b) single expert.
  bool exact_b = true;
  for (ShapeMode mode : {ShapeMode::Preserve, ShapeMode::Literal}) {
    auto c = desk_config(Variant::M4, 1, 4);
    c.shape_mode = mode;
    const auto model = M4Model::build(c);
    const Tensor h = random_bag(30, 64, rng);
    Tape tape(Tape::Mode::Inference);
    const auto out = model.forward(tape, h);
    const auto lone = mp_amil_forward(tape, h, model.mp_experts[0], mode);
    for (std::size_t t = 0; t < c.tasks; ++t) {
      auto tin = out.tower_input(t);
      exact_b = exact_b && std::equal(tin.begin(), tin.end(), lone.pooled.values().begin());
    }
  }
  o.require(exact_b, "(b) E=1 tower inputs equal the expert output exactly");
  o.note(std::string("(b) E=1 tower inputs bitwise equal: ") + (exact_b ? "yes" : "no"));

  // (c) flatten(restore(x)) == x.
  bool exact_c = true;
  for (std::size_t n = 1; n <= 64; ++n) {
    const Tensor x = random_bag(n, 5, rng);
    Tape tape(Tape::Mode::Inference);
    const auto layout = ad::grid_restore(tape, x);
    const Tensor back = ad::grid_flatten(tape, layout.grid, n);
    exact_c = exact_c && back.shape() == x.shape() &&
              std::equal(x.values().begin(), x.values().end(), back.values().begin());
  }
  o.require(exact_c, "(c) flatten(restore(x)) bitwise equal for N in 1..64");
  o.note(std::string("(c) round trip exact for N = 1..64: ") + (exact_c ? "yes" : "no"));
  return o;
}

Outcome criterion4() {
  Outcome o;
  Rng rng(44);
  double worst = 0.0;
  for (int set = 0; set < 200; ++set) {
    const std::size_t m = 2 + rng.index(60);
    std::vector<double> scores(m);
    std::vector<int> labels(m);
    const double levels = 1.0 + static_cast<double>(rng.index(12));  // coarse grids force ties
    for (std::size_t i = 0; i < m; ++i) {
      scores[i] = std::floor(rng.uniform(0.0, levels)) / levels;
      labels[i] = static_cast<int>(rng.index(2));
    }
    labels[0] = 0;
    labels[1] = 1;
    worst = std::max(worst, std::abs(auc(scores, labels) - auc_pairwise(scores, labels)));
  }
  o.require(worst <= 1e-12, "rank AUC equals pair counting within 1e-12");
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> l{0, 0, 1, 1};
  const double worked = auc(s, l);
  o.require(worked == 0.75, "worked example returns 0.75");
  o.note("200 sets, max |rank - pairwise| = " + fmt(worst, 17) + "; worked example = " + fmt(worked, 6));
  return o;
}

Outcome criterion5() {
  Outcome o;
  Tape tape;
  const Tensor z = Tensor({1, 1}, {0.0}, true);
  const std::vector<double> one{1.0};
  const double l = ad::bce_with_logits(tape, z, one, one).item();
  o.require(std::abs(l - std::log(2.0)) <= 1e-12, "n=1, y=1, logit=0 gives ln 2");
  o.note("loss(y=1, z=0) - ln 2 = " + fmt(l - std::log(2.0), 17));

  // Through the model loss path as well: a one-task output with logit 0.
  ModelOutput out;
  out.tasks = 1;
  out.logits = Tensor({1, 1}, {0.0}, true);
  const double lm = multi_task_loss(tape, out, one).item();
  o.require(std::abs(lm - std::log(2.0)) <= 1e-12, "multi-task loss with n=1 gives ln 2");

  bool finite = true;
  for (double zv : {-40.0, 40.0}) {
    for (double y : {0.0, 1.0}) {
      Tape t2;
      const Tensor zz = Tensor({1, 1}, {zv}, true);
      const std::vector<double> yy{y}, w{1.0};
      const Tensor loss = ad::bce_with_logits(t2, zz, yy, w);
      t2.backward(loss);
      const double expected = std::max(zv, 0.0) - zv * y + std::log1p(std::exp(-std::abs(zv)));
      finite = finite && std::isfinite(loss.item()) && std::isfinite(zz.grad()[0]) &&
               std::abs(loss.item() - expected) <= 1e-12 * std::max(1.0, expected);
      o.note("z=" + fmt(zv, 0) + " y=" + fmt(y, 0) + ": loss " + fmt(loss.item(), 12) + ", grad " +
             fmt(zz.grad()[0], 12));
    }
  }
  o.require(finite, "extreme logits give finite, stable losses and gradients");
  return o;
}

SyntheticSpec experiment_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.tasks = 10;
  s.bags = 400;
  s.dim = 64;
  s.prevalence = SyntheticSpec::descending_prevalence(10, 0.6, 0.07);
  s.latent_dim = 2 + 10;
  s.task_loadings = SyntheticSpec::correlated_loadings(10, 2, 1.0);
  s.signal_strength = 2.0;
  s.noise_sd = 0.5;
  s.seed = seed;
  return s;
}

Outcome criterion6() {
  Outcome o;
  auto spec = experiment_spec(6);
  spec.bags = 60;
  const auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  bool data_same = a.bags.size() == b.bags.size();
  for (std::size_t i = 0; data_same && i < a.bags.size(); ++i) {
    data_same = encode_bag(a.bags[i]) == encode_bag(b.bags[i]) && a.bags[i].labels == b.bags[i].labels &&
                a.signal_mask[i] == b.signal_mask[i];
  }
  o.require(data_same, "datasets identical for equal seeds");

  auto other = spec;
  other.seed = 7;
  const auto c = generate_synthetic(other);
  o.require(encode_bag(a.bags[0]) != encode_bag(c.bags[0]), "different seeds give different data");

  bool init_same = true;
  for (Variant v : kAblationLadder) {
    auto mc = desk_config(v, 3, 10);
    mc.seed = 11;
    const auto p = M4Model::build(mc), q = M4Model::build(mc);
    const auto pp = encode_params(p.parameters()), qq = encode_params(q.parameters());
    init_same = init_same && pp == qq;
  }
  o.require(init_same, "initializations identical for equal seeds");

  auto bags = a.bags;
  normalize_bags(bags);
  TrainConfig tc;
  tc.epochs = 3;
  tc.lr = 1e-3;
  tc.seed = 5;
  auto mc = desk_config(Variant::M4, 3, 10);
  mc.seed = 5;
  auto m1 = M4Model::build(mc), m2 = M4Model::build(mc);
  const auto t1 = train(m1, bags, tc), t2 = train(m2, bags, tc);
  bool traj_same = t1.epoch_loss.size() == t2.epoch_loss.size();
  for (std::size_t i = 0; traj_same && i < t1.epoch_loss.size(); ++i) {
    traj_same = std::bit_cast<std::uint64_t>(t1.epoch_loss[i]) == std::bit_cast<std::uint64_t>(t2.epoch_loss[i]);
  }
  traj_same = traj_same && encode_params(m1.parameters()) == encode_params(m2.parameters());
  o.require(traj_same, "loss trajectories and trained parameters bitwise identical");
  tc.seed = 6;
  auto m3 = M4Model::build(mc);
  const auto t3 = train(m3, bags, tc);
  o.require(t3.epoch_loss != t1.epoch_loss, "a different shuffle seed changes the trajectory");
  o.note("3-epoch M4 trajectory: " + fmt(t1.epoch_loss[0], 6) + ", " + fmt(t1.epoch_loss[1], 6) + ", " +
         fmt(t1.epoch_loss[2], 6));
  return o;
}

// Shared by criteria 7 and 9.
struct SeedRun {
  std::uint64_t seed = 0;
  SyntheticDataset data;
  std::vector<Bag> bags;  // normalized
  TrainTestSplit split;
  M4Model m4;
  std::vector<TaskScore> m4_scores;
  std::vector<TaskScore> single_scores;
};

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

std::vector<SeedRun> run_experiment() {
  std::vector<SeedRun> runs;
  for (auto seed : kSeeds) {
    SeedRun r;
    r.seed = seed;
    r.data = generate_synthetic(experiment_spec(seed));
    r.bags = r.data.bags;
    normalize_bags(r.bags);
    CrossValidationConfig cv;
    cv.folds = 1;
    cv.split_seed = seed;
    cv.train.seed = seed;
    cv.train.epochs = 30;
    cv.train.lr = 1e-4;
    cv.model = desk_config(Variant::M4, 5, 10);
    cv.model.seed = seed;
    auto m4_run = cross_validate(r.bags, r.data.task_names, cv);
    r.split = m4_run.split;
    r.m4 = std::move(m4_run.models.front());
    r.m4_scores = m4_run.report.folds.front();
    cv.model.variant = Variant::AmilSingle;
    auto single_run = cross_validate(r.bags, r.data.task_names, cv);
    r.single_scores = single_run.report.folds.front();
    runs.push_back(std::move(r));
  }
  return runs;
}

Outcome criterion7(const std::vector<SeedRun>& runs, double elapsed) {
  Outcome o;
  double mean_all = 0.0, rare_m4 = 0.0, rare_single = 0.0;
  for (const auto& r : runs) {
    const double all = mean_auc(r.m4_scores);
    // Tasks 9 and 10 have the lowest prevalence.
    auto rare = [](const std::vector<TaskScore>& s) {
      std::vector<double> v;
      for (std::size_t t : {8u, 9u}) {
        if (s[t].auc) v.push_back(*s[t].auc);
      }
      return v.empty() ? std::nan("") : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    const double rm = rare(r.m4_scores), rs = rare(r.single_scores);
    o.note("seed " + std::to_string(r.seed) + ": M4 mean AUC " + fmt(all) + ", rare tasks M4 " + fmt(rm) +
           " vs AMIL_single " + fmt(rs) + " (AMIL_single mean " + fmt(mean_auc(r.single_scores)) + ")");
    mean_all += all;
    rare_m4 += rm;
    rare_single += rs;
  }
  const double k = static_cast<double>(runs.size());
  mean_all /= k;
  rare_m4 /= k;
  rare_single /= k;
  o.note("5-seed means: M4 all tasks " + fmt(mean_all) + ", rare tasks M4 " + fmt(rare_m4) +
         " vs AMIL_single " + fmt(rare_single) + "; " + fmt(elapsed, 0) + " s");
  o.require(mean_all >= 0.80, "(i) mean test AUC over all tasks >= 0.80");
  o.directional(rare_m4 >= rare_single, "(ii) rare-task AUC of M4 >= single-task AMIL");
  o.require(elapsed <= 900.0, "runtime <= 15 minutes");
  return o;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

Outcome criterion8(const fs::path& work) {
  Outcome o;
  const fs::path data_dir = work / "ablation_data";
  write_dataset(generate_synthetic(experiment_spec(8)), data_dir);
  cli::RunConfig config;
  config.set("seed", "8");
  config.set("train.folds", "2");
  config.set("train.epochs", "10");
  std::ostringstream out, err;
  const int rc = cli::cmd_ablation(config, data_dir / "manifest.csv", work / "ablation", out, err);
  o.require(rc == 0, "ablation sweep exit code 0 (got " + std::to_string(rc) + "): " + err.str());
  for (Variant v : kAblationLadder) {
    const fs::path report = work / ("ablation_" + to_string(v) + ".report.csv");
    const fs::path model = work / ("ablation_" + to_string(v) + ".mpr");
    o.require(fs::exists(report) && fs::exists(model), "files for " + to_string(v));
    if (!fs::exists(report)) continue;
    const auto rows = read_csv(report);
    bool valid = rows.size() == 12 && rows[0].size() == 6 && rows[0][0] == "task" && rows[11][0] == "mean";
    std::string mean_cell;
    for (std::size_t r = 1; valid && r < rows.size(); ++r) {
      valid = rows[r].size() == 6;
      for (std::size_t c = 1; valid && c <= 3; ++c) {
        if (rows[r][c] == "NA") continue;
        const double v2 = std::stod(rows[r][c]);
        valid = v2 >= 0.0 && v2 <= 1.0;
      }
      if (r == 11 && valid) mean_cell = rows[r][3];
    }
    o.require(valid, "report for " + to_string(v) + " is well formed");
    o.note(to_string(v) + ": mean AUC " + mean_cell);
  }
  return o;
}

Outcome criterion9(const std::vector<SeedRun>& runs) {
  Outcome o;
  std::size_t good_seeds = 0;
  for (const auto& r : runs) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < r.bags.size(); ++i) index[r.bags[i].id] = i;
    std::size_t localized = 0;
    std::ostringstream per_task;
    for (std::size_t t = 0; t < 10; ++t) {
      double sig = 0.0, noise = 0.0;
      std::size_t n_sig = 0, n_noise = 0;
      for (const auto& id : r.split.test) {
        const std::size_t i = index.at(id);
        if (r.bags[i].labels[t] != 1) continue;
        const auto table = cli::heatmap_scores(r.m4, r.bags[i]);
        for (std::size_t k = 0; k < r.bags[i].n; ++k) {
          if (r.data.signal_mask[i][k]) {
            sig += table.task[t][k];
            ++n_sig;
          } else {
            noise += table.task[t][k];
            ++n_noise;
          }
        }
      }
      const bool ok = n_sig > 0 && n_noise > 0 && sig / static_cast<double>(n_sig) > noise / static_cast<double>(n_noise);
      localized += ok ? 1 : 0;
      per_task << (ok ? '+' : '-');
    }
    if (localized >= 8) ++good_seeds;
    o.note("seed " + std::to_string(r.seed) + ": " + std::to_string(localized) + "/10 tasks localized [" +
           per_task.str() + "]");
  }
  o.require(good_seeds * 2 > runs.size(), ">= 8 of 10 tasks localized in a majority of seeds");
  return o;
}

Outcome criterion10(const fs::path& work) {
  Outcome o;
  Bag minimal;
  minimal.id = "tiny";
  minimal.n = 1;
  minimal.d = 1;
  minimal.features = {0.25};
  const auto tiny = encode_bag(minimal);
  o.require(tiny.size() == 17, "minimal bag encodes to 17 bytes");
  o.require(encode_bag(decode_bag(tiny)) == tiny, "minimal bag round trip");

  auto data = generate_synthetic(experiment_spec(10));
  bool bags_ok = true;
  for (std::size_t i = 0; i < 20; ++i) {
    auto b = data.bags[i];
    if (i % 2) b.grid.clear();
    const fs::path p = work / ("rt_" + std::to_string(i) + ".mbg");
    write_bag(b, p);
    const auto back = read_bag(p);
    bags_ok = bags_ok && encode_bag(back) == encode_bag(b) && back.features == b.features && back.grid == b.grid;
  }
  o.require(bags_ok, "MBG1 write/read bit exact (with and without grid)");

  SavedRun run;
  for (Variant v : {Variant::AmilSingle, Variant::MmoeAmil, Variant::MmoeMpAmil, Variant::M4, Variant::MeanPool,
                    Variant::MaxPool}) {
    auto mc = desk_config(v, 3, 4);
    mc.seed = 17 + static_cast<std::uint64_t>(v);
    run.models.push_back(M4Model::build(mc));
  }
  run.split_seed = 0xfedcba9876543210ULL;
  FeatureScaler sc;
  sc.fit(data.bags);
  run.scaler = sc;
  const fs::path p = work / "rt.mpr";
  save_run(run, p);
  const auto back = load_run(p);
  bool params_ok = pack_run(back).size() == pack_run(run).size() &&
                   encode_params(pack_run(back)) == encode_params(pack_run(run)) &&
                   back.split_seed == run.split_seed;
  std::ifstream f(p, std::ios::binary);
  std::vector<std::uint8_t> disk((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  params_ok = params_ok && disk == encode_params(pack_run(back));
  o.require(params_ok, "MPR1 write/read bit exact");
  o.note("minimal bag " + std::to_string(tiny.size()) + " bytes; MPR1 file " + std::to_string(disk.size()) +
         " bytes for 6 models");
  return o;
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "m4_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  bool all = true, hard = true;
  auto report = [&](int id, const std::string& title, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = o.hard_pass = false;
      o.note(std::string("exception: ") + e.what());
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << '\n';
    for (const auto& d : o.details) std::cout << "    " << d << '\n';
    std::cout.flush();
    all = all && o.pass;
    hard = hard && o.hard_pass;
  };

  report(1, "gradient correctness", criterion1);
  report(2, "attention and gate normalization", criterion2);
  report(3, "degeneracy equalities", criterion3);
  report(4, "AUC oracle", criterion4);
  report(5, "loss correctness", criterion5);
  report(6, "determinism", criterion6);

  std::vector<SeedRun> runs;
  double experiment_seconds = 0.0;
  std::string experiment_error;
  try {
    const auto t0 = Clock::now();
    runs = run_experiment();
    experiment_seconds = seconds_since(t0);
  } catch (const std::exception& e) {
    experiment_error = e.what();
  }
  auto needs_runs = [&](std::function<Outcome()> fn) {
    return [fn, &runs, &experiment_error]() {
      if (runs.empty()) throw Error("synthetic experiment failed: " + experiment_error);
      return fn();
    };
  };
  report(7, "synthetic multi-task benefit", needs_runs([&] { return criterion7(runs, experiment_seconds); }));
  report(8, "ablation ladder harness", [&] { return criterion8(work); });
  report(9, "heatmap signal localization", needs_runs([&] { return criterion9(runs); }));
  report(10, "format round trips", [&] { return criterion10(work); });

  fs::remove_all(work);
  if (all) {
    std::cout << "ALL CRITERIA PASSED\n";
  } else if (hard) {
    std::cout << "SOME CRITERIA FAILED (directional requirements only; hard gates passed)\n";
  } else {
    std::cout << "SOME CRITERIA FAILED\n";
  }
  return hard ? 0 : 1;
}
