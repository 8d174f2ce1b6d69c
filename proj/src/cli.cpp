#include "m4/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "m4/errors.hpp"
#include "m4/ops.hpp"
#include "m4/params_io.hpp"

namespace m4::cli {

namespace fs = std::filesystem;
using Kind = ConfigKey::Kind;

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"seed", Kind::Seed, "0", "base seed for data, initialization, shuffling and splits"},
      {"synth.bags", Kind::Count, "400", "number of bags to generate"},
      {"synth.tasks", Kind::Count, "10", "number of binary tasks"},
      {"synth.dim", Kind::Count, "64", "instance feature width"},
      {"synth.min_instances", Kind::Count, "16", "smallest bag size"},
      {"synth.max_instances", Kind::Count, "48", "largest bag size"},
      {"synth.prevalence_first", Kind::Real, "0.6", "prevalence of the most common task"},
      {"synth.prevalence_last", Kind::Real, "0.07", "prevalence of the rarest task"},
      {"synth.shared_factors", Kind::Count, "2", "latent factors shared between tasks"},
      {"synth.shared_weight", Kind::Real, "1.0", "weight of the shared factor in each task"},
      {"synth.label_noise_sd", Kind::Real, "0.5", "noise added to the latent label score"},
      {"synth.signal_fraction", Kind::Real, "0.25", "fraction of instances carrying signal"},
      {"synth.signal_strength", Kind::Real, "2.0", "length of the planted signal vector per task"},
      {"synth.noise_sd", Kind::Real, "0.5", "instance feature noise"},
      {"model.variant", Kind::Name, "M4", "AMIL_single | MMoE_AMIL | MMoE_MPAMIL | M4 | mean_pool | max_pool"},
      {"model.shape_mode", Kind::Name, "preserve", "preserve | literal"},
      {"model.expert_dim", Kind::Count, "32", "expert embedding width d_f (multiple of 4)"},
      {"model.gate_dim", Kind::Count, "32", "MP-Gate hidden width d_1 (multiple of 4)"},
      {"model.attention_dim", Kind::Count, "16", "attention hidden width L"},
      {"model.experts", Kind::Count, "5", "number of experts E"},
      {"model.tower_hidden", Kind::Count, "16", "tower hidden width"},
      {"train.lr", Kind::Real, "0.0001", "Adam learning rate"},
      {"train.epochs", Kind::Count, "30", "passes over the training bags"},
      {"train.shuffle", Kind::Flag, "true", "reshuffle bags every epoch"},
      {"train.folds", Kind::Count, "5", "cross-validation folds (1 = single model on the train split)"},
      {"train.workers", Kind::Count, "1", "folds trained concurrently"},
      {"train.normalize", Kind::Flag, "true", "min-max scale features to [-1, 1]"},
      {"gradcheck.bag_size", Kind::Count, "10", "bag size for the gradient checks"},
      {"gradcheck.threshold", Kind::Real, "0.0001", "max relative error allowed"},
  };
  return schema;
}

namespace {

const ConfigKey& schema_entry(const std::string& key) {
  for (const auto& k : config_schema()) {
    if (k.key == key) return k;
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c); };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    throw ConfigError("'" + key + "' expects a finite number, got '" + v + "'");
  }
  return out;
}

bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

void validate_value(const ConfigKey& k, const std::string& v) {
  switch (k.kind) {
    case Kind::Count:
    case Kind::Seed:
      parse_u64(k.key, v);
      break;
    case Kind::Real:
      parse_real(k.key, v);
      break;
    case Kind::Flag:
      parse_flag(k.key, v);
      break;
    case Kind::Name:
      if (k.key == "model.variant") parse_variant(v);
      if (k.key == "model.shape_mode") parse_shape_mode(v);
      break;
  }
}

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIoError;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const EmptyBagError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kVerificationFailed;
  }
}

struct LoadedData {
  Manifest manifest;
  std::vector<Bag> bags;
};

LoadedData load_dataset(const fs::path& manifest_path) {
  LoadedData d;
  d.manifest = read_manifest(manifest_path);
  d.bags = load_bags(d.manifest, manifest_path.parent_path());
  if (d.bags.empty()) throw ConfigError("manifest " + manifest_path.string() + " lists no bags");
  for (const auto& b : d.bags) {
    if (b.d != d.bags.front().d) throw ShapeError("bags in " + manifest_path.string() + " differ in width");
  }
  return d;
}

fs::path default_report(const fs::path& model) {
  fs::path p = model;
  p.replace_extension(".report.csv");
  return p;
}

void print_report_summary(const EvalReport& report, std::ostream& out, std::ostream& err) {
  for (const auto& t : report.skipped_tasks()) {
    err << "warning: task " << t << " lacks both classes in the test split; excluded from the mean\n";
  }
  out << std::setprecision(6) << std::fixed;
  for (std::size_t t = 0; t < report.task_names.size(); ++t) {
    out << "  " << report.task_names[t] << ": ";
    if (auto m = report.task_mean(t)) {
      out << *m << '\n';
    } else {
      out << "NA\n";
    }
  }
  out << "mean AUC: " << report.mean_auc() << '\n';
  out.unsetf(std::ios::floatfield);
}

int train_one(const RunConfig& config, const LoadedData& data, const fs::path& model_path,
              const fs::path& report_path, std::ostream& out, std::ostream& err) {
  std::vector<Bag> bags = data.bags;
  SavedRun run;
  if (config.flag("train.normalize")) {
    FeatureScaler scaler;
    scaler.fit(bags);
    scaler.transform(bags);
    run.scaler = scaler;
  }
  auto cv = config.cv_config(bags.front().d, data.manifest.task_names.size());
  out << "training " << to_string(cv.model.variant) << " on " << bags.size() << " bags, "
      << cv.folds << " fold(s), " << cv.train.epochs << " epochs\n";
  auto result = cross_validate(bags, data.manifest.task_names, cv);
  for (std::size_t f = 0; f < result.trajectories.size(); ++f) {
    const auto& traj = result.trajectories[f];
    out << "  fold " << f + 1 << ": loss " << traj.front() << " -> " << traj.back() << '\n';
  }
  run.models = std::move(result.models);
  run.split_seed = cv.split_seed;
  save_run(run, model_path);
  result.report.write_csv(report_path.string());
  print_report_summary(result.report, out, err);
  out << "wrote " << model_path.string() << " and " << report_path.string() << '\n';
  return kOk;
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : config_schema()) values_[k.key] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& entry = schema_entry(key);
  validate_value(entry, value);
  values_[key] = value;
  explicit_[key] = true;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    try {
      c.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

const std::string& RunConfig::text(const std::string& key) const {
  schema_entry(key);
  return values_.at(key);
}

std::size_t RunConfig::count(const std::string& key) const {
  return static_cast<std::size_t>(parse_u64(key, text(key)));
}

std::uint64_t RunConfig::seed(const std::string& key) const { return parse_u64(key, text(key)); }
double RunConfig::real(const std::string& key) const { return parse_real(key, text(key)); }
bool RunConfig::flag(const std::string& key) const { return parse_flag(key, text(key)); }

SyntheticSpec RunConfig::synthetic_spec() const {
  SyntheticSpec s;
  s.tasks = count("synth.tasks");
  s.bags = count("synth.bags");
  s.dim = count("synth.dim");
  s.min_instances = count("synth.min_instances");
  s.max_instances = count("synth.max_instances");
  const double first = real("synth.prevalence_first"), last = real("synth.prevalence_last");
  if (!(first > 0.0 && first < 1.0 && last > 0.0 && last < 1.0)) {
    throw ConfigError("prevalence_first and prevalence_last must lie in (0, 1)");
  }
  s.prevalence = SyntheticSpec::descending_prevalence(s.tasks, first, last);
  const std::size_t shared = count("synth.shared_factors");
  s.latent_dim = shared + s.tasks;
  s.task_loadings = SyntheticSpec::correlated_loadings(s.tasks, shared, real("synth.shared_weight"));
  s.label_noise_sd = real("synth.label_noise_sd");
  s.signal_fraction = real("synth.signal_fraction");
  s.signal_strength = real("synth.signal_strength");
  s.noise_sd = real("synth.noise_sd");
  s.seed = seed("seed");
  s.validate();
  return s;
}

ModelConfig RunConfig::model_config(std::size_t input_dim, std::size_t tasks) const {
  ModelConfig m;
  m.input_dim = input_dim;
  m.tasks = tasks;
  m.expert_dim = count("model.expert_dim");
  m.gate_dim = count("model.gate_dim");
  m.attention_dim = count("model.attention_dim");
  m.experts = count("model.experts");
  m.tower_hidden = count("model.tower_hidden");
  m.variant = parse_variant(text("model.variant"));
  m.shape_mode = parse_shape_mode(text("model.shape_mode"));
  m.seed = seed("seed");
  m.validate();
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.lr = real("train.lr");
  t.epochs = count("train.epochs");
  t.shuffle = flag("train.shuffle");
  t.seed = seed("seed");
  t.validate();
  return t;
}

CrossValidationConfig RunConfig::cv_config(std::size_t input_dim, std::size_t tasks) const {
  CrossValidationConfig c;
  c.model = model_config(input_dim, tasks);
  c.train = train_config();
  c.folds = count("train.folds");
  if (c.folds == 0) throw ConfigError("train.folds must be >= 1");
  c.workers = std::max<std::size_t>(1, count("train.workers"));
  c.split_seed = seed("seed");
  return c;
}

GradcheckConfig RunConfig::gradcheck_config() const {
  GradcheckConfig g = GradcheckConfig::desk();
  g.bag_size = count("gradcheck.bag_size");
  if (g.bag_size == 0) throw ConfigError("gradcheck.bag_size must be >= 1");
  g.threshold = real("gradcheck.threshold");
  g.model.seed = seed("seed");
  return g;
}

std::string schema_help() {
  std::ostringstream os;
  os << "Configuration keys (\"key = value\" per line):\n";
  for (const auto& k : config_schema()) {
    os << "  " << std::left << std::setw(26) << k.key << std::setw(10) << k.default_value << k.help << '\n';
  }
  return os.str();
}

int cmd_synth(const RunConfig& config, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto spec = config.synthetic_spec();
    const auto data = generate_synthetic(spec);
    write_dataset(data, out_dir);
    out << "wrote " << data.bags.size() << " bags to " << out_dir.string() << '\n';
    out << "task,target_prevalence,achieved_prevalence\n";
    for (std::size_t t = 0; t < data.task_names.size(); ++t) {
      out << data.task_names[t] << ',' << spec.prevalence[t] << ',' << data.achieved_prevalence[t] << '\n';
    }
    return static_cast<int>(kOk);
  });
}

int cmd_train(const RunConfig& config, const TrainPaths& paths, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto data = load_dataset(paths.manifest);
    const fs::path report = paths.report.empty() ? default_report(paths.model) : paths.report;
    return train_one(config, data, paths.model, report, out, err);
  });
}

int cmd_ablation(const RunConfig& config, const fs::path& manifest, const fs::path& prefix,
                 std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto data = load_dataset(manifest);
    for (Variant v : kAblationLadder) {
      RunConfig c = config;
      c.set("model.variant", to_string(v));
      const fs::path model = prefix.string() + "_" + to_string(v) + ".mpr";
      const int rc = train_one(c, data, model, default_report(model), out, err);
      if (rc != kOk) return rc;
    }
    return static_cast<int>(kOk);
  });
}

int cmd_eval(const std::optional<RunConfig>& config, const fs::path& model, const fs::path& manifest,
             const fs::path& report, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    auto data = load_dataset(manifest);
    std::optional<ModelConfig> expected;
    if (config) expected = config->model_config(data.bags.front().d, data.manifest.task_names.size());
    SavedRun run = load_run(model, expected);
    if (run.scaler) run.scaler->transform(data.bags);
    std::vector<std::string> ids;
    for (const auto& b : data.bags) ids.push_back(b.id);
    const auto split = split_train_test(ids, run.split_seed);
    const auto report_data = evaluate_folds(run.models, select_bags(data.bags, split.test),
                                            data.manifest.task_names);
    report_data.write_csv(report.string());
    print_report_summary(report_data, out, err);
    out << "wrote " << report.string() << '\n';
    return static_cast<int>(kOk);
  });
}

HeatmapTable heatmap_scores(const M4Model& model, const Bag& bag) {
  Tape tape(Tape::Mode::Inference);
  const auto output = model.forward(tape, bag.tensor());
  if (output.attention_rows == 0) {
    throw ConfigError("variant " + to_string(model.config.variant) + " has no attention to map");
  }
  HeatmapTable table;
  table.bag_size = bag.n;
  for (std::size_t e = 0; e < output.attention_rows; ++e) table.expert.push_back(expert_heatmap(output, e));
  for (std::size_t t = 0; t < output.tasks; ++t) table.task.push_back(task_heatmap(output, t));
  return table;
}

std::vector<std::uint8_t> encode_graymap(const std::vector<double>& scores) {
  if (scores.empty()) throw EmptyBagError("cannot draw a heatmap for an empty bag");
  const std::size_t side = ad::grid_side(scores.size());
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it, range = *hi_it - *lo_it;
  const std::string header = "P5\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  const std::size_t body = bytes.size();
  bytes.resize(body + side * side, 0);
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const double level = range > 0.0 ? std::round(255.0 * (scores[k] - lo) / range) : 128.0;
    bytes[body + k] = static_cast<std::uint8_t>(level);
  }
  return bytes;
}

int cmd_heatmap(const fs::path& model, const fs::path& bag_path, const fs::path& prefix, std::size_t fold,
                std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    SavedRun run = load_run(model);
    if (fold >= run.models.size()) {
      throw ConfigError("fold " + std::to_string(fold) + " requested but the model file holds " +
                        std::to_string(run.models.size()));
    }
    Bag bag = read_bag(bag_path);
    if (run.scaler) run.scaler->transform(bag.features);
    const auto table = heatmap_scores(run.models[fold], bag);

    if (!prefix.parent_path().empty()) fs::create_directories(prefix.parent_path());
    const fs::path csv_path = prefix.string() + ".csv";
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot write " + csv_path.string());
    csv << std::setprecision(17) << "patch,row,col";
    for (std::size_t e = 0; e < table.expert.size(); ++e) csv << ",expert_" << e + 1;
    for (std::size_t t = 0; t < table.task.size(); ++t) csv << ",task_" << t + 1;
    csv << '\n';
    for (std::size_t k = 0; k < bag.n; ++k) {
      csv << k << ',';
      if (!bag.grid.empty()) {
        csv << bag.grid[k].row << ',' << bag.grid[k].col;
      } else {
        csv << ',';
      }
      for (const auto& row : table.expert) csv << ',' << row[k];
      for (const auto& row : table.task) csv << ',' << row[k];
      csv << '\n';
    }
    if (!csv) throw IoError("short write to " + csv_path.string());
    out << "wrote " << csv_path.string() << '\n';

    if (bag.grid.empty()) {
      err << "warning: bag " << bag_path.string() << " has no grid coordinates; skipping images\n";
      return static_cast<int>(kOk);
    }
    auto write_pgm = [&](const std::string& name, const std::vector<double>& scores) {
      const fs::path p = prefix.string() + "_" + name + ".pgm";
      std::ofstream img(p, std::ios::binary | std::ios::trunc);
      const auto bytes = encode_graymap(scores);
      img.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      if (!img) throw IoError("cannot write " + p.string());
    };
    for (std::size_t e = 0; e < table.expert.size(); ++e) write_pgm("expert" + std::to_string(e + 1), table.expert[e]);
    for (std::size_t t = 0; t < table.task.size(); ++t) write_pgm("task" + std::to_string(t + 1), table.task[t]);
    out << "wrote " << table.expert.size() + table.task.size() << " graymaps with prefix " << prefix.string()
        << '\n';
    return static_cast<int>(kOk);
  });
}

int cmd_gradcheck(const RunConfig& config, bool corrupt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    auto cfg = config.gradcheck_config();
    if (corrupt) cfg.corrupt_factor = 1.01;
    const auto report = gradcheck_suite(cfg);
    bool all = true;
    for (const auto& e : report) {
      out << (e.passed ? "PASS " : "FAIL ") << e.group << ' ' << e.target << ' ' << e.parameter << ' '
          << std::scientific << std::setprecision(3) << e.max_rel_error << '\n';
      all = all && e.passed;
    }
    out.unsetf(std::ios::floatfield);
    out << (all ? "gradcheck: all passed" : "gradcheck: FAILED") << '\n';
    return static_cast<int>(all ? kOk : kVerificationFailed);
  });
}

}  // namespace m4::cli
