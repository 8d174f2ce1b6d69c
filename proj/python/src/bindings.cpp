#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "m4/cli.hpp"
#include "m4/data.hpp"
#include "m4/errors.hpp"
#include "m4/model.hpp"
#include "m4/ops.hpp"
#include "m4/params_io.hpp"
#include "m4/train.hpp"

namespace py = pybind11;
using namespace m4;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

ad::Tensor to_tensor(const Array& a) {
  ad::Shape shape(a.shape(), a.shape() + a.ndim());
  return ad::Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const ad::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Array reshape(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
  Array out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict forward(const M4Model& model, const Array& bag) {
  ad::Tape tape(ad::Tape::Mode::Inference);
  const ModelOutput out = model.forward(tape, to_tensor(bag));
  const auto n = static_cast<py::ssize_t>(out.tasks);
  const auto rows = static_cast<py::ssize_t>(out.attention_rows);
  py::dict d;
  d["logits"] = reshape(std::vector<double>(out.logits.values().begin(), out.logits.values().end()), {n});
  d["probs"] = reshape(out.probs, {n});
  d["attention"] = reshape(out.expert_attention, {rows, static_cast<py::ssize_t>(out.bag_size)});
  d["gates"] = reshape(out.gates, {n, static_cast<py::ssize_t>(out.gate_segments), rows});
  d["tower_inputs"] = reshape(out.tower_inputs, {n, static_cast<py::ssize_t>(out.tower_width)});
  std::vector<std::vector<double>> tasks;
  for (std::size_t t = 0; t < out.tasks && rows > 0; ++t) tasks.push_back(task_heatmap(out, t));
  d["task_heatmaps"] = tasks;
  return d;
}

// Runs a CLI command with captured streams; returns (exit code, stdout, stderr).
template <typename F>
py::tuple captured(F&& f) {
  std::ostringstream out, err;
  int rc;
  {
    py::gil_scoped_release release;
    rc = f(out, err);
  }
  return py::make_tuple(rc, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-task mixture-of-experts multiple-instance learning";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<EmptyBagError>(m, "EmptyBagError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  auto io = py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", io.ptr());
  py::register_exception<UndefinedAucError>(m, "UndefinedAucError", base.ptr());

  py::enum_<Variant>(m, "Variant")
      .value("AMIL_single", Variant::AmilSingle)
      .value("MMoE_AMIL", Variant::MmoeAmil)
      .value("MMoE_MPAMIL", Variant::MmoeMpAmil)
      .value("M4", Variant::M4)
      .value("mean_pool", Variant::MeanPool)
      .value("max_pool", Variant::MaxPool);
  py::enum_<ShapeMode>(m, "ShapeMode").value("preserve", ShapeMode::Preserve).value("literal", ShapeMode::Literal);

  m.def("softmax", [](const Array& x, std::size_t axis) {
    ad::Tape tape(ad::Tape::Mode::Inference);
    return to_array(ad::softmax(tape, to_tensor(x), axis));
  }, py::arg("x"), py::arg("axis") = 1);
  m.def("matmul", [](const Array& a, const Array& b) {
    ad::Tape tape(ad::Tape::Mode::Inference);
    return to_array(ad::matmul(tape, to_tensor(a), to_tensor(b)));
  });
  m.def("auc", [](std::vector<double> s, std::vector<int> y) { return auc(s, y); });
  m.def("auc_pairwise", [](std::vector<double> s, std::vector<int> y) { return auc_pairwise(s, y); });

  py::class_<Bag>(m, "Bag")
      .def(py::init([](std::string id, const Array& features, std::vector<std::int8_t> labels) {
             if (features.ndim() != 2) throw ShapeError("bag features must be a 2-D array");
             Bag b;
             b.id = std::move(id);
             b.n = static_cast<std::size_t>(features.shape(0));
             b.d = static_cast<std::size_t>(features.shape(1));
             b.features.assign(features.data(), features.data() + features.size());
             b.labels = std::move(labels);
             b.validate();
             return b;
           }),
           py::arg("id"), py::arg("features"), py::arg("labels") = std::vector<std::int8_t>{})
      .def_readonly("id", &Bag::id)
      .def_readonly("n", &Bag::n)
      .def_readonly("d", &Bag::d)
      .def_readonly("labels", &Bag::labels)
      .def_property_readonly("features", [](const Bag& b) {
        return reshape(b.features, {static_cast<py::ssize_t>(b.n), static_cast<py::ssize_t>(b.d)});
      })
      .def_property_readonly("grid", [](const Bag& b) {
        std::vector<std::pair<int, int>> g;
        for (const auto& c : b.grid) g.emplace_back(c.row, c.col);
        return g;
      });
  m.def("read_bag", &read_bag);
  m.def("write_bag", &write_bag);
  m.def("encode_bag", [](const Bag& b) {
    auto bytes = encode_bag(b);
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  });
  m.def("decode_bag", [](const py::bytes& data) {
    const std::string s = data;
    return decode_bag(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  });
  m.def("normalize_features", [](const Array& x) {
    if (x.ndim() != 2) throw ShapeError("expected a 2-D array");
    auto out = normalize_features(std::span(x.data(), static_cast<std::size_t>(x.size())),
                                  static_cast<std::size_t>(x.shape(1)));
    return reshape(out, {x.shape(0), x.shape(1)});
  });
  m.def("normalize_bags", [](std::vector<Bag> bags) {
    normalize_bags(bags);
    return bags;
  });

  py::class_<SyntheticDataset>(m, "SyntheticDataset")
      .def_readonly("task_names", &SyntheticDataset::task_names)
      .def_readonly("bags", &SyntheticDataset::bags)
      .def_readonly("signal_mask", &SyntheticDataset::signal_mask)
      .def_readonly("achieved_prevalence", &SyntheticDataset::achieved_prevalence);
  m.def("generate_synthetic",
        [](std::size_t bags, std::size_t tasks, std::size_t dim, std::size_t min_instances,
           std::size_t max_instances, double prevalence_first, double prevalence_last, std::size_t shared_factors,
           double shared_weight, double signal_strength, double noise_sd, std::uint64_t seed) {
          SyntheticSpec s;
          s.bags = bags;
          s.tasks = tasks;
          s.dim = dim;
          s.min_instances = min_instances;
          s.max_instances = max_instances;
          s.prevalence = SyntheticSpec::descending_prevalence(tasks, prevalence_first, prevalence_last);
          s.latent_dim = shared_factors + tasks;
          s.task_loadings = SyntheticSpec::correlated_loadings(tasks, shared_factors, shared_weight);
          s.signal_strength = signal_strength;
          s.noise_sd = noise_sd;
          s.seed = seed;
          return generate_synthetic(s);
        },
        py::arg("bags") = 400, py::arg("tasks") = 10, py::arg("dim") = 64, py::arg("min_instances") = 16,
        py::arg("max_instances") = 48, py::arg("prevalence_first") = 0.6, py::arg("prevalence_last") = 0.07,
        py::arg("shared_factors") = 2, py::arg("shared_weight") = 1.0, py::arg("signal_strength") = 2.0,
        py::arg("noise_sd") = 0.5, py::arg("seed") = 0);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("input_dim", &ModelConfig::input_dim)
      .def_readwrite("expert_dim", &ModelConfig::expert_dim)
      .def_readwrite("gate_dim", &ModelConfig::gate_dim)
      .def_readwrite("attention_dim", &ModelConfig::attention_dim)
      .def_readwrite("experts", &ModelConfig::experts)
      .def_readwrite("tasks", &ModelConfig::tasks)
      .def_readwrite("tower_hidden", &ModelConfig::tower_hidden)
      .def_readwrite("variant", &ModelConfig::variant)
      .def_readwrite("shape_mode", &ModelConfig::shape_mode)
      .def_readwrite("seed", &ModelConfig::seed)
      .def("validate", &ModelConfig::validate);

  py::class_<M4Model>(m, "Model")
      .def(py::init(&M4Model::build), py::arg("config"))
      .def_readonly("config", &M4Model::config)
      .def_property_readonly("parameter_count", &M4Model::parameter_count)
      .def("parameters", [](const M4Model& model) {
        py::dict d;
        for (const auto& p : model.parameters()) d[py::str(p.name)] = to_array(p.tensor);
        return d;
      })
      .def("forward", &forward, py::arg("bag"))
      .def("predict", [](const M4Model& model, const std::vector<Bag>& bags) { return predict(model, bags); });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("shuffle", &TrainConfig::shuffle)
      .def_readwrite("seed", &TrainConfig::seed);
  m.def("train", [](M4Model& model, const std::vector<Bag>& bags, const TrainConfig& config) {
    py::gil_scoped_release release;
    return train(model, bags, config).epoch_loss;
  }, py::arg("model"), py::arg("bags"), py::arg("config"));
  m.def("evaluate", [](const M4Model& model, const std::vector<Bag>& bags) {
    std::vector<std::optional<double>> out;
    for (const auto& s : evaluate(model, bags)) out.push_back(s.auc);
    return out;
  });

  py::class_<GradcheckEntry>(m, "GradcheckEntry")
      .def_readonly("group", &GradcheckEntry::group)
      .def_readonly("target", &GradcheckEntry::target)
      .def_readonly("parameter", &GradcheckEntry::parameter)
      .def_readonly("max_rel_error", &GradcheckEntry::max_rel_error)
      .def_readonly("passed", &GradcheckEntry::passed);
  m.def("gradcheck", [](double corrupt_factor) {
    auto cfg = GradcheckConfig::desk();
    cfg.corrupt_factor = corrupt_factor;
    py::gil_scoped_release release;
    return gradcheck_suite(cfg);
  }, py::arg("corrupt_factor") = 1.0);

  m.def("save_models", [](const std::vector<M4Model>& models, const std::filesystem::path& path) {
    save_run(SavedRun{models, std::nullopt, 0}, path);
  });
  m.def("load_models", [](const std::filesystem::path& path) { return load_run(path).models; });

  m.def("encode_graymap", [](const std::vector<double>& scores) {
    auto bytes = cli::encode_graymap(scores);
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  });

  // Thin wrappers over the command-line commands; each returns
  // (exit_code, stdout, stderr). `config` is "key = value" text.
  m.def("cli_synth", [](const std::string& config, const std::filesystem::path& out_dir) {
    const auto cfg = cli::RunConfig::parse(config);
    return captured([&](std::ostream& o, std::ostream& e) { return cli::cmd_synth(cfg, out_dir, o, e); });
  });
  m.def("cli_train", [](const std::string& config, const std::filesystem::path& manifest,
                        const std::filesystem::path& model) {
    const auto cfg = cli::RunConfig::parse(config);
    return captured([&](std::ostream& o, std::ostream& e) { return cli::cmd_train(cfg, {manifest, model, {}}, o, e); });
  });
  m.def("cli_eval", [](const std::filesystem::path& model, const std::filesystem::path& manifest,
                       const std::filesystem::path& report) {
    return captured(
        [&](std::ostream& o, std::ostream& e) { return cli::cmd_eval(std::nullopt, model, manifest, report, o, e); });
  });
  m.def("cli_heatmap", [](const std::filesystem::path& model, const std::filesystem::path& bag,
                          const std::filesystem::path& prefix, std::size_t fold) {
    return captured([&](std::ostream& o, std::ostream& e) { return cli::cmd_heatmap(model, bag, prefix, fold, o, e); });
  }, py::arg("model"), py::arg("bag"), py::arg("prefix"), py::arg("fold") = 0);
}
