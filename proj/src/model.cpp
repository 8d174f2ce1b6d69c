#include "m4/model.hpp"

#include <algorithm>

#include "m4/errors.hpp"

namespace m4 {

namespace {

std::vector<double> copy_values(const Tensor& t) {
  auto v = t.values();
  return {v.begin(), v.end()};
}

void append(std::vector<double>& dst, const Tensor& t) {
  auto v = t.values();
  dst.insert(dst.end(), v.begin(), v.end());
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::AmilSingle: return "AMIL_single";
    case Variant::MmoeAmil: return "MMoE_AMIL";
    case Variant::MmoeMpAmil: return "MMoE_MPAMIL";
    case Variant::M4: return "M4";
    case Variant::MeanPool: return "mean_pool";
    case Variant::MaxPool: return "max_pool";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::AmilSingle, Variant::MmoeAmil, Variant::MmoeMpAmil, Variant::M4,
                    Variant::MeanPool, Variant::MaxPool}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + name +
                    "' (expected AMIL_single, MMoE_AMIL, MMoE_MPAMIL, M4, mean_pool or max_pool)");
}

std::string to_string(ShapeMode mode) {
  return mode == ShapeMode::Preserve ? "preserve" : "literal";
}

ShapeMode parse_shape_mode(const std::string& name) {
  if (name == "preserve") return ShapeMode::Preserve;
  if (name == "literal") return ShapeMode::Literal;
  throw ConfigError("unknown shape_mode '" + name + "' (expected preserve or literal)");
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.input_dim = 2048;
  c.expert_dim = 512;
  c.gate_dim = 256;
  c.attention_dim = 128;
  c.tower_hidden = 256;
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be >= 1");
  };
  positive(input_dim, "input_dim");
  positive(expert_dim, "expert_dim");
  positive(gate_dim, "gate_dim");
  positive(attention_dim, "attention_dim");
  positive(experts, "experts");
  positive(tasks, "tasks");
  positive(tower_hidden, "tower_hidden");
  if (expert_dim % kSegments != 0) {
    throw ConfigError("expert_dim " + std::to_string(expert_dim) + " is not divisible by 4");
  }
  if (gate_dim % kSegments != 0) {
    throw ConfigError("gate_dim " + std::to_string(gate_dim) + " is not divisible by 4");
  }
}

bool ModelConfig::uses_attention() const {
  return variant != Variant::MeanPool && variant != Variant::MaxPool;
}

std::size_t ModelConfig::tower_input_dim() const {
  return uses_attention() ? expert_dim : input_dim;
}

double ModelOutput::gate(std::size_t task, std::size_t segment, std::size_t expert) const {
  return gates.at((task * gate_segments + segment) * attention_rows + expert);
}

std::span<const double> ModelOutput::attention_row(std::size_t row) const {
  if (row >= attention_rows) throw ShapeError("attention row out of range");
  return std::span<const double>(expert_attention).subspan(row * bag_size, bag_size);
}

std::span<const double> ModelOutput::tower_input(std::size_t task) const {
  if (task >= tasks) throw ShapeError("task index out of range");
  return std::span<const double>(tower_inputs).subspan(task * tower_width, tower_width);
}

M4Model M4Model::build(const ModelConfig& config) {
  config.validate();
  M4Model m;
  m.config = config;
  Rng rng(config.seed);
  const auto& c = config;
  switch (c.variant) {
    case Variant::AmilSingle:
      for (std::size_t t = 0; t < c.tasks; ++t) {
        m.amil_experts.push_back(AmilParams::init(c.input_dim, c.expert_dim, c.attention_dim, rng));
      }
      break;
    case Variant::MmoeAmil:
      for (std::size_t e = 0; e < c.experts; ++e) {
        m.amil_experts.push_back(AmilParams::init(c.input_dim, c.expert_dim, c.attention_dim, rng));
      }
      break;
    case Variant::MmoeMpAmil:
    case Variant::M4:
      for (std::size_t e = 0; e < c.experts; ++e) {
        m.mp_experts.push_back(MPAmilParams::init(c.input_dim, c.expert_dim, c.attention_dim, rng));
      }
      break;
    case Variant::MeanPool:
    case Variant::MaxPool:
      break;
  }
  if (c.variant == Variant::M4) {
    for (std::size_t t = 0; t < c.tasks; ++t) {
      m.mp_gates.push_back(MPGateParams::init(c.input_dim, c.gate_dim, c.experts, rng));
    }
  } else if (c.variant == Variant::MmoeAmil || c.variant == Variant::MmoeMpAmil) {
    // Same fan-in scaling as the fully connected layers, no bias.
    for (std::size_t t = 0; t < c.tasks; ++t) {
      m.simple_gates.push_back(Linear::init(c.input_dim, c.experts, rng).weight);
    }
  }
  for (std::size_t t = 0; t < c.tasks; ++t) {
    m.towers.push_back(TowerParams::init(c.tower_input_dim(), c.tower_hidden, rng));
  }
  return m;
}

ParameterList M4Model::parameters() const {
  ParameterList out;
  const bool per_task = config.variant == Variant::AmilSingle;
  for (std::size_t i = 0; i < amil_experts.size(); ++i) {
    collect_parameters(amil_experts[i], (per_task ? "task" : "expert") + std::to_string(i) + ".amil",
                       out);
  }
  for (std::size_t e = 0; e < mp_experts.size(); ++e) {
    collect_parameters(mp_experts[e], "expert" + std::to_string(e) + ".mp_amil", out);
  }
  for (std::size_t t = 0; t < mp_gates.size(); ++t) {
    collect_parameters(mp_gates[t], "gate" + std::to_string(t) + ".mp_gate", out);
  }
  for (std::size_t t = 0; t < simple_gates.size(); ++t) {
    out.push_back({"gate" + std::to_string(t) + ".simple.weight", simple_gates[t]});
  }
  for (std::size_t t = 0; t < towers.size(); ++t) {
    collect_parameters(towers[t], "tower" + std::to_string(t), out);
  }
  return out;
}

std::size_t M4Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.size();
  return n;
}

void M4Model::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

ModelOutput M4Model::forward(Tape& tape, const Tensor& bag) const {
  const auto& c = config;
  if (bag.rank() != 2) throw ShapeError("bag must be an N×d matrix, got " + ad::shape_str(bag.shape()));
  if (bag.cols() != c.input_dim) {
    throw ShapeError("bag width " + std::to_string(bag.cols()) + " does not match model input_dim " +
                     std::to_string(c.input_dim));
  }
  const std::size_t n_tasks = c.tasks;
  ModelOutput out;
  out.tasks = n_tasks;
  out.bag_size = bag.rows();
  out.tower_width = c.tower_input_dim();

  std::vector<Tensor> tower_in;
  tower_in.reserve(n_tasks);

  if (c.variant == Variant::MeanPool || c.variant == Variant::MaxPool) {
    Tensor pooled = c.variant == Variant::MeanPool ? ad::mean_rows(tape, bag) : ad::max_rows(tape, bag);
    for (std::size_t t = 0; t < n_tasks; ++t) tower_in.push_back(pooled);
  } else if (c.variant == Variant::AmilSingle) {
    out.attention_rows = n_tasks;
    out.gate_segments = 1;
    out.gates.assign(n_tasks * n_tasks, 0.0);
    for (std::size_t t = 0; t < n_tasks; ++t) {
      auto pooled = amil_forward(tape, bag, amil_experts[t]);
      append(out.expert_attention, pooled.attention);
      out.gates[t * n_tasks + t] = 1.0;
      tower_in.push_back(pooled.pooled);
    }
  } else {
    std::vector<Tensor> expert_out;
    expert_out.reserve(c.experts);
    for (std::size_t e = 0; e < c.experts; ++e) {
      auto pooled = c.variant == Variant::MmoeAmil
                        ? amil_forward(tape, bag, amil_experts[e])
                        : mp_amil_forward(tape, bag, mp_experts[e], c.shape_mode);
      append(out.expert_attention, pooled.attention);
      expert_out.push_back(pooled.pooled);
    }
    out.attention_rows = c.experts;

    if (c.variant == Variant::M4) {
      out.gate_segments = ModelConfig::kSegments;
      // stacked[s] is E×(d_f/4): segment s of every expert's bag vector.
      std::vector<std::vector<Tensor>> per_segment(ModelConfig::kSegments);
      for (const auto& pooled : expert_out) {
        auto parts = ad::split_channels(tape, pooled, ModelConfig::kSegments);
        for (std::size_t s = 0; s < parts.size(); ++s) per_segment[s].push_back(parts[s]);
      }
      std::vector<Tensor> stacked;
      for (const auto& seg : per_segment) stacked.push_back(ad::concat(tape, seg, 0));
      for (std::size_t t = 0; t < n_tasks; ++t) {
        Tensor gate = mp_gate_forward(tape, bag, mp_gates[t]);
        append(out.gates, gate);
        std::vector<Tensor> mixed;
        for (std::size_t s = 0; s < ModelConfig::kSegments; ++s) {
          mixed.push_back(ad::matmul(tape, ad::slice(tape, gate, 0, s, 1), stacked[s]));
        }
        tower_in.push_back(ad::concat_channels(tape, mixed));
      }
    } else {
      out.gate_segments = 1;
      Tensor stacked = ad::concat(tape, expert_out, 0);
      for (std::size_t t = 0; t < n_tasks; ++t) {
        Tensor gate = simple_gate_forward(tape, bag, simple_gates[t]);
        append(out.gates, gate);
        tower_in.push_back(ad::matmul(tape, gate, stacked));
      }
    }
  }

  std::vector<Tensor> logits;
  logits.reserve(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    append(out.tower_inputs, tower_in[t]);
    logits.push_back(tower_forward(tape, tower_in[t], towers[t]));
  }
  out.logits = ad::concat(tape, logits, 1);
  out.probs = copy_values(out.logits);
  for (auto& p : out.probs) p = ad::stable_sigmoid(p);
  return out;
}

Tensor multi_task_loss(Tape& tape, const ModelOutput& output, std::span<const double> labels,
                       std::span<const std::uint8_t> mask) {
  const std::size_t n = output.tasks;
  if (labels.size() != n) {
    throw ShapeError("expected " + std::to_string(n) + " labels, got " + std::to_string(labels.size()));
  }
  if (!mask.empty() && mask.size() != n) {
    throw ShapeError("expected " + std::to_string(n) + " mask entries, got " + std::to_string(mask.size()));
  }
  std::vector<double> weights(n, 1.0 / static_cast<double>(n));
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) {
      weights[i] = 0.0;
    } else {
      any = true;
      if (labels[i] != 0.0 && labels[i] != 1.0) throw ConfigError("labels must be 0 or 1");
    }
  }
  if (!any) throw ConfigError("multi-task loss with every task masked out");
  return ad::bce_with_logits(tape, output.logits, labels, weights);
}

std::vector<double> task_heatmap(const ModelOutput& output, std::size_t task) {
  if (task >= output.tasks) {
    throw ShapeError("task " + std::to_string(task) + " out of range (" +
                     std::to_string(output.tasks) + " tasks)");
  }
  if (output.attention_rows == 0) throw ConfigError("this variant produces no attention heatmaps");
  std::vector<double> score(output.bag_size, 0.0);
  for (std::size_t e = 0; e < output.attention_rows; ++e) {
    double w = 0.0;
    for (std::size_t s = 0; s < output.gate_segments; ++s) w += output.gate(task, s, e);
    w /= static_cast<double>(output.gate_segments);
    auto row = output.attention_row(e);
    for (std::size_t k = 0; k < score.size(); ++k) score[k] += w * row[k];
  }
  return score;
}

std::vector<double> expert_heatmap(const ModelOutput& output, std::size_t expert) {
  if (output.attention_rows == 0) throw ConfigError("this variant produces no attention heatmaps");
  if (expert >= output.attention_rows) {
    throw ShapeError("expert " + std::to_string(expert) + " out of range (" +
                     std::to_string(output.attention_rows) + " attention rows)");
  }
  auto row = output.attention_row(expert);
  return {row.begin(), row.end()};
}

}  // namespace m4
