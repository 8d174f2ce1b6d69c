#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "m4/mil_layers.hpp"

namespace m4 {

/// Model family. The first four form the ablation ladder (single-task
/// attention MIL up to the full multi-proxy model); the pooling baselines
/// apply one tower per task to a column mean / max of the raw bag.
enum class Variant { AmilSingle, MmoeAmil, MmoeMpAmil, M4, MeanPool, MaxPool };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);
std::string to_string(ShapeMode mode);
ShapeMode parse_shape_mode(const std::string& name);

// The four ablation variants in ladder order.
inline constexpr Variant kAblationLadder[] = {Variant::AmilSingle, Variant::MmoeAmil,
                                              Variant::MmoeMpAmil, Variant::M4};

struct ModelConfig {
  std::size_t input_dim = 64;      // d
  std::size_t expert_dim = 32;     // d_f
  std::size_t gate_dim = 32;       // d_1
  std::size_t attention_dim = 16;  // L
  std::size_t experts = 5;         // E
  std::size_t tasks = 10;          // n
  std::size_t tower_hidden = 16;   // d_h
  Variant variant = Variant::M4;
  ShapeMode shape_mode = ShapeMode::Preserve;
  std::uint64_t seed = 0;

  static constexpr std::size_t kSegments = 4;

  // Full-width defaults for 2048-d extractor features.
  static ModelConfig full_scale();

  void validate() const;
  bool uses_attention() const;
  std::size_t tower_input_dim() const;
};

/// Everything one forward pass exposes. Only `logits` lives on the tape;
/// the rest are detached copies for reporting and heatmaps.
struct ModelOutput {
  Tensor logits;  // 1×n
  std::vector<double> probs;
  std::size_t tasks = 0;
  std::size_t bag_size = 0;

  // attention_rows × N. Experts for the mixture variants; one row per
  // task model for AmilSingle; empty for the pooling baselines.
  std::size_t attention_rows = 0;
  std::vector<double> expert_attention;

  // n × gate_segments × attention_rows. Four segments for M4, one for the
  // simple-gate variants; AmilSingle stores one-hot rows.
  std::size_t gate_segments = 0;
  std::vector<double> gates;

  std::size_t tower_width = 0;
  std::vector<double> tower_inputs;  // n × tower_width

  double gate(std::size_t task, std::size_t segment, std::size_t expert) const;
  std::span<const double> attention_row(std::size_t row) const;
  std::span<const double> tower_input(std::size_t task) const;
};

/// Parameter set for one configured variant.
struct M4Model {
  ModelConfig config;
  std::vector<AmilParams> amil_experts;  // MmoeAmil experts, or AmilSingle per-task models
  std::vector<MPAmilParams> mp_experts;  // MmoeMpAmil and M4 experts
  std::vector<MPGateParams> mp_gates;    // M4, one per task
  std::vector<Tensor> simple_gates;      // mixture variants without MP-Gate, d×E per task
  std::vector<TowerParams> towers;       // one per task

  static M4Model build(const ModelConfig& config);

  ParameterList parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  ModelOutput forward(Tape& tape, const Tensor& bag) const;
};

// Σ_{masked-in i} (1/n)·BCE(y_i, sigmoid(logit_i)). An empty mask means
// every task is labelled.
Tensor multi_task_loss(Tape& tape, const ModelOutput& output, std::span<const double> labels,
                       std::span<const std::uint8_t> mask = {});

// Gate-weighted mean of the attention rows: Σ_e w_{t,e}·A_e with w_{t,e}
// the segment-averaged gate weight.
std::vector<double> task_heatmap(const ModelOutput& output, std::size_t task);
std::vector<double> expert_heatmap(const ModelOutput& output, std::size_t expert);

}  // namespace m4
