#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "m4/ops.hpp"
#include "m4/random.hpp"
#include "m4/tensor.hpp"

namespace m4 {

using ad::Tape;
using ad::Tensor;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedTensor>;

/// Fully connected layer y = x·W + b with W stored as in×out.
struct Linear {
  Tensor weight;
  Tensor bias;  // 1×out

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }
};

Tensor linear_forward(Tape& tape, const Tensor& x, const Linear& layer);

/// Gated attention scorer: a_k ∝ exp(W·(tanh(V·h_kᵀ) ⊙ sigmoid(U·h_kᵀ))).
struct GatedAttentionParams {
  Tensor value;  // V, L×d_f
  Tensor gate;   // U, L×d_f
  Tensor score;  // W, 1×L

  static GatedAttentionParams init(std::size_t d_f, std::size_t hidden, Rng& rng);
};

/// One spatial proxy: depthwise k×k kernels plus a c×c pointwise map.
struct ConvBranchParams {
  Tensor depth_kernels;  // k×k×c
  Tensor point_weights;  // c×c

  static ConvBranchParams init(std::size_t kernel, std::size_t channels, Rng& rng);
  std::size_t kernel() const { return depth_kernels.dim(0); }
};

struct AmilParams {
  Linear embed;  // d → d_f
  GatedAttentionParams attention;

  static AmilParams init(std::size_t d, std::size_t d_f, std::size_t hidden, Rng& rng);
};

/// Multi-proxy expert. Channel segment 1 passes through unchanged; segments
/// 2–4 go through depthwise separable convolutions with k = 3, 5, 7.
struct MPAmilParams {
  static constexpr std::size_t kSegments = 4;
  static constexpr std::array<std::size_t, 3> kKernels{3, 5, 7};

  Linear embed;
  std::array<ConvBranchParams, 3> branches;
  GatedAttentionParams attention;

  static MPAmilParams init(std::size_t d, std::size_t d_f, std::size_t hidden, Rng& rng);
};

/// Per-task multi-proxy gate: one expert distribution per channel segment.
struct MPGateParams {
  Linear reduce;                  // d → d_1
  std::array<Linear, 4> segments;  // d_1/4 → E each

  static MPGateParams init(std::size_t d, std::size_t d_1, std::size_t experts, Rng& rng);
};

struct TowerParams {
  Linear hidden;  // in → d_h
  Linear output;  // d_h → 1

  static TowerParams init(std::size_t in, std::size_t d_h, Rng& rng);
};

enum class ShapeMode { Preserve, Literal };

struct PooledBag {
  Tensor pooled;     // 1×d_f
  Tensor attention;  // 1×N, sums to 1
};

// (pad, stride) for branch b (0-based over the three convolution branches).
ad::ConvGeometry branch_geometry(std::size_t branch, std::size_t kernel, ShapeMode mode);

PooledBag gated_attention_pool(Tape& tape, const Tensor& h, const GatedAttentionParams& p);

PooledBag amil_forward(Tape& tape, const Tensor& h, const AmilParams& p);

// Embed → grid → four channel proxies → flatten (padding dropped) → pool.
// Literal mode applies the strided geometry and resizes each branch back to
// the grid with nearest-neighbour sampling.
PooledBag mp_amil_forward(Tape& tape, const Tensor& h, const MPAmilParams& p,
                          ShapeMode mode = ShapeMode::Preserve);

// Mean-pooled raw features → FC+ReLU → 4 segments → per-segment softmax
// over experts. Returns 4×E.
Tensor mp_gate_forward(Tape& tape, const Tensor& h, const MPGateParams& p);

// softmax(mean_rows(h)·W_g), 1×E.
Tensor simple_gate_forward(Tape& tape, const Tensor& h, const Tensor& w_gate);

// Hidden FC + ReLU + output FC. Returns a 1×1 logit.
Tensor tower_forward(Tape& tape, const Tensor& h, const TowerParams& p);

// Column mean / max of the raw bag, then one tower per task. Returns 1×n.
Tensor mean_pool_head(Tape& tape, const Tensor& h, std::span<const TowerParams> towers);
Tensor max_pool_head(Tape& tape, const Tensor& h, std::span<const TowerParams> towers);

// Sets every convolution branch to a centred delta kernel with identity
// pointwise weights, so the expert degenerates to plain attention MIL.
void set_identity_branches(MPAmilParams& p);

void collect_parameters(const Linear& p, const std::string& prefix, ParameterList& out);
void collect_parameters(const GatedAttentionParams& p, const std::string& prefix, ParameterList& out);
void collect_parameters(const AmilParams& p, const std::string& prefix, ParameterList& out);
void collect_parameters(const MPAmilParams& p, const std::string& prefix, ParameterList& out);
void collect_parameters(const MPGateParams& p, const std::string& prefix, ParameterList& out);
void collect_parameters(const TowerParams& p, const std::string& prefix, ParameterList& out);

}  // namespace m4
