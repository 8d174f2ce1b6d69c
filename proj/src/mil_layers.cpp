#include "m4/mil_layers.hpp"

#include <cmath>

#include "m4/errors.hpp"

namespace m4 {

namespace {

Tensor uniform_fan_in(ad::Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> values(ad::shape_size(shape));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(values), true);
}

void require_bag(const Tensor& h, const char* where) {
  if (h.rank() != 2) {
    throw ShapeError(std::string(where) + " expects an N×d bag, got " + ad::shape_str(h.shape()));
  }
}

void require_width(const Tensor& h, std::size_t width, const char* where) {
  require_bag(h, where);
  if (h.cols() != width) {
    throw ShapeError(std::string(where) + ": bag width " + std::to_string(h.cols()) +
                     " does not match parameter width " + std::to_string(width));
  }
}

}  // namespace

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  return Linear{uniform_fan_in({in, out}, in, rng), Tensor::zeros({1, out}, true)};
}

Tensor linear_forward(Tape& tape, const Tensor& x, const Linear& layer) {
  return ad::add_bias(tape, ad::matmul(tape, x, layer.weight), layer.bias);
}

GatedAttentionParams GatedAttentionParams::init(std::size_t d_f, std::size_t hidden, Rng& rng) {
  GatedAttentionParams p;
  p.value = uniform_fan_in({hidden, d_f}, d_f, rng);
  p.gate = uniform_fan_in({hidden, d_f}, d_f, rng);
  p.score = uniform_fan_in({1, hidden}, hidden, rng);
  return p;
}

ConvBranchParams ConvBranchParams::init(std::size_t kernel, std::size_t channels, Rng& rng) {
  ConvBranchParams p;
  p.depth_kernels = uniform_fan_in({kernel, kernel, channels}, kernel * kernel, rng);
  p.point_weights = uniform_fan_in({channels, channels}, channels, rng);
  return p;
}

AmilParams AmilParams::init(std::size_t d, std::size_t d_f, std::size_t hidden, Rng& rng) {
  AmilParams p;
  p.embed = Linear::init(d, d_f, rng);
  p.attention = GatedAttentionParams::init(d_f, hidden, rng);
  return p;
}

MPAmilParams MPAmilParams::init(std::size_t d, std::size_t d_f, std::size_t hidden, Rng& rng) {
  if (d_f % kSegments != 0) {
    throw ConfigError("expert width " + std::to_string(d_f) + " is not divisible by 4");
  }
  MPAmilParams p;
  p.embed = Linear::init(d, d_f, rng);
  for (std::size_t b = 0; b < kKernels.size(); ++b) {
    p.branches[b] = ConvBranchParams::init(kKernels[b], d_f / kSegments, rng);
  }
  p.attention = GatedAttentionParams::init(d_f, hidden, rng);
  return p;
}

MPGateParams MPGateParams::init(std::size_t d, std::size_t d_1, std::size_t experts, Rng& rng) {
  if (d_1 % 4 != 0) throw ConfigError("gate width " + std::to_string(d_1) + " is not divisible by 4");
  if (experts == 0) throw ConfigError("gate needs at least one expert");
  MPGateParams p;
  p.reduce = Linear::init(d, d_1, rng);
  for (auto& seg : p.segments) seg = Linear::init(d_1 / 4, experts, rng);
  return p;
}

TowerParams TowerParams::init(std::size_t in, std::size_t d_h, Rng& rng) {
  TowerParams p;
  p.hidden = Linear::init(in, d_h, rng);
  p.output = Linear::init(d_h, 1, rng);
  return p;
}

ad::ConvGeometry branch_geometry(std::size_t branch, std::size_t kernel, ShapeMode mode) {
  if (mode == ShapeMode::Preserve) return {kernel / 2, 1};
  return {1, branch + 1};
}

PooledBag gated_attention_pool(Tape& tape, const Tensor& h, const GatedAttentionParams& p) {
  require_width(h, p.value.cols(), "gated_attention_pool");
  if (h.rows() == 0) throw EmptyBagError("attention pooling over an empty bag");
  // N×L branches of the gated scorer, then N×1 scores.
  Tensor value = ad::tanh(tape, ad::matmul(tape, h, ad::transpose(tape, p.value)));
  Tensor gate = ad::sigmoid(tape, ad::matmul(tape, h, ad::transpose(tape, p.gate)));
  Tensor scores = ad::matmul(tape, ad::mul(tape, value, gate), ad::transpose(tape, p.score));
  Tensor attention = ad::softmax(tape, ad::reshape(tape, scores, {1, h.rows()}), 1);
  return {ad::matmul(tape, attention, h), attention};
}

PooledBag amil_forward(Tape& tape, const Tensor& h, const AmilParams& p) {
  require_width(h, p.embed.in_features(), "amil_forward");
  Tensor embedded = ad::relu(tape, linear_forward(tape, h, p.embed));
  return gated_attention_pool(tape, embedded, p.attention);
}

PooledBag mp_amil_forward(Tape& tape, const Tensor& h, const MPAmilParams& p, ShapeMode mode) {
  require_width(h, p.embed.in_features(), "mp_amil_forward");
  const std::size_t n = h.rows();
  Tensor embedded = ad::relu(tape, linear_forward(tape, h, p.embed));
  auto layout = ad::grid_restore(tape, embedded);
  const std::size_t side = layout.grid.dim(0);
  auto segments = ad::split_channels(tape, layout.grid, MPAmilParams::kSegments);

  std::vector<Tensor> proxies;
  proxies.reserve(MPAmilParams::kSegments);
  proxies.push_back(segments[0]);
  for (std::size_t b = 0; b < p.branches.size(); ++b) {
    const auto& branch = p.branches[b];
    const auto geom = branch_geometry(b, branch.kernel(), mode);
    Tensor conv = ad::depthwise_separable_conv2d(tape, segments[b + 1], branch.depth_kernels,
                                                 branch.point_weights, geom);
    if (conv.dim(0) != side) conv = ad::upsample_nearest(tape, conv, side);
    proxies.push_back(conv);
  }
  Tensor merged = ad::concat_channels(tape, proxies);
  Tensor tokens = ad::grid_flatten(tape, merged, n);
  return gated_attention_pool(tape, tokens, p.attention);
}

Tensor mp_gate_forward(Tape& tape, const Tensor& h, const MPGateParams& p) {
  require_width(h, p.reduce.in_features(), "mp_gate_forward");
  Tensor reduced = ad::relu(tape, linear_forward(tape, ad::mean_rows(tape, h), p.reduce));
  auto parts = ad::split_channels(tape, reduced, p.segments.size());
  std::vector<Tensor> rows;
  rows.reserve(parts.size());
  for (std::size_t s = 0; s < parts.size(); ++s) {
    rows.push_back(ad::softmax(tape, linear_forward(tape, parts[s], p.segments[s]), 1));
  }
  return ad::concat(tape, rows, 0);
}

Tensor simple_gate_forward(Tape& tape, const Tensor& h, const Tensor& w_gate) {
  require_width(h, w_gate.rows(), "simple_gate_forward");
  return ad::softmax(tape, ad::matmul(tape, ad::mean_rows(tape, h), w_gate), 1);
}

Tensor tower_forward(Tape& tape, const Tensor& h, const TowerParams& p) {
  Tensor hidden = ad::relu(tape, linear_forward(tape, h, p.hidden));
  return linear_forward(tape, hidden, p.output);
}

namespace {

Tensor towers_over(Tape& tape, const Tensor& pooled, std::span<const TowerParams> towers) {
  if (towers.empty()) throw ConfigError("pooling head needs at least one tower");
  std::vector<Tensor> logits;
  logits.reserve(towers.size());
  for (const auto& t : towers) logits.push_back(tower_forward(tape, pooled, t));
  return ad::concat(tape, logits, 1);
}

}  // namespace

Tensor mean_pool_head(Tape& tape, const Tensor& h, std::span<const TowerParams> towers) {
  require_bag(h, "mean_pool_head");
  return towers_over(tape, ad::mean_rows(tape, h), towers);
}

Tensor max_pool_head(Tape& tape, const Tensor& h, std::span<const TowerParams> towers) {
  require_bag(h, "max_pool_head");
  return towers_over(tape, ad::max_rows(tape, h), towers);
}

void set_identity_branches(MPAmilParams& p) {
  for (auto& branch : p.branches) {
    const std::size_t k = branch.kernel();
    const std::size_t c = branch.depth_kernels.dim(2);
    auto kv = branch.depth_kernels.mutable_values();
    std::fill(kv.begin(), kv.end(), 0.0);
    const std::size_t centre = (k / 2) * k + k / 2;
    for (std::size_t ch = 0; ch < c; ++ch) kv[centre * c + ch] = 1.0;
    auto pv = branch.point_weights.mutable_values();
    std::fill(pv.begin(), pv.end(), 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) pv[ch * c + ch] = 1.0;
  }
}

void collect_parameters(const Linear& p, const std::string& prefix, ParameterList& out) {
  out.push_back({prefix + ".weight", p.weight});
  out.push_back({prefix + ".bias", p.bias});
}

void collect_parameters(const GatedAttentionParams& p, const std::string& prefix,
                        ParameterList& out) {
  out.push_back({prefix + ".value", p.value});
  out.push_back({prefix + ".gate", p.gate});
  out.push_back({prefix + ".score", p.score});
}

void collect_parameters(const AmilParams& p, const std::string& prefix, ParameterList& out) {
  collect_parameters(p.embed, prefix + ".embed", out);
  collect_parameters(p.attention, prefix + ".attention", out);
}

void collect_parameters(const MPAmilParams& p, const std::string& prefix, ParameterList& out) {
  collect_parameters(p.embed, prefix + ".embed", out);
  for (std::size_t b = 0; b < p.branches.size(); ++b) {
    const std::string name = prefix + ".branch" + std::to_string(b + 2);
    out.push_back({name + ".depth", p.branches[b].depth_kernels});
    out.push_back({name + ".point", p.branches[b].point_weights});
  }
  collect_parameters(p.attention, prefix + ".attention", out);
}

void collect_parameters(const MPGateParams& p, const std::string& prefix, ParameterList& out) {
  collect_parameters(p.reduce, prefix + ".reduce", out);
  for (std::size_t s = 0; s < p.segments.size(); ++s) {
    collect_parameters(p.segments[s], prefix + ".segment" + std::to_string(s + 1), out);
  }
}

void collect_parameters(const TowerParams& p, const std::string& prefix, ParameterList& out) {
  collect_parameters(p.hidden, prefix + ".hidden", out);
  collect_parameters(p.output, prefix + ".output", out);
}

}  // namespace m4
