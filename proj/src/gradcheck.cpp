#include <functional>

#include "m4/errors.hpp"
#include "m4/finite_diff.hpp"
#include "m4/train.hpp"

namespace m4 {

namespace {

using LossFn = std::function<Tensor(Tape&)>;

Tensor random_tensor(ad::Shape shape, Rng& rng, bool requires_grad) {
  std::vector<double> v(ad::shape_size(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Σ out ⊙ c for a fixed random c, so no output coordinate is ignored and
// shift-invariant outputs (softmax) still carry gradient.
struct Projector {
  Rng& rng;
  std::vector<Tensor> weights;
  std::size_t next = 0;

  Tensor operator()(Tape& tape, const Tensor& out) {
    if (next == weights.size()) weights.push_back(random_tensor(out.shape(), rng, false));
    return ad::sum(tape, ad::mul(tape, out, weights[next++]));
  }
  void restart() { next = 0; }
};

void check(std::vector<GradcheckEntry>& report, const std::string& group, const std::string& target,
           const ParameterList& params, const LossFn& loss_fn, const GradcheckConfig& cfg) {
  for (const auto& p : params) p.tensor.zero_grad();
  Tape tape;
  tape.backward(loss_fn(tape));
  for (const auto& p : params) {
    std::vector<double> analytic(p.tensor.size(), 0.0);
    if (p.tensor.has_grad()) {
      auto g = p.tensor.grad();
      for (std::size_t i = 0; i < g.size(); ++i) analytic[i] = g[i] * cfg.corrupt_factor;
    }
    Tensor probe = p.tensor;
    Tensor numeric = ad::finite_diff_grad_inplace(
        [&] {
          Tape inference(Tape::Mode::Inference);
          return loss_fn(inference).item();
        },
        probe, cfg.h);
    GradcheckEntry e;
    e.group = group;
    e.target = target;
    e.parameter = p.name;
    e.max_rel_error = ad::max_relative_error(analytic, numeric.values());
    e.passed = e.max_rel_error <= cfg.threshold;
    report.push_back(std::move(e));
  }
}

// Wraps a loss so the Projector replays the same weights on every call.
LossFn projected(Projector& proj, std::function<std::vector<Tensor>(Tape&)> outputs) {
  return [&proj, outputs](Tape& tape) {
    proj.restart();
    Tensor total;
    for (const auto& out : outputs(tape)) {
      Tensor term = proj(tape, out);
      total = total.defined() ? ad::add(tape, total, term) : term;
    }
    return total;
  };
}

}  // namespace

GradcheckConfig GradcheckConfig::desk() {
  GradcheckConfig c;
  c.model.input_dim = 64;
  c.model.expert_dim = 32;
  c.model.gate_dim = 32;
  c.model.attention_dim = 16;
  c.model.experts = 2;
  c.model.tasks = 3;
  c.model.tower_hidden = 16;
  c.model.seed = 7;
  return c;
}

std::vector<GradcheckEntry> gradcheck_suite(const GradcheckConfig& cfg) {
  cfg.model.validate();
  std::vector<GradcheckEntry> report;
  Rng rng(derive_seed(cfg.model.seed, 0x9c));
  const auto& mc = cfg.model;
  const std::size_t n = cfg.bag_size, d = mc.input_dim, df = mc.expert_dim;

  // Primitive ops with their inputs as the checked tensors.
  {
    Projector proj{rng, {}};
    Tensor x = random_tensor({n, 6}, rng, true);
    check(report, "op", "softmax", {{"input", x}},
          projected(proj, [x](Tape& t) -> std::vector<Tensor> {
            return {ad::softmax(t, x, 0), ad::softmax(t, x, 1)};
          }),
          cfg);
  }
  {
    Projector proj{rng, {}};
    Tensor grid = random_tensor({5, 5, 3}, rng, true);
    Tensor kernels = random_tensor({3, 3, 3}, rng, true);
    Tensor point = random_tensor({3, 3}, rng, true);
    check(report, "op", "depthwise_separable_conv2d", {{"input", grid}, {"depth", kernels}, {"point", point}},
          projected(proj, [=](Tape& t) -> std::vector<Tensor> {
            return {ad::depthwise_separable_conv2d(t, grid, kernels, point, {1, 1}),
                    ad::depthwise_separable_conv2d(t, grid, kernels, point, {1, 2})};
          }),
          cfg);
  }
  {
    Projector proj{rng, {}};
    Tensor x = random_tensor({2, 2, 3}, rng, true);
    check(report, "op", "upsample_nearest", {{"input", x}},
          projected(proj, [x](Tape& t) -> std::vector<Tensor> { return {ad::upsample_nearest(t, x, 5)}; }),
          cfg);
  }
  {
    Projector proj{rng, {}};
    Tensor x = random_tensor({7, 4}, rng, true);
    check(report, "op", "grid_restore_flatten", {{"input", x}},
          projected(proj, [x](Tape& t) -> std::vector<Tensor> {
            auto layout = ad::grid_restore(t, x);
            return {layout.grid, ad::grid_flatten(t, layout.grid, 7)};
          }),
          cfg);
  }
  {
    Projector proj{rng, {}};
    Tensor x = random_tensor({n, 5}, rng, true);
    check(report, "op", "mean_max_rows", {{"input", x}},
          projected(proj, [x](Tape& t) -> std::vector<Tensor> {
            return {ad::mean_rows(t, x), ad::max_rows(t, x)};
          }),
          cfg);
  }
  {
    Tensor z = Tensor({1, 4}, {-3.0, -0.5, 0.7, 4.0}, true);
    const std::vector<double> y{1.0, 0.0, 1.0, 0.0}, w{0.25, 0.5, 0.25, 1.0};
    check(report, "op", "bce_with_logits", {{"input", z}},
          [z, y, w](Tape& t) { return ad::bce_with_logits(t, z, y, w); }, cfg);
  }

  // Layers.
  Tensor h = random_tensor({n, d}, rng, true);
  Tensor h_literal = random_tensor({cfg.literal_bag_size, d}, rng, true);
  Tensor hf = random_tensor({n, df}, rng, true);
  {
    Projector proj{rng, {}};
    Linear layer = Linear::init(d, df, rng);
    ParameterList ps{{"input", h}};
    collect_parameters(layer, "linear", ps);
    check(report, "layer", "linear", ps,
          projected(proj, [=](Tape& t) -> std::vector<Tensor> { return {linear_forward(t, h, layer)}; }), cfg);
  }
  {
    Projector proj{rng, {}};
    auto att = GatedAttentionParams::init(df, mc.attention_dim, rng);
    ParameterList ps{{"input", hf}};
    collect_parameters(att, "attention", ps);
    check(report, "layer", "gated_attention", ps,
          projected(proj, [=](Tape& t) -> std::vector<Tensor> {
            auto r = gated_attention_pool(t, hf, att);
            return {r.pooled, r.attention};
          }),
          cfg);
  }
  {
    Projector proj{rng, {}};
    auto amil = AmilParams::init(d, df, mc.attention_dim, rng);
    ParameterList ps{{"input", h}};
    collect_parameters(amil, "amil", ps);
    check(report, "layer", "amil", ps,
          projected(proj, [=](Tape& t) -> std::vector<Tensor> {
            auto r = amil_forward(t, h, amil);
            return {r.pooled, r.attention};
          }),
          cfg);
  }
  for (ShapeMode mode : {ShapeMode::Preserve, ShapeMode::Literal}) {
    Projector proj{rng, {}};
    auto mp = MPAmilParams::init(d, df, mc.attention_dim, rng);
    const Tensor input = mode == ShapeMode::Preserve ? h : h_literal;
    ParameterList ps{{"input", input}};
    collect_parameters(mp, "mp_amil", ps);
    check(report, "layer", "mp_amil_" + to_string(mode), ps,
          projected(proj, [=](Tape& t) -> std::vector<Tensor> {
            auto r = mp_amil_forward(t, input, mp, mode);
            return {r.pooled, r.attention};
          }),
          cfg);
  }
  {
    Projector proj{rng, {}};
    auto gate = MPGateParams::init(d, mc.gate_dim, mc.experts, rng);
    ParameterList ps{{"input", h}};
    collect_parameters(gate, "mp_gate", ps);
    check(report, "layer", "mp_gate", ps,
          projected(proj, [=](Tape& t) -> std::vector<Tensor> { return {mp_gate_forward(t, h, gate)}; }), cfg);
  }
  {
    Projector proj{rng, {}};
    Tensor w = Linear::init(d, mc.experts, rng).weight;
    check(report, "layer", "simple_gate", {{"input", h}, {"simple_gate.weight", w}},
          projected(proj, [=](Tape& t) -> std::vector<Tensor> { return {simple_gate_forward(t, h, w)}; }), cfg);
  }
  {
    Projector proj{rng, {}};
    Tensor x = random_tensor({1, df}, rng, true);
    auto tower = TowerParams::init(df, mc.tower_hidden, rng);
    ParameterList ps{{"input", x}};
    collect_parameters(tower, "tower", ps);
    check(report, "layer", "tower", ps,
          projected(proj, [=](Tape& t) -> std::vector<Tensor> { return {tower_forward(t, x, tower)}; }), cfg);
  }
  for (bool use_max : {false, true}) {
    Projector proj{rng, {}};
    std::vector<TowerParams> towers;
    for (std::size_t i = 0; i < mc.tasks; ++i) towers.push_back(TowerParams::init(d, mc.tower_hidden, rng));
    ParameterList ps{{"input", h}};
    for (std::size_t i = 0; i < towers.size(); ++i) collect_parameters(towers[i], "tower" + std::to_string(i), ps);
    check(report, "layer", use_max ? "max_pool_head" : "mean_pool_head", ps,
          projected(proj, [=](Tape& t) -> std::vector<Tensor> {
            return {use_max ? max_pool_head(t, h, towers) : mean_pool_head(t, h, towers)};
          }),
          cfg);
  }

  // Whole models under the multi-task loss.
  std::vector<double> labels(mc.tasks);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<double>(i % 2);
  struct Case {
    Variant variant;
    ShapeMode mode;
  };
  const Case cases[] = {{Variant::AmilSingle, ShapeMode::Preserve}, {Variant::MmoeAmil, ShapeMode::Preserve},
                        {Variant::MmoeMpAmil, ShapeMode::Preserve}, {Variant::M4, ShapeMode::Preserve},
                        {Variant::MmoeMpAmil, ShapeMode::Literal},  {Variant::M4, ShapeMode::Literal},
                        {Variant::MeanPool, ShapeMode::Preserve},   {Variant::MaxPool, ShapeMode::Preserve}};
  for (const auto& c : cases) {
    ModelConfig config = mc;
    config.variant = c.variant;
    config.shape_mode = c.mode;
    const M4Model model = M4Model::build(config);
    const bool literal = c.mode == ShapeMode::Literal;
    const Tensor input = literal ? h_literal : h;
    std::string name = to_string(c.variant);
    if (literal) name += "_literal";
    check(report, "variant", name, model.parameters(),
          [&model, input, &labels](Tape& t) { return multi_task_loss(t, model.forward(t, input), labels); },
          cfg);
  }
  return report;
}

}  // namespace m4
