#include "m4/params_io.hpp"

#include <algorithm>
#include <limits>
#include <map>

#include "byte_io.hpp"
#include "m4/errors.hpp"

namespace m4 {

using detail::ByteReader;
using detail::ByteWriter;

namespace {

constexpr std::uint8_t kParamMagic[4] = {'M', 'P', 'R', '1'};
constexpr std::size_t kConfigFields = 11;

std::string fold_prefix(std::size_t f) { return "fold" + std::to_string(f) + "/"; }

Tensor config_tensor(const ModelConfig& c) {
  const auto lo = static_cast<double>(c.seed & 0xffffffffULL);
  const auto hi = static_cast<double>(c.seed >> 32);
  return Tensor({kConfigFields},
                {static_cast<double>(c.input_dim), static_cast<double>(c.expert_dim),
                 static_cast<double>(c.gate_dim), static_cast<double>(c.attention_dim),
                 static_cast<double>(c.experts), static_cast<double>(c.tasks),
                 static_cast<double>(c.tower_hidden), static_cast<double>(c.variant),
                 static_cast<double>(c.shape_mode), lo, hi});
}

std::size_t as_count(double v, const char* what) {
  if (!(v >= 0.0) || v > 4294967295.0 || v != static_cast<double>(static_cast<std::uint64_t>(v))) {
    throw FormatError(std::string("saved ") + what + " is not a valid count");
  }
  return static_cast<std::size_t>(v);
}

ModelConfig config_from_tensor(const Tensor& t) {
  if (t.size() != kConfigFields) throw FormatError("saved model config has the wrong length");
  auto v = t.values();
  ModelConfig c;
  c.input_dim = as_count(v[0], "input_dim");
  c.expert_dim = as_count(v[1], "expert_dim");
  c.gate_dim = as_count(v[2], "gate_dim");
  c.attention_dim = as_count(v[3], "attention_dim");
  c.experts = as_count(v[4], "experts");
  c.tasks = as_count(v[5], "tasks");
  c.tower_hidden = as_count(v[6], "tower_hidden");
  const auto variant = as_count(v[7], "variant");
  if (variant > static_cast<std::size_t>(Variant::MaxPool)) throw FormatError("unknown saved variant");
  c.variant = static_cast<Variant>(variant);
  const auto mode = as_count(v[8], "shape_mode");
  if (mode > 1) throw FormatError("unknown saved shape mode");
  c.shape_mode = static_cast<ShapeMode>(mode);
  c.seed = (static_cast<std::uint64_t>(as_count(v[10], "seed")) << 32) | as_count(v[9], "seed");
  return c;
}

void check_expected(const ModelConfig& saved, const ModelConfig& want) {
  auto fail = [](const std::string& field, const std::string& have, const std::string& asked) {
    throw ConfigError("saved model has " + field + " = " + have + " but the configuration asks for " +
                      asked);
  };
  if (saved.variant != want.variant) fail("variant", to_string(saved.variant), to_string(want.variant));
  if (saved.shape_mode != want.shape_mode) {
    fail("shape_mode", to_string(saved.shape_mode), to_string(want.shape_mode));
  }
  const std::pair<const char*, std::pair<std::size_t, std::size_t>> dims[] = {
      {"input_dim", {saved.input_dim, want.input_dim}},
      {"expert_dim", {saved.expert_dim, want.expert_dim}},
      {"gate_dim", {saved.gate_dim, want.gate_dim}},
      {"attention_dim", {saved.attention_dim, want.attention_dim}},
      {"experts", {saved.experts, want.experts}},
      {"tasks", {saved.tasks, want.tasks}},
      {"tower_hidden", {saved.tower_hidden, want.tower_hidden}},
  };
  for (const auto& [name, pair] : dims) {
    if (pair.first != pair.second) fail(name, std::to_string(pair.first), std::to_string(pair.second));
  }
}

}  // namespace

std::vector<std::uint8_t> encode_params(const ParameterList& tensors) {
  ByteWriter w;
  w.bytes(kParamMagic);
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw SizeOverflowError("tensor name longer than 65535 bytes");
    }
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(name.data()), name.size()));
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) throw SizeOverflowError("tensor dim exceeds u32");
      w.u32(static_cast<std::uint32_t>(d));
    }
    for (double v : t.values()) w.f64(v);
  }
  return w.take();
}

ParameterList decode_params(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "parameter file");
  r.need(4, "magic");
  if (!std::equal(std::begin(kParamMagic), std::end(kParamMagic), bytes.begin())) {
    throw BadMagicError("not an MPR1 parameter file (bad magic bytes)");
  }
  for (int i = 0; i < 4; ++i) r.u8("magic");
  ParameterList out;
  std::map<std::string, int> seen;
  while (r.remaining() > 0) {
    const std::uint16_t len = r.u16("name length");
    std::string name = r.str(len, "name");
    if (seen[name]++) throw FormatError("duplicate tensor name '" + name + "'");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0) throw FormatError("tensor '" + name + "' has rank 0");
    r.need(4ULL * rank, "dims");
    ad::Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      d = r.u32("dim");
      if (d == 0) throw FormatError("tensor '" + name + "' has a zero dimension");
      count *= d;
      if (count > r.remaining()) throw TruncatedError("parameter file truncated in tensor '" + name + "'");
    }
    r.need(8 * count, "tensor values");
    std::vector<double> values(count);
    for (auto& v : values) v = r.f64("tensor values");
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return out;
}

void write_params(const ParameterList& tensors, const std::filesystem::path& path) {
  detail::write_file(path, encode_params(tensors));
}

ParameterList read_params(const std::filesystem::path& path) {
  return decode_params(detail::read_file(path));
}

ParameterList pack_run(const SavedRun& run) {
  if (run.models.empty()) throw ConfigError("nothing to save: no trained models");
  ParameterList out;
  const double lo = static_cast<double>(run.split_seed & 0xffffffffULL);
  const double hi = static_cast<double>(run.split_seed >> 32);
  out.push_back({"__run__", Tensor({3}, {static_cast<double>(run.models.size()), lo, hi})});
  if (run.scaler) {
    const auto& s = *run.scaler;
    std::vector<double> bounds(s.lower());
    bounds.insert(bounds.end(), s.upper().begin(), s.upper().end());
    out.push_back({"__scaler__", Tensor({2, s.cols()}, std::move(bounds))});
  }
  for (std::size_t f = 0; f < run.models.size(); ++f) {
    const auto prefix = fold_prefix(f);
    out.push_back({prefix + "__config__", config_tensor(run.models[f].config)});
    for (const auto& [name, t] : run.models[f].parameters()) out.push_back({prefix + name, t});
  }
  return out;
}

SavedRun unpack_run(const ParameterList& tensors, const std::optional<ModelConfig>& expected) {
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, t] : tensors) by_name.emplace(name, t);
  auto take = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("parameter file lacks tensor '" + name + "'");
    Tensor t = it->second;
    by_name.erase(it);
    return t;
  };

  SavedRun run;
  Tensor meta = take("__run__");
  if (meta.size() != 3) throw FormatError("malformed __run__ record");
  const std::size_t folds = as_count(meta.at(0), "fold count");
  if (folds == 0) throw FormatError("parameter file declares zero models");
  run.split_seed = (static_cast<std::uint64_t>(as_count(meta.at(2), "split seed")) << 32) |
                   as_count(meta.at(1), "split seed");
  if (by_name.count("__scaler__")) {
    Tensor s = take("__scaler__");
    if (s.rank() != 2 || s.rows() != 2) throw FormatError("malformed __scaler__ record");
    auto v = s.values();
    run.scaler = FeatureScaler::from_bounds({v.begin(), v.begin() + static_cast<std::ptrdiff_t>(s.cols())},
                                            {v.begin() + static_cast<std::ptrdiff_t>(s.cols()), v.end()});
  }
  for (std::size_t f = 0; f < folds; ++f) {
    const auto prefix = fold_prefix(f);
    ModelConfig config = config_from_tensor(take(prefix + "__config__"));
    if (expected) check_expected(config, *expected);
    M4Model model = M4Model::build(config);
    for (auto& [name, param] : model.parameters()) {
      Tensor saved = take(prefix + name);
      if (saved.shape() != param.shape()) {
        throw ConfigError("tensor '" + prefix + name + "' has shape " + ad::shape_str(saved.shape()) +
                          ", model expects " + ad::shape_str(param.shape()));
      }
      Tensor dst = param;
      std::copy(saved.values().begin(), saved.values().end(), dst.mutable_values().begin());
    }
    run.models.push_back(std::move(model));
  }
  if (!by_name.empty()) {
    throw ConfigError("parameter file holds tensor '" + by_name.begin()->first +
                      "' that the saved configuration does not use");
  }
  return run;
}

void save_run(const SavedRun& run, const std::filesystem::path& path) {
  write_params(pack_run(run), path);
}

SavedRun load_run(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  return unpack_run(read_params(path), expected);
}

}  // namespace m4
