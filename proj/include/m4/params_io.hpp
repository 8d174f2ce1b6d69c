#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "m4/data.hpp"
#include "m4/model.hpp"

namespace m4 {

// "MPR1" parameter files: magic, then named tensors until end of file, each
// as u16 name length, name bytes, u32 rank, rank × u32 dims, float64 values,
// all little-endian.
std::vector<std::uint8_t> encode_params(const ParameterList& tensors);
ParameterList decode_params(std::span<const std::uint8_t> bytes);
void write_params(const ParameterList& tensors, const std::filesystem::path& path);
ParameterList read_params(const std::filesystem::path& path);

/// A trained run: one model per fold plus what eval needs to rebuild the
/// test split and the input scaling.
struct SavedRun {
  std::vector<M4Model> models;
  std::optional<FeatureScaler> scaler;
  std::uint64_t split_seed = 0;
};

// Models are stored under "fold<k>/" with their config in "fold<k>/__config__";
// run metadata lives in "__run__" and the scaler in "__scaler__".
ParameterList pack_run(const SavedRun& run);
// When `expected` is set, a saved config that differs in variant or any
// dimension raises ConfigError naming the first difference.
SavedRun unpack_run(const ParameterList& tensors, const std::optional<ModelConfig>& expected = {});

void save_run(const SavedRun& run, const std::filesystem::path& path);
SavedRun load_run(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = {});

}  // namespace m4
