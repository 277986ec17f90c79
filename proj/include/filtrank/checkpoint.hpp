#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "filtrank/graph.hpp"

namespace filtrank::ad {

/// Binary checkpoint container.
///
/// Layout (little-endian):
///   8 bytes   magic "FRCKPT01"
///   u32       format version
///   u64       manifest length L
///   L bytes   JSON manifest: {"meta": {...}, "tensors": [{name, dtype, shape, offset, bytes}]}
///   payload   raw tensor values, concatenated in manifest order
///
/// Values are written verbatim, so a save/load round trip is bit-exact.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct CheckpointData {
  ParameterStore<T> tensors;
  nlohmann::json meta = nlohmann::json::object();
};

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const ParameterStore<T>& tensors, const nlohmann::json& meta);

template <typename T>
CheckpointData<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

template <typename T>
void write_checkpoint(const std::filesystem::path& path, const ParameterStore<T>& tensors,
                      const nlohmann::json& meta);

template <typename T>
CheckpointData<T> read_checkpoint(const std::filesystem::path& path);

}  // namespace filtrank::ad
