// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "drl/numerics/adam.hpp"
#include "drl/numerics/layers.hpp"

// Binary checkpoint container, all integers and values little-endian:
//   "DRLCKPT1" | u32 scalar_bytes | u64 config_hash | i32 epoch | u32 metadata_len | metadata
//   u32 n_params  { u32 name_len | name | u32 rank | u64 extents[rank] | values }
//   u32 n_buffers { u32 name_len | name | u64 len | values }
//   u8 has_optimizer [ u64 step_count | per parameter: first moment | second moment ]
namespace drl::nn {

struct CheckpointInfo {
  std::uint64_t config_hash = 0;
  int epoch = 0;
  std::string metadata;  // free-form JSON text
  std::size_t scalar_bytes = 0;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const CheckpointInfo& info,
                     const StateRefs<T>& state, const AdamState<T>* optimizer);

/// Restores parameters and buffers in place; names and shapes must match exactly.
template <typename T>
CheckpointInfo load_checkpoint(const std::filesystem::path& path, StateRefs<T>& state,
                               AdamState<T>* optimizer);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

}  // namespace drl::nn
