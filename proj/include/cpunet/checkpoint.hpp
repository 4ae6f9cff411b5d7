#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "cpunet/network.hpp"

// "CPUN" checkpoint container. All integers and floats are little-endian:
//
//   magic   "CPUN"
//   u32     format version (1)
//   u32     config block length, then that many bytes of `key=value\n` lines
//           (model.* keys plus state.step)
//   u32     parameter record count, then per record:
//           u32 name length, name bytes, u32 rank, u64 dims[rank],
//           f64 values[product(dims)]
namespace cpunet::io {

constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const CpUnet& model, std::size_t step);
void save_checkpoint(const std::filesystem::path& path, const CpUnet& model, std::size_t step);

struct LoadedCheckpoint {
    std::unique_ptr<CpUnet> model;
    std::size_t step = 0;
};

/// Rebuilds the model from the stored config and copies every parameter.
/// Wrong magic, version, names or shapes are DataErrors.
LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cpunet::io
