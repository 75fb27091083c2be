#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "xmodal/distill.hpp"

namespace xmodal {

namespace checkpoint_file {
inline constexpr char kMagic[4] = {'X', 'M', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;
}  // namespace checkpoint_file

/// Layout: magic "XMCK", u32 version, u64 metadata length + JSON metadata
/// (config, counters, history, RNG states), u32 tensor count, then per
/// tensor: name, u32 rank, u64 dims, f64 values. Tensors cover the encoder
/// weights and buffers, f, g, the logit scale and the Adam moments.
std::vector<unsigned char> serialize_checkpoint(const TrainState& state);
/// Throws BadMagic, VersionMismatch, TruncatedPayload, CorruptTensor.
TrainState deserialize_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace xmodal
