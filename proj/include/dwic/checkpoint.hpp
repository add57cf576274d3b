#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dwic/model.hpp"

namespace dwic {

// Checkpoint file: magic "PCNN", u32 format version, u64 model-spec hash,
// u32 tensor count, then per tensor: u32 name length, name bytes, u32 rank,
// u32 dims, raw little-endian f32 data. Round-trips bit-exactly.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

void save_checkpoint(const std::string& path, std::uint64_t spec_hash,
                     const std::vector<NamedTensor>& tensors);

struct CheckpointData {
    std::uint64_t spec_hash = 0;
    std::vector<NamedTensor> tensors;
};

CheckpointData load_checkpoint(const std::string& path);

// snapshot / restore of a model's full state (weights + BN running stats)
std::vector<NamedTensor> snapshot_state(Model<float>& model);
void restore_state(Model<float>& model, const std::vector<NamedTensor>& tensors);

void save_model(const std::string& path, Model<float>& model);
void load_model(const std::string& path, Model<float>& model);

}  // namespace dwic
