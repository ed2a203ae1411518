#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fka/nn.hpp"

namespace fka {

// Binary layout, all integers little-endian u32:
//
//   "FKAO" | version | parameter count
//   per parameter: name length | UTF-8 name | rank | dims[rank] | fp32 payload
//
// Payload floats are written as their IEEE-754 bit patterns, little-endian.

inline constexpr char kCheckpointMagic[4] = {'F', 'K', 'A', 'O'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store);
/// Same format restricted to a parameter subset, in the given order.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedParameter>& params);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into `store`. Names, order and shapes must match
/// exactly; any disagreement is a VersionError.
void load_checkpoint(const std::filesystem::path& path, ParameterStore& store);
void load_entries(const std::vector<CheckpointEntry>& entries, ParameterStore& store);
void load_entries(const std::vector<CheckpointEntry>& entries, const std::vector<NamedParameter>& params);

std::vector<CheckpointEntry> snapshot(const ParameterStore& store);
std::vector<CheckpointEntry> snapshot(const std::vector<NamedParameter>& params);

} // namespace fka
