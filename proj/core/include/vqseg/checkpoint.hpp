#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqseg/segnet.hpp"

namespace vqseg {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// VQSG binary container: magic "VQSG", u32 version, u32 entry count, then per
// entry u32 name length + name, u8 dtype (0 = f32, 1 = i64), u32 rank,
// u32 dims..., little-endian payload. Entry order is fixed, so
// save -> load -> save is byte-identical.
struct TableEntry {
    std::string name;
    uint8_t dtype = 0;
    std::vector<int> dims;
    std::vector<float> f32;
    std::vector<int64_t> i64;
};

void write_table(const std::vector<TableEntry>& entries, const std::string& path);
std::vector<TableEntry> read_table(const std::string& path);

struct CheckpointState {
    Model model;
    AdamState adam;
    int epoch = 0;
};

void save_checkpoint(const Model& model, const AdamState& adam, int epoch,
                     const std::string& path);
CheckpointState load_checkpoint(const std::string& path);

}  // namespace vqseg
