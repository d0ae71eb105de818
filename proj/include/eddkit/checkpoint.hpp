#pragma once

#include "eddkit/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace edd {

// Flat named weight store. On disk:
//   "EDDK" | version u32 | per parameter: name_len u32, name, rank u32,
//   dims u32..., float32 values | FNV-1a 64 checksum of all preceding bytes.
// All integers and floats little-endian.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    struct Entry {
        std::string name;
        Tensor value;
    };

    std::uint32_t version = kVersion;
    std::vector<Entry> entries;

    std::vector<std::uint8_t> encode() const;
    static Checkpoint decode(std::span<const std::uint8_t> bytes);
    std::uint64_t checksum() const;

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

Checkpoint capture(const Model& model);
// Names, order and shapes must match the model exactly.
void restore(Model& model, const Checkpoint& checkpoint);

} // namespace edd
