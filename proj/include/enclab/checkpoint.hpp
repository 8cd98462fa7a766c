#pragma once

#include <string>
#include <utility>
#include <vector>

#include "enclab/tensor.hpp"

namespace enclab {

// Checkpoint container: ordered named tensors.
//
// File layout (little-endian):
//   magic "IMPK" | u32 version=1 | u32 tensor count
//   per tensor: u32 name length | name bytes | u32 ndim | ndim x u32 dims |
//               raw f32 payload
//   trailing u64 FNV-1a checksum over all payload bytes in file order
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> tensors;

    void add(std::string name, Tensor t) { tensors.emplace_back(std::move(name), std::move(t)); }
    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);  // throws on bad magic/version/checksum

uint64_t fnv1a64(const uint8_t* bytes, size_t n, uint64_t seed = 14695981039346656037ull);

}  // namespace enclab
