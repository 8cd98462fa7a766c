#include "enclab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace enclab {

namespace {

constexpr char kMagic[4] = {'I', 'M', 'P', 'K'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t read_u32(std::istream& is) {
    uint8_t b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t read_u64(std::istream& is) {
    uint8_t b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

uint64_t fnv1a64(const uint8_t* bytes, size_t n, uint64_t seed) {
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
    }
    return h;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<uint32_t>(ckpt.tensors.size()));
    uint64_t checksum = 14695981039346656037ull;
    for (const auto& [name, t] : ckpt.tensors) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) write_u32(os, static_cast<uint32_t>(d));
        // f32 payload is written little-endian; this code assumes an LE host.
        const auto* payload = reinterpret_cast<const uint8_t*>(t.ptr());
        size_t bytes = t.numel() * sizeof(float);
        os.write(reinterpret_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
        checksum = fnv1a64(payload, bytes, checksum);
    }
    write_u64(os, checksum);
    if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
    if (read_u32(is) != kVersion) throw std::runtime_error("checkpoint: unsupported version");
    uint32_t count = read_u32(is);
    Checkpoint ckpt;
    uint64_t checksum = 14695981039346656037ull;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint32_t ndim = read_u32(is);
        std::vector<int> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(read_u32(is));
        Tensor t(shape);
        size_t bytes = t.numel() * sizeof(float);
        is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(bytes));
        if (!is) throw std::runtime_error("checkpoint: truncated tensor payload");
        checksum = fnv1a64(reinterpret_cast<const uint8_t*>(t.ptr()), bytes, checksum);
        ckpt.add(std::move(name), std::move(t));
    }
    if (read_u64(is) != checksum) throw std::runtime_error("checkpoint: checksum mismatch in '" + path + "'");
    return ckpt;
}

}  // namespace enclab
