#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "endol2h/errors.hpp"
#include "endol2h/networks.hpp"
#include "endol2h/tensor.hpp"

namespace endol2h {

// Binary checkpoint container. Little-endian layout:
//   "ENL2H"  magic (5 bytes)
//   u32      format version (currently 1)
//   u32      record count
//   records: u32 name_len, name bytes, u8 dtype, u32 rank, u32 dims[rank],
//            payload (dtype 0 = f32 tensor, 1 = raw byte blob, 2 = u64)
struct CheckpointRecord {
    std::string name;
    std::uint8_t dtype = 0;
    std::vector<int> dims;
    std::vector<unsigned char> bytes;

    static constexpr std::uint8_t kF32 = 0;
    static constexpr std::uint8_t kBlob = 1;
    static constexpr std::uint8_t kU64 = 2;

    template <typename T>
    static CheckpointRecord from_tensor(const std::string& name, const Tensor<T>& t) {
        CheckpointRecord r;
        r.name = name;
        r.dtype = kF32;
        r.dims = t.shape;
        r.bytes.resize(t.size() * 4);
        for (std::size_t i = 0; i < t.size(); ++i) {
            float f = static_cast<float>(t.data[i]);
            std::memcpy(&r.bytes[i * 4], &f, 4);
        }
        return r;
    }

    static CheckpointRecord from_blob(const std::string& name, std::vector<unsigned char> b) {
        CheckpointRecord r;
        r.name = name;
        r.dtype = kBlob;
        r.dims = {static_cast<int>(b.size())};
        r.bytes = std::move(b);
        return r;
    }

    static CheckpointRecord from_u64(const std::string& name, std::uint64_t v) {
        CheckpointRecord r;
        r.name = name;
        r.dtype = kU64;
        r.dims = {1};
        r.bytes.resize(8);
        std::memcpy(r.bytes.data(), &v, 8);
        return r;
    }

    template <typename T>
    Tensor<T> to_tensor() const {
        if (dtype != kF32) throw IoError("checkpoint record '" + name + "' is not a tensor");
        Tensor<T> t(dims);
        if (bytes.size() != t.size() * 4)
            throw IoError("checkpoint record '" + name + "' has inconsistent payload size");
        for (std::size_t i = 0; i < t.size(); ++i) {
            float f;
            std::memcpy(&f, &bytes[i * 4], 4);
            t.data[i] = static_cast<T>(f);
        }
        return t;
    }

    std::uint64_t to_u64() const {
        if (dtype != kU64 || bytes.size() != 8)
            throw IoError("checkpoint record '" + name + "' is not a u64");
        std::uint64_t v;
        std::memcpy(&v, bytes.data(), 8);
        return v;
    }
};

namespace detail {

inline void put_u32(std::ostream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& f, const std::string& what) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4))
        throw IoError("truncated checkpoint while reading " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline constexpr char kCheckpointMagic[5] = {'E', 'N', 'L', '2', 'H'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path,
                            const std::vector<CheckpointRecord>& records) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    f.write(kCheckpointMagic, 5);
    detail::put_u32(f, kCheckpointVersion);
    detail::put_u32(f, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        detail::put_u32(f, static_cast<std::uint32_t>(r.name.size()));
        f.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        f.put(static_cast<char>(r.dtype));
        detail::put_u32(f, static_cast<std::uint32_t>(r.dims.size()));
        for (int d : r.dims) detail::put_u32(f, static_cast<std::uint32_t>(d));
        f.write(reinterpret_cast<const char*>(r.bytes.data()),
                static_cast<std::streamsize>(r.bytes.size()));
    }
    if (!f) throw IoError("write failure on checkpoint: " + path);
}

inline std::vector<CheckpointRecord> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint: " + path);
    char magic[5];
    if (!f.read(magic, 5) || std::memcmp(magic, kCheckpointMagic, 5) != 0)
        throw IoError("not a checkpoint file (bad magic): " + path);
    std::uint32_t version = detail::get_u32(f, "version");
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " +
                      path);
    std::uint32_t count = detail::get_u32(f, "record count");
    std::vector<CheckpointRecord> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointRecord r;
        std::uint32_t nlen = detail::get_u32(f, "name length");
        r.name.resize(nlen);
        if (!f.read(r.name.data(), nlen)) throw IoError("truncated checkpoint name in " + path);
        int dt = f.get();
        if (dt < 0) throw IoError("truncated checkpoint record in " + path);
        r.dtype = static_cast<std::uint8_t>(dt);
        if (r.dtype > CheckpointRecord::kU64)
            throw IoError("unknown dtype in checkpoint record '" + r.name + "'");
        std::uint32_t rank = detail::get_u32(f, "rank");
        std::size_t n = 1;
        r.dims.resize(rank);
        for (std::uint32_t d = 0; d < rank; ++d) {
            r.dims[d] = static_cast<int>(detail::get_u32(f, "dim"));
            n *= static_cast<std::size_t>(r.dims[d]);
        }
        std::size_t payload = r.dtype == CheckpointRecord::kF32 ? n * 4
                              : r.dtype == CheckpointRecord::kU64 ? 8
                                                                  : n;
        r.bytes.resize(payload);
        if (!f.read(reinterpret_cast<char*>(r.bytes.data()),
                    static_cast<std::streamsize>(payload)))
            throw IoError("truncated checkpoint payload for '" + r.name + "' in " + path);
        out.push_back(std::move(r));
    }
    return out;
}

// ParamStore <-> records, with a prefix to namespace multiple models.
template <typename T>
void append_store_records(std::vector<CheckpointRecord>& out, const std::string& prefix,
                          const ParamStore<T>& ps) {
    for (const auto& e : ps.params())
        out.push_back(CheckpointRecord::from_tensor(prefix + ".param." + e.name, e.tensor));
    for (const auto& e : ps.buffers())
        out.push_back(CheckpointRecord::from_tensor(prefix + ".buffer." + e.name, e.tensor));
}

template <typename T>
void restore_store(const std::vector<CheckpointRecord>& records, const std::string& prefix,
                   ParamStore<T>& ps) {
    auto find = [&](const std::string& name) -> const CheckpointRecord& {
        for (const auto& r : records)
            if (r.name == name) return r;
        throw IoError("checkpoint is missing record '" + name + "'");
    };
    auto restore = [&](const std::string& name, Tensor<T>& dst) {
        const auto& r = find(name);
        if (r.dims != dst.shape)
            throw IoError("checkpoint shape mismatch for '" + name + "': file " +
                          Tensor<T>(r.dims).shape_str() + " vs model " + dst.shape_str());
        dst = r.template to_tensor<T>();
    };
    for (auto& e : ps.params()) restore(prefix + ".param." + e.name, e.tensor);
    for (auto& e : ps.buffers()) restore(prefix + ".buffer." + e.name, e.tensor);
}

}  // namespace endol2h
