#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bev/tensor.hpp"

// Tensor blob file format shared by every module: magic "BEVT", u32
// version=1, u32 ndim, ndim×u32 extents, then little-endian float32 values
// in row-major order. Checkpoints and datasets are directories of blobs plus
// a JSON manifest (see checkpoint.hpp / synthworld.hpp).

namespace bev {

static_assert(std::endian::native == std::endian::little,
              "blob io assumes a little-endian host");

inline constexpr char kBlobMagic[4] = {'B', 'E', 'V', 'T'};
inline constexpr uint32_t kBlobVersion = 1;

template <class S>
void write_blob(const std::string& path, const Tensor<S>& t) {
    BEV_CHECK(t.defined(), "write_blob: undefined tensor for ", path);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    BEV_CHECK(f.good(), "write_blob: cannot open ", path);
    f.write(kBlobMagic, 4);
    auto put_u32 = [&f](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(kBlobVersion);
    put_u32(static_cast<uint32_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) put_u32(static_cast<uint32_t>(t.dim(d)));
    const long long n = t.numel();
    const S* p = t.data();
    std::vector<float> buf(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) buf[static_cast<size_t>(i)] = static_cast<float>(p[i]);
    f.write(reinterpret_cast<const char*>(buf.data()), n * 4);
    BEV_CHECK(f.good(), "write_blob: write failed for ", path);
}

template <class S = float>
Tensor<S> read_blob(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    BEV_CHECK(f.good(), "read_blob: cannot open ", path);
    char magic[4];
    f.read(magic, 4);
    BEV_CHECK(f.good() && std::memcmp(magic, kBlobMagic, 4) == 0,
              "read_blob: bad magic in ", path);
    auto get_u32 = [&f, &path]() {
        uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        BEV_CHECK(f.good(), "read_blob: truncated header in ", path);
        return v;
    };
    const uint32_t version = get_u32();
    BEV_CHECK(version == kBlobVersion, "read_blob: unsupported version ", version, " in ", path);
    const uint32_t ndim = get_u32();
    BEV_CHECK(ndim <= 8, "read_blob: implausible rank ", ndim, " in ", path);
    std::vector<int> shape(ndim);
    long long n = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
        shape[d] = static_cast<int>(get_u32());
        BEV_CHECK(shape[d] > 0, "read_blob: non-positive extent in ", path);
        n *= shape[d];
    }
    std::vector<float> buf(static_cast<size_t>(n));
    f.read(reinterpret_cast<char*>(buf.data()), n * 4);
    BEV_CHECK(f.good(), "read_blob: truncated payload in ", path);
    std::vector<S> data(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) data[static_cast<size_t>(i)] = static_cast<S>(buf[static_cast<size_t>(i)]);
    return Tensor<S>(std::move(shape), std::move(data));
}

}  // namespace bev
