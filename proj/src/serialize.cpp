#include "cstvae/serialize.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cstvae/errors.hpp"

namespace cstvae {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'T', 'B'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 0;
constexpr std::uint32_t kDtypeF64 = 1;

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, std::size_t& offset) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError("tensor container truncated", offset);
    offset += sizeof(T);
    return v;
}

}  // namespace

void write_tensor_container(const std::string& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kMagic, 4);
    put<std::uint32_t>(os, kVersion);
    put<std::uint64_t>(os, tensors.size());
    for (const NamedTensor& t : tensors) {
        if (numel(t.shape) != static_cast<i64>(t.data.size())) {
            throw DimensionError("write_tensor_container: shape " + shape_str(t.shape) +
                                 " does not match data for '" + t.name + "'");
        }
        put<std::uint64_t>(os, t.name.size());
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put<std::uint32_t>(os, t.f64 ? kDtypeF64 : kDtypeF32);
        put<std::uint64_t>(os, t.shape.size());
        for (i64 d : t.shape) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
        if (t.f64) {
            os.write(reinterpret_cast<const char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        } else {
            std::vector<float> f(t.data.begin(), t.data.end());
            os.write(reinterpret_cast<const char*>(f.data()),
                     static_cast<std::streamsize>(f.size() * sizeof(float)));
        }
    }
    if (!os) throw IoError("write failed: " + path);
}

std::vector<NamedTensor> read_tensor_container(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    std::size_t offset = 0;
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("bad tensor container magic in " + path, 0);
    }
    offset += 4;
    const auto version = get<std::uint32_t>(is, offset);
    if (version != kVersion) throw FormatError("unsupported container version in " + path, offset - 4);
    const auto count = get<std::uint64_t>(is, offset);
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint64_t r = 0; r < count; ++r) {
        NamedTensor t;
        const auto name_len = get<std::uint64_t>(is, offset);
        t.name.resize(name_len);
        is.read(t.name.data(), static_cast<std::streamsize>(name_len));
        if (!is) throw FormatError("tensor container truncated in name", offset);
        offset += name_len;
        const auto dtype = get<std::uint32_t>(is, offset);
        if (dtype != kDtypeF32 && dtype != kDtypeF64) {
            throw FormatError("unknown dtype code " + std::to_string(dtype), offset - 4);
        }
        t.f64 = dtype == kDtypeF64;
        const auto rank = get<std::uint64_t>(is, offset);
        if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), offset - 8);
        t.shape.resize(rank);
        for (auto& d : t.shape) d = static_cast<i64>(get<std::uint64_t>(is, offset));
        const i64 n = numel(t.shape);
        if (n < 0) throw FormatError("negative element count", offset);
        t.data.resize(static_cast<std::size_t>(n));
        if (t.f64) {
            is.read(reinterpret_cast<char*>(t.data.data()),
                    static_cast<std::streamsize>(t.data.size() * sizeof(double)));
            if (!is) throw FormatError("tensor container truncated in payload", offset);
            offset += t.data.size() * sizeof(double);
        } else {
            std::vector<float> f(static_cast<std::size_t>(n));
            is.read(reinterpret_cast<char*>(f.data()),
                    static_cast<std::streamsize>(f.size() * sizeof(float)));
            if (!is) throw FormatError("tensor container truncated in payload", offset);
            offset += f.size() * sizeof(float);
            for (std::size_t i = 0; i < f.size(); ++i) t.data[i] = static_cast<double>(f[i]);
        }
        out.push_back(std::move(t));
    }
    return out;
}

std::uint32_t crc32_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    std::uint32_t crc = crc32(0L, Z_NULL, 0);
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof(buf));
        const std::streamsize got = is.gcount();
        if (got > 0) {
            crc = crc32(crc, reinterpret_cast<const Bytef*>(buf), static_cast<uInt>(got));
        }
    }
    return crc;
}

std::string crc32_hex(std::uint32_t crc) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%08x", crc);
    return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << text;
    if (!os) throw IoError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace cstvae
