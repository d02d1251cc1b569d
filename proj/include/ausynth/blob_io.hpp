#pragma once

// Little-endian float32/uint32 blobs and JSON manifests shared by the
// checkpoint, basis and binary dataset formats.

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ausynth/errors.hpp"

namespace ausynth::blob {

namespace fs = std::filesystem;

namespace detail {

template <typename T>
T to_little(T v) {
    static_assert(sizeof(T) == 4);
    if constexpr (std::endian::native == std::endian::big) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        u = ((u & 0xffu) << 24) | ((u & 0xff00u) << 8) | ((u >> 8) & 0xff00u) | (u >> 24);
        std::memcpy(&v, &u, 4);
    }
    return v;
}

template <typename T>
void write_raw(const fs::path& path, const std::vector<T>& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (T v : data) {
        const T le = to_little(v);
        out.write(reinterpret_cast<const char*>(&le), sizeof(T));
    }
    if (!out) throw IoError("write failed for " + path.string());
}

template <typename T>
std::vector<T> read_raw(const fs::path& path, std::size_t expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    if (bytes != expected * sizeof(T)) {
        throw ParseError(path.string() + ": expected " + std::to_string(expected * sizeof(T)) +
                         " bytes, found " + std::to_string(bytes));
    }
    std::vector<T> data(expected);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw IoError("read failed for " + path.string());
    for (T& v : data) v = to_little(v);
    return data;
}

}  // namespace detail

/// Stores values as float32; values are rounded to single precision.
inline void write_f32(const fs::path& path, std::span<const double> values) {
    std::vector<float> data(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) data[i] = static_cast<float>(values[i]);
    detail::write_raw(path, data);
}

inline std::vector<double> read_f32(const fs::path& path, std::size_t expected) {
    const auto data = detail::read_raw<float>(path, expected);
    return {data.begin(), data.end()};
}

inline void write_u32(const fs::path& path, std::span<const std::uint32_t> values) {
    detail::write_raw(path, std::vector<std::uint32_t>(values.begin(), values.end()));
}

inline std::vector<std::uint32_t> read_u32(const fs::path& path, std::size_t expected) {
    return detail::read_raw<std::uint32_t>(path, expected);
}

inline void write_json(const fs::path& path, const nlohmann::json& doc) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

inline nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

inline void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

}  // namespace ausynth::blob
