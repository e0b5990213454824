#pragma once

// Flat, versioned key -> array container used for model checkpoints and run
// state (centroid banks, optimizer moments).
//
// Binary layout, little-endian:
//   char[8]  magic "TTADARR\0"
//   u32      format version (1)
//   u32      entry count
//   per entry, in key order:
//     u32    key length, then key bytes (UTF-8, no terminator)
//     u32    rank
//     u64    extents[rank]
//     f64    values[product of extents]   (IEEE-754 binary64)

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ttadrift/errors.hpp"
#include "ttadrift/gradcore.hpp"

namespace ttadrift {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

struct Array {
    Shape shape;
    std::vector<double> values;

    bool operator==(const Array&) const = default;

    static Array from(const Tensor& t) { return {t.shape(), t.values()}; }
    Tensor to_tensor(bool requires_grad = false) const { return Tensor(shape, values, requires_grad); }
};

using ArrayMap = std::map<std::string, Array>;

inline constexpr char kArrayMagic[8] = {'T', 'T', 'A', 'D', 'A', 'R', 'R', '\0'};
inline constexpr std::uint32_t kArrayFormatVersion = 1;

namespace detail {

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw IoError("array file truncated");
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::string encode_arrays(const ArrayMap& arrays) {
    std::string out(kArrayMagic, sizeof(kArrayMagic));
    detail::put<std::uint32_t>(out, kArrayFormatVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& [key, arr] : arrays) {
        if (shape_numel(arr.shape) != arr.values.size()) {
            throw DimensionError("array '" + key + "' values do not match shape " + shape_str(arr.shape));
        }
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
        out.append(key);
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(arr.shape.size()));
        for (auto e : arr.shape) detail::put<std::uint64_t>(out, e);
        for (double v : arr.values) detail::put<double>(out, v);
    }
    return out;
}

inline ArrayMap decode_arrays(const std::string& bytes) {
    detail::Reader in(bytes);
    if (in.str(sizeof(kArrayMagic)) != std::string(kArrayMagic, sizeof(kArrayMagic))) {
        throw IoError("not an array file (bad magic)");
    }
    const auto version = in.get<std::uint32_t>();
    if (version != kArrayFormatVersion) {
        throw CompatibilityError("unsupported array file version " + std::to_string(version));
    }
    const auto count = in.get<std::uint32_t>();
    ArrayMap arrays;
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto key_len = in.get<std::uint32_t>();
        std::string key = in.str(key_len);
        Array arr;
        const auto rank = in.get<std::uint32_t>();
        for (std::uint32_t r = 0; r < rank; ++r) arr.shape.push_back(in.get<std::uint64_t>());
        arr.values.resize(shape_numel(arr.shape));
        for (auto& v : arr.values) v = in.get<double>();
        arrays.emplace(std::move(key), std::move(arr));
    }
    if (!in.done()) throw IoError("trailing bytes after array entries");
    return arrays;
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for '" + path + "'");
}

inline void save_arrays(const std::string& path, const ArrayMap& arrays) {
    write_file(path, encode_arrays(arrays));
}

inline ArrayMap load_arrays(const std::string& path) { return decode_arrays(read_file(path)); }

} // namespace ttadrift
