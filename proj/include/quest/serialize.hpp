// Binary tensor records.
//
// Layout (little-endian):
//   "QSTT" | version u32 | rank u32 | extents u64[rank] | dtype u8 | payload
// where dtype 1 = f32, 2 = f64 and the payload is the raw row-major values.
#pragma once

#include "quest/tensor.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

namespace quest {

inline constexpr char kTensorMagic[4] = {'Q', 'S', 'T', 'T'};
inline constexpr std::uint32_t kTensorVersion = 1;

namespace io {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

template <class U>
void put(std::ostream& os, U v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get(std::istream& is) {
    U v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(U));
    if (!is) throw std::runtime_error("tensor record truncated");
    return v;
}

}  // namespace io

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
    os.write(kTensorMagic, 4);
    io::put<std::uint32_t>(os, kTensorVersion);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) io::put<std::uint64_t>(os, e);
    io::put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
    if (!os) throw std::runtime_error("write_tensor: stream error");
}

/// Reads one record; converts between f32 and f64 payloads if needed.
template <class T>
Tensor<T> read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kTensorMagic, 4) != 0) throw std::runtime_error("read_tensor: bad magic");
    const auto version = io::get<std::uint32_t>(is);
    if (version != kTensorVersion) throw std::runtime_error("read_tensor: unsupported version " + std::to_string(version));
    const auto rank = io::get<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(io::get<std::uint64_t>(is));
    const auto tag = static_cast<DType>(io::get<std::uint8_t>(is));
    const std::size_t n = shape_numel(shape);
    auto read_payload = [&](auto tag_value) {
        using U = decltype(tag_value);
        std::vector<U> raw(n);
        is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(U)));
        if (!is) throw std::runtime_error("read_tensor: payload truncated");
        return Tensor<T>(shape, std::vector<T>(raw.begin(), raw.end()));
    };
    switch (tag) {
        case DType::f32: return read_payload(float{});
        case DType::f64: return read_payload(double{});
    }
    throw std::runtime_error("read_tensor: unknown dtype tag");
}

}  // namespace quest
