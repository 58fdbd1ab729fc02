#pragma once

#include <hiflow/tensor.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <variant>

namespace hiflow {

// HIFT raw tensor record:
//   "HIFT" | u32 version=1 | u32 rank | rank x u64 extents | u8 dtype (0=F32, 1=F64) | payload
// All integers and the payload are little-endian.

inline constexpr std::uint32_t kHiftVersion = 1;

namespace detail {
static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class U>
void write_le(std::ostream& os, U v) {
    unsigned char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
    os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class U>
U read_le(std::istream& is) {
    unsigned char buf[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw FormatError("HIFT: truncated stream");
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
    U v;
    std::memcpy(&v, buf, sizeof(U));
    return v;
}
}  // namespace detail

template <class T>
void write_hift(std::ostream& os, const Tensor<T>& t) {
    os.write("HIFT", 4);
    detail::write_le<std::uint32_t>(os, kHiftVersion);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::write_le<std::uint64_t>(os, e);
    detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(precision_of<T>()));
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(t.data().data()), std::streamsize(t.numel() * sizeof(T)));
    } else {
        for (const T v : t.data()) detail::write_le<T>(os, v);
    }
    if (!os) throw FormatError("HIFT: write failed");
}

/// Tensor of whichever precision the stream holds.
using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

inline AnyTensor read_hift_any(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4)) throw FormatError("HIFT: truncated header");
    if (std::memcmp(magic, "HIFT", 4) != 0) throw FormatError("HIFT: bad magic");
    const auto version = detail::read_le<std::uint32_t>(is);
    if (version != kHiftVersion) throw FormatError("HIFT: unsupported version " + std::to_string(version));
    const auto rank = detail::read_le<std::uint32_t>(is);
    if (rank == 0 || rank > kMaxRank) throw FormatError("HIFT: invalid rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) {
        const auto v = detail::read_le<std::uint64_t>(is);
        if (v == 0 || v > (std::uint64_t{1} << 40)) throw FormatError("HIFT: invalid extent");
        e = static_cast<std::size_t>(v);
    }
    const auto dtype = detail::read_le<std::uint8_t>(is);
    auto read_payload = [&](auto tag) -> AnyTensor {
        using U = decltype(tag);
        std::vector<U> values(numel_of(shape));
        if constexpr (std::endian::native == std::endian::little) {
            if (!is.read(reinterpret_cast<char*>(values.data()), std::streamsize(values.size() * sizeof(U))))
                throw FormatError("HIFT: truncated payload");
        } else {
            for (auto& v : values) v = detail::read_le<U>(is);
        }
        return Tensor<U>(shape, std::move(values));
    };
    if (dtype == 0) return read_payload(float{});
    if (dtype == 1) return read_payload(double{});
    throw FormatError("HIFT: unknown dtype " + std::to_string(dtype));
}

/// Reads a record and converts to T if the stored precision differs.
template <class T>
Tensor<T> read_hift(std::istream& is) {
    return std::visit([](const auto& t) { return t.template cast<T>(); }, read_hift_any(is));
}

template <class T>
void save_hift(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    write_hift(os, t);
}

template <class T>
Tensor<T> load_hift(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    return read_hift<T>(is);
}

}  // namespace hiflow
