#include "mfr/qimg.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "mfr/error.hpp"

namespace mfr {
namespace {

void put_le(std::vector<char>& buf, std::uint64_t value, int bytes) {
    for (int i = 0; i < bytes; ++i) buf.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(const unsigned char* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

void write_qimg(std::ostream& out, const ImageStack& stack) {
    if (stack.size() > std::numeric_limits<std::uint32_t>::max() || stack.height() > 65535 || stack.width() > 65535)
        throw DataError("qimg: stack dimensions exceed the format limits");
    std::vector<char> buf;
    buf.reserve(14 + stack.data().size() * 4);
    buf.insert(buf.end(), {'Q', 'I', 'M', 'G'});
    put_le(buf, kQimgVersion, 2);
    put_le(buf, stack.size(), 4);
    put_le(buf, stack.height(), 2);
    put_le(buf, stack.width(), 2);
    for (float v : stack.data()) put_le(buf, std::bit_cast<std::uint32_t>(v), 4);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("qimg: write failed");
}

void write_qimg(const std::filesystem::path& path, const ImageStack& stack) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("qimg: cannot open " + path.string() + " for writing");
    write_qimg(out, stack);
}

ImageStack read_qimg(std::istream& in) {
    std::array<unsigned char, 14> header{};
    in.read(reinterpret_cast<char*>(header.data()), header.size());
    if (in.gcount() != static_cast<std::streamsize>(header.size())) throw DataError("qimg: truncated header");
    if (std::memcmp(header.data(), "QIMG", 4) != 0) throw DataError("qimg: bad magic");
    const auto version = static_cast<std::uint16_t>(get_le(header.data() + 4, 2));
    if (version != kQimgVersion) throw DataError("qimg: unsupported version " + std::to_string(version));
    const auto n = static_cast<std::size_t>(get_le(header.data() + 6, 4));
    const auto h = static_cast<std::size_t>(get_le(header.data() + 10, 2));
    const auto w = static_cast<std::size_t>(get_le(header.data() + 12, 2));
    ImageStack stack(n, h, w);
    auto data = stack.data();
    std::vector<unsigned char> payload(data.size() * 4);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (in.gcount() != static_cast<std::streamsize>(payload.size())) throw DataError("qimg: truncated payload");
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(payload.data() + 4 * i, 4)));
    return stack;
}

ImageStack read_qimg(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("qimg: cannot open " + path.string());
    return read_qimg(in);
}

}  // namespace mfr
