#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "mfr/image.hpp"

namespace mfr {

/// Binary stack layout, all little-endian:
///   "QIMG" | version u16 | n_images u32 | height u16 | width u16 | n*H*W float32, row-major.
inline constexpr std::uint16_t kQimgVersion = 1;

void write_qimg(std::ostream& out, const ImageStack& stack);
void write_qimg(const std::filesystem::path& path, const ImageStack& stack);
ImageStack read_qimg(std::istream& in);
ImageStack read_qimg(const std::filesystem::path& path);

}  // namespace mfr
