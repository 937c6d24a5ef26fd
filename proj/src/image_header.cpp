#include "aldot/image_header.hpp"

#include <array>
#include <fstream>
#include <iterator>
#include <vector>

namespace aldot {
namespace {

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

std::uint16_t be16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
}

constexpr std::array<std::uint8_t, 8> kPngSignature{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};

std::optional<ImageSize> png_size(std::span<const std::uint8_t> b) {
  if (b.size() < 24) return std::nullopt;
  if (b[12] != 'I' || b[13] != 'H' || b[14] != 'D' || b[15] != 'R') return std::nullopt;
  const std::uint32_t w = be32(b, 16);
  const std::uint32_t h = be32(b, 20);
  if (w == 0 || h == 0 || w > 0x7fffffff || h > 0x7fffffff) return std::nullopt;
  return ImageSize{static_cast<int>(w), static_cast<int>(h)};
}

bool is_sof(std::uint8_t marker) {
  return marker >= 0xC0 && marker <= 0xCF && marker != 0xC4 && marker != 0xC8 && marker != 0xCC;
}

std::optional<ImageSize> jpeg_size(std::span<const std::uint8_t> b) {
  std::size_t pos = 2;
  while (pos + 1 < b.size()) {
    if (b[pos] != 0xFF) return std::nullopt;
    while (pos < b.size() && b[pos] == 0xFF) ++pos;  // fill bytes
    if (pos >= b.size()) return std::nullopt;
    const std::uint8_t marker = b[pos++];
    if (marker == 0xD8 || marker == 0x01 || (marker >= 0xD0 && marker <= 0xD7)) continue;
    if (marker == 0xD9 || marker == 0xDA) return std::nullopt;  // no frame header before scan
    if (pos + 2 > b.size()) return std::nullopt;
    const std::uint16_t length = be16(b, pos);
    if (length < 2) return std::nullopt;
    if (is_sof(marker)) {
      if (pos + 7 > b.size()) return std::nullopt;
      const int h = be16(b, pos + 3);
      const int w = be16(b, pos + 5);
      if (w == 0 || h == 0) return std::nullopt;
      return ImageSize{w, h};
    }
    pos += length;
  }
  return std::nullopt;
}

}  // namespace

std::optional<ImageSize> read_image_size(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= kPngSignature.size() &&
      std::equal(kPngSignature.begin(), kPngSignature.end(), bytes.begin()))
    return png_size(bytes);
  if (bytes.size() >= 2 && bytes[0] == 0xFF && bytes[1] == 0xD8) return jpeg_size(bytes);
  return std::nullopt;
}

std::optional<ImageSize> read_image_size(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return read_image_size(std::span<const std::uint8_t>(bytes));
}

}  // namespace aldot
