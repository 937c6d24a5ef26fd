#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>

namespace aldot {

struct ImageSize {
  int width = 0;
  int height = 0;
};

/// Reads width/height from a PNG IHDR chunk or a JPEG SOFn marker without
/// decoding pixels. Returns nullopt for anything else or a truncated header.
std::optional<ImageSize> read_image_size(std::span<const std::uint8_t> bytes);
std::optional<ImageSize> read_image_size(const std::filesystem::path& path);

}  // namespace aldot
