#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "residseg/image.hpp"

namespace residseg {

/// Raw binary greyscale raster (P5) with 8- or 16-bit samples.
struct GrayRaster {
  int height = 0;
  int width = 0;
  int maxval = 255;
  std::vector<std::uint16_t> pixels;
};

void write_pgm(const std::filesystem::path& path, const GrayRaster& raster);
GrayRaster read_pgm(const std::filesystem::path& path);

/// Quantises [0,1] to 16 bits.
GrayRaster to_raster16(const Image2D& image);
/// Scales samples by 1/maxval.
Image2D to_image(const GrayRaster& raster);
/// {0,1} → {0,255}.
GrayRaster to_raster8(const BinaryMask& mask);
/// Any nonzero sample is set.
BinaryMask to_mask(const GrayRaster& raster);

}  // namespace residseg
