#pragma once

#include <vector>

#include "residseg/image.hpp"
#include "residseg/pgm.hpp"

namespace residseg {

inline constexpr int kVizMargin = 4;
inline constexpr std::uint16_t kVizMarginValue = 128;

/// 8-bit grid with one column per sample and three rows: inputs, model
/// outputs, ground-truth masks ({0,255}). Rows are separated by
/// kVizMargin-pixel grey bands.
GrayRaster triptych(const std::vector<Image2D>& inputs, const std::vector<Image2D>& outputs,
                    const std::vector<BinaryMask>& masks);

}  // namespace residseg
