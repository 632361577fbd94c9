#include "residseg/viz.hpp"

#include <algorithm>
#include <cmath>

#include "residseg/error.hpp"

namespace residseg {

GrayRaster triptych(const std::vector<Image2D>& inputs, const std::vector<Image2D>& outputs,
                    const std::vector<BinaryMask>& masks) {
  if (inputs.empty()) throw Error("triptych: no samples");
  if (outputs.size() != inputs.size() || masks.size() != inputs.size()) throw Error("triptych: row lengths differ");
  const int th = inputs.front().height;
  const int tw = inputs.front().width;
  const int n = static_cast<int>(inputs.size());
  GrayRaster out;
  out.width = n * tw;
  out.height = 3 * th + 2 * kVizMargin;
  out.maxval = 255;
  out.pixels.assign(static_cast<std::size_t>(out.width) * out.height, kVizMarginValue);
  auto put = [&](int row, int col, auto&& value_at) {
    const int top = row * (th + kVizMargin);
    for (int y = 0; y < th; ++y) {
      for (int x = 0; x < tw; ++x) out.pixels[static_cast<std::size_t>(top + y) * out.width + col * tw + x] = value_at(y, x);
    }
  };
  auto grey = [](float v) { return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
  for (int i = 0; i < n; ++i) {
    require_same_size(inputs[i], inputs.front(), "triptych");
    require_same_size(outputs[i], inputs.front(), "triptych");
    require_same_size(masks[i], inputs.front(), "triptych");
    put(0, i, [&](int y, int x) { return grey(inputs[i](y, x)); });
    put(1, i, [&](int y, int x) { return grey(outputs[i](y, x)); });
    put(2, i, [&](int y, int x) { return static_cast<std::uint16_t>(masks[i](y, x) ? 255 : 0); });
  }
  return out;
}

}  // namespace residseg
