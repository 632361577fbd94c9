#include "residseg/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "residseg/error.hpp"

namespace residseg {

void write_pgm(const std::filesystem::path& path, const GrayRaster& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << r.width << ' ' << r.height << '\n' << r.maxval << '\n';
  if (r.maxval < 256) {
    std::vector<char> bytes(r.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(r.pixels[i]);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  } else {
    std::vector<char> bytes(r.pixels.size() * 2);
    for (std::size_t i = 0; i < r.pixels.size(); ++i) {
      bytes[2 * i] = static_cast<char>(r.pixels[i] >> 8);
      bytes[2 * i + 1] = static_cast<char>(r.pixels[i] & 0xff);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw Error("write failed for " + path.string());
}

namespace {

// Next header token, skipping whitespace and # comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

GrayRaster read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::kMissingFile, "cannot open image file " + path.string());
  if (header_token(in) != "P5") throw DataError(DataError::Kind::kMalformed, path.string() + ": not a binary PGM");
  GrayRaster r;
  try {
    r.width = std::stoi(header_token(in));
    r.height = std::stoi(header_token(in));
    r.maxval = std::stoi(header_token(in));
  } catch (const std::exception&) {
    throw DataError(DataError::Kind::kMalformed, path.string() + ": bad PGM header");
  }
  if (r.width <= 0 || r.height <= 0 || r.maxval <= 0 || r.maxval > 65535) {
    throw DataError(DataError::Kind::kMalformed, path.string() + ": bad PGM header");
  }
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height;
  const std::size_t bpp = r.maxval < 256 ? 1 : 2;
  std::vector<unsigned char> bytes(n * bpp);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw DataError(DataError::Kind::kMalformed, path.string() + ": truncated PGM data");
  }
  r.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.pixels[i] = bpp == 1 ? bytes[i] : static_cast<std::uint16_t>((bytes[2 * i] << 8) | bytes[2 * i + 1]);
  }
  return r;
}

GrayRaster to_raster16(const Image2D& image) {
  GrayRaster r{image.height, image.width, 65535, std::vector<std::uint16_t>(image.size())};
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(static_cast<double>(image.data[i]), 0.0, 1.0);
    r.pixels[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
  }
  return r;
}

Image2D to_image(const GrayRaster& r) {
  Image2D img(r.height, r.width);
  const double scale = 1.0 / r.maxval;
  for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = static_cast<float>(r.pixels[i] * scale);
  return img;
}

GrayRaster to_raster8(const BinaryMask& mask) {
  GrayRaster r{mask.height, mask.width, 255, std::vector<std::uint16_t>(mask.size())};
  for (std::size_t i = 0; i < mask.size(); ++i) r.pixels[i] = mask.data[i] ? 255 : 0;
  return r;
}

BinaryMask to_mask(const GrayRaster& r) {
  BinaryMask m(r.height, r.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = r.pixels[i] != 0;
  return m;
}

}  // namespace residseg
