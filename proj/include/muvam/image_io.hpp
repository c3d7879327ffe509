#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "muvam/errors.hpp"
#include "muvam/tensor.hpp"

namespace muvam {

// Grayscale raster as 8-bit values, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

inline std::string next_pnm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace detail

// Reads binary (P5) or plain (P2) PGM with maxval <= 255.
inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image '" + path.string() + "'");
  const std::string magic = detail::next_pnm_token(in);
  if (magic != "P5" && magic != "P2") throw DataError("'" + path.string() + "' is not a PGM image");
  GrayImage img;
  std::size_t maxval = 0;
  try {
    img.width = std::stoul(detail::next_pnm_token(in));
    img.height = std::stoul(detail::next_pnm_token(in));
    maxval = std::stoul(detail::next_pnm_token(in));
  } catch (const std::exception&) {
    throw DataError("malformed PGM header in '" + path.string() + "'");
  }
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 255) {
    throw DataError("unsupported PGM geometry in '" + path.string() + "'");
  }
  img.pixels.resize(img.width * img.height);
  if (magic == "P5") {
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pixels.size()) {
      throw DataError("truncated PGM payload in '" + path.string() + "'");
    }
  } else {
    for (auto& px : img.pixels) {
      const std::string tok = detail::next_pnm_token(in);
      if (tok.empty()) throw DataError("truncated PGM payload in '" + path.string() + "'");
      px = static_cast<std::uint8_t>(std::stoul(tok));
    }
  }
  if (maxval != 255) {
    for (auto& px : img.pixels) px = static_cast<std::uint8_t>(px * 255 / maxval);
  }
  return img;
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image '" + path.string() + "'");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

// [1 x h x w] with intensities scaled to [0, 1].
template <typename T>
Tensor<T> image_to_tensor(const GrayImage& img) {
  Tensor<T> t(Shape{1, img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t.data[i] = static_cast<T>(img.pixels[i]) / T{255};
  return t;
}

}  // namespace muvam
