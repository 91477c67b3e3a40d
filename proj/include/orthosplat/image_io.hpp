#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "orthosplat/errors.hpp"
#include "orthosplat/raster.hpp"

namespace orthosplat {

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace detail {

inline RgbImage decode_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError(path, image.message);
  }
  // 8-bit sRGB RGBA output is not premultiplied, so dropping the fourth
  // byte drops alpha without touching color.
  image.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError(path, msg);
  }
  RgbImage out(static_cast<int>(image.width), static_cast<int>(image.height));
  auto dst = out.data();
  for (std::size_t i = 0; i < out.pixel_count(); ++i)
    for (int c = 0; c < 3; ++c) dst[i * 3 + c] = buffer[i * 4 + c] / 255.0;
  return out;
}

inline std::string next_ppm_token(std::istream& in) {
  std::string token;
  while (in >> token) {
    if (token[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return token;
  }
  return {};
}

inline RgbImage decode_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open");
  if (next_ppm_token(in) != "P6") throw IoError(path, "not a binary PPM (P6)");
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(next_ppm_token(in));
    height = std::stoi(next_ppm_token(in));
    maxval = std::stoi(next_ppm_token(in));
  } catch (const std::exception&) {
    throw IoError(path, "malformed PPM header");
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw IoError(path, "unsupported PPM dimensions or depth");
  }
  in.get();  // single whitespace after maxval
  std::vector<std::uint8_t> buffer(static_cast<std::size_t>(width) * height * 3);
  in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
  if (in.gcount() != static_cast<std::streamsize>(buffer.size())) {
    throw IoError(path, "truncated PPM data");
  }
  RgbImage out(width, height);
  auto dst = out.data();
  for (std::size_t i = 0; i < buffer.size(); ++i) dst[i] = static_cast<double>(buffer[i]) / maxval;
  return out;
}

}  // namespace detail

// Reads an 8-bit PNG or binary PPM into [0,1] RGB. No gamma handling.
inline RgbImage read_image(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError(path, "file not found");
  std::ifstream probe(path, std::ios::binary);
  char magic[2] = {0, 0};
  probe.read(magic, 2);
  if (magic[0] == 'P' && magic[1] == '6') return detail::decode_ppm(path);
  return detail::decode_png(path);
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<std::uint8_t> bytes;
  bytes.reserve(img.data().size());
  for (double v : img.data()) bytes.push_back(to_byte(v));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path, "write failed");
}

// Writes RGB, or RGBA when alpha is given (same dimensions).
inline void write_png(const std::string& path, const RgbImage& img, const GrayImage* alpha = nullptr) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  const int channels = alpha ? 4 : 3;
  std::vector<std::uint8_t> buffer(img.pixel_count() * channels);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      std::uint8_t* px = &buffer[(static_cast<std::size_t>(y) * img.width() + x) * channels];
      for (int c = 0; c < 3; ++c) px[c] = to_byte(img.at(x, y, c));
      if (alpha) px[3] = to_byte(alpha->at(x, y));
    }
  }
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError(path, image.message);
  }
}

// Reads the alpha channel of a PNG (255 where the file has none).
inline GrayImage read_png_alpha(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) throw IoError(path, image.message);
  image.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError(path, msg);
  }
  GrayImage out(static_cast<int>(image.width), static_cast<int>(image.height));
  for (std::size_t i = 0; i < out.pixel_count(); ++i) out.data()[i] = buffer[i * 4 + 3] / 255.0;
  return out;
}

inline void write_mask_png(const std::string& path, const BitMask& mask) {
  RgbImage img(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = mask.at(x, y) ? 1.0 : 0.0;
  write_png(path, img);
}

}  // namespace orthosplat
