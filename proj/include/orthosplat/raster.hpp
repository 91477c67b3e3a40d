#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace orthosplat {

// Dense row-major raster with interleaved channels.
template <typename T, int Channels>
class Raster {
 public:
  static constexpr int kChannels = Channels;

  Raster() = default;
  Raster(int width, int height, T fill = T{})
      : width_(width),
        height_(height),
        data_(static_cast<std::size_t>(width) * height * Channels, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  T& at(int x, int y, int c = 0) {
    assert(x >= 0 && x < width_ && y >= 0 && y < height_);
    return data_[(static_cast<std::size_t>(y) * width_ + x) * Channels + c];
  }
  const T& at(int x, int y, int c = 0) const {
    assert(x >= 0 && x < width_ && y >= 0 && y < height_);
    return data_[(static_cast<std::size_t>(y) * width_ + x) * Channels + c];
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  bool same_size(int w, int h) const { return w == width_ && h == height_; }
  template <typename U, int C>
  bool same_size(const Raster<U, C>& other) const {
    return other.width() == width_ && other.height() == height_;
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Raster& a, const Raster& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.data_ == b.data_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using RgbImage = Raster<double, 3>;
using GrayImage = Raster<double, 1>;
using BitMask = Raster<unsigned char, 1>;

inline Eigen::Vector3d pixel_rgb(const RgbImage& img, int x, int y) {
  return {img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)};
}

inline void set_pixel_rgb(RgbImage& img, int x, int y, const Eigen::Vector3d& c) {
  img.at(x, y, 0) = c.x();
  img.at(x, y, 1) = c.y();
  img.at(x, y, 2) = c.z();
}

inline std::size_t count_set(const BitMask& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.data().begin(), mask.data().end(), [](unsigned char b) { return b != 0; }));
}

}  // namespace orthosplat
