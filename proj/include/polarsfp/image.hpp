#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace polarsfp {

/// Row-major interleaved image. Row 0 is the top of the picture.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels = 1, T fill = T{})
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const noexcept { return data_.empty(); }

  bool same_shape(int width, int height) const noexcept { return width_ == width && height_ == height; }
  template <typename U>
  bool same_shape(const Image<U>& o) const noexcept {
    return width_ == o.width() && height_ == o.height();
  }

  T& operator()(int x, int y, int c = 0) {
    assert(x >= 0 && x < width_ && y >= 0 && y < height_ && c >= 0 && c < channels_);
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  const T& operator()(int x, int y, int c = 0) const {
    assert(x >= 0 && x < width_ && y >= 0 && y < height_ && c >= 0 && c < channels_);
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  bool operator==(const Image&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<T> data_;
};

using ImageF = Image<float>;
using ImageD = Image<double>;
using Mask = Image<std::uint8_t>;

template <typename U, typename T>
Image<U> image_cast(const Image<T>& src) {
  Image<U> out(src.width(), src.height(), src.channels());
  for (std::size_t i = 0; i < src.data().size(); ++i) out.data()[i] = static_cast<U>(src.data()[i]);
  return out;
}

inline std::size_t count(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m.data()) n += v != 0;
  return n;
}

}  // namespace polarsfp
