#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "floodgen/errors.hpp"

namespace floodgen {

// Dense row-major H×W×C array. Index order is (row v, column u, channel c).
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, int channels = 1, T fill = T{})
      : height_(height), width_(width), channels_(channels),
        data_(static_cast<std::size_t>(height) * width * channels, fill) {
    if (height < 0 || width < 0 || channels < 1) {
      throw DimensionMismatch("grid dimensions must be non-negative");
    }
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(height_) * width_;
  }
  bool empty() const noexcept { return data_.empty(); }

  T& at(int v, int u, int c = 0) { return data_[index(v, u, c)]; }
  const T& at(int v, int u, int c = 0) const { return data_[index(v, u, c)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  template <typename U>
  bool same_extent(const Grid<U>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t index(int v, int u, int c) const noexcept {
    return (static_cast<std::size_t>(v) * width_ + u) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

template <typename A, typename B>
void require_same_extent(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (!a.same_extent(b)) {
    throw DimensionMismatch(std::string(what) + ": " + std::to_string(a.height()) + "x" +
                            std::to_string(a.width()) + " vs " + std::to_string(b.height()) +
                            "x" + std::to_string(b.width()));
  }
}

}  // namespace floodgen
