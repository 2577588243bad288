#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "floodgen/sim_dataset.hpp"

namespace floodgen {

// Decoding normalizes to [0,1]: 8-bit sources are divided by 255, 16-bit by 65535.
Image load_image(const fs::path& path);
Image decode_image(const std::vector<std::uint8_t>& bytes);

// Raw 8-bit access, channels in RGB order. channels: 1, 3, or 0 for "as stored"
// (alpha dropped).
Grid<std::uint8_t> load_raw8(const fs::path& path, int channels);

void save_image(const fs::path& path, const Image& image);
void save_raw8(const fs::path& path, const Grid<std::uint8_t>& raw);
// 1-bit PNG, 255 = flooded.
void save_mask(const fs::path& path, const FloodMask& mask);
// Binary read: any channel value ≥ 128 counts as set.
FloodMask load_mask(const fs::path& path);

std::vector<std::uint8_t> encode_png(const Image& image);
std::vector<std::uint8_t> encode_mask_png(const FloodMask& mask);

Image resize_bilinear(const Image& image, int height, int width);
Grid<double> resize_bilinear(const Grid<double>& values, int height, int width);
Grid<std::uint8_t> resize_nearest(const Grid<std::uint8_t>& labels, int height, int width);

// Scale-then-center-crop mapping from a source frame onto a size×size frame.
// Source pixel coordinate x maps to x * scale - offset.
struct SquareFit {
  int size = 0;
  double scale = 1.0;
  int resized_height = 0;
  int resized_width = 0;
  int offset_v = 0;
  int offset_u = 0;

  static SquareFit compute(int height, int width, int size);
};

Image fit_square(const Image& image, int size);
Grid<double> fit_square(const Grid<double>& values, int size);
Grid<std::uint8_t> fit_square_nearest(const Grid<std::uint8_t>& labels, int size);
FloodMask fit_square(const FloodMask& mask, int size);

}  // namespace floodgen
