#include "floodgen/image_io.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace floodgen {
namespace {

Image image_from_mat(const cv::Mat& src, const std::string& what) {
  if (src.empty()) throw DecodeError("cannot decode image " + what);
  cv::Mat rgb;
  switch (src.channels()) {
    case 1: cv::cvtColor(src, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(src, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(src, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw DecodeError("unsupported channel count in " + what);
  }
  double denom = 255.0;
  if (rgb.depth() == CV_16U) {
    denom = 65535.0;
  } else if (rgb.depth() != CV_8U) {
    throw DecodeError("unsupported bit depth in " + what);
  }
  cv::Mat f;
  rgb.convertTo(f, CV_32FC3, 1.0 / denom);
  Image out(f.rows, f.cols);
  for (int v = 0; v < f.rows; ++v) {
    const auto* row = f.ptr<float>(v);
    std::copy(row, row + static_cast<std::ptrdiff_t>(f.cols) * 3, &out.at(v, 0, 0));
  }
  return out;
}

cv::Mat mat_from_image(const Image& image) {
  cv::Mat f(image.height(), image.width(), CV_32FC3);
  for (int v = 0; v < image.height(); ++v) {
    std::copy_n(&image.pixels.at(v, 0, 0), static_cast<std::size_t>(image.width()) * 3,
                f.ptr<float>(v));
  }
  return f;
}

cv::Mat bgr8_from_image(const Image& image) {
  cv::Mat f = mat_from_image(image);
  cv::Mat u8;
  f.convertTo(u8, CV_8UC3, 255.0);  // saturating, rounds to nearest
  cv::Mat bgr;
  cv::cvtColor(u8, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

template <typename T>
cv::Mat wrap(Grid<T>& g, int type) {
  return cv::Mat(g.height(), g.width(), CV_MAKETYPE(type, g.channels()), g.data().data());
}

template <typename T>
cv::Mat wrap(const Grid<T>& g, int type) {
  return cv::Mat(g.height(), g.width(), CV_MAKETYPE(type, g.channels()),
                 const_cast<T*>(g.data().data()));
}

cv::Mat mask_mat(const FloodMask& mask) {
  cv::Mat m(mask.height(), mask.width(), CV_8UC1);
  for (int v = 0; v < mask.height(); ++v) {
    for (int u = 0; u < mask.width(); ++u) m.at<std::uint8_t>(v, u) = mask.bits.at(v, u) ? 255 : 0;
  }
  return m;
}

void write_or_throw(const fs::path& path, const cv::Mat& m, const std::vector<int>& params = {}) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m, params)) {
    throw DecodeError("cannot write image " + path.string());
  }
}

}  // namespace

Image load_image(const fs::path& path) {
  if (!fs::exists(path)) throw MissingFile(path.string());
  return image_from_mat(cv::imread(path.string(), cv::IMREAD_UNCHANGED), path.string());
}

Image decode_image(const std::vector<std::uint8_t>& bytes) {
  if (bytes.empty()) throw DecodeError("empty image payload");
  return image_from_mat(cv::imdecode(bytes, cv::IMREAD_UNCHANGED), "payload");
}

Grid<std::uint8_t> load_raw8(const fs::path& path, int channels) {
  if (!fs::exists(path)) throw MissingFile(path.string());
  int flags = cv::IMREAD_UNCHANGED;
  if (channels == 1) flags = cv::IMREAD_GRAYSCALE;
  if (channels == 3) flags = cv::IMREAD_COLOR;
  cv::Mat m = cv::imread(path.string(), flags);
  if (m.empty()) throw DecodeError("cannot decode image " + path.string());
  if (m.depth() != CV_8U) throw DecodeError("expected 8-bit image " + path.string());
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
  if (m.channels() == 2) throw DecodeError("unsupported channel count in " + path.string());
  channels = m.channels();
  if (channels == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  Grid<std::uint8_t> out(m.rows, m.cols, channels);
  for (int v = 0; v < m.rows; ++v) {
    std::copy_n(m.ptr<std::uint8_t>(v), static_cast<std::size_t>(m.cols) * channels,
                &out.at(v, 0, 0));
  }
  return out;
}

void save_image(const fs::path& path, const Image& image) {
  write_or_throw(path, bgr8_from_image(image));
}

void save_raw8(const fs::path& path, const Grid<std::uint8_t>& raw) {
  cv::Mat m = wrap(raw, CV_8U).clone();
  if (raw.channels() == 3) cv::cvtColor(m, m, cv::COLOR_RGB2BGR);
  write_or_throw(path, m);
}

void save_mask(const fs::path& path, const FloodMask& mask) {
  write_or_throw(path, mask_mat(mask), {cv::IMWRITE_PNG_BILEVEL, 1});
}

FloodMask load_mask(const fs::path& path) {
  auto raw = load_raw8(path, 1);
  FloodMask mask(raw.height(), raw.width());
  for (std::size_t i = 0; i < raw.size(); ++i) mask.bits[i] = raw[i] >= 128 ? 1 : 0;
  return mask;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  std::vector<std::uint8_t> out;
  cv::imencode(".png", bgr8_from_image(image), out);
  return out;
}

std::vector<std::uint8_t> encode_mask_png(const FloodMask& mask) {
  std::vector<std::uint8_t> out;
  cv::imencode(".png", mask_mat(mask), out, {cv::IMWRITE_PNG_BILEVEL, 1});
  return out;
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (image.height() == height && image.width() == width) return image;
  cv::Mat dst;
  cv::resize(mat_from_image(image), dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  Image out(height, width);
  for (int v = 0; v < height; ++v) {
    const auto* row = dst.ptr<float>(v);
    for (int i = 0; i < width * 3; ++i) {
      (&out.at(v, 0, 0))[i] = std::clamp(row[i], 0.0F, 1.0F);
    }
  }
  return out;
}

Grid<double> resize_bilinear(const Grid<double>& values, int height, int width) {
  if (values.height() == height && values.width() == width) return values;
  Grid<double> out(height, width, values.channels());
  cv::Mat dst = wrap(out, CV_64F);
  cv::resize(wrap(values, CV_64F), dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  return out;
}

Grid<std::uint8_t> resize_nearest(const Grid<std::uint8_t>& labels, int height, int width) {
  if (labels.height() == height && labels.width() == width) return labels;
  Grid<std::uint8_t> out(height, width, labels.channels());
  cv::Mat dst = wrap(out, CV_8U);
  cv::resize(wrap(labels, CV_8U), dst, cv::Size(width, height), 0, 0, cv::INTER_NEAREST);
  return out;
}

SquareFit SquareFit::compute(int height, int width, int size) {
  if (height < 1 || width < 1 || size < 1) throw DimensionMismatch("square fit of empty frame");
  SquareFit fit;
  fit.size = size;
  fit.scale = static_cast<double>(size) / std::min(height, width);
  fit.resized_height = std::max(size, static_cast<int>(std::lround(height * fit.scale)));
  fit.resized_width = std::max(size, static_cast<int>(std::lround(width * fit.scale)));
  fit.offset_v = (fit.resized_height - size) / 2;
  fit.offset_u = (fit.resized_width - size) / 2;
  return fit;
}

namespace {

template <typename G>
G crop(const G& src, int v0, int u0, int size) {
  G out(size, size, src.channels());
  for (int v = 0; v < size; ++v) {
    for (int u = 0; u < size; ++u) {
      for (int c = 0; c < src.channels(); ++c) out.at(v, u, c) = src.at(v + v0, u + u0, c);
    }
  }
  return out;
}

}  // namespace

Image fit_square(const Image& image, int size) {
  auto fit = SquareFit::compute(image.height(), image.width(), size);
  auto resized = resize_bilinear(image, fit.resized_height, fit.resized_width);
  return Image(crop(resized.pixels, fit.offset_v, fit.offset_u, size));
}

Grid<double> fit_square(const Grid<double>& values, int size) {
  auto fit = SquareFit::compute(values.height(), values.width(), size);
  return crop(resize_bilinear(values, fit.resized_height, fit.resized_width), fit.offset_v,
              fit.offset_u, size);
}

Grid<std::uint8_t> fit_square_nearest(const Grid<std::uint8_t>& labels, int size) {
  auto fit = SquareFit::compute(labels.height(), labels.width(), size);
  return crop(resize_nearest(labels, fit.resized_height, fit.resized_width), fit.offset_v,
              fit.offset_u, size);
}

FloodMask fit_square(const FloodMask& mask, int size) {
  FloodMask out;
  out.bits = fit_square_nearest(mask.bits, size);
  return out;
}

}  // namespace floodgen
