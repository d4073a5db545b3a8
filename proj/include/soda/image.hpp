#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace soda {

/// Row-major H x W x C image with intensities in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  bool operator==(const Image&) const = default;
};

/// Decodes 8- or 16-bit gray, gray+alpha, RGB or RGBA PNG files. Alpha is
/// dropped. Channel count follows the file (1 or 3).
Image read_png(const std::filesystem::path& path);

/// Writes an 8-bit PNG with 1 or 3 channels; values are clipped to [0,1].
void write_png(const std::filesystem::path& path, const Image& image);

/// Gray -> RGB replicates, RGB -> gray uses Rec. 601 luma weights.
Image convert_channels(const Image& image, std::size_t channels);

/// Bilinear resampling with pixel-center alignment.
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);

}  // namespace soda
