#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "filtrank/rng.hpp"

namespace filtrank {

/// RGB raster with float intensities in [0, 1], interleaved, row-major.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int width, int height, float fill = 0.0f);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return pixels_.empty(); }

  float& at(int x, int y, int c) { return pixels_[index(x, y, c)]; }
  float at(int x, int y, int c) const { return pixels_[index(x, y, c)]; }

  std::span<float> pixels() noexcept { return pixels_; }
  std::span<const float> pixels() const noexcept { return pixels_; }

  /// Clamp every intensity to [0, 1]; NaN maps to 0.
  void clamp();

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> pixels_;
};

Image load_image(const std::filesystem::path& path);
void save_image(const Image& img, const std::filesystem::path& path);

/// PNG encode/decode on memory buffers (used by the HTTP service).
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(std::span<const std::uint8_t> bytes);

/// Bilinear resize with half-pixel centers; output dims exactly (w, h).
Image resize(const Image& img, int w, int h);

Image crop(const Image& img, int x0, int y0, int w, int h);

/// Offsets drawn uniformly from [0, W-w] x [0, H-h].
Image random_crop(const Image& img, int w, int h, Rng& rng);

Image center_crop(const Image& img, int w, int h);

Image hflip(const Image& img);

}  // namespace filtrank
