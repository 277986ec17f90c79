#include "filtrank/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "filtrank/error.hpp"

namespace filtrank {

Image::Image(int width, int height, float fill) : width_(width), height_(height) {
  if (width < 1 || height < 1) {
    throw Error(ErrorCode::ZeroDimension,
                "image dimensions must be >= 1, got " + std::to_string(width) + "x" +
                    std::to_string(height));
  }
  pixels_.assign(static_cast<std::size_t>(width) * height * kChannels, fill);
}

void Image::clamp() {
  for (float& v : pixels_) {
    if (!(v > 0.0f)) v = 0.0f;  // also catches NaN
    else if (v > 1.0f) v = 1.0f;
  }
}

namespace {

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

Image from_bytes(const png_image& info, const std::vector<std::uint8_t>& buffer) {
  Image img(static_cast<int>(info.width), static_cast<int>(info.height));
  auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(buffer[i]) / 255.0f;
  return img;
}

void check_rgb8(png_image& info, const std::string& what) {
  const bool color = (info.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (info.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  const bool linear = (info.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  if (!color || alpha || linear) {
    png_image_free(&info);
    throw Error(ErrorCode::DecodeError, what + ": not an 8-bit RGB PNG");
  }
  info.format = PNG_FORMAT_RGB;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::MissingFile, path.string());
  }
  std::ifstream in(path, std::ios::binary);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image info{};
  info.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&info, bytes.data(), bytes.size())) {
    std::string msg = info.message;
    png_image_free(&info);
    throw Error(ErrorCode::DecodeError, msg);
  }
  check_rgb8(info, "buffer");
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(info));
  if (!png_image_finish_read(&info, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = info.message;
    png_image_free(&info);
    throw Error(ErrorCode::DecodeError, msg);
  }
  return from_bytes(info, buffer);
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  std::vector<std::uint8_t> raw(img.pixels().size());
  std::transform(img.pixels().begin(), img.pixels().end(), raw.begin(), to_byte);

  png_image info{};
  info.version = PNG_IMAGE_VERSION;
  info.width = static_cast<png_uint_32>(img.width());
  info.height = static_cast<png_uint_32>(img.height());
  info.format = PNG_FORMAT_RGB;

  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(info, size, 0, raw.data(), 0, nullptr)) {
    throw Error(ErrorCode::IOFailure, std::string("png encode: ") + info.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&info, out.data(), &size, 0, raw.data(), 0, nullptr)) {
    throw Error(ErrorCode::IOFailure, std::string("png encode: ") + info.message);
  }
  out.resize(size);
  return out;
}

void save_image(const Image& img, const std::filesystem::path& path) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IOFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IOFailure, "short write " + path.string());
}

Image resize(const Image& img, int w, int h) {
  if (w < 1 || h < 1) {
    throw Error(ErrorCode::ZeroDimension,
                "resize target " + std::to_string(w) + "x" + std::to_string(h));
  }
  if (w == img.width() && h == img.height()) return img;

  Image out(w, h);
  const double sx = static_cast<double>(img.width()) / w;
  const double sy = static_cast<double>(img.height()) / h;

  // Source coordinate for each output column/row, clamped at the borders.
  struct Tap {
    int i0, i1;
    float t;
  };
  auto taps = [](int n_out, int n_in, double scale) {
    std::vector<Tap> result(n_out);
    for (int i = 0; i < n_out; ++i) {
      double s = (i + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(n_in - 1));
      const int i0 = static_cast<int>(std::floor(s));
      const int i1 = std::min(i0 + 1, n_in - 1);
      result[i] = {i0, i1, static_cast<float>(s - i0)};
    }
    return result;
  };
  const auto tx = taps(w, img.width(), sx);
  const auto ty = taps(h, img.height(), sy);

  for (int y = 0; y < h; ++y) {
    const Tap& vy = ty[y];
    for (int x = 0; x < w; ++x) {
      const Tap& vx = tx[x];
      for (int c = 0; c < Image::kChannels; ++c) {
        const float top = img.at(vx.i0, vy.i0, c) * (1.0f - vx.t) + img.at(vx.i1, vy.i0, c) * vx.t;
        const float bot = img.at(vx.i0, vy.i1, c) * (1.0f - vx.t) + img.at(vx.i1, vy.i1, c) * vx.t;
        out.at(x, y, c) = top * (1.0f - vy.t) + bot * vy.t;
      }
    }
  }
  out.clamp();
  return out;
}

Image crop(const Image& img, int x0, int y0, int w, int h) {
  if (w < 1 || h < 1) throw Error(ErrorCode::ZeroDimension, "crop size must be >= 1");
  if (x0 < 0 || y0 < 0 || x0 + w > img.width() || y0 + h > img.height()) {
    throw Error(ErrorCode::CropLargerThanImage,
                std::to_string(w) + "x" + std::to_string(h) + " at (" + std::to_string(x0) +
                    "," + std::to_string(y0) + ") exceeds " + std::to_string(img.width()) + "x" +
                    std::to_string(img.height()));
  }
  Image out(w, h);
  const auto src = img.pixels();
  auto dst = out.pixels();
  const std::size_t row = static_cast<std::size_t>(w) * Image::kChannels;
  for (int y = 0; y < h; ++y) {
    const std::size_t from = (static_cast<std::size_t>(y0 + y) * img.width() + x0) * Image::kChannels;
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(from), row,
                dst.begin() + static_cast<std::ptrdiff_t>(y * row));
  }
  return out;
}

Image random_crop(const Image& img, int w, int h, Rng& rng) {
  if (w > img.width() || h > img.height()) {
    throw Error(ErrorCode::CropLargerThanImage,
                std::to_string(w) + "x" + std::to_string(h) + " from " +
                    std::to_string(img.width()) + "x" + std::to_string(img.height()));
  }
  const auto x0 = static_cast<int>(rng.uniform_int(0, img.width() - w));
  const auto y0 = static_cast<int>(rng.uniform_int(0, img.height() - h));
  return crop(img, x0, y0, w, h);
}

Image center_crop(const Image& img, int w, int h) {
  if (w > img.width() || h > img.height()) {
    throw Error(ErrorCode::CropLargerThanImage,
                std::to_string(w) + "x" + std::to_string(h) + " from " +
                    std::to_string(img.width()) + "x" + std::to_string(img.height()));
  }
  return crop(img, (img.width() - w) / 2, (img.height() - h) / 2, w, h);
}

Image hflip(const Image& img) {
  Image out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < Image::kChannels; ++c) {
        out.at(img.width() - 1 - x, y, c) = img.at(x, y, c);
      }
    }
  }
  return out;
}

}  // namespace filtrank
