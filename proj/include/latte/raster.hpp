#pragma once

// RGB raster images, PNG IO and the resize/pad normalization used everywhere
// downstream (rendering, diffing, metrics).

#include <png.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace latte {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ImageError : public Error {
 public:
  using Error::Error;
};

struct Pixel {
  std::uint8_t r = 255;
  std::uint8_t g = 255;
  std::uint8_t b = 255;

  constexpr bool is_white() const { return r == 255 && g == 255 && b == 255; }
  friend constexpr bool operator==(const Pixel&, const Pixel&) = default;
};

inline constexpr Pixel kWhite{255, 255, 255};
inline constexpr Pixel kBlack{0, 0, 0};

/// Row-major RGB image. Height and width are always at least one.
class PixelGrid {
 public:
  PixelGrid(std::size_t height, std::size_t width, Pixel fill = kWhite)
      : height_(height), width_(width) {
    check_dims(height, width);
    pixels_.assign(height * width, fill);
  }

  PixelGrid(std::size_t height, std::size_t width, std::vector<Pixel> pixels)
      : height_(height), width_(width), pixels_(std::move(pixels)) {
    check_dims(height, width);
    if (pixels_.size() != height * width) {
      throw ImageError("pixel count does not match " + std::to_string(height) + "x" +
                       std::to_string(width));
    }
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

  Pixel& at(std::size_t row, std::size_t col) { return pixels_[row * width_ + col]; }
  const Pixel& at(std::size_t row, std::size_t col) const { return pixels_[row * width_ + col]; }

  std::span<const Pixel> pixels() const { return pixels_; }
  std::span<Pixel> pixels() { return pixels_; }

  std::span<const Pixel> row(std::size_t r) const {
    return std::span<const Pixel>(pixels_).subspan(r * width_, width_);
  }

  std::vector<Pixel> column(std::size_t c) const {
    std::vector<Pixel> out(height_);
    for (std::size_t r = 0; r < height_; ++r) out[r] = at(r, c);
    return out;
  }

  void set_column(std::size_t c, std::span<const Pixel> values) {
    if (values.size() != height_) throw ImageError("column height mismatch");
    for (std::size_t r = 0; r < height_; ++r) at(r, c) = values[r];
  }

  bool all_white() const {
    return std::all_of(pixels_.begin(), pixels_.end(), [](Pixel p) { return p.is_white(); });
  }

  friend bool operator==(const PixelGrid&, const PixelGrid&) = default;

 private:
  static void check_dims(std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) {
      throw ImageError("image dimensions must be positive, got " + std::to_string(height) + "x" +
                       std::to_string(width));
    }
  }

  std::size_t height_;
  std::size_t width_;
  std::vector<Pixel> pixels_;
};

struct NormalizationSpec {
  std::size_t target_width;
  std::size_t target_height;
  int dpi;

  friend constexpr bool operator==(const NormalizationSpec&, const NormalizationSpec&) = default;
};

inline constexpr NormalizationSpec kFormulaSpec{1344, 224, 240};
inline constexpr NormalizationSpec kTableSpec{1344, 672, 160};

// ---------------------------------------------------------------------------
// PNG codec (libpng). Alpha and palette images are expanded to RGB over white.

namespace detail {

struct PngReadBuffer {
  std::span<const std::uint8_t> data;
  std::size_t offset = 0;
};

inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* slot = static_cast<std::string*>(png_get_error_ptr(png));
  if (slot != nullptr) *slot = msg;
  png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

inline void png_read_fn(png_structp png, png_bytep out, png_size_t length) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->offset + length > buf->data.size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, buf->data.data() + buf->offset, length);
  buf->offset += length;
}

inline void png_write_fn(png_structp png, png_bytep in, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + length);
}

inline void png_flush_fn(png_structp) {}

inline std::uint8_t over_white(std::uint8_t c, std::uint8_t a) {
  // c*a/255 + 255*(255-a)/255, rounded.
  const unsigned v = static_cast<unsigned>(c) * a + 255u * (255u - a);
  return static_cast<std::uint8_t>((v + 127u) / 255u);
}

}  // namespace detail

inline PixelGrid decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw ImageError("not a PNG stream");
  }
  std::string err;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  if (png == nullptr) throw ImageError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ImageError("png_create_info_struct failed");
  }
  detail::PngReadBuffer buf{bytes, 0};
  std::vector<std::uint8_t> raw;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError("malformed PNG: " + err);
  }
  png_set_read_fn(png, &buf, detail::png_read_fn);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_set_add_alpha(png, 0xFF, PNG_FILLER_AFTER);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<std::size_t>(width) * 4) {
    png_error(png, "unexpected row layout");
  }
  raw.resize(static_cast<std::size_t>(width) * height * 4);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * width * 4;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (width == 0 || height == 0) throw ImageError("malformed PNG: empty image");
  std::vector<Pixel> pixels(static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const std::uint8_t a = raw[i * 4 + 3];
    pixels[i] = Pixel{detail::over_white(raw[i * 4], a), detail::over_white(raw[i * 4 + 1], a),
                      detail::over_white(raw[i * 4 + 2], a)};
  }
  return PixelGrid(height, width, std::move(pixels));
}

inline std::vector<std::uint8_t> encode_png(const PixelGrid& grid) {
  std::string err;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  if (png == nullptr) throw ImageError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw ImageError("png_create_info_struct failed");
  }
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> rowbuf(grid.width() * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("PNG encode failed: " + err);
  }
  png_set_write_fn(png, &out, detail::png_write_fn, detail::png_flush_fn);
  png_set_IHDR(png, info, static_cast<png_uint_32>(grid.width()), static_cast<png_uint_32>(grid.height()), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < grid.height(); ++y) {
    auto row = grid.row(y);
    for (std::size_t x = 0; x < row.size(); ++x) {
      rowbuf[x * 3] = row[x].r;
      rowbuf[x * 3 + 1] = row[x].g;
      rowbuf[x * 3 + 2] = row[x].b;
    }
    png_write_row(png, rowbuf.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!f) throw ImageError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes;
  std::uint8_t chunk[1 << 16];
  std::size_t n = 0;
  while ((n = std::fread(chunk, 1, sizeof(chunk), f.get())) > 0) bytes.insert(bytes.end(), chunk, chunk + n);
  if (std::ferror(f.get())) throw ImageError("read error on " + path.string());
  return bytes;
}

inline PixelGrid load_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_png(bytes);
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": " + e.what());
  }
}

inline void save_image(const PixelGrid& grid, const std::filesystem::path& path) {
  const auto bytes = encode_png(grid);
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!f) throw ImageError("cannot write " + path.string());
  if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size()) {
    throw ImageError("short write on " + path.string());
  }
}

// ---------------------------------------------------------------------------
// Geometry

inline PixelGrid transpose(const PixelGrid& grid) {
  PixelGrid out(grid.width(), grid.height());
  for (std::size_t r = 0; r < grid.height(); ++r) {
    for (std::size_t c = 0; c < grid.width(); ++c) out.at(c, r) = grid.at(r, c);
  }
  return out;
}

/// Places `grid` at the top-left of a white canvas. The canvas must be at
/// least as large as the grid.
inline PixelGrid pad_to(const PixelGrid& grid, std::size_t height, std::size_t width) {
  if (grid.height() > height || grid.width() > width) throw ImageError("pad target smaller than image");
  if (grid.height() == height && grid.width() == width) return grid;
  PixelGrid out(height, width, kWhite);
  for (std::size_t r = 0; r < grid.height(); ++r) {
    auto src = grid.row(r);
    std::copy(src.begin(), src.end(), out.pixels().begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return out;
}

/// Nearest-neighbour resample; destination pixel (r, c) samples source
/// (floor(r*H/h), floor(c*W/w)).
inline PixelGrid resize_nearest(const PixelGrid& grid, std::size_t height, std::size_t width) {
  PixelGrid out(height, width);
  for (std::size_t r = 0; r < height; ++r) {
    const std::size_t sr = r * grid.height() / height;
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t sc = c * grid.width() / width;
      out.at(r, c) = grid.at(sr, sc);
    }
  }
  return out;
}

/// Fits `grid` into the spec's canvas: oversized images are downscaled
/// (aspect preserved, nearest neighbour) until they fit, then everything is
/// padded with white from the top-left corner.
inline PixelGrid normalize(const PixelGrid& grid, const NormalizationSpec& spec) {
  const std::size_t tw = spec.target_width;
  const std::size_t th = spec.target_height;
  if (grid.width() <= tw && grid.height() <= th) return pad_to(grid, th, tw);

  // scale = min(tw/W, th/H), computed in integers to stay exact.
  std::size_t w = 0;
  std::size_t h = 0;
  if (tw * grid.height() <= th * grid.width()) {
    w = tw;
    h = std::max<std::size_t>(1, grid.height() * tw / grid.width());
  } else {
    h = th;
    w = std::max<std::size_t>(1, grid.width() * th / grid.height());
  }
  h = std::min(h, th);
  w = std::min(w, tw);
  return pad_to(resize_nearest(grid, h, w), th, tw);
}

/// Stable 64-bit FNV-1a digest over dimensions and RGB bytes, rendered as
/// "fnv1a64:<16 hex digits>". Used as an image key in mock fixtures.
inline std::string image_digest(const PixelGrid& grid) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint8_t byte) {
    h ^= byte;
    h *= 0x100000001b3ULL;
  };
  for (std::uint64_t v : {static_cast<std::uint64_t>(grid.height()), static_cast<std::uint64_t>(grid.width())}) {
    for (int i = 0; i < 8; ++i) mix(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  for (const Pixel& p : grid.pixels()) {
    mix(p.r);
    mix(p.g);
    mix(p.b);
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out = "fnv1a64:";
  for (int i = 15; i >= 0; --i) out.push_back(kHex[(h >> (4 * i)) & 0xF]);
  return out;
}

}  // namespace latte
