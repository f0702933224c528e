#include "purify/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace purify {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
};

/// Decodes an 8-bit PNG into row-major byte rows; `expand_rgb` converts
/// palette/gray/alpha variants to plain RGB, otherwise raw bytes are kept
/// (palette indices and gray values pass through untouched).
std::vector<std::vector<png_byte>> read_png_rows(const std::string& path, bool expand_rgb,
                                                 int* width, int* height, int* raw_color_type) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open PNG for reading: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw std::runtime_error("not a PNG file: " + path);
  }

  PngReader r;
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!r.png) throw std::runtime_error("libpng init failed");
  r.info = png_create_info_struct(r.png);
  if (!r.info) throw std::runtime_error("libpng init failed");
  if (setjmp(png_jmpbuf(r.png))) {
    throw std::runtime_error("malformed PNG: " + path);
  }
  png_init_io(r.png, fp.get());
  png_set_sig_bytes(r.png, 8);
  png_read_info(r.png, r.info);

  const int bit_depth = png_get_bit_depth(r.png, r.info);
  const int color_type = png_get_color_type(r.png, r.info);
  if (bit_depth != 8) {
    throw std::runtime_error("unsupported PNG bit depth " + std::to_string(bit_depth) + " in " +
                             path + " (8-bit required)");
  }
  if (expand_rgb) {
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
      png_set_gray_to_rgb(r.png);
    }
    if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
    png_set_strip_alpha(r.png);
  }
  png_read_update_info(r.png, r.info);

  *width = static_cast<int>(png_get_image_width(r.png, r.info));
  *height = static_cast<int>(png_get_image_height(r.png, r.info));
  if (raw_color_type) *raw_color_type = color_type;

  const std::size_t rowbytes = png_get_rowbytes(r.png, r.info);
  std::vector<std::vector<png_byte>> rows(*height, std::vector<png_byte>(rowbytes));
  std::vector<png_bytep> row_ptrs(*height);
  for (int y = 0; y < *height; ++y) row_ptrs[y] = rows[y].data();
  png_read_image(r.png, row_ptrs.data());
  png_read_end(r.png, nullptr);
  return rows;
}

void write_png_rows(const std::string& path, int width, int height, int color_type,
                    std::vector<std::vector<png_byte>>& rows) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open PNG for writing: " + path);
  PngWriter w;
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!w.png) throw std::runtime_error("libpng init failed");
  w.info = png_create_info_struct(w.png);
  if (!w.info) throw std::runtime_error("libpng init failed");
  if (setjmp(png_jmpbuf(w.png))) {
    throw std::runtime_error("PNG write failed: " + path);
  }
  png_init_io(w.png, fp.get());
  png_set_IHDR(w.png, w.info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  std::vector<png_bytep> row_ptrs(height);
  for (int y = 0; y < height; ++y) row_ptrs[y] = rows[y].data();
  png_write_image(w.png, row_ptrs.data());
  png_write_end(w.png, nullptr);
}

}  // namespace

Tensor load_image(const std::string& path) {
  int w = 0, h = 0;
  auto rows = read_png_rows(path, /*expand_rgb=*/true, &w, &h, nullptr);
  Tensor out(Shape{1, 3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(0, c, y, x) = static_cast<float>(rows[y][3 * x + c]);
      }
    }
  }
  return out;
}

void save_image(const Tensor& image, const std::string& path) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) {
    throw std::invalid_argument("save_image: expected 1x3xHxW, got " + s.str());
  }
  std::vector<std::vector<png_byte>> rows(s.h, std::vector<png_byte>(3 * s.w));
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::round(image.at(0, c, y, x));
        rows[y][3 * x + c] = static_cast<png_byte>(std::min(255.f, std::max(0.f, v)));
      }
    }
  }
  write_png_rows(path, s.w, s.h, PNG_COLOR_TYPE_RGB, rows);
}

Tensor load_mask(const std::string& path, int channels) {
  if (channels < 1) throw std::invalid_argument("load_mask: channels must be >= 1");
  int w = 0, h = 0, color_type = 0;
  auto rows = read_png_rows(path, /*expand_rgb=*/false, &w, &h, &color_type);
  if (color_type != PNG_COLOR_TYPE_GRAY && color_type != PNG_COLOR_TYPE_PALETTE) {
    throw std::runtime_error("mask PNG must be grayscale or indexed: " + path);
  }
  Tensor mask = Tensor::zeros({1, channels, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int label = rows[y][x];
      if (label >= channels) {
        throw std::runtime_error("mask label " + std::to_string(label) + " at (" +
                                 std::to_string(x) + "," + std::to_string(y) +
                                 ") exceeds channel count " + std::to_string(channels) + " in " +
                                 path);
      }
      mask.at(0, label, y, x) = 1.f;
    }
  }
  return mask;
}

void save_mask(const Tensor& mask, const std::string& path) {
  const Shape s = mask.shape();
  if (s.n != 1 || s.c < 1) {
    throw std::invalid_argument("save_mask: expected 1xCxHxW, got " + s.str());
  }
  std::vector<std::vector<png_byte>> rows(s.h, std::vector<png_byte>(s.w));
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      int best = 0;
      float best_v = mask.at(0, 0, y, x);
      for (int c = 1; c < s.c; ++c) {
        if (mask.at(0, c, y, x) > best_v) {
          best_v = mask.at(0, c, y, x);
          best = c;
        }
      }
      rows[y][x] = static_cast<png_byte>(best);
    }
  }
  write_png_rows(path, s.w, s.h, PNG_COLOR_TYPE_GRAY, rows);
}

}  // namespace purify
