#include "netsurgeon/image.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <memory>

#include <fmt/format.h>
#include <png.h>

#include "netsurgeon/error.hpp"

namespace netsurgeon {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorCode::Io, fmt::format("cannot open '{}'", path.string()));
  return f;
}

class PngReader {
 public:
  explicit PngReader(const std::filesystem::path& path)
      : path_(path), file_(open_file(path, "rb")) {
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file_.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
      throw Error(ErrorCode::Format, fmt::format("'{}' is not a PNG file", path.string()));
    }
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info_ = png_ ? png_create_info_struct(png_) : nullptr;
    if (!png_ || !info_) throw Error(ErrorCode::Io, "libpng initialisation failed");
  }
  ~PngReader() { png_destroy_read_struct(&png_, &info_, nullptr); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;

  Extent2 header() {
    if (setjmp(png_jmpbuf(png_))) fail();
    png_init_io(png_, file_.get());
    png_set_sig_bytes(png_, 8);
    png_read_info(png_, info_);
    return {static_cast<int>(png_get_image_height(png_, info_)),
            static_cast<int>(png_get_image_width(png_, info_))};
  }

  Tensor pixels() {
    const Extent2 extent = header();
    if (setjmp(png_jmpbuf(png_))) fail();
    const int color = png_get_color_type(png_, info_);
    const int depth = png_get_bit_depth(png_, info_);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png_);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png_);
    if (png_get_valid(png_, info_, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png_);
    if (depth == 16) png_set_strip_16(png_);
    png_set_strip_alpha(png_);
    png_read_update_info(png_, info_);

    const int channels = png_get_channels(png_, info_);
    const std::size_t row_bytes = png_get_rowbytes(png_, info_);
    std::vector<unsigned char> raw(row_bytes * extent.h);
    std::vector<png_bytep> rows(extent.h);
    for (int y = 0; y < extent.h; ++y) rows[y] = raw.data() + y * row_bytes;
    png_read_image(png_, rows.data());

    const int out_channels = channels >= 3 ? 3 : 1;
    Tensor image({out_channels, extent.h, extent.w});
    for (int y = 0; y < extent.h; ++y) {
      for (int x = 0; x < extent.w; ++x) {
        for (int c = 0; c < out_channels; ++c) {
          image.at(c, y, x) = rows[y][x * channels + c] / 255.0f;
        }
      }
    }
    return image;
  }

 private:
  [[noreturn]] void fail() const {
    throw Error(ErrorCode::Format, fmt::format("corrupt PNG '{}'", path_.string()));
  }

  std::filesystem::path path_;
  FilePtr file_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

}  // namespace

Tensor read_png(const std::filesystem::path& path) { return PngReader(path).pixels(); }

Extent2 png_extent(const std::filesystem::path& path) { return PngReader(path).header(); }

std::vector<unsigned char> encode_png(const Tensor& image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw Error(ErrorCode::ShapeMismatch, "PNG encoding needs 1 or 3 channels");
  }
  std::vector<unsigned char> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::Io, "libpng initialisation failed");
  }
  const int channels = image.channels();
  std::vector<unsigned char> raw(static_cast<std::size_t>(image.height()) * image.width() *
                                 channels);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < channels; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        raw[(static_cast<std::size_t>(y) * image.width() + x) * channels + c] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  std::vector<png_bytep> rows(image.height());
  for (int y = 0; y < image.height(); ++y) {
    rows[y] = raw.data() + static_cast<std::size_t>(y) * image.width() * channels;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::Io, "PNG encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, nullptr);
  png_set_IHDR(png, info, image.width(), image.height(), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  const auto bytes = encode_png(image);
  auto f = open_file(path, "wb");
  if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size()) {
    throw Error(ErrorCode::Io, fmt::format("short write to '{}'", path.string()));
  }
}

Tensor resize_bilinear(const Tensor& image, int height, int width) {
  if (height < 1 || width < 1) {
    throw Error(ErrorCode::InvalidArgument, "resize target must be at least 1x1");
  }
  if (height == image.height() && width == image.width()) return image;
  Tensor out({image.channels(), height, width});
  const double sy = static_cast<double>(image.height()) / height;
  const double sx = static_cast<double>(image.width()) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels(); ++c) {
        const double top = image.at(c, y0, x0) * (1 - wx) + image.at(c, y0, x1) * wx;
        const double bottom = image.at(c, y1, x0) * (1 - wx) + image.at(c, y1, x1) * wx;
        out.at(c, y, x) = static_cast<float>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

Tensor crop(const Tensor& image, const PixelRect& rect) {
  if (rect.x0 < 0 || rect.y0 < 0 || rect.x1 > image.width() || rect.y1 > image.height() ||
      rect.width() < 1 || rect.height() < 1) {
    throw Error(ErrorCode::InvalidArgument, "crop rectangle outside image");
  }
  Tensor out({image.channels(), rect.height(), rect.width()});
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < rect.height(); ++y) {
      for (int x = 0; x < rect.width(); ++x) {
        out.at(c, y, x) = image.at(c, rect.y0 + y, rect.x0 + x);
      }
    }
  }
  return out;
}

std::vector<PyramidLevel> make_pyramid(const Tensor& image, int num_scales, double factor) {
  if (num_scales < 1) throw Error(ErrorCode::InvalidArgument, "num_scales must be >= 1");
  if (!(factor > 0.0 && factor < 1.0)) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("pyramid factor {} outside (0, 1)", factor));
  }
  std::vector<PyramidLevel> levels;
  levels.push_back({1.0, image});
  for (int i = 1; i < num_scales; ++i) {
    const double scale = std::pow(factor, i);
    const int h = std::max(1, static_cast<int>(std::lround(image.height() * scale)));
    const int w = std::max(1, static_cast<int>(std::lround(image.width() * scale)));
    levels.push_back({scale, resize_bilinear(image, h, w)});
  }
  return levels;
}

}  // namespace netsurgeon
