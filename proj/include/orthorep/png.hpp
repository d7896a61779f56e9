#pragma once

// PNG I/O through libpng: RGB images at 8 or 16 bits per sample plus tEXt
// key/value metadata. Reading accepts any libpng-decodable file and converts
// it to RGB (palette expanded, gray replicated, alpha dropped).

#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <png.h>

#include "orthorep/error.hpp"
#include "orthorep/mesh.hpp"  // detail::read_file

namespace orthorep {

struct PngImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  int bit_depth = 8;               // 8 or 16
  std::vector<std::uint16_t> rgb;  // width * height * 3 samples
  std::vector<std::pair<std::string, std::string>> text;

  const std::string* find_text(std::string_view key) const {
    for (const auto& [k, v] : text)
      if (k == key) return &v;
    return nullptr;
  }
};

namespace detail {

// libpng reports fatal errors through a callback that must not return; we
// record the message and longjmp back to the caller's setjmp point.
struct PngErrorSink {
  char message[256] = {};
};

inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* sink = static_cast<PngErrorSink*>(png_get_error_ptr(png));
  std::strncpy(sink->message, msg ? msg : "unknown libpng error", sizeof(sink->message) - 1);
  png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

struct PngReadCursor {
  const unsigned char* data;
  std::size_t size;
  std::size_t pos;
};

inline void png_read_fn(png_structp png, png_bytep out, png_size_t n) {
  auto* c = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (c->pos + n > c->size) png_error(png, "unexpected end of data");
  std::memcpy(out, c->data + c->pos, n);
  c->pos += n;
}

struct PngWriteBuffer {
  std::vector<unsigned char> bytes;
};

inline void png_write_fn(png_structp png, png_bytep data, png_size_t n) {
  auto* b = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
  b->bytes.insert(b->bytes.end(), data, data + n);
}

inline void png_flush_fn(png_structp) {}

}  // namespace detail

inline std::string encode_png(const PngImage& img) {
  if (img.bit_depth != 8 && img.bit_depth != 16) throw ConfigError("PNG bit depth must be 8 or 16");
  if (img.width == 0 || img.height == 0) throw ConfigError("PNG image must be non-empty");
  if (img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3)
    throw ConfigError("PNG sample count does not match dimensions");
  for (const auto& [key, value] : img.text)
    if (key.empty() || key.size() > 79 || key.find('\0') != std::string::npos)
      throw ConfigError("invalid PNG text key '" + key + "'");

  // Everything with a destructor is built before setjmp.
  const std::size_t bytes_per_sample = img.bit_depth / 8;
  const std::size_t row_bytes = static_cast<std::size_t>(img.width) * 3 * bytes_per_sample;
  std::vector<unsigned char> pixels(row_bytes * img.height);
  for (std::size_t s = 0; s < img.rgb.size(); ++s) {
    if (bytes_per_sample == 2) {
      pixels[2 * s] = static_cast<unsigned char>(img.rgb[s] >> 8);  // network byte order
      pixels[2 * s + 1] = static_cast<unsigned char>(img.rgb[s] & 0xff);
    } else {
      if (img.rgb[s] > 255) throw ConfigError("8-bit PNG sample out of range");
      pixels[s] = static_cast<unsigned char>(img.rgb[s]);
    }
  }
  std::vector<png_bytep> rows(img.height);
  for (std::uint32_t y = 0; y < img.height; ++y) rows[y] = pixels.data() + y * row_bytes;
  std::vector<png_text> text(img.text.size());
  for (std::size_t i = 0; i < img.text.size(); ++i) {
    text[i].compression = PNG_TEXT_COMPRESSION_NONE;
    text[i].key = const_cast<char*>(img.text[i].first.c_str());
    text[i].text = const_cast<char*>(img.text[i].second.c_str());
    text[i].text_length = img.text[i].second.size();
  }
  detail::PngErrorSink sink;
  detail::PngWriteBuffer buffer;

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &sink, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(std::string("PNG encode failed: ") + sink.message);
  }
  png_set_write_fn(png, &buffer, detail::png_write_fn, detail::png_flush_fn);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, img.width, img.height, img.bit_depth, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (!text.empty()) png_set_text(png, info, text.data(), static_cast<int>(text.size()));
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  return {buffer.bytes.begin(), buffer.bytes.end()};
}

inline PngImage decode_png(std::string_view data, const std::string& source = "<png>") {
  if (data.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(data.data()), 0, 8) != 0)
    throw ParseError(source, 0, 0, "not a PNG file (bad signature)");

  PngImage img;
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  detail::PngErrorSink sink;
  detail::PngReadCursor cursor{reinterpret_cast<const unsigned char*>(data.data()), data.size(), 0};

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &sink, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw Error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    const std::size_t offset = cursor.pos;
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError(source, 0, offset, sink.message);
  }
  png_set_read_fn(png, &cursor, detail::png_read_fn);
  png_read_info(png, info);

  const int color_type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.bit_depth = png_get_bit_depth(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  pixels.resize(row_bytes * img.height);
  rows.resize(img.height);
  for (std::uint32_t y = 0; y < img.height; ++y) rows[y] = pixels.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, info);

  png_textp text = nullptr;
  const int n_text = png_get_text(png, info, &text, nullptr);
  for (int i = 0; i < n_text; ++i) img.text.emplace_back(text[i].key, std::string(text[i].text, text[i].text_length));
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t samples = static_cast<std::size_t>(img.width) * img.height * 3;
  img.rgb.resize(samples);
  if (img.bit_depth == 16) {
    for (std::size_t s = 0; s < samples; ++s)
      img.rgb[s] = static_cast<std::uint16_t>((pixels[2 * s] << 8) | pixels[2 * s + 1]);
  } else {
    for (std::size_t s = 0; s < samples; ++s) img.rgb[s] = pixels[s];
  }
  return img;
}

inline void write_png(const std::filesystem::path& path, const PngImage& img) {
  const std::string bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

inline PngImage read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("PNG file not found: " + path.string());
  return decode_png(detail::read_file(path), path.string());
}

}  // namespace orthorep
