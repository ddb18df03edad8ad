#include "ldct/image_io.hpp"

#include <fmt/format.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <memory>

#include "ldct/weights_io.hpp"

namespace ldct::io {

void write_image(const std::filesystem::path& path, const Tensor<double>& hu) {
  if (hu.rank() != 2) throw ShapeError(fmt::format("write_image: expected a 2-D image, got {}", to_string(hu.shape())));
  Tensor<float> stored(hu.shape());
  for (std::size_t i = 0; i < hu.size(); ++i) stored[i] = static_cast<float>(hu[i] + kHuOffset);
  write_weights(path, {{"image", std::move(stored)}}, nlohmann::json{{"hu_offset", kHuOffset}}.dump());
}

Tensor<double> read_image(const std::filesystem::path& path) {
  WeightsFile file = read_weights(path);
  double offset = 0.0;
  if (!file.meta_json.empty()) {
    auto meta = nlohmann::json::parse(file.meta_json, nullptr, false);
    if (meta.is_discarded()) throw WeightsFormatError(fmt::format("{}: metadata is not valid JSON", path.string()));
    offset = meta.value("hu_offset", 0.0);
  }
  const auto& img = file.at("image");
  if (img.rank() != 2) throw ShapeError(fmt::format("{}: image tensor is {}", path.string(), to_string(img.shape())));
  Tensor<double> out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<double>(img[i]) - offset;
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

}  // namespace

void write_png(const std::filesystem::path& path, const Tensor<double>& image, double low, double high) {
  if (image.rank() != 2) throw ShapeError(fmt::format("write_png: expected a 2-D image, got {}", to_string(image.shape())));
  if (!(high > low)) throw std::invalid_argument("write_png: window needs high > low");
  const std::size_t h = image.dim(0), w = image.dim(1);
  std::vector<png_byte> pixels(h * w);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double v = std::clamp((image[i] - low) / (high - low), 0.0, 1.0);
    pixels[i] = static_cast<png_byte>(std::lround(v * 255.0));
  }
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path.string()));
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error(fmt::format("libpng failed writing '{}'", path.string()));
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < h; ++r) png_write_row(png, pixels.data() + r * w);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<double> read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error(fmt::format("cannot read PNG '{}': {}", path.string(), img.message));
  }
  img.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    throw std::runtime_error(fmt::format("cannot decode PNG '{}': {}", path.string(), img.message));
  }
  Tensor<double> out({img.height, img.width});
  for (std::size_t i = 0; i < buf.size(); ++i) out[i] = buf[i];
  return out;
}

Tensor<double> tile_grid(const std::vector<Tensor<double>>& tiles, std::size_t columns, std::size_t gap) {
  if (tiles.empty() || columns == 0) throw std::invalid_argument("tile_grid: need tiles and columns > 0");
  const Shape s = tiles[0].shape();
  if (s.size() != 2) throw ShapeError("tile_grid: tiles must be 2-D");
  const std::size_t rows = (tiles.size() + columns - 1) / columns;
  const std::size_t cols = std::min(columns, tiles.size());
  Tensor<double> out({rows * s[0] + (rows - 1) * gap, cols * s[1] + (cols - 1) * gap}, 1.0);
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    if (tiles[t].shape() != s) throw ShapeError("tile_grid: tiles differ in shape");
    const auto [lo, hi] = std::minmax_element(tiles[t].values().begin(), tiles[t].values().end());
    const double range = *hi - *lo;
    const std::size_t r0 = (t / columns) * (s[0] + gap), c0 = (t % columns) * (s[1] + gap);
    for (std::size_t r = 0; r < s[0]; ++r)
      for (std::size_t c = 0; c < s[1]; ++c) {
        const double v = tiles[t][r * s[1] + c];
        out[(r0 + r) * out.dim(1) + c0 + c] = range > 0 ? (v - *lo) / range : 0.0;
      }
  }
  return out;
}

}  // namespace ldct::io
