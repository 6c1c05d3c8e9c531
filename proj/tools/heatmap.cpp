#include "heatmap.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <memory>

#include "byols/error.hpp"

namespace byols::tools {

namespace {

// Dark purple -> teal -> yellow, sampled at 0, 0.5, 1.
std::array<std::uint8_t, 3> colour(double v) {
  static constexpr double anchors[3][3] = {{68, 1, 84}, {33, 145, 140}, {253, 231, 37}};
  v = std::clamp(v, 0.0, 1.0);
  const int k = v < 0.5 ? 0 : 1;
  const double t = v < 0.5 ? v / 0.5 : (v - 0.5) / 0.5;
  std::array<std::uint8_t, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    rgb[c] = static_cast<std::uint8_t>(anchors[k][c] + t * (anchors[k + 1][c] - anchors[k][c]) + 0.5);
  }
  return rgb;
}

}  // namespace

void write_heatmap_png(const Eigen::MatrixXd& values, const std::filesystem::path& path, int cell_px) {
  require(values.size() > 0 && cell_px > 0, "heatmap needs a non-empty matrix");
  const auto width = static_cast<png_uint_32>(values.cols() * cell_px);
  const auto height = static_cast<png_uint_32>(values.rows() * cell_px);

  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) fail(ErrorCode::kIo, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorCode::kIo, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  // Row 0 of the matrix at the bottom, like an imshow with origin="lower".
  std::vector<png_byte> row(static_cast<std::size_t>(width) * 3);
  for (png_uint_32 y = 0; y < height; ++y) {
    const Eigen::Index r = values.rows() - 1 - static_cast<Eigen::Index>(y) / cell_px;
    for (png_uint_32 x = 0; x < width; ++x) {
      const auto rgb = colour(values(r, static_cast<Eigen::Index>(x) / cell_px));
      std::copy(rgb.begin(), rgb.end(), row.begin() + 3 * x);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace byols::tools
