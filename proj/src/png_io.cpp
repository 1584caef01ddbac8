#include "odgs/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace odgs {

ErpImage<float> read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str()))
    throw std::runtime_error("read_png: cannot open '" + path.string() +
                             "': " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    throw std::runtime_error("read_png: decode failed for '" + path.string() +
                             "': " + message);
  }

  const int height = static_cast<int>(png.height);
  const int width = static_cast<int>(png.width);
  ErpImage<float> image(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        image.at(c, y, x) =
            buffer[static_cast<std::size_t>((y * width + x) * 3 + c)] / 255.0f;
  return image;
}

void write_png(const ErpImage<float>& image, const std::filesystem::path& path) {
  const int height = image.height(), width = image.width();
  if (height <= 0 || width <= 0)
    throw std::invalid_argument("write_png: empty image");

  std::vector<png_byte> buffer(static_cast<std::size_t>(height) *
                               static_cast<std::size_t>(width) * 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        buffer[static_cast<std::size_t>((y * width + x) * 3 + c)] =
            static_cast<png_byte>(std::lround(v * 255.0f));
      }

  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(width);
  png.height = static_cast<png_uint_32>(height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, buffer.data(), 0,
                               nullptr))
    throw std::runtime_error("write_png: cannot write '" + path.string() +
                             "': " + png.message);
}

}  // namespace odgs
