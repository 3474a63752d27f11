// Binary PPM (P6) images, 8-bit RGB: the interchange format for synthetic
// frames and dataset loading.

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lightformer/tensor.hpp"

namespace lightformer {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // RGB interleaved, row-major

  std::uint8_t& at(int y, int x, int channel) {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + channel)];
  }
  std::uint8_t at(int y, int x, int channel) const {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + channel)];
  }
};

Image read_ppm(const std::filesystem::path& path);
void write_ppm(const Image& image, const std::filesystem::path& path);

// [3, H, W] tensor scaled to [0, 1].
template <typename S>
Tensor<S> image_to_tensor(const Image& image) {
  const int h = image.height, w = image.width;
  std::vector<S> data(static_cast<std::size_t>(3) * h * w);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        data[static_cast<std::size_t>((c * h + y) * w + x)] =
            static_cast<S>(image.at(y, x, c)) / S(255);
      }
    }
  }
  return Tensor<S>::from_data({3, h, w}, std::move(data));
}

}  // namespace lightformer
