#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfv/tensor.hpp"

namespace mfv {

struct Image8 {
    int64_t width = 0;
    int64_t height = 0;
    std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
};

// 8-bit non-interlaced PNG: decodes grayscale / RGB / with-alpha to RGB
// (alpha dropped); the encoder always emits canonical 8-bit RGB, so
// encode(decode(f)) reproduces f byte for byte on files this tool wrote.
Image8 decode_png(const std::vector<uint8_t>& file);
std::vector<uint8_t> encode_png(const Image8& img);

Image8 read_png(const std::string& path);
void write_png(const std::string& path, const Image8& img);  // temp + rename

Tensor image_to_tensor(const Image8& img);   // [1,3,H,W], values v/255
Image8 tensor_to_image(const Tensor& t);     // clamps, rounds to nearest

void write_file_atomic(const std::string& path, const void* data, size_t size);

}  // namespace mfv
