#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mspn/image.hpp"

namespace mspn {

// Reads an 8-bit PNG or PGM (P5) file into a grayscale image, values in
// [0, 1]. Color PNGs are converted by BT.601 luma. Interlaced or 16-bit
// files are rejected with IoError.
Image read_image(const std::string& path);

// Writes an 8-bit grayscale PNG; intensities are quantized to round(v*255).
void write_png_gray(const std::string& path, const Image& img);

void write_pgm_gray(const std::string& path, const Image& img);

// Byte-level codecs, exposed for tests.
Image decode_png_bytes(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_png_gray(const Image& img);
Image decode_pgm_bytes(const std::vector<uint8_t>& bytes);

}  // namespace mspn
