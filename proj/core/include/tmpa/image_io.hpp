#pragma once

#include <string>

#include "tmpa/tensor.hpp"

namespace tmpa {

// Binary portable pixmap / graymap. Images are [3,H,W] tensors with values
// in [0,1]; files are 8-bit, so a write/read round trip quantizes.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// mask is [H,W] (or [1,H,W]); values outside {0,1} are clamped.
void write_pgm(const std::string& path, const Tensor& mask);

}  // namespace tmpa
