#pragma once

#include <filesystem>
#include <string>

#include "uemkit/tensor.hpp"

namespace uem::io {

/// Linear map used to quantise an image to 8 bits: byte = round(255 * (v - min) / (max - min)).
struct PngScale {
  double min = 0.0;
  double max = 0.0;
};

/// Writes a {H,W} plane as 8-bit grayscale or a {3,H,W} image as RGB,
/// min-max scaled over the whole image. The scale goes to `<path>.scale.txt`.
PngScale write_png(const Tensor& image, const std::filesystem::path& path);

/// One grayscale PNG per channel of a {C,H,W} stack: <stem>_<c>.png, each
/// scaled independently.
void write_png_stack(const Tensor& stack, const std::filesystem::path& dir, const std::string& stem);

/// Raw values as `c,y,x,value` rows (rank 3) or `y,x,value` (rank 2), full precision.
void write_tensor_csv(const Tensor& t, const std::filesystem::path& path);
/// Inverse of write_tensor_csv for rank-3 files.
Tensor read_tensor_csv(const std::filesystem::path& path);

/// Single-column numeric CSV with a header line, e.g. a radial height profile.
Tensor read_column_csv(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace uem::io
