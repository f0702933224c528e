#pragma once

#include <string>

#include "purify/tensor.hpp"

namespace purify {

/// Reads an 8-bit PNG as 1x3xHxW with pixels in [0,255]. Grayscale and
/// palette images are expanded to RGB; alpha is stripped.
Tensor load_image(const std::string& path);

/// Writes 1x3xHxW as 8-bit RGB PNG (values rounded and clamped to [0,255]);
/// save then load is lossless for integer-valued tensors.
void save_image(const Tensor& image, const std::string& path);

/// Reads a grayscale or indexed 8-bit PNG of label values and one-hot encodes
/// label i into channel i of a 1xCxHxW tensor. Labels outside [0, channels)
/// are rejected.
Tensor load_mask(const std::string& path, int channels);

/// Writes a label mask (argmax over channels) as an 8-bit grayscale PNG.
void save_mask(const Tensor& mask, const std::string& path);

}  // namespace purify
