#pragma once

#include "fetalnav/volume.hpp"

#include <string>

namespace fetalnav {

/// Reads an 8-bit grayscale PNG into [0,1].
Image read_gray(const std::string& path);
/// Writes [0,1] floats as 8-bit grayscale (rounded, clamped).
void write_gray(const Image& img, const std::string& path);

/// Reads a mask stored as 0/255 (any non-zero pixel counts as foreground).
Mask read_mask(const std::string& path);
void write_mask(const Mask& m, const std::string& path);

/// 8-bit round trip applied by the on-disk slice format; keeps in-memory and
/// file-backed datasets bitwise identical.
Image quantize8(const Image& img);

Image center_crop_square(const Image& img);
Mask center_crop_square(const Mask& m);
/// Pads the short side with zeros so the content stays centered and undistorted.
Image letterbox_square(const Image& img);

Image resize_linear(const Image& img, int size);
Mask resize_nearest(const Mask& m, int rows, int cols);

/// Dilation with a kernel_px × kernel_px all-ones structuring element.
Mask dilate_square(const Mask& m, int kernel_px);

/// IoU of two binary masks; two empty masks count as a perfect match.
double iou(const Mask& a, const Mask& b);

Mask threshold(const Image& probs, double t = 0.5);

}  // namespace fetalnav
