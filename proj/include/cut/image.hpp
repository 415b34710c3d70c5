#pragma once

// 8-bit RGB image files <-> [1, 3, H, W] float tensors in [-1, 1].

#include <filesystem>
#include <string>
#include <vector>

#include "cut/tensor.hpp"

namespace cut::img {

using Image = Tensor<float>;

/// Decodes PNG/JPEG/BMP as RGB, scaled by x / 127.5 - 1. Throws
/// std::runtime_error when the file cannot be decoded.
Image load(const std::filesystem::path& path);

/// Writes [1, C, H, W] or [C, H, W] (C = 1 or 3) in [-1, 1] as 8-bit.
void save(const std::filesystem::path& path, const Image& image);

/// Writes values already in [0, 1].
void save_unit(const std::filesystem::path& path, const Image& image);

/// Sorted image files (png, jpg, jpeg, bmp) directly inside `dir`.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Bilinear resize with half-pixel centers, no antialiasing, per channel.
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& image, std::int64_t h, std::int64_t w);

/// Sub-rectangle of an NCHW tensor.
template <class T>
Tensor<T> crop(const Tensor<T>& image, std::int64_t top, std::int64_t left, std::int64_t h,
               std::int64_t w);

/// Concatenates [1, C, H, W] images along the width.
Image hconcat(const std::vector<Image>& images);

}  // namespace cut::img
