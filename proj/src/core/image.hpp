#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace rankseg {

// RGB frame, [3,H,W], values in [0,1].
class Image {
 public:
  Image() = default;
  Image(int h, int w) : t_(std::vector<int>{3, h, w}) {}
  explicit Image(Tensor t) : t_(std::move(t)) {}

  int height() const { return t_.dim(1); }
  int width() const { return t_.dim(2); }
  double& at(int c, int y, int x) { return t_.at3(c, y, x); }
  double at(int c, int y, int x) const { return t_.at3(c, y, x); }
  Tensor& tensor() { return t_; }
  const Tensor& tensor() const { return t_; }

  void validate() const;  // finite, in [0,1], positive dims

 private:
  Tensor t_;
};

// Integer label map; 0 = background, k = object k.
class Mask {
 public:
  Mask() = default;
  Mask(int h, int w) : h_(h), w_(w), v_(static_cast<std::size_t>(h) * w, 0) {}

  int height() const { return h_; }
  int width() const { return w_; }
  std::uint8_t& at(int y, int x) { return v_[static_cast<std::size_t>(y) * w_ + x]; }
  std::uint8_t at(int y, int x) const { return v_[static_cast<std::size_t>(y) * w_ + x]; }
  const std::vector<std::uint8_t>& raw() const { return v_; }
  std::vector<std::uint8_t>& raw() { return v_; }

  int max_label() const;
  std::vector<int> labels_present() const;
  std::size_t count(int label) const;

  // Binary plane for one label as [H,W] doubles in {0,1}.
  Tensor binary_plane(int label) const;

  bool operator==(const Mask& o) const { return h_ == o.h_ && w_ == o.w_ && v_ == o.v_; }

 private:
  int h_ = 0, w_ = 0;
  std::vector<std::uint8_t> v_;
};

// PASCAL-style color table used for indexed-palette annotation PNGs.
std::array<std::uint8_t, 3> palette_color(int index);

Image load_jpeg(const std::string& path);
void save_jpeg(const std::string& path, const Image& img, int quality = 95);

// Annotations are 8-bit palette (or grayscale) PNGs whose pixel value is the
// object label.
Mask load_mask_png(const std::string& path);
void save_mask_png(const std::string& path, const Mask& mask);

// Grayscale debug dump in [0,1].
void save_gray_png(const std::string& path, const Tensor& plane);

// Byte-level encodings used by determinism checks.
std::vector<std::uint8_t> encode_image_bytes(const Image& img);

}  // namespace rankseg
