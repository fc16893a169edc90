#include "core/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

#include "core/errors.hpp"

namespace rankseg {

void Image::validate() const {
  if (t_.rank() != 3 || t_.dim(0) != 3 || t_.dim(1) <= 0 || t_.dim(2) <= 0)
    throw ConfigError("Image: expected [3,H,W] with positive dims, got " + t_.dims_str());
  for (std::size_t i = 0; i < t_.size(); ++i) {
    const double v = t_[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw NumericError("Image: value out of [0,1]");
  }
}

int Mask::max_label() const {
  int m = 0;
  for (std::uint8_t v : v_) m = std::max(m, static_cast<int>(v));
  return m;
}

std::vector<int> Mask::labels_present() const {
  std::array<bool, 256> seen{};
  for (std::uint8_t v : v_) seen[v] = true;
  std::vector<int> out;
  for (int i = 0; i < 256; ++i)
    if (seen[static_cast<std::size_t>(i)]) out.push_back(i);
  return out;
}

std::size_t Mask::count(int label) const {
  std::size_t n = 0;
  for (std::uint8_t v : v_)
    if (v == label) ++n;
  return n;
}

Tensor Mask::binary_plane(int label) const {
  Tensor t({h_, w_});
  for (std::size_t i = 0; i < v_.size(); ++i) t[i] = v_[i] == label ? 1.0 : 0.0;
  return t;
}

std::array<std::uint8_t, 3> palette_color(int index) {
  std::array<std::uint8_t, 3> rgb{0, 0, 0};
  int c = index;
  for (int j = 0; j < 8; ++j) {
    rgb[0] |= static_cast<std::uint8_t>(((c >> 0) & 1) << (7 - j));
    rgb[1] |= static_cast<std::uint8_t>(((c >> 1) & 1) << (7 - j));
    rgb[2] |= static_cast<std::uint8_t>(((c >> 2) & 1) << (7 - j));
    c >>= 3;
  }
  return rgb;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

}  // namespace

Image load_jpeg(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path);

  jpeg_decompress_struct cinfo{};
  JpegErrorMgr jerr{};
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("jpeg decode failed: " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  const int w = static_cast<int>(cinfo.output_width);
  const int h = static_cast<int>(cinfo.output_height);
  Image img(h, w);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
  JSAMPROW rp = row.data();
  while (cinfo.output_scanline < cinfo.output_height) {
    const int y = static_cast<int>(cinfo.output_scanline);
    jpeg_read_scanlines(&cinfo, &rp, 1);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(c, y, x) = row[static_cast<std::size_t>(x) * 3 + c] / 255.0;
      }
    }
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

void save_jpeg(const std::string& path, const Image& img, int quality) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write " + path);

  jpeg_compress_struct cinfo{};
  JpegErrorMgr jerr{};
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_compress(&cinfo);
    throw IoError("jpeg encode failed: " + path);
  }
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, f.get());
  cinfo.image_width = static_cast<JDIMENSION>(img.width());
  cinfo.image_height = static_cast<JDIMENSION>(img.height());
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);

  const int w = img.width();
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
  JSAMPROW rp = row.data();
  while (cinfo.next_scanline < cinfo.image_height) {
    const int y = static_cast<int>(cinfo.next_scanline);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        row[static_cast<std::size_t>(x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
    jpeg_write_scanlines(&cinfo, &rp, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
}

namespace {

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

}  // namespace

Mask load_mask_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path);

  PngReader r;
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!r.png) throw IoError("png alloc failed");
  r.info = png_create_info_struct(r.png);
  if (!r.info) throw IoError("png alloc failed");
  if (setjmp(png_jmpbuf(r.png))) throw IoError("png decode failed: " + path);

  png_init_io(r.png, f.get());
  png_read_info(r.png, r.info);

  const png_byte color = png_get_color_type(r.png, r.info);
  if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY)
    throw DataError("annotation PNG must be palette or grayscale: " + path);
  if (png_get_bit_depth(r.png, r.info) < 8) png_set_packing(r.png);
  png_read_update_info(r.png, r.info);

  const int w = static_cast<int>(png_get_image_width(r.png, r.info));
  const int h = static_cast<int>(png_get_image_height(r.png, r.info));
  Mask mask(h, w);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = mask.raw().data() + static_cast<std::size_t>(y) * w;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return mask;
}

void save_mask_png(const std::string& path, const Mask& mask) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write " + path);

  PngWriter wr;
  wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!wr.png) throw IoError("png alloc failed");
  wr.info = png_create_info_struct(wr.png);
  if (!wr.info) throw IoError("png alloc failed");
  if (setjmp(png_jmpbuf(wr.png))) throw IoError("png encode failed: " + path);

  png_init_io(wr.png, f.get());
  png_set_IHDR(wr.png, wr.info, static_cast<png_uint_32>(mask.width()),
               static_cast<png_uint_32>(mask.height()), 8, PNG_COLOR_TYPE_PALETTE,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);

  std::vector<png_color> pal(256);
  for (int i = 0; i < 256; ++i) {
    const auto rgb = palette_color(i);
    pal[static_cast<std::size_t>(i)] = {rgb[0], rgb[1], rgb[2]};
  }
  png_set_PLTE(wr.png, wr.info, pal.data(), 256);
  png_write_info(wr.png, wr.info);

  const int w = mask.width(), h = mask.height();
  for (int y = 0; y < h; ++y) {
    png_write_row(wr.png, const_cast<png_bytep>(mask.raw().data() + static_cast<std::size_t>(y) * w));
  }
  png_write_end(wr.png, nullptr);
}

void save_gray_png(const std::string& path, const Tensor& plane) {
  if (plane.rank() != 2) throw ConfigError("save_gray_png expects [H,W]");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write " + path);

  PngWriter wr;
  wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!wr.png) throw IoError("png alloc failed");
  wr.info = png_create_info_struct(wr.png);
  if (!wr.info) throw IoError("png alloc failed");
  if (setjmp(png_jmpbuf(wr.png))) throw IoError("png encode failed: " + path);

  const int h = plane.dim(0), w = plane.dim(1);
  png_init_io(wr.png, f.get());
  png_set_IHDR(wr.png, wr.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(wr.png, wr.info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      row[static_cast<std::size_t>(x)] =
          static_cast<std::uint8_t>(std::lround(std::clamp(plane.at2(y, x), 0.0, 1.0) * 255.0));
    }
    png_write_row(wr.png, row.data());
  }
  png_write_end(wr.png, nullptr);
}

std::vector<std::uint8_t> encode_image_bytes(const Image& img) {
  std::vector<std::uint8_t> out;
  out.reserve(img.tensor().size());
  for (std::size_t i = 0; i < img.tensor().size(); ++i) {
    const double v = std::clamp(img.tensor()[i], 0.0, 1.0);
    out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  }
  return out;
}

}  // namespace rankseg
