#include "mvcnn/image.hpp"

#include <png.h>

#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

#include <jpeglib.h>

namespace mvcnn::data {

namespace {

Image from_rgb8(const std::vector<uint8_t>& px, int h, int w) {
  Image img(h, w);
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = px[i] / 255.0f;
  return img;
}

Image load_png(const std::string& path) {
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str())) {
    throw DataError("cannot decode " + path + ": " + im.message);
  }
  im.format = PNG_FORMAT_RGB;  // expands palette/gray/alpha to 8-bit RGB
  std::vector<uint8_t> px(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, px.data(), 0, nullptr)) {
    std::string msg = im.message;
    png_image_free(&im);
    throw DataError("cannot decode " + path + ": " + msg);
  }
  return from_rgb8(px, static_cast<int>(im.height), static_cast<int>(im.width));
}

struct JpegErr {
  jpeg_error_mgr mgr;
  jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_throw(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  longjmp(err->jump, 1);
}

Image load_jpeg(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw DataError("cannot open " + path);

  jpeg_decompress_struct cinfo;
  JpegErr err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_throw;
  std::vector<uint8_t> px;
  int h = 0, w = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError("cannot decode " + path + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;  // gray/YCbCr converted for us
  jpeg_start_decompress(&cinfo);
  h = static_cast<int>(cinfo.output_height);
  w = static_cast<int>(cinfo.output_width);
  px.resize(size_t(h) * w * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    uint8_t* row = px.data() + size_t(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_rgb8(px, h, w);
}

// Binary PPM (P6) and PGM (P5), maxval 255.
Image load_pnm(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw DataError("cannot open " + path);
  auto fail = [&](const std::string& why) -> void {
    throw DataError("cannot decode " + path + ": " + why);
  };

  char m0 = 0, m1 = 0;
  if (std::fscanf(fp.get(), "%c%c", &m0, &m1) != 2 || m0 != 'P' || (m1 != '5' && m1 != '6')) {
    fail("not a binary PPM/PGM");
  }
  const bool gray = m1 == '5';

  // Reads the next integer token, skipping whitespace and '#' comments.
  auto next_int = [&]() -> int {
    int c;
    for (;;) {
      c = std::fgetc(fp.get());
      if (c == '#') {
        while (c != '\n' && c != EOF) c = std::fgetc(fp.get());
      } else if (!std::isspace(c)) {
        break;
      }
    }
    int v = 0;
    bool any = false;
    while (c >= '0' && c <= '9') {
      v = v * 10 + (c - '0');
      any = true;
      c = std::fgetc(fp.get());
    }
    if (!any) fail("malformed header");
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (w < 1 || h < 1) fail("bad dimensions");
  if (maxval != 255) fail("unsupported maxval " + std::to_string(maxval));

  const size_t count = size_t(h) * w * (gray ? 1 : 3);
  std::vector<uint8_t> raw(count);
  if (std::fread(raw.data(), 1, count, fp.get()) != count) fail("truncated pixel data");

  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = raw[gray ? size_t(y) * w + x : (size_t(y) * w + x) * 3 + c] / 255.0f;
  return img;
}

}  // namespace

Image load_image(const std::string& path) {
  uint8_t magic[2] = {0, 0};
  {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!fp) throw DataError("cannot open " + path);
    if (std::fread(magic, 1, 2, fp.get()) != 2) throw DataError("cannot decode " + path + ": empty file");
  }
  if (magic[0] == 0x89 && magic[1] == 'P') return load_png(path);
  if (magic[0] == 0xFF && magic[1] == 0xD8) return load_jpeg(path);
  if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6')) return load_pnm(path);
  throw DataError("cannot decode " + path + ": unrecognized format");
}

void save_png_rgb8(const std::string& path, const Image& img) {
  std::vector<uint8_t> px(size_t(img.h) * img.w * 3);
  for (size_t i = 0; i < px.size(); ++i) {
    float v = img.data[i];
    v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    px[i] = static_cast<uint8_t>(v * 255.0f + 0.5f);
  }
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(img.w);
  im.height = static_cast<png_uint_32>(img.h);
  im.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&im, path.c_str(), 0, px.data(), 0, nullptr)) {
    throw DataError("cannot write " + path + ": " + im.message);
  }
}

Image resize_bilinear(const Image& src, int target_h, int target_w) {
  if (src.h < 2 || src.w < 2) {
    throw DimensionError("resize_bilinear: source must be at least 2x2, got " +
                         std::to_string(src.h) + "x" + std::to_string(src.w));
  }
  if (target_h < 2 || target_w < 2) {
    throw DimensionError("resize_bilinear: target must be at least 2x2, got " +
                         std::to_string(target_h) + "x" + std::to_string(target_w));
  }
  if (target_h == src.h && target_w == src.w) return src;

  Image out(target_h, target_w);
  const double sy = double(src.h - 1) / double(target_h - 1);
  const double sx = double(src.w - 1) / double(target_w - 1);
  for (int y = 0; y < target_h; ++y) {
    const double fy = y * sy;
    int y0 = static_cast<int>(fy);
    if (y0 >= src.h - 1) y0 = src.h - 2;
    const double wy = fy - y0;
    for (int x = 0; x < target_w; ++x) {
      const double fx = x * sx;
      int x0 = static_cast<int>(fx);
      if (x0 >= src.w - 1) x0 = src.w - 2;
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = src.at(y0, x0, c) * (1.0 - wx) + src.at(y0, x0 + 1, c) * wx;
        const double bot = src.at(y0 + 1, x0, c) * (1.0 - wx) + src.at(y0 + 1, x0 + 1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1.0 - wy) + bot * wy);
      }
    }
  }
  return out;
}

}  // namespace mvcnn::data
