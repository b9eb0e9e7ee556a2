#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <jpeglib.h>

#include "mvcnn/image.hpp"
#include "mvcnn/util.hpp"
#include "testutil.hpp"

using namespace mvcnn;
using mvcnn::data::load_image;
using mvcnn::data::resize_bilinear;
using mvcnn::data::save_png_rgb8;

namespace {

// Encode an 8-bit buffer as a baseline JPEG for the decode tests.
void write_jpeg(const std::string& path, int h, int w, int comps,
                const std::vector<unsigned char>& pixels, int quality) {
  jpeg_compress_struct cinfo{};
  jpeg_error_mgr jerr{};
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  FILE* fp = std::fopen(path.c_str(), "wb");
  REQUIRE(fp != nullptr);
  jpeg_stdio_dest(&cinfo, fp);
  cinfo.image_width = JDIMENSION(w);
  cinfo.image_height = JDIMENSION(h);
  cinfo.input_components = comps;
  cinfo.in_color_space = comps == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    const JSAMPLE* row = pixels.data() + size_t(cinfo.next_scanline) * size_t(w) * size_t(comps);
    JSAMPROW rows[1] = {const_cast<JSAMPROW>(row)};
    jpeg_write_scanlines(&cinfo, rows, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::fclose(fp);
}

Image quantized_test_image(int h, int w, uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (float& v : img.data) v = float(rng.next_below(256)) / 255.0f;
  return img;
}

}  // namespace

TEST_CASE("png round trip preserves 8-bit color exactly") {
  testutil::TempDir tmp("img_png");
  Image img = quantized_test_image(13, 9, 101);
  const std::string path = tmp.str("roundtrip.png");
  save_png_rgb8(path, img);
  Image back = load_image(path);
  REQUIRE(back.h == img.h);
  REQUIRE(back.w == img.w);
  for (size_t i = 0; i < img.data.size(); ++i) CHECK(back.data[i] == img.data[i]);
}

TEST_CASE("png save clamps out-of-range values") {
  testutil::TempDir tmp("img_clamp");
  Image img(1, 2);
  img.at(0, 0, 0) = -0.5f;
  img.at(0, 0, 1) = 1.5f;
  img.at(0, 0, 2) = 0.0f;
  img.at(0, 1, 0) = 1.0f;
  const std::string path = tmp.str("clamp.png");
  save_png_rgb8(path, img);
  Image back = load_image(path);
  CHECK(back.at(0, 0, 0) == 0.0f);
  CHECK(back.at(0, 0, 1) == 1.0f);
  CHECK(back.at(0, 1, 0) == 1.0f);
}

TEST_CASE("ppm and pgm decoding") {
  testutil::TempDir tmp("img_pnm");

  // P6, 2x2, with a comment line in the header.
  const unsigned char rgb[12] = {255, 0, 0, 0, 255, 0, 0, 0, 255, 128, 128, 128};
  std::string header = "P6\n# test pattern\n2 2\n255\n";
  std::vector<uint8_t> ppm(header.begin(), header.end());
  ppm.insert(ppm.end(), rgb, rgb + 12);
  write_binary_file(tmp.str("pix.ppm"), ppm);
  Image img = load_image(tmp.str("pix.ppm"));
  REQUIRE(img.h == 2);
  REQUIRE(img.w == 2);
  CHECK(img.at(0, 0, 0) == 1.0f);
  CHECK(img.at(0, 0, 1) == 0.0f);
  CHECK(img.at(0, 1, 1) == 1.0f);
  CHECK(img.at(1, 0, 2) == 1.0f);
  CHECK(img.at(1, 1, 0) == doctest::Approx(128.0 / 255.0));

  // P5 grayscale promotes to three equal channels.
  const unsigned char gray[4] = {0, 64, 192, 255};
  header = "P5\n2 2\n255\n";
  std::vector<uint8_t> pgm(header.begin(), header.end());
  pgm.insert(pgm.end(), gray, gray + 4);
  write_binary_file(tmp.str("pix.pgm"), pgm);
  Image g = load_image(tmp.str("pix.pgm"));
  REQUIRE(g.h == 2);
  REQUIRE(g.w == 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      CHECK(g.at(y, x, 0) == g.at(y, x, 1));
      CHECK(g.at(y, x, 1) == g.at(y, x, 2));
    }
  CHECK(g.at(0, 1, 0) == doctest::Approx(64.0 / 255.0));

  // 16-bit samples are not supported.
  header = "P6\n2 2\n65535\n";
  std::vector<uint8_t> deep(header.begin(), header.end());
  deep.insert(deep.end(), 24, uint8_t(0));
  write_binary_file(tmp.str("deep.ppm"), deep);
  CHECK_THROWS_AS(load_image(tmp.str("deep.ppm")), DataError);

  // Truncated pixel payload.
  header = "P6\n4 4\n255\n";
  std::vector<uint8_t> cut(header.begin(), header.end());
  cut.insert(cut.end(), 10, uint8_t(7));
  write_binary_file(tmp.str("cut.ppm"), cut);
  CHECK_THROWS_AS(load_image(tmp.str("cut.ppm")), DataError);
}

TEST_CASE("jpeg decoding") {
  testutil::TempDir tmp("img_jpeg");

  // A smooth horizontal gradient survives JPEG compression closely.
  const int h = 32, w = 32;
  std::vector<unsigned char> pixels(size_t(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      unsigned char v = (unsigned char)(x * 255 / (w - 1));
      pixels[(size_t(y) * w + x) * 3 + 0] = v;
      pixels[(size_t(y) * w + x) * 3 + 1] = v;
      pixels[(size_t(y) * w + x) * 3 + 2] = v;
    }
  write_jpeg(tmp.str("ramp.jpg"), h, w, 3, pixels, 95);
  Image img = load_image(tmp.str("ramp.jpg"));
  REQUIRE(img.h == h);
  REQUIRE(img.w == w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float want = float(x * 255 / (w - 1)) / 255.0f;
      CHECK(std::abs(img.at(y, x, 0) - want) < 0.05f);
    }

  // Grayscale JPEGs come back with three equal channels.
  std::vector<unsigned char> gray(size_t(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) gray[size_t(y) * w + x] = (unsigned char)(y * 255 / (h - 1));
  write_jpeg(tmp.str("gray.jpg"), h, w, 1, gray, 95);
  Image g = load_image(tmp.str("gray.jpg"));
  REQUIRE(g.h == h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      CHECK(g.at(y, x, 0) == g.at(y, x, 1));
      CHECK(g.at(y, x, 1) == g.at(y, x, 2));
    }
}

TEST_CASE("unreadable or unrecognized files raise data errors") {
  testutil::TempDir tmp("img_bad");
  CHECK_THROWS_AS(load_image(tmp.str("nope.png")), DataError);

  write_binary_file(tmp.str("notes.txt"), {'h', 'e', 'l', 'l', 'o', '\n'});
  CHECK_THROWS_AS(load_image(tmp.str("notes.txt")), DataError);

  // A PNG signature with garbage behind it must fail cleanly, not crash.
  std::vector<uint8_t> fake = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n', 1, 2, 3, 4};
  write_binary_file(tmp.str("fake.png"), fake);
  CHECK_THROWS_AS(load_image(tmp.str("fake.png")), DataError);
}

TEST_CASE("bilinear resize") {
  // Same size returns a bitwise copy.
  Image img = quantized_test_image(7, 5, 202);
  Image same = resize_bilinear(img, 7, 5);
  CHECK(std::memcmp(same.data.data(), img.data.data(), sizeof(float) * img.data.size()) == 0);

  // 2x2 checkerboard upsampled to 3x3: corners keep their values, center
  // averages to one half.
  Image cb(2, 2);
  for (int c = 0; c < 3; ++c) {
    cb.at(0, 0, c) = 0.0f;
    cb.at(0, 1, c) = 1.0f;
    cb.at(1, 0, c) = 1.0f;
    cb.at(1, 1, c) = 0.0f;
  }
  Image up = resize_bilinear(cb, 3, 3);
  CHECK(up.at(0, 0, 0) == 0.0f);
  CHECK(up.at(0, 2, 0) == 1.0f);
  CHECK(up.at(2, 0, 0) == 1.0f);
  CHECK(up.at(2, 2, 0) == 0.0f);
  CHECK(up.at(1, 1, 0) == doctest::Approx(0.5));
  CHECK(up.at(0, 1, 0) == doctest::Approx(0.5));
  CHECK(up.at(1, 0, 0) == doctest::Approx(0.5));

  // Constant images stay constant at any size.
  Image flat(4, 6);
  for (float& v : flat.data) v = 0.625f;
  for (float v : resize_bilinear(flat, 9, 3).data) CHECK(v == doctest::Approx(0.625));

  // Corner alignment holds when shrinking too.
  Image ramp(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) ramp.at(y, x, c) = float(3 * y + x) / 15.0f;
  Image down = resize_bilinear(ramp, 2, 2);
  CHECK(down.at(0, 0, 0) == doctest::Approx(ramp.at(0, 0, 0)));
  CHECK(down.at(0, 1, 0) == doctest::Approx(ramp.at(0, 3, 0)));
  CHECK(down.at(1, 0, 0) == doctest::Approx(ramp.at(3, 0, 0)));
  CHECK(down.at(1, 1, 0) == doctest::Approx(ramp.at(3, 3, 0)));

  CHECK_THROWS_AS(resize_bilinear(img, 1, 5), DimensionError);
  CHECK_THROWS_AS(resize_bilinear(Image(1, 4), 3, 3), DimensionError);
}
