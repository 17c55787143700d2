#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "defdiff/image_io.h"
#include "defdiff/rng.h"

using namespace defdiff;
namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("tensor container round trips bitwise") {
  Rng rng(42);
  std::map<std::string, Tensor> tensors;
  tensors["weights"] = Tensor::randn({3, 4, 5}, rng);
  tensors["bias"] = Tensor::randn({7}, rng);
  tensors["empty_name_ok"] = Tensor::full({2, 2}, -0.0);
  tensors["scales"] = Tensor::full({1}, 1e-308);

  const std::string path = "tmp_roundtrip.bin";
  writeTensorFile(path, tensors);
  auto back = readTensorFile(path);

  REQUIRE(back.size() == tensors.size());
  for (const auto& [name, t] : tensors) {
    REQUIRE(back.count(name) == 1);
    const Tensor& r = back.at(name);
    REQUIRE(r.shape == t.shape);
    CHECK(tensorHash(r) == tensorHash(t));
  }
  fs::remove(path);
}

TEST_CASE("tensor container detects corruption and truncation") {
  Rng rng(7);
  std::map<std::string, Tensor> tensors;
  tensors["t"] = Tensor::randn({16}, rng);
  const std::string path = "tmp_corrupt.bin";
  writeTensorFile(path, tensors);

  std::vector<unsigned char> bytes = slurp(path);

  SUBCASE("flipped payload byte fails the checksum") {
    bytes[bytes.size() / 2] ^= 0x40;
    spit(path, bytes);
    CHECK_THROWS_AS(readTensorFile(path), std::runtime_error);
  }
  SUBCASE("truncated file is rejected") {
    bytes.resize(bytes.size() - 9);
    spit(path, bytes);
    CHECK_THROWS_AS(readTensorFile(path), std::runtime_error);
  }
  SUBCASE("wrong magic is rejected") {
    bytes[0] = 'X';
    spit(path, bytes);
    CHECK_THROWS_AS(readTensorFile(path), std::runtime_error);
  }
  SUBCASE("missing file is rejected") {
    CHECK_THROWS_AS(readTensorFile("does_not_exist.bin"), std::runtime_error);
  }
  fs::remove(path);
}

TEST_CASE("png writer emits a valid signature and the right dimensions") {
  Tensor gray = Tensor::zeros({5, 9});
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 9; ++j) gray.at(i, j) = (i + j) / 12.0;
  const std::string path = "tmp_gray.png";
  writePng(path, gray);

  std::vector<unsigned char> b = slurp(path);
  const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  REQUIRE(b.size() > 33);
  for (int i = 0; i < 8; ++i) CHECK(b[static_cast<size_t>(i)] == sig[i]);
  // IHDR: width at offset 16, height at 20, both big endian.
  auto be32 = [&](size_t off) {
    return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) | (uint32_t(b[off + 2]) << 8) |
           uint32_t(b[off + 3]);
  };
  CHECK(be32(16) == 9);
  CHECK(be32(20) == 5);
  CHECK(b[24] == 8);  // bit depth
  CHECK(b[25] == 0);  // grayscale
  fs::remove(path);
}

TEST_CASE("png writer handles rgb and clamps the value range") {
  Tensor rgb = Tensor::zeros({2, 2, 3});
  rgb.at(0, 0, 0) = -5.0;  // clamps to lo
  rgb.at(1, 1, 2) = 5.0;   // clamps to hi
  const std::string path = "tmp_rgb.png";
  writePng(path, rgb, -1.0, 1.0);
  std::vector<unsigned char> b = slurp(path);
  CHECK(b[25] == 2);  // rgb color type
  fs::remove(path);

  CHECK_THROWS_AS(writePng("tmp_bad.png", Tensor::zeros({2, 2, 4})), std::invalid_argument);
}

TEST_CASE("png reader inverts the writer up to quantization") {
  Rng rng(19);
  Tensor rgb = Tensor::randn({13, 7, 3}, rng);
  clampInPlace(rgb, -1.0, 1.0);
  const std::string path = "tmp_rt.png";
  writePng(path, rgb, -1.0, 1.0);
  const Tensor back = readPng(path, -1.0, 1.0);
  REQUIRE(back.shape == rgb.shape);
  // One byte resolves 2/255 of the range; recovery is exact on that lattice.
  const double step = 2.0 / 255.0;
  for (size_t i = 0; i < rgb.data.size(); ++i)
    CHECK(std::abs(back.data[i] - rgb.data[i]) <= 0.5 * step + 1e-12);
  writePng(path, back, -1.0, 1.0);
  const Tensor again = readPng(path, -1.0, 1.0);
  CHECK(tensorHash(again) == tensorHash(back));  // lattice points are fixed

  Tensor gray = Tensor::zeros({4, 6});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) gray.at(i, j) = (i * 6 + j) / 23.0;
  writePng(path, gray);
  const Tensor gback = readPng(path);
  REQUIRE(gback.shape == gray.shape);
  for (size_t i = 0; i < gray.data.size(); ++i)
    CHECK(std::abs(gback.data[i] - gray.data[i]) <= 0.5 / 255.0 + 1e-12);
  fs::remove(path);
}

TEST_CASE("png reader survives filtered rows and rejects damage") {
  // Hand-built 2x2 RGB PNG exercising filter types 1 (sub) and 2 (up).
  auto be32 = [](std::vector<unsigned char>& v, uint32_t x) {
    v.push_back((x >> 24) & 0xff);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back(x & 0xff);
  };
  // Raw scanlines: row0 sub-filtered, row1 up-filtered.
  // Reconstructed row0: (10,20,30) (15,25,35); row1: (12,22,32) (17,27,37).
  const std::vector<unsigned char> scan = {
      1, 10, 20, 30, 5, 5, 5,  // sub: second pixel stores deltas
      2, 2,  2,  2,  2, 2, 2,  // up: deltas against row0
  };
  uLongf csize = compressBound(static_cast<uLong>(scan.size()));
  std::vector<unsigned char> comp(csize);
  REQUIRE(compress2(comp.data(), &csize, scan.data(), static_cast<uLong>(scan.size()), 6) == Z_OK);
  comp.resize(csize);

  std::vector<unsigned char> png = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  auto chunk = [&](const char type[4], const std::vector<unsigned char>& payload) {
    be32(png, static_cast<uint32_t>(payload.size()));
    std::vector<unsigned char> body(type, type + 4);
    body.insert(body.end(), payload.begin(), payload.end());
    png.insert(png.end(), body.begin(), body.end());
    be32(png, static_cast<uint32_t>(crc32(0L, body.data(), static_cast<uInt>(body.size()))));
  };
  std::vector<unsigned char> ihdr;
  be32(ihdr, 2);
  be32(ihdr, 2);
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
  chunk("IHDR", ihdr);
  chunk("IDAT", comp);
  chunk("IEND", {});

  const std::string path = "tmp_filters.png";
  spit(path, std::vector<unsigned char>(png.begin(), png.end()));
  const Tensor img = readPng(path, 0.0, 255.0);
  REQUIRE(img.shape == std::vector<int>{2, 2, 3});
  CHECK(img.at(0, 0, 0) == 10.0);
  CHECK(img.at(0, 1, 1) == 25.0);
  CHECK(img.at(1, 0, 2) == 32.0);
  CHECK(img.at(1, 1, 0) == 17.0);

  // A flipped IDAT byte must fail the chunk checksum.
  std::vector<unsigned char> bad = png;
  bad[bad.size() - 20] ^= 0x10;
  spit(path, bad);
  CHECK_THROWS_AS(readPng(path), std::runtime_error);
  fs::remove(path);
  CHECK_THROWS_AS(readPng(path), std::runtime_error);
}

TEST_CASE("text helpers round trip contents") {
  const std::string path = "tmp_text.txt";
  const std::string content = "line one\nline two = 3.5\n";
  writeTextFile(path, content);
  CHECK(readTextFile(path) == content);
  fs::remove(path);
  CHECK_THROWS_AS(readTextFile(path), std::runtime_error);
}
