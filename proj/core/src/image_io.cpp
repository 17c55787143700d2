#include "defdiff/image_io.h"

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "defdiff/check.h"

namespace defdiff {

namespace {

void appendU32BE(std::string& s, uint32_t v) {
  s.push_back(static_cast<char>((v >> 24) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>(v & 0xff));
}

void appendChunk(std::string& out, const char type[4], const std::string& payload) {
  appendU32BE(out, static_cast<uint32_t>(payload.size()));
  std::string body(type, 4);
  body += payload;
  out += body;
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
  appendU32BE(out, crc);
}

template <typename T>
void appendLE(std::string& s, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  s.append(buf, sizeof(T));
}

template <typename T>
T readLE(std::istream& in) {
  char buf[sizeof(T)];
  in.read(buf, sizeof(T));
  DD_CHECK(in.good(), "unexpected end of file");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void writePng(const std::string& path, const Tensor& img, double lo, double hi) {
  DD_CHECK_ARG(img.rank() == 2 || (img.rank() == 3 && img.dim(2) == 3),
               "expected (H,W) or (H,W,3), got " << img.shapeStr());
  DD_CHECK_ARG(hi > lo, "invalid value range");
  const int H = img.dim(0), W = img.dim(1);
  const int channels = img.rank() == 2 ? 1 : 3;
  const double scale = 255.0 / (hi - lo);

  // Raw scanlines, filter byte 0 per row.
  std::string raw;
  raw.reserve(static_cast<size_t>(H) * (1 + static_cast<size_t>(W) * channels));
  for (int i = 0; i < H; ++i) {
    raw.push_back('\0');
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < channels; ++c) {
        const double v = channels == 1 ? img.at(i, j) : img.at(i, j, c);
        const double m = std::clamp((v - lo) * scale, 0.0, 255.0);
        raw.push_back(static_cast<char>(static_cast<int>(std::lround(m))));
      }
  }

  uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
  std::string compressed(comp_size, '\0');
  const int rc = compress2(reinterpret_cast<Bytef*>(compressed.data()), &comp_size,
                           reinterpret_cast<const Bytef*>(raw.data()),
                           static_cast<uLong>(raw.size()), 6);
  DD_CHECK(rc == Z_OK, "zlib compression failed, code " << rc);
  compressed.resize(comp_size);

  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  appendU32BE(ihdr, static_cast<uint32_t>(W));
  appendU32BE(ihdr, static_cast<uint32_t>(H));
  ihdr.push_back(8);                                   // bit depth
  ihdr.push_back(channels == 1 ? '\0' : '\x02');       // gray / truecolor
  ihdr.push_back('\0');                                // compression
  ihdr.push_back('\0');                                // filter
  ihdr.push_back('\0');                                // no interlace
  appendChunk(png, "IHDR", ihdr);
  appendChunk(png, "IDAT", compressed);
  appendChunk(png, "IEND", "");

  std::ofstream out(path, std::ios::binary);
  DD_CHECK(out.good(), "cannot open " << path << " for writing");
  out.write(png.data(), static_cast<std::streamsize>(png.size()));
  DD_CHECK(out.good(), "write failed for " << path);
}

namespace {

uint32_t readU32BE(const unsigned char* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

Tensor readPng(const std::string& path, double lo, double hi) {
  DD_CHECK_ARG(hi > lo, "invalid value range");
  std::ifstream in(path, std::ios::binary);
  DD_CHECK(in.good(), "cannot open " << path);
  std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const unsigned char* data = reinterpret_cast<const unsigned char*>(file.data());
  DD_CHECK(file.size() >= 8 && std::memcmp(data, "\x89PNG\r\n\x1a\n", 8) == 0,
           "not a PNG file: " << path);

  int W = 0, H = 0, channels = 0;
  bool saw_ihdr = false, saw_iend = false;
  std::string idat;
  size_t off = 8;
  while (off + 12 <= file.size()) {
    const uint32_t len = readU32BE(data + off);
    DD_CHECK(off + 12 + len <= file.size(), "truncated chunk in " << path);
    const char* type = file.data() + off + 4;
    const uint32_t stored = readU32BE(data + off + 8 + len);
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, data + off + 4, static_cast<uInt>(4 + len)));
    DD_CHECK(crc == stored, "chunk checksum mismatch in " << path);
    if (std::memcmp(type, "IHDR", 4) == 0) {
      DD_CHECK(len == 13, "malformed IHDR in " << path);
      const unsigned char* p = data + off + 8;
      W = static_cast<int>(readU32BE(p));
      H = static_cast<int>(readU32BE(p + 4));
      DD_CHECK(p[8] == 8, "only 8-bit PNGs are supported: " << path);
      DD_CHECK(p[9] == 0 || p[9] == 2, "only grayscale/truecolor PNGs are supported: " << path);
      channels = p[9] == 0 ? 1 : 3;
      DD_CHECK(p[12] == 0, "interlaced PNGs are not supported: " << path);
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.append(file, off + 8, len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
      break;
    }
    off += 12 + len;
  }
  DD_CHECK(saw_ihdr && saw_iend && !idat.empty(), "incomplete PNG: " << path);
  DD_CHECK(W > 0 && H > 0, "empty PNG: " << path);

  const size_t stride = 1 + static_cast<size_t>(W) * channels;
  std::string raw(static_cast<size_t>(H) * stride, '\0');
  uLongf raw_size = static_cast<uLongf>(raw.size());
  const int rc = uncompress(reinterpret_cast<Bytef*>(raw.data()), &raw_size,
                            reinterpret_cast<const Bytef*>(idat.data()),
                            static_cast<uLong>(idat.size()));
  DD_CHECK(rc == Z_OK && raw_size == raw.size(),
           "PNG pixel data does not match its dimensions: " << path);

  // Undo per-row filtering in place; `recon` addresses reconstructed bytes.
  auto* rowbytes = reinterpret_cast<unsigned char*>(raw.data());
  const int bpp = channels;
  for (int i = 0; i < H; ++i) {
    unsigned char* row = rowbytes + static_cast<size_t>(i) * stride;
    const unsigned char filter = row[0];
    unsigned char* cur = row + 1;
    const unsigned char* up = i > 0 ? rowbytes + static_cast<size_t>(i - 1) * stride + 1 : nullptr;
    DD_CHECK(filter <= 4, "unknown PNG filter " << int(filter) << " in " << path);
    for (int x = 0; x < W * channels; ++x) {
      const int a = x >= bpp ? cur[x - bpp] : 0;
      const int b = up ? up[x] : 0;
      const int c = (up && x >= bpp) ? up[x - bpp] : 0;
      int v = cur[x];
      switch (filter) {
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: break;
      }
      cur[x] = static_cast<unsigned char>(v & 0xff);
    }
  }

  Tensor img = channels == 1 ? Tensor::zeros({H, W}) : Tensor::zeros({H, W, 3});
  const double scale = (hi - lo) / 255.0;
  for (int i = 0; i < H; ++i) {
    const unsigned char* cur = rowbytes + static_cast<size_t>(i) * stride + 1;
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < channels; ++c) {
        const double v = lo + scale * cur[j * channels + c];
        if (channels == 1)
          img.at(i, j) = v;
        else
          img.at(i, j, c) = v;
      }
  }
  return img;
}

std::string serializeTensors(const std::map<std::string, Tensor>& tensors) {
  std::string body;
  appendLE<uint32_t>(body, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    appendLE<uint32_t>(body, static_cast<uint32_t>(name.size()));
    body += name;
    appendLE<uint32_t>(body, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape) appendLE<uint32_t>(body, static_cast<uint32_t>(d));
    const size_t bytes = t.data.size() * sizeof(double);
    body.append(reinterpret_cast<const char*>(t.data.data()), bytes);
  }
  return body;
}

std::map<std::string, Tensor> deserializeTensors(const std::string& body,
                                                 const std::string& context) {
  std::istringstream stream(body);
  const uint32_t count = readLE<uint32_t>(stream);
  std::map<std::string, Tensor> out;
  for (uint32_t k = 0; k < count; ++k) {
    const uint32_t name_len = readLE<uint32_t>(stream);
    DD_CHECK(name_len < 4096, "implausible name length in " << context);
    std::string name(name_len, '\0');
    stream.read(name.data(), name_len);
    const uint32_t rank = readLE<uint32_t>(stream);
    DD_CHECK(rank >= 1 && rank <= 8, "implausible rank in " << context);
    std::vector<int> shape(rank);
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int>(readLE<uint32_t>(stream));
      numel *= shape[d];
    }
    Tensor t;
    t.shape = std::move(shape);
    t.data.resize(static_cast<size_t>(numel));
    stream.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    DD_CHECK(stream.good(), "truncated tensor data in " << context);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

void writeTensorFile(const std::string& path, const std::map<std::string, Tensor>& tensors) {
  const std::string body = serializeTensors(tensors);
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));

  std::ofstream out(path, std::ios::binary);
  DD_CHECK(out.good(), "cannot open " << path << " for writing");
  out.write("DFATENS0", 8);
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  char crcbuf[4];
  std::memcpy(crcbuf, &crc, 4);
  out.write(crcbuf, 4);
  DD_CHECK(out.good(), "write failed for " << path);
}

std::map<std::string, Tensor> readTensorFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  DD_CHECK(in.good(), "cannot open " << path);
  char magic[8];
  in.read(magic, 8);
  DD_CHECK(in.good() && std::memcmp(magic, "DFATENS0", 8) == 0,
           "not a tensor container: " << path);

  std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  DD_CHECK(body.size() >= 8, "truncated tensor container: " << path);
  uint32_t stored_crc;
  std::memcpy(&stored_crc, body.data() + body.size() - 4, 4);
  body.resize(body.size() - 4);
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
  DD_CHECK(crc == stored_crc, "checksum mismatch in " << path);
  return deserializeTensors(body, path);
}

void writeTextFile(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  DD_CHECK(out.good(), "cannot open " << path << " for writing");
  out << content;
  DD_CHECK(out.good(), "write failed for " << path);
}

std::string readTextFile(const std::string& path) {
  std::ifstream in(path);
  DD_CHECK(in.good(), "cannot open " << path);
  std::ostringstream oss;
  oss << in.rdbuf();
  return oss.str();
}

}  // namespace defdiff
