#pragma once

#include <map>
#include <string>
#include <vector>

#include "defdiff/tensor.h"

namespace defdiff {

// Writes an 8-bit PNG. The tensor is (H, W) grayscale or (H, W, 3) RGB with
// values in [lo, hi], linearly mapped to 0..255 and clamped.
void writePng(const std::string& path, const Tensor& img, double lo = 0.0, double hi = 1.0);

// Reads an 8-bit non-interlaced grayscale or truecolor PNG back into (H, W) or
// (H, W, 3), bytes mapped linearly to [lo, hi]. Handles all five scanline
// filters, so PNGs from other encoders load too; palette and 16-bit files are
// rejected.
Tensor readPng(const std::string& path, double lo = 0.0, double hi = 1.0);

// Binary container for named double tensors.
//
// Layout (little endian):
//   magic "DFATENS0" (8 bytes)
//   u32 tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u32 dims[rank],
//               f64 data[numel]
//   u32 CRC32 of everything after the magic
void writeTensorFile(const std::string& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> readTensorFile(const std::string& path);

// The container body without magic and checksum, for embedding tensor maps in
// other file formats (checkpoints).
std::string serializeTensors(const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> deserializeTensors(const std::string& body,
                                                 const std::string& context);

// Small text helpers used for metadata and reports.
void writeTextFile(const std::string& path, const std::string& content);
std::string readTextFile(const std::string& path);

}  // namespace defdiff
