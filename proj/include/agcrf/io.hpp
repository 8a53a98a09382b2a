#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "agcrf/tensor.hpp"

namespace agcrf {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// AGT1 layout: "AGT1", u8 rank, rank x u32 LE dims, f64 LE payload (row-major).
std::vector<unsigned char> encode_agt(const Tensor& t);
Tensor decode_agt(const std::vector<unsigned char>& bytes);
void write_agt(const std::filesystem::path& path, const Tensor& t);
Tensor read_agt(const std::filesystem::path& path);

/// Binary PGM (P5), maxval 255. Values in [0, 1] are rounded to bytes.
void write_pgm(const std::filesystem::path& path, const Tensor& gray);
/// Returns [1, H, W] with values byte / 255.
Tensor read_pgm(const std::filesystem::path& path);
/// Binary PPM (P6) from a [3, H, W] tensor.
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);
/// Returns [3, H, W].
Tensor read_ppm(const std::filesystem::path& path);
/// Parses P5/P6 bytes; exposed for tests.
Tensor decode_pnm(const std::vector<unsigned char>& bytes);

/// Shortest decimal text that reads back to exactly `x`.
std::string format_double(double x);

/// Min-max normalizes a [1, H, W] map for display; constant maps become 0.
Tensor normalize_for_display(const Tensor& map);

std::vector<unsigned char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);

/// Named tensors in insertion-independent (sorted) order.
using TensorMap = std::map<std::string, Tensor>;

/// Writes `<dir>/manifest.txt` ("name<TAB>file<TAB>shape" per line) plus one AGT1
/// file per tensor. Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& dir, const TensorMap& tensors);
TensorMap load_checkpoint(const std::filesystem::path& dir);

}  // namespace agcrf
