#include "agcrf/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>

namespace agcrf {
namespace fs = std::filesystem;

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get_le(const std::vector<unsigned char>& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  return v;
}

// Reads a whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(const std::vector<unsigned char>& b, std::size_t& pos) {
  for (;;) {
    while (pos < b.size() && std::isspace(b[pos])) ++pos;
    if (pos < b.size() && b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::string tok;
  while (pos < b.size() && !std::isspace(b[pos])) tok.push_back(static_cast<char>(b[pos++]));
  if (tok.empty()) throw IoError("pnm: truncated header");
  return tok;
}

int parse_positive(const std::string& tok) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v <= 0) throw IoError("pnm: invalid header value '" + tok + "'");
    return v;
  } catch (const std::logic_error&) {
    throw IoError("pnm: invalid header value '" + tok + "'");
  }
}

unsigned char to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

void write_pnm(const fs::path& path, const Tensor& t, int channels, const char* magic) {
  require_image(t, "write_pnm");
  if (t.channels() != channels) throw ShapeError(std::string("pnm: expected ") + std::to_string(channels) + " channels");
  const int h = t.height(), w = t.width();
  std::string header = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<unsigned char> bytes(header.begin(), header.end());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) bytes.push_back(to_byte(t.at(c, y, x)));
  write_file(path, bytes);
}

}  // namespace

std::vector<unsigned char> encode_agt(const Tensor& t) {
  std::vector<unsigned char> out = {'A', 'G', 'T', '1'};
  out.reserve(5 + 4 * t.rank() + 8 * t.size());
  out.push_back(static_cast<unsigned char>(t.rank()));
  for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.raw()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Tensor decode_agt(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 5 || !std::equal(bytes.begin(), bytes.begin() + 4, "AGT1"))
    throw IoError("agt: bad magic");
  const int rank = bytes[4];
  if (rank < 1 || rank > 4) throw IoError("agt: unsupported rank " + std::to_string(rank));
  if (bytes.size() < 5 + 4 * static_cast<std::size_t>(rank)) throw IoError("agt: truncated header");
  Shape shape;
  for (int i = 0; i < rank; ++i) {
    const auto d = get_le(bytes, 5 + 4 * i, 4);
    if (d == 0 || d > (1u << 30)) throw IoError("agt: invalid dimension");
    shape.push_back(static_cast<int>(d));
  }
  const std::size_t n = shape_numel(shape);
  const std::size_t offset = 5 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() != offset + 8 * n) throw IoError("agt: payload size mismatch");
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<double>(get_le(bytes, offset + 8 * i, 8));
  return Tensor(std::move(shape), std::move(data));
}

void write_agt(const fs::path& path, const Tensor& t) { write_file(path, encode_agt(t)); }

Tensor read_agt(const fs::path& path) { return decode_agt(read_file(path)); }

std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor decode_pnm(const std::vector<unsigned char>& bytes) {
  std::size_t pos = 0;
  const std::string magic = pnm_token(bytes, pos);
  int channels = 0;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else throw IoError("pnm: bad magic '" + magic + "'");
  const int w = parse_positive(pnm_token(bytes, pos));
  const int h = parse_positive(pnm_token(bytes, pos));
  const int maxval = parse_positive(pnm_token(bytes, pos));
  if (maxval != 255) throw IoError("pnm: only maxval 255 is supported");
  ++pos;  // single whitespace byte before the raster
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  if (bytes.size() < pos + need) throw IoError("pnm: truncated raster");
  Tensor t({channels, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) t.at(c, y, x) = bytes[pos++] / 255.0;
  return t;
}

void write_pgm(const fs::path& path, const Tensor& gray) { write_pnm(path, gray, 1, "P5"); }
void write_ppm(const fs::path& path, const Tensor& rgb) { write_pnm(path, rgb, 3, "P6"); }

Tensor read_pgm(const fs::path& path) {
  Tensor t = decode_pnm(read_file(path));
  if (t.channels() != 1) throw IoError("pgm: " + path.string() + " is not a P5 file");
  return t;
}

Tensor read_ppm(const fs::path& path) {
  Tensor t = decode_pnm(read_file(path));
  if (t.channels() != 3) throw IoError("ppm: " + path.string() + " is not a P6 file");
  return t;
}

std::string format_double(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

Tensor normalize_for_display(const Tensor& map) {
  Tensor out = map;
  if (out.empty()) return out;
  const auto [lo, hi] = std::minmax_element(out.raw().begin(), out.raw().end());
  const double a = *lo, b = *hi;
  for (double& v : out.raw()) v = b > a ? (v - a) / (b - a) : 0.0;
  return out;
}

void save_checkpoint(const fs::path& dir, const TensorMap& tensors) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  int index = 0;
  for (const auto& [name, t] : tensors) {
    if (name.empty() || name.find_first_of("\t\n") != std::string::npos)
      throw IoError("checkpoint: invalid tensor name '" + name + "'");
    char file[32];
    std::snprintf(file, sizeof file, "t%04d.agt", index++);
    write_agt(dir / file, t);
    manifest << name << '\t' << file << '\t' << shape_str(t.shape()) << '\n';
  }
  const std::string text = manifest.str();
  write_file(dir / "manifest.txt", std::vector<unsigned char>(text.begin(), text.end()));
}

TensorMap load_checkpoint(const fs::path& dir) {
  const auto bytes = read_file(dir / "manifest.txt");
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  TensorMap out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw IoError("checkpoint manifest line " + std::to_string(lineno) + " is malformed");
    const std::string name = line.substr(0, t1);
    const std::string file = line.substr(t1 + 1, t2 - t1 - 1);
    Tensor t = read_agt(dir / file);
    if (shape_str(t.shape()) != line.substr(t2 + 1))
      throw IoError("checkpoint: shape of " + name + " does not match manifest");
    out.emplace(name, std::move(t));
  }
  return out;
}

}  // namespace agcrf
