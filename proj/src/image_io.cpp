// SPDX-License-Identifier: Apache-2.0
#include "gscnn/image_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gscnn {

namespace {

[[noreturn]] void parse_error(const std::string& path, std::istream& in,
                              const std::string& what) {
  auto off = in.tellg();
  std::ostringstream os;
  os << path << ": " << what << " (byte offset "
     << (off == std::streampos(-1) ? -1 : long(off)) << ")";
  throw std::runtime_error(os.str());
}

// Reads one whitespace/comment-delimited header token.
std::string next_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(char(c));
  }
  if (tok.empty()) parse_error(path, in, "unexpected end of header");
  return tok;
}

struct PnmHeader {
  int w, h, maxval;
};

PnmHeader read_header(std::istream& in, const std::string& path, const char* magic) {
  std::string m = next_token(in, path);
  if (m != magic)
    parse_error(path, in, "expected magic '" + std::string(magic) + "', got '" + m + "'");
  PnmHeader hd{};
  try {
    hd.w = std::stoi(next_token(in, path));
    hd.h = std::stoi(next_token(in, path));
    hd.maxval = std::stoi(next_token(in, path));
  } catch (const std::exception&) {
    parse_error(path, in, "malformed header field");
  }
  if (hd.w <= 0 || hd.h <= 0 || hd.maxval != 255)
    parse_error(path, in, "unsupported dimensions or maxval");
  return hd;
}

uint8_t to_byte(float v) {
  float x = v * 255.0f + 0.5f;
  return uint8_t(std::clamp(x, 0.0f, 255.0f));
}

}  // namespace

void write_pgm(const std::string& path, const LabelMap& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "P5\n" << m.w << " " << m.h << "\n255\n";
  std::vector<uint8_t> row(m.w);
  for (int y = 0; y < m.h; ++y) {
    for (int x = 0; x < m.w; ++x) {
      int v = m.at(y, x);
      if (v < 0 || v > 255)
        throw std::invalid_argument("write_pgm: label " + std::to_string(v) +
                                    " outside [0,255]");
      row[x] = uint8_t(v);
    }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

LabelMap read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  auto hd = read_header(in, path, "P5");
  LabelMap m(hd.h, hd.w);
  std::vector<uint8_t> row(hd.w);
  for (int y = 0; y < hd.h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), row.size());
    if (!in) parse_error(path, in, "truncated pixel data");
    for (int x = 0; x < hd.w; ++x) m.at(y, x) = row[x];
  }
  return m;
}

void write_ppm(const std::string& path, const Tensor& image) {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != 3)
    throw std::invalid_argument("write_ppm: need 3×H×W, got " + shape_str(s));
  int H = s[1], W = s[2];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "P6\n" << W << " " << H << "\n255\n";
  const auto& d = image.data();
  std::vector<uint8_t> row(size_t(W) * 3);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        row[size_t(x) * 3 + c] = to_byte(d[(size_t(c) * H + y) * W + x]);
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  auto hd = read_header(in, path, "P6");
  auto t = Tensor::zeros(Shape{3, hd.h, hd.w});
  auto& d = t.data();
  std::vector<uint8_t> row(size_t(hd.w) * 3);
  for (int y = 0; y < hd.h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), row.size());
    if (!in) parse_error(path, in, "truncated pixel data");
    for (int x = 0; x < hd.w; ++x)
      for (int c = 0; c < 3; ++c)
        d[(size_t(c) * hd.h + y) * hd.w + x] = row[size_t(x) * 3 + c] / 255.0f;
  }
  return t;
}

void write_gray_pgm(const std::string& path, const Tensor& map) {
  const Shape& s = map.shape();
  if (s.size() != 3 || s[0] != 1)
    throw std::invalid_argument("write_gray_pgm: need 1×H×W, got " + shape_str(s));
  LabelMap m(s[1], s[2]);
  const auto& d = map.data();
  for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = to_byte(d[i]);
  write_pgm(path, m);
}

}  // namespace gscnn
