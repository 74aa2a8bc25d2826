#pragma once

// ASCII PGM (P2) maps of cross-attention.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "lookupvit/lookup_block.hpp"

namespace lookupvit {

struct GrayImage {
  std::size_t height = 0, width = 0;
  std::vector<double> values;  // row-major

  double at(std::size_t y, std::size_t x) const { return values.at(y * width + x); }
};

/// Attention mass each lookup token receives, averaged over heads and compressed tokens,
/// laid out on the lookup grid (video frames stacked vertically).
template <typename T>
GrayImage attention_map(const Tensor<T>& a, const Grid& lookup) {
  if (a.rank() != 3 || a.dim(2) != lookup.count()) {
    throw DimensionError("attention " + shape_str(a.shape()) + " does not match lookup grid " +
                         lookup.str());
  }
  GrayImage img;
  img.height = lookup.frames * lookup.height;
  img.width = lookup.width;
  img.values.assign(lookup.count(), 0.0);
  const std::size_t rows = a.dim(0) * a.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = a.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) img.values[j] += row[j];
  }
  for (double& v : img.values) v /= static_cast<double>(rows);
  return img;
}

/// P2 text, min-max normalized to 0..255. A constant map is written as all zeros.
inline std::string write_pgm(const GrayImage& img) {
  if (img.values.size() != img.height * img.width || img.values.empty()) {
    throw DimensionError("PGM image has inconsistent extents");
  }
  const auto [lo, hi] = std::minmax_element(img.values.begin(), img.values.end());
  const double range = *hi - *lo;
  std::ostringstream os;
  os << "P2\n" << img.width << ' ' << img.height << "\n255\n";
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double v = range > 0 ? (img.at(y, x) - *lo) / range : 0.0;
      os << (x ? " " : "") << std::lround(v * 255.0);
    }
    os << '\n';
  }
  return os.str();
}

/// Parses P2 (comments allowed); values are returned divided by maxval.
inline GrayImage read_pgm(const std::string& text) {
  std::size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < text.size()) {
      if (std::isspace(static_cast<unsigned char>(text[pos]))) {
        ++pos;
      } else if (text[pos] == '#') {
        while (pos < text.size() && text[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) && text[pos] != '#') ++pos;
    if (start == pos) throw FormatError("PGM: unexpected end of data");
    return text.substr(start, pos - start);
  };
  auto number = [&](const char* what) {
    const std::string t = token();
    if (t.find_first_not_of("0123456789") != std::string::npos) {
      throw FormatError(std::string("PGM: malformed ") + what + " '" + t + "'");
    }
    return std::stoul(t);
  };
  if (token() != "P2") throw FormatError("PGM: expected P2 magic");
  GrayImage img;
  img.width = number("width");
  img.height = number("height");
  const unsigned long maxval = number("maxval");
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 65535) {
    throw FormatError("PGM: bad header");
  }
  img.values.resize(img.width * img.height);
  for (double& v : img.values) {
    const unsigned long p = number("pixel");
    if (p > maxval) throw FormatError("PGM: pixel exceeds maxval");
    v = static_cast<double>(p) / static_cast<double>(maxval);
  }
  return img;
}

}  // namespace lookupvit
