#pragma once

#include <cstddef>
#include <string>

#include "lookupvit/errors.hpp"

namespace lookupvit {

/// Token grid extents. Images use frames == 1.
struct Grid {
  std::size_t frames = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t count() const noexcept { return frames * height * width; }
  bool is_video() const noexcept { return frames != 1; }

  /// True when every extent of *this is <= the matching extent of other.
  bool fits_within(const Grid& other) const noexcept {
    return frames <= other.frames && height <= other.height && width <= other.width;
  }

  std::string str() const {
    std::string s = std::to_string(height) + "x" + std::to_string(width);
    return is_video() ? std::to_string(frames) + "x" + s : s;
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

inline Grid image_grid(std::size_t h, std::size_t w) { return Grid{1, h, w}; }

/// Parses "HxW" or "TxHxW".
inline Grid parse_grid(const std::string& text) {
  std::size_t parts[3] = {0, 0, 0};
  std::size_t n = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t x = text.find('x', pos);
    const std::string tok = text.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
    if (tok.empty() || n == 3 || tok.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("malformed grid '" + text + "', expected HxW or TxHxW");
    }
    parts[n++] = std::stoul(tok);
    if (x == std::string::npos) break;
    pos = x + 1;
  }
  if (n < 2) throw ConfigError("malformed grid '" + text + "', expected HxW or TxHxW");
  Grid g = n == 2 ? Grid{1, parts[0], parts[1]} : Grid{parts[0], parts[1], parts[2]};
  if (g.count() == 0) throw ConfigError("grid '" + text + "' has a zero extent");
  return g;
}

}  // namespace lookupvit
