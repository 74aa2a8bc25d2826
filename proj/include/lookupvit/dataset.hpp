#pragma once

// Procedural image-classification data and the "LVDS" container.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "lookupvit/io.hpp"
#include "lookupvit/optim.hpp"

namespace lookupvit {

struct Dataset {
  std::uint32_t classes = 0;
  std::uint32_t height = 0, width = 0, channels = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint8_t> pixels;  // count x height x width x channels
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_bytes() const { return std::size_t{height} * width * channels; }
  const std::uint8_t* image(std::size_t i) const { return pixels.data() + i * image_bytes(); }
};

namespace dataset_detail {

enum class Pattern { hbars, vbars, checker, blob, cross, diagonal };
inline constexpr Pattern kPatterns[] = {Pattern::hbars, Pattern::vbars, Pattern::checker,
                                        Pattern::blob,  Pattern::cross, Pattern::diagonal};

/// Intensity in [0, 1] of pattern `pat` at pixel (y, x) for one random draw.
struct PatternDraw {
  Pattern pat;
  double period;
  double phase_y, phase_x;
  double cy, cx, radius;

  double at(double y, double x) const {
    auto square = [](double t) { return std::fmod(std::fmod(t, 1.0) + 1.0, 1.0) < 0.5 ? 1.0 : 0.0; };
    switch (pat) {
      case Pattern::hbars: return square((y + phase_y) / period);
      case Pattern::vbars: return square((x + phase_x) / period);
      case Pattern::checker:
        return square((y + phase_y) / period) == square((x + phase_x) / period) ? 1.0 : 0.0;
      case Pattern::blob: {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        return std::exp(-d2 / (2.0 * radius * radius));
      }
      case Pattern::cross:
        return (std::abs(y - cy) < radius * 0.5 || std::abs(x - cx) < radius * 0.5) ? 1.0 : 0.0;
      case Pattern::diagonal: return square((x + y + phase_x) / (period * std::numbers::sqrt2));
    }
    return 0.0;
  }
};

}  // namespace dataset_detail

/// Balanced, shuffled, deterministic dataset of class-distinctive patterns plus noise.
/// Class k uses pattern family k mod 6 with a period that grows with k / 6, and a
/// mild per-class color tint.
inline Dataset gen_synthetic(std::uint32_t classes, std::size_t n, std::uint32_t size,
                             std::uint64_t seed, std::uint32_t channels = 3) {
  using namespace dataset_detail;
  if (classes < 2) throw ConfigError("gen_synthetic needs at least 2 classes");
  if (n < classes) throw ConfigError("gen_synthetic needs n >= classes");
  if (size < 4) throw ConfigError("gen_synthetic needs images of at least 4x4");
  if (channels < 1) throw ConfigError("gen_synthetic needs at least one channel");

  Dataset ds;
  ds.classes = classes;
  ds.height = ds.width = size;
  ds.channels = channels;
  ds.seed = seed;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<std::uint32_t>(i % classes);
  Rng rng(seed);
  std::shuffle(ds.labels.begin(), ds.labels.end(), rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.08);
  const double s = size;
  ds.pixels.resize(n * ds.image_bytes());
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t k = ds.labels[i];
    PatternDraw d;
    d.pat = kPatterns[k % 6];
    d.period = s / 4.0 * (1.0 + 0.5 * static_cast<double>(k / 6));
    d.phase_y = unit(rng) * d.period;
    d.phase_x = unit(rng) * d.period;
    d.cy = s * (0.3 + 0.4 * unit(rng));
    d.cx = s * (0.3 + 0.4 * unit(rng));
    d.radius = s * (0.15 + 0.1 * unit(rng));
    const double contrast = 0.6 + 0.3 * unit(rng);
    const double base = 0.2 * unit(rng);
    std::uint8_t* img = ds.pixels.data() + i * ds.image_bytes();
    for (std::uint32_t y = 0; y < size; ++y) {
      for (std::uint32_t x = 0; x < size; ++x) {
        const double v = base + contrast * d.at(y + 0.5, x + 0.5);
        for (std::uint32_t c = 0; c < channels; ++c) {
          const double tint = (c == k % channels) ? 0.1 : 0.0;
          const double px = std::clamp(v + tint + noise(rng), 0.0, 1.0);
          img[(std::size_t{y} * size + x) * channels + c] = static_cast<std::uint8_t>(std::lround(px * 255.0));
        }
      }
    }
  }
  return ds;
}

inline constexpr char kDatasetMagic[4] = {'L', 'V', 'D', 'S'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline io::Bytes serialize_dataset(const Dataset& ds) {
  io::Writer w;
  w.raw(std::string_view(kDatasetMagic, 4));
  w.uint(kDatasetVersion);
  w.uint(ds.classes);
  w.uint(static_cast<std::uint64_t>(ds.size()));
  w.uint(ds.height);
  w.uint(ds.width);
  w.uint(ds.channels);
  w.uint(ds.seed);
  w.bytes().insert(w.bytes().end(), ds.pixels.begin(), ds.pixels.end());
  for (auto l : ds.labels) w.uint(l);
  return std::move(w.bytes());
}

inline Dataset deserialize_dataset(const io::Bytes& bytes) {
  io::Reader r(bytes.data(), bytes.size(), "dataset");
  if (r.raw(4) != std::string_view(kDatasetMagic, 4)) throw FormatError("not a dataset (bad magic)");
  const auto version = r.uint<std::uint32_t>();
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version));
  Dataset ds;
  ds.classes = r.uint<std::uint32_t>();
  const auto count = r.uint<std::uint64_t>();
  ds.height = r.uint<std::uint32_t>();
  ds.width = r.uint<std::uint32_t>();
  ds.channels = r.uint<std::uint32_t>();
  ds.seed = r.uint<std::uint64_t>();
  if (ds.classes < 2 || ds.height == 0 || ds.width == 0 || ds.channels == 0) {
    throw FormatError("dataset header has a zero extent or fewer than 2 classes");
  }
  const std::size_t px = static_cast<std::size_t>(count) * ds.image_bytes();
  if (r.remaining() != px + count * 4) throw FormatError("dataset size does not match its header");
  ds.pixels.assign(r.cursor(), r.cursor() + px);
  r.skip(px);
  ds.labels.resize(count);
  for (auto& l : ds.labels) {
    l = r.uint<std::uint32_t>();
    if (l >= ds.classes) throw FormatError("dataset label " + std::to_string(l) + " out of range");
  }
  return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  io::write_file_atomic(path, serialize_dataset(ds));
}

inline Dataset load_dataset(const std::string& path) { return deserialize_dataset(io::read_file(path)); }

/// Pixel i as a [h x w x c] tensor scaled to [0, 1].
template <typename T>
Tensor<T> image_tensor(const Dataset& ds, std::size_t i) {
  Tensor<T> t({ds.height, ds.width, ds.channels});
  const std::uint8_t* img = ds.image(i);
  for (std::size_t j = 0; j < t.numel(); ++j) t[j] = static_cast<T>(img[j] / 255.0);
  return t;
}

template <typename T>
std::vector<Example<T>> to_examples(const Dataset& ds) {
  std::vector<Example<T>> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back({image_tensor<T>(ds, i), ds.labels[i]});
  return out;
}

/// Additive Gaussian corruption at `severity` in 1..5, sigma = 0.05 * severity.
inline double severity_sigma(int severity) {
  if (severity < 1 || severity > 5) throw ConfigError("noise severity must be in 1..5");
  return 0.05 * severity;
}

/// x + sigma * z with a caller-supplied standard-normal draw z, so every sigma reuses
/// the same noise direction.
template <typename T>
Tensor<T> add_noise(const Tensor<T>& x, const Tensor<T>& z, double sigma) {
  if (x.shape() != z.shape()) throw DimensionError("noise and image differ in shape");
  Tensor<T> out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(out[i] + sigma * z[i]);
  return out;
}

}  // namespace lookupvit
