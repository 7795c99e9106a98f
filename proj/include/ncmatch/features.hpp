#ifndef NCMATCH_FEATURES_HPP_
#define NCMATCH_FEATURES_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ncmatch/errors.hpp"

namespace ncmatch {

/// Dense grid of d-dimensional descriptors over an h x w feature grid,
/// together with the source image dimensions in pixels.
/// Layout: data[(i*w + j)*d + c].
struct FeatureMap {
  int h = 0, w = 0, d = 0;
  int image_h = 0, image_w = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int h_, int w_, int d_, int image_h_, int image_w_)
      : h(h_), w(w_), d(d_), image_h(image_h_), image_w(image_w_) {
    if (h < 1 || w < 1 || d < 1)
      throw std::invalid_argument("FeatureMap: h, w, d must be >= 1");
    if (image_h < h || image_w < w)
      throw std::invalid_argument("FeatureMap: image dims must cover the grid");
    data.assign(static_cast<size_t>(h) * w * d, 0.f);
  }

  float* cell(int i, int j) { return &data[(static_cast<size_t>(i) * w + j) * d]; }
  const float* cell(int i, int j) const {
    return &data[(static_cast<size_t>(i) * w + j) * d];
  }

  /// Pixel-center coordinates (x, y) of grid cell (i, j).
  std::array<float, 2> cell_center(int i, int j) const {
    return {(j + 0.5f) * image_w / w, (i + 0.5f) * image_h / h};
  }
};

/// One weakly labelled training pair. ground_truth lists grid-index
/// correspondences ((i,j),(k,l)) and is used for evaluation only.
struct TrainSample {
  FeatureMap fa, fb;
  int label = +1;  // +1 or -1
  std::vector<std::array<int, 4>> ground_truth;
};

/// Divides every descriptor by its L2 norm; zero descriptors pass
/// through unchanged.
inline FeatureMap normalize(const FeatureMap& f) {
  FeatureMap out = f;
  for (int i = 0; i < f.h; ++i)
    for (int j = 0; j < f.w; ++j) {
      float* v = out.cell(i, j);
      double n2 = 0;
      for (int c = 0; c < f.d; ++c) n2 += static_cast<double>(v[c]) * v[c];
      const double n = std::sqrt(n2);
      if (n > 1e-12)
        for (int c = 0; c < f.d; ++c) v[c] = static_cast<float>(v[c] / n);
    }
  return out;
}

/// Single-channel grayscale image.
struct GrayImage {
  int h = 0, w = 0;
  std::vector<float> pixels;  // row-major, h*w

  float at(int y, int x) const { return pixels[static_cast<size_t>(y) * w + x]; }
};

/// Trivial patch descriptor: per grid cell, the flattened patch x patch
/// intensity window centered on the cell (zero-padded at borders),
/// mean-subtracted then L2-normalized. Stands in for a learned backbone.
inline FeatureMap patch_descriptor(const GrayImage& image, int stride, int patch) {
  if (patch % 2 == 0) throw std::invalid_argument("patch_descriptor: patch size must be odd");
  if (image.h < patch || image.w < patch)
    throw std::invalid_argument("patch_descriptor: image smaller than patch");
  const int gh = image.h / stride;
  const int gw = image.w / stride;
  if (gh < 1 || gw < 1)
    throw std::invalid_argument("patch_descriptor: stride too large for image");
  FeatureMap f(gh, gw, patch * patch, image.h, image.w);
  const int r = patch / 2;
  for (int i = 0; i < gh; ++i)
    for (int j = 0; j < gw; ++j) {
      const int cy = i * stride + stride / 2;
      const int cx = j * stride + stride / 2;
      float* v = f.cell(i, j);
      double mean = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int y = cy + dy, x = cx + dx;
          const float px = (y >= 0 && y < image.h && x >= 0 && x < image.w)
                               ? image.at(y, x)
                               : 0.f;
          v[(dy + r) * patch + (dx + r)] = px;
          mean += px;
        }
      mean /= patch * patch;
      double n2 = 0;
      for (int c = 0; c < patch * patch; ++c) {
        v[c] -= static_cast<float>(mean);
        n2 += static_cast<double>(v[c]) * v[c];
      }
      const double n = std::sqrt(n2);
      if (n > 1e-12)
        for (int c = 0; c < patch * patch; ++c) v[c] = static_cast<float>(v[c] / n);
      else
        std::memset(v, 0, sizeof(float) * patch * patch);
    }
  return f;
}

namespace detail {

inline void fill_unit_random(float* v, int d, std::mt19937& rng) {
  std::normal_distribution<float> gauss(0.f, 1.f);
  double n2 = 0;
  for (int c = 0; c < d; ++c) {
    v[c] = gauss(rng);
    n2 += static_cast<double>(v[c]) * v[c];
  }
  const double n = std::sqrt(n2);
  if (n > 1e-12)
    for (int c = 0; c < d; ++c) v[c] = static_cast<float>(v[c] / n);
}

inline FeatureMap random_base_map(int h, int w, int d, std::mt19937& rng,
                                  std::optional<int> repetition_period) {
  FeatureMap f(h, w, d, h * 8, w * 8);
  if (repetition_period) {
    const int p = *repetition_period;
    if (p < 1) throw std::invalid_argument("synth_pair: repetition_period must be >= 1");
    std::vector<float> block(static_cast<size_t>(p) * p * d);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j)
        fill_unit_random(&block[(static_cast<size_t>(i) * p + j) * d], d, rng);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        std::memcpy(f.cell(i, j), &block[(static_cast<size_t>(i % p) * p + j % p) * d],
                    sizeof(float) * d);
  } else {
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) fill_unit_random(f.cell(i, j), d, rng);
  }
  return f;
}

inline void add_noise_and_renormalize(FeatureMap& f, float sigma, std::mt19937& rng) {
  if (sigma > 0.f) {
    std::normal_distribution<float> gauss(0.f, sigma);
    for (float& v : f.data) v += gauss(rng);
  }
  f = normalize(f);
}

}  // namespace detail

/// Generates a positive training pair: fb is fa translated by
/// (dy, dx) grid cells with out-of-frame cells refilled randomly, then
/// both maps get additive Gaussian noise and renormalization.
/// Ground truth holds all in-frame pairs ((i,j),(i+dy,j+dx)).
inline TrainSample synth_pair(uint32_t seed, int h, int w, int d, int dy, int dx,
                              float noise_sigma,
                              std::optional<int> repetition_period = std::nullopt) {
  if (std::abs(dy) >= h || std::abs(dx) >= w)
    throw std::invalid_argument("synth_pair: shift out of range for grid");
  std::mt19937 rng(seed);
  TrainSample s;
  s.label = +1;
  FeatureMap base = detail::random_base_map(h, w, d, rng, repetition_period);
  s.fa = base;
  s.fb = FeatureMap(h, w, d, h * 8, w * 8);
  for (int k = 0; k < h; ++k)
    for (int l = 0; l < w; ++l) {
      const int i = k - dy, j = l - dx;
      if (i >= 0 && i < h && j >= 0 && j < w)
        std::memcpy(s.fb.cell(k, l), base.cell(i, j), sizeof(float) * d);
      else
        detail::fill_unit_random(s.fb.cell(k, l), d, rng);
    }
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const int k = i + dy, l = j + dx;
      if (k >= 0 && k < h && l >= 0 && l < w) s.ground_truth.push_back({i, j, k, l});
    }
  detail::add_noise_and_renormalize(s.fa, noise_sigma, rng);
  detail::add_noise_and_renormalize(s.fb, noise_sigma, rng);
  return s;
}

/// Generates a negative pair from two independent seeds; no ground truth.
inline TrainSample synth_negative(uint32_t seed_a, uint32_t seed_b, int h, int w,
                                  int d, float noise_sigma,
                                  std::optional<int> repetition_period = std::nullopt) {
  std::mt19937 rng_a(seed_a), rng_b(seed_b);
  TrainSample s;
  s.label = -1;
  s.fa = detail::random_base_map(h, w, d, rng_a, repetition_period);
  s.fb = detail::random_base_map(h, w, d, rng_b, repetition_period);
  detail::add_noise_and_renormalize(s.fa, noise_sigma, rng_a);
  detail::add_noise_and_renormalize(s.fb, noise_sigma, rng_b);
  return s;
}

// ---------------------------------------------------------------------------
// NCF1 feature-map file format:
//   4 ASCII magic bytes "NCF1",
//   little-endian u32 h, w, d, image_h, image_w,
//   h*w*d little-endian f32 in [i][j][channel] order.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw TruncatedFileError(std::string("truncated file while reading ") + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32_array(std::ostream& os, const std::vector<float>& v) {
  // Little-endian host assumed; static_assert guards the float layout.
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * 4));
}

inline void read_f32_array(std::istream& is, std::vector<float>& v, const char* what) {
  if (!is.read(reinterpret_cast<char*>(v.data()),
               static_cast<std::streamsize>(v.size() * 4)))
    throw TruncatedFileError(std::string("truncated file while reading ") + what);
}

}  // namespace detail

inline void write_features(const FeatureMap& f, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.write("NCF1", 4);
  detail::write_u32(os, static_cast<uint32_t>(f.h));
  detail::write_u32(os, static_cast<uint32_t>(f.w));
  detail::write_u32(os, static_cast<uint32_t>(f.d));
  detail::write_u32(os, static_cast<uint32_t>(f.image_h));
  detail::write_u32(os, static_cast<uint32_t>(f.image_w));
  detail::write_f32_array(os, f.data);
  if (!os) throw DataError("write failed: " + path);
}

inline FeatureMap read_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4)) throw TruncatedFileError("truncated file: " + path);
  if (std::memcmp(magic, "NCF1", 4) != 0)
    throw BadMagicError("bad magic in feature file: " + path);
  const uint32_t h = detail::read_u32(is, "h");
  const uint32_t w = detail::read_u32(is, "w");
  const uint32_t d = detail::read_u32(is, "d");
  const uint32_t ih = detail::read_u32(is, "image_h");
  const uint32_t iw = detail::read_u32(is, "image_w");
  constexpr uint64_t kMaxElems = 1ull << 31;
  if (h == 0 || w == 0 || d == 0 ||
      static_cast<uint64_t>(h) * w * d > kMaxElems)
    throw DimensionError("feature file dimensions invalid or too large: " + path);
  if (ih < h || iw < w)
    throw DimensionError("feature file image dims smaller than grid: " + path);
  FeatureMap f(static_cast<int>(h), static_cast<int>(w), static_cast<int>(d),
               static_cast<int>(ih), static_cast<int>(iw));
  detail::read_f32_array(is, f.data, "feature payload");
  return f;
}

/// Reads a binary 8-bit PGM (P5) image.
inline GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5") throw BadMagicError("not a binary PGM (P5): " + path);
  auto next_token = [&is, &path]() {
    std::string tok;
    while (is >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      return tok;
    }
    throw TruncatedFileError("truncated PGM header: " + path);
  };
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (w < 1 || h < 1) throw DimensionError("PGM dimensions invalid: " + path);
  if (maxval <= 0 || maxval > 255) throw DataError("PGM maxval not 8-bit: " + path);
  is.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<size_t>(h) * w);
  if (!is.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(raw.size())))
    throw TruncatedFileError("truncated PGM payload: " + path);
  GrayImage img;
  img.h = h;
  img.w = w;
  img.pixels.resize(raw.size());
  for (size_t i = 0; i < raw.size(); ++i)
    img.pixels[i] = raw[i] / static_cast<float>(maxval);
  return img;
}

}  // namespace ncmatch

#endif  // NCMATCH_FEATURES_HPP_
