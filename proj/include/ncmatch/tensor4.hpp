#ifndef NCMATCH_TENSOR4_HPP_
#define NCMATCH_TENSOR4_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace ncmatch {

/// Dense multi-channel 4D tensor of 32-bit floats.
/// Layout is channel-major, then row-major over (d1,d2,d3,d4), so that
/// 3D slices along d1 are contiguous.
struct Tensor4 {
  int channels = 1;
  int d1 = 0, d2 = 0, d3 = 0, d4 = 0;
  std::vector<float> data;

  Tensor4() = default;
  Tensor4(int channels_, int d1_, int d2_, int d3_, int d4_, float fill = 0.f)
      : channels(channels_), d1(d1_), d2(d2_), d3(d3_), d4(d4_) {
    if (channels_ < 1 || d1_ < 1 || d2_ < 1 || d3_ < 1 || d4_ < 1)
      throw std::invalid_argument("Tensor4: all dimensions must be positive");
    data.assign(static_cast<size_t>(channels) * d1 * d2 * d3 * d4, fill);
  }

  size_t size() const { return data.size(); }
  size_t slice_size() const { return static_cast<size_t>(d1) * d2 * d3 * d4; }

  size_t index(int c, int i, int j, int k, int l) const {
    return ((((static_cast<size_t>(c) * d1 + i) * d2 + j) * d3 + k) * d4 + l);
  }
  float& at(int c, int i, int j, int k, int l) { return data[index(c, i, j, k, l)]; }
  float at(int c, int i, int j, int k, int l) const { return data[index(c, i, j, k, l)]; }

  bool same_shape(const Tensor4& o) const {
    return channels == o.channels && d1 == o.d1 && d2 == o.d2 && d3 == o.d3 &&
           d4 == o.d4;
  }
};

/// Which pair of spatial axes a reduction runs over: (d1,d2) or (d3,d4).
enum class AxisPair { First, Second };

inline Tensor4 relu(const Tensor4& t) {
  Tensor4 out = t;
  for (float& v : out.data) v = std::max(v, 0.f);
  return out;
}

struct PairReduction {
  // For AxisPair::First the values grid is indexed by (k,l) and has
  // dims (1,1,d3,d4); for Second it is indexed by (i,j) with dims
  // (d1,d2,1,1). argmax holds the reduced-pair indices per output cell,
  // in the same order as values.data.
  Tensor4 values;
  std::vector<std::array<int, 2>> argmax;
};

/// Max over one axis pair of a single-channel tensor.
/// Ties break to the lowest row-major linear index.
inline PairReduction max_over_pair(const Tensor4& t, AxisPair pair) {
  if (t.channels != 1)
    throw std::invalid_argument("max_over_pair: single-channel tensor required");
  PairReduction r;
  if (pair == AxisPair::First) {
    r.values = Tensor4(1, 1, 1, t.d3, t.d4);
    r.argmax.assign(static_cast<size_t>(t.d3) * t.d4, {0, 0});
    std::vector<float> best(static_cast<size_t>(t.d3) * t.d4,
                            -std::numeric_limits<float>::infinity());
    for (int i = 0; i < t.d1; ++i)
      for (int j = 0; j < t.d2; ++j) {
        const float* src = &t.data[t.index(0, i, j, 0, 0)];
        for (size_t kl = 0; kl < best.size(); ++kl) {
          if (src[kl] > best[kl]) {
            best[kl] = src[kl];
            r.argmax[kl] = {i, j};
          }
        }
      }
    std::copy(best.begin(), best.end(), r.values.data.begin());
  } else {
    r.values = Tensor4(1, t.d1, t.d2, 1, 1);
    r.argmax.assign(static_cast<size_t>(t.d1) * t.d2, {0, 0});
    const size_t slice = static_cast<size_t>(t.d3) * t.d4;
    for (int i = 0; i < t.d1; ++i)
      for (int j = 0; j < t.d2; ++j) {
        const float* src = &t.data[t.index(0, i, j, 0, 0)];
        float best = src[0];
        size_t arg = 0;
        for (size_t kl = 1; kl < slice; ++kl)
          if (src[kl] > best) {
            best = src[kl];
            arg = kl;
          }
        const size_t ij = static_cast<size_t>(i) * t.d2 + j;
        r.values.data[ij] = best;
        r.argmax[ij] = {static_cast<int>(arg / t.d4), static_cast<int>(arg % t.d4)};
      }
  }
  return r;
}

/// Softmax over one axis pair of a single-channel tensor, with per-slice
/// max subtraction before exponentiation.
inline Tensor4 softmax_over_pair(const Tensor4& t, AxisPair pair) {
  if (t.channels != 1)
    throw std::invalid_argument("softmax_over_pair: single-channel tensor required");
  Tensor4 out(1, t.d1, t.d2, t.d3, t.d4);
  const size_t slice = static_cast<size_t>(t.d3) * t.d4;
  if (pair == AxisPair::Second) {
    for (int i = 0; i < t.d1; ++i)
      for (int j = 0; j < t.d2; ++j) {
        const float* src = &t.data[t.index(0, i, j, 0, 0)];
        float* dst = &out.data[out.index(0, i, j, 0, 0)];
        float m = src[0];
        for (size_t kl = 1; kl < slice; ++kl) m = std::max(m, src[kl]);
        float sum = 0.f;
        for (size_t kl = 0; kl < slice; ++kl) {
          dst[kl] = std::exp(src[kl] - m);
          sum += dst[kl];
        }
        for (size_t kl = 0; kl < slice; ++kl) dst[kl] /= sum;
      }
  } else {
    // Normalize over (d1,d2) for each fixed (k,l).
    const size_t n_src = static_cast<size_t>(t.d1) * t.d2;
    std::vector<float> m(slice, -std::numeric_limits<float>::infinity());
    std::vector<float> sum(slice, 0.f);
    for (size_t ij = 0; ij < n_src; ++ij) {
      const float* src = &t.data[ij * slice];
      for (size_t kl = 0; kl < slice; ++kl) m[kl] = std::max(m[kl], src[kl]);
    }
    for (size_t ij = 0; ij < n_src; ++ij) {
      const float* src = &t.data[ij * slice];
      float* dst = &out.data[ij * slice];
      for (size_t kl = 0; kl < slice; ++kl) {
        dst[kl] = std::exp(src[kl] - m[kl]);
        sum[kl] += dst[kl];
      }
    }
    for (size_t ij = 0; ij < n_src; ++ij) {
      float* dst = &out.data[ij * slice];
      for (size_t kl = 0; kl < slice; ++kl) dst[kl] /= sum[kl];
    }
  }
  return out;
}

}  // namespace ncmatch

#endif  // NCMATCH_TENSOR4_HPP_
