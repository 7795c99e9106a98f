#ifndef NCMATCH_MATCHFILTER_HPP_
#define NCMATCH_MATCHFILTER_HPP_

#include <array>
#include <vector>

#include "ncmatch/correlation.hpp"
#include "ncmatch/tensor4.hpp"

namespace ncmatch {

inline constexpr float kSoftMnnEpsilon = 1e-8f;

/// Intermediates of soft_mutual_nn kept for backpropagation.
struct SoftMnnCache {
  Tensor4 clamped;          // relu(c)
  PairReduction max_first;  // max over (i,j) per (k,l), on clamped
  PairReduction max_second; // max over (k,l) per (i,j), on clamped
};

/// Soft mutual nearest-neighbour gating: each score is multiplied by its
/// ratios to the best clamped score along each image's dimensions.
/// Scores are clamped at zero first so the ratio denominators stay
/// non-negative; stage advances raw->mnn or nc->final.
inline CorrTensor soft_mutual_nn(const CorrTensor& c, SoftMnnCache* cache = nullptr) {
  CorrStage next;
  switch (c.stage) {
    case CorrStage::Raw: next = CorrStage::Mnn; break;
    case CorrStage::Nc: next = CorrStage::Final; break;
    default:
      throw std::invalid_argument(
          std::string("soft_mutual_nn: cannot advance from stage ") +
          to_string(c.stage));
  }
  Tensor4 p = relu(c.tensor);
  PairReduction mf = max_over_pair(p, AxisPair::First);
  PairReduction ms = max_over_pair(p, AxisPair::Second);
  Tensor4 out(1, p.d1, p.d2, p.d3, p.d4);
  const size_t slice = static_cast<size_t>(p.d3) * p.d4;
  for (int i = 0; i < p.d1; ++i)
    for (int j = 0; j < p.d2; ++j) {
      const size_t ij = static_cast<size_t>(i) * p.d2 + j;
      const float mb = ms.values.data[ij] + kSoftMnnEpsilon;
      const float* src = &p.data[ij * slice];
      float* dst = &out.data[ij * slice];
      for (size_t kl = 0; kl < slice; ++kl) {
        const float ma = mf.values.data[kl] + kSoftMnnEpsilon;
        const float v = src[kl];
        dst[kl] = (v / ma) * (v / mb) * v;
      }
    }
  if (cache) {
    cache->clamped = std::move(p);
    cache->max_first = std::move(mf);
    cache->max_second = std::move(ms);
  }
  return CorrTensor(std::move(out), next);
}

/// All (i,j,k,l) where (k,l) maximizes c over image B for fixed (i,j)
/// and (i,j) maximizes c over image A for fixed (k,l). Ties break to the
/// lowest linear index.
inline std::vector<std::array<int, 4>> hard_mutual_nn(const CorrTensor& c) {
  const Tensor4& t = c.tensor;
  PairReduction mf = max_over_pair(t, AxisPair::First);
  PairReduction ms = max_over_pair(t, AxisPair::Second);
  std::vector<std::array<int, 4>> result;
  for (int i = 0; i < t.d1; ++i)
    for (int j = 0; j < t.d2; ++j) {
      const auto [k, l] = ms.argmax[static_cast<size_t>(i) * t.d2 + j];
      const auto [bi, bj] = mf.argmax[static_cast<size_t>(k) * t.d4 + l];
      if (bi == i && bj == j) result.push_back({i, j, k, l});
    }
  return result;
}

}  // namespace ncmatch

#endif  // NCMATCH_MATCHFILTER_HPP_
