#ifndef NCMATCH_TESTS_HELPERS_HPP_
#define NCMATCH_TESTS_HELPERS_HPP_

#include <random>

#include "ncmatch/correlation.hpp"
#include "ncmatch/tensor4.hpp"

namespace testutil {

inline ncmatch::Tensor4 random_tensor(int d1, int d2, int d3, int d4,
                                      std::mt19937& rng, float lo = -1.f,
                                      float hi = 1.f, int channels = 1) {
  ncmatch::Tensor4 t(channels, d1, d2, d3, d4);
  std::uniform_real_distribution<float> dist(lo, hi);
  for (float& v : t.data) v = dist(rng);
  return t;
}

inline ncmatch::CorrTensor random_corr(int d1, int d2, int d3, int d4,
                                       std::mt19937& rng,
                                       ncmatch::CorrStage stage = ncmatch::CorrStage::Raw) {
  return ncmatch::CorrTensor(random_tensor(d1, d2, d3, d4, rng), stage);
}

}  // namespace testutil

#endif  // NCMATCH_TESTS_HELPERS_HPP_
