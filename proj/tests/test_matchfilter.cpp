#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "helpers.hpp"
#include "ncmatch/matchfilter.hpp"

using namespace ncmatch;

namespace {

// Direct per-entry scalar evaluation of the gating ratios, in double.
Tensor4 soft_mnn_oracle(const Tensor4& t) {
  Tensor4 out(1, t.d1, t.d2, t.d3, t.d4);
  for (int i = 0; i < t.d1; ++i)
    for (int j = 0; j < t.d2; ++j)
      for (int k = 0; k < t.d3; ++k)
        for (int l = 0; l < t.d4; ++l) {
          const double p = std::max(0.f, t.at(0, i, j, k, l));
          double max_ab = 0;
          for (int a = 0; a < t.d1; ++a)
            for (int b = 0; b < t.d2; ++b)
              max_ab = std::max(max_ab, double(std::max(0.f, t.at(0, a, b, k, l))));
          double max_cd = 0;
          for (int c = 0; c < t.d3; ++c)
            for (int d = 0; d < t.d4; ++d)
              max_cd = std::max(max_cd, double(std::max(0.f, t.at(0, i, j, c, d))));
          const double ra = p / (max_ab + double(kSoftMnnEpsilon));
          const double rb = p / (max_cd + double(kSoftMnnEpsilon));
          out.at(0, i, j, k, l) = static_cast<float>(ra * rb * p);
        }
  return out;
}

CorrTensor identity_corr(int n) {
  Tensor4 t(1, n, n, n, n, 0.f);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) t.at(0, i, j, i, j) = 1.f;
  return CorrTensor(std::move(t), CorrStage::Raw);
}

}  // namespace

TEST_CASE("identity correlation is a fixed point of the soft gating") {
  CorrTensor c = identity_corr(3);
  CorrTensor out = soft_mutual_nn(c);
  CHECK(out.stage == CorrStage::Mnn);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 3; ++l) {
          const float v = out.tensor.at(0, i, j, k, l);
          if (i == k && j == l)
            CHECK(v == Catch::Approx(1.0).margin(1e-6));
          else
            CHECK(v == 0.f);
        }
}

TEST_CASE("soft gating never increases a score") {
  std::mt19937 rng(40);
  for (int trial = 0; trial < 20; ++trial) {
    CorrTensor c = testutil::random_corr(4, 3, 3, 4, rng);
    CorrTensor out = soft_mutual_nn(c);
    for (size_t n = 0; n < out.tensor.data.size(); ++n) {
      const float plus = std::max(0.f, c.tensor.data[n]);
      CHECK(out.tensor.data[n] >= 0.f);
      CHECK(out.tensor.data[n] <= plus + 1e-7f);
    }
  }
}

TEST_CASE("soft gating matches the scalar oracle") {
  std::mt19937 rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    CorrTensor c = testutil::random_corr(4, 4, 4, 4, rng);
    CorrTensor out = soft_mutual_nn(c);
    Tensor4 expect = soft_mnn_oracle(c.tensor);
    for (size_t n = 0; n < expect.data.size(); ++n)
      CHECK(std::abs(out.tensor.data[n] - expect.data[n]) < 1e-6f);
  }
}

TEST_CASE("mutual argmax entries survive the gating up to the epsilon bound") {
  std::mt19937 rng(42);
  CorrTensor c = testutil::random_corr(4, 4, 4, 4, rng, CorrStage::Raw);
  CorrTensor clamped(relu(c.tensor), CorrStage::Raw);
  CorrTensor out = soft_mutual_nn(c);
  for (const auto& [i, j, k, l] : hard_mutual_nn(clamped)) {
    const float p = clamped.tensor.at(0, i, j, k, l);
    const float v = out.tensor.at(0, i, j, k, l);
    const float bound = p * (1.f - p / (p + kSoftMnnEpsilon)) * 2.f;
    CHECK(std::abs(v - p) <= bound + 1e-7f);
  }
}

TEST_CASE("soft gating commutes with the pair transpose") {
  std::mt19937 rng(43);
  CorrTensor c = testutil::random_corr(3, 4, 5, 2, rng);
  CorrTensor lhs = soft_mutual_nn(transpose_pairs(c));
  CorrTensor rhs = transpose_pairs(soft_mutual_nn(c));
  for (size_t n = 0; n < lhs.tensor.data.size(); ++n)
    CHECK(std::abs(lhs.tensor.data[n] - rhs.tensor.data[n]) < 1e-6f);
}

TEST_CASE("soft gating advances the stage and rejects invalid transitions") {
  std::mt19937 rng(44);
  CorrTensor raw = testutil::random_corr(2, 2, 2, 2, rng, CorrStage::Raw);
  CHECK(soft_mutual_nn(raw).stage == CorrStage::Mnn);
  CorrTensor nc = testutil::random_corr(2, 2, 2, 2, rng, CorrStage::Nc);
  CHECK(soft_mutual_nn(nc).stage == CorrStage::Final);
  CorrTensor mnn = testutil::random_corr(2, 2, 2, 2, rng, CorrStage::Mnn);
  CHECK_THROWS_AS(soft_mutual_nn(mnn), std::invalid_argument);
}

TEST_CASE("all-zero slices are mapped to zero, not NaN") {
  Tensor4 t(1, 2, 2, 2, 2, 0.f);
  CorrTensor out = soft_mutual_nn(CorrTensor(std::move(t), CorrStage::Raw));
  for (float v : out.tensor.data) {
    CHECK(std::isfinite(v));
    CHECK(v == 0.f);
  }
}

TEST_CASE("hard mutual NN of the identity correlation is the diagonal") {
  CorrTensor c = identity_corr(3);
  auto set = hard_mutual_nn(c);
  CHECK(set.size() == 9);
  for (const auto& [i, j, k, l] : set) {
    CHECK(i == k);
    CHECK(j == l);
  }
}

TEST_CASE("hard mutual NN size is bounded by the smaller grid") {
  std::mt19937 rng(45);
  for (int trial = 0; trial < 10; ++trial) {
    CorrTensor c = testutil::random_corr(3, 4, 2, 3, rng);
    auto set = hard_mutual_nn(c);
    CHECK(set.size() <= 6u);  // min(12, 6)
    // Injectivity: no duplicated source or target cells.
    std::set<std::pair<int, int>> src, dst;
    for (const auto& [i, j, k, l] : set) {
      CHECK(src.insert({i, j}).second);
      CHECK(dst.insert({k, l}).second);
    }
  }
}

TEST_CASE("hard mutual NN matches a two-pass brute-force oracle") {
  std::mt19937 rng(46);
  for (int trial = 0; trial < 10; ++trial) {
    CorrTensor c = testutil::random_corr(4, 4, 4, 4, rng);
    const Tensor4& t = c.tensor;
    std::set<std::array<int, 4>> expect;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        int bk = 0, bl = 0;
        float best = -1e30f;
        for (int k = 0; k < 4; ++k)
          for (int l = 0; l < 4; ++l)
            if (t.at(0, i, j, k, l) > best) {
              best = t.at(0, i, j, k, l);
              bk = k;
              bl = l;
            }
        int bi = 0, bj = 0;
        best = -1e30f;
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b)
            if (t.at(0, a, b, bk, bl) > best) {
              best = t.at(0, a, b, bk, bl);
              bi = a;
              bj = b;
            }
        if (bi == i && bj == j) expect.insert({i, j, bk, bl});
      }
    auto got = hard_mutual_nn(c);
    std::set<std::array<int, 4>> got_set(got.begin(), got.end());
    CHECK(got_set == expect);
  }
}

TEST_CASE("thresholding the gated scores at slice maxima recovers the hard set") {
  // The limit identity needs well-separated maxima: plant strong mutual
  // matches on a weak background (near-ties can promote an almost-mutual
  // entry to the top of both gated slices).
  std::mt19937 rng(47);
  std::uniform_real_distribution<float> bg(-0.2f, 0.2f);
  Tensor4 planted(1, 4, 4, 4, 4);
  for (float& v : planted.data) v = bg(rng);
  std::uniform_real_distribution<float> strong(0.8f, 1.f);
  for (int n = 0; n < 4; ++n) planted.at(0, n, n, 3 - n, n) = strong(rng);
  CorrTensor c(std::move(planted), CorrStage::Raw);
  CorrTensor clamped(relu(c.tensor), CorrStage::Raw);
  CorrTensor gated = soft_mutual_nn(c);
  PairReduction mf = max_over_pair(gated.tensor, AxisPair::First);
  PairReduction ms = max_over_pair(gated.tensor, AxisPair::Second);
  std::set<std::array<int, 4>> from_gate;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k)
        for (int l = 0; l < 4; ++l) {
          const float v = gated.tensor.at(0, i, j, k, l);
          if (v > 0.f && v >= mf.values.at(0, 0, 0, k, l) &&
              v >= ms.values.at(0, i, j, 0, 0))
            from_gate.insert({i, j, k, l});
        }
  auto hard = hard_mutual_nn(clamped);
  std::set<std::array<int, 4>> hard_set;
  for (const auto& m : hard)
    if (clamped.tensor.at(0, m[0], m[1], m[2], m[3]) > 0.f) hard_set.insert(m);
  CHECK(from_gate == hard_set);
}
