#ifndef NCMATCH_ASSIGNMENT_HPP_
#define NCMATCH_ASSIGNMENT_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ncmatch/correlation.hpp"
#include "ncmatch/features.hpp"
#include "ncmatch/tensor4.hpp"

namespace ncmatch {

enum class MatchDirection { AtoB, BtoA };

struct Match {
  int i = 0, j = 0;  // source cell (image A for AtoB)
  int k = 0, l = 0;  // assigned cell
  float score = 0.f;
  float xa = 0.f, ya = 0.f;  // pixel coords in image A
  float xb = 0.f, yb = 0.f;  // pixel coords in image B
};

/// One match per source cell; grid and image dims are carried along for
/// keypoint snapping.
struct MatchSet {
  MatchDirection direction = MatchDirection::AtoB;
  int ha = 0, wa = 0, hb = 0, wb = 0;
  int image_h_a = 0, image_w_a = 0, image_h_b = 0, image_w_b = 0;
  std::vector<Match> matches;
};

struct ScorePair {
  Tensor4 sA;  // softmax over image-A dims (per fixed (k,l))
  Tensor4 sB;  // softmax over image-B dims (per fixed (i,j))
};

/// Softmax scores in both directions; requires the final pipeline stage.
inline ScorePair scores(const CorrTensor& c) {
  if (c.stage != CorrStage::Final)
    throw std::invalid_argument(std::string("scores: expected final stage, got ") +
                                to_string(c.stage));
  return {softmax_over_pair(c.tensor, AxisPair::First),
          softmax_over_pair(c.tensor, AxisPair::Second)};
}

/// Mode of the per-source-cell match distribution; ties break to the
/// lowest linear index.
inline MatchSet hard_assign(const Tensor4& score, MatchDirection direction) {
  MatchSet ms;
  ms.direction = direction;
  ms.ha = score.d1;
  ms.wa = score.d2;
  ms.hb = score.d3;
  ms.wb = score.d4;
  if (direction == MatchDirection::AtoB) {
    PairReduction red = max_over_pair(score, AxisPair::Second);
    for (int i = 0; i < score.d1; ++i)
      for (int j = 0; j < score.d2; ++j) {
        const size_t ij = static_cast<size_t>(i) * score.d2 + j;
        Match m;
        m.i = i;
        m.j = j;
        m.k = red.argmax[ij][0];
        m.l = red.argmax[ij][1];
        m.score = red.values.data[ij];
        ms.matches.push_back(m);
      }
  } else {
    PairReduction red = max_over_pair(score, AxisPair::First);
    for (int k = 0; k < score.d3; ++k)
      for (int l = 0; l < score.d4; ++l) {
        const size_t kl = static_cast<size_t>(k) * score.d4 + l;
        Match m;
        m.k = k;
        m.l = l;
        m.i = red.argmax[kl][0];
        m.j = red.argmax[kl][1];
        m.score = red.values.data[kl];
        ms.matches.push_back(m);
      }
  }
  return ms;
}

/// Full extraction in direction A->B: softmax scores, hard assignment,
/// grid-to-pixel mapping via cell centers, and optional half-cell
/// relocalization. With shifts, the feature maps are expected at twice
/// the pooled grid resolution.
inline MatchSet extract_matches(const CorrTensor& c, const FeatureMap& fa,
                                const FeatureMap& fb,
                                const std::optional<RelocShifts>& shifts = std::nullopt) {
  const int scale = shifts ? 2 : 1;
  if (fa.h != c.ha * scale || fa.w != c.wa * scale || fb.h != c.hb * scale ||
      fb.w != c.wb * scale)
    throw std::invalid_argument("extract_matches: feature grid dims do not match "
                                "the correlation tensor");
  ScorePair sp = scores(c);
  MatchSet ms = hard_assign(sp.sB, MatchDirection::AtoB);
  ms.image_h_a = fa.image_h;
  ms.image_w_a = fa.image_w;
  ms.image_h_b = fb.image_h;
  ms.image_w_b = fb.image_w;
  const float pitch_ya = static_cast<float>(fa.image_h) / c.ha;
  const float pitch_xa = static_cast<float>(fa.image_w) / c.wa;
  const float pitch_yb = static_cast<float>(fb.image_h) / c.hb;
  const float pitch_xb = static_cast<float>(fb.image_w) / c.wb;
  for (Match& m : ms.matches) {
    float a = static_cast<float>(m.i), b = static_cast<float>(m.j);
    float cc = static_cast<float>(m.k), dd = static_cast<float>(m.l);
    if (shifts) {
      const auto reloc = apply_relocalization(m.i, m.j, m.k, m.l, *shifts);
      a = reloc[0];
      b = reloc[1];
      cc = reloc[2];
      dd = reloc[3];
    }
    m.ya = (a + 0.5f) * pitch_ya;
    m.xa = (b + 0.5f) * pitch_xa;
    m.yb = (cc + 0.5f) * pitch_yb;
    m.xb = (dd + 0.5f) * pitch_xb;
  }
  return ms;
}

/// Transfers keypoints from image A to image B by snapping each point to
/// its grid cell and following that cell's assigned match.
inline std::vector<std::array<float, 2>> transfer_keypoints(
    const std::vector<std::array<float, 2>>& keypoints, const MatchSet& ms) {
  if (ms.direction != MatchDirection::AtoB)
    throw std::invalid_argument("transfer_keypoints: A->B match set required");
  std::vector<std::array<float, 2>> out;
  out.reserve(keypoints.size());
  for (const auto& [x, y] : keypoints) {
    if (x < 0 || y < 0 || x > ms.image_w_a || y > ms.image_h_a)
      throw std::invalid_argument("transfer_keypoints: keypoint outside image A");
    const int j = std::clamp(static_cast<int>(x * ms.wa / ms.image_w_a), 0, ms.wa - 1);
    const int i = std::clamp(static_cast<int>(y * ms.ha / ms.image_h_a), 0, ms.ha - 1);
    const Match& m = ms.matches[static_cast<size_t>(i) * ms.wa + j];
    out.push_back({m.xb, m.yb});
  }
  return out;
}

/// Fraction of predictions within alpha * max(image height, width) of
/// the ground truth.
inline double pck(const std::vector<std::array<float, 2>>& predicted,
                  const std::vector<std::array<float, 2>>& ground_truth,
                  int image_b_h, int image_b_w, double alpha) {
  if (predicted.size() != ground_truth.size())
    throw std::invalid_argument("pck: prediction/ground-truth length mismatch");
  if (alpha <= 0) throw std::invalid_argument("pck: alpha must be positive");
  if (predicted.empty()) return 0.0;
  const double thresh = alpha * std::max(image_b_h, image_b_w);
  size_t correct = 0;
  for (size_t n = 0; n < predicted.size(); ++n) {
    const double dx = predicted[n][0] - ground_truth[n][0];
    const double dy = predicted[n][1] - ground_truth[n][1];
    if (std::sqrt(dx * dx + dy * dy) <= thresh) ++correct;
  }
  return static_cast<double>(correct) / predicted.size();
}

/// JSON Lines output, one object per match.
inline void write_matches_jsonl(const MatchSet& ms, std::ostream& os) {
  for (const Match& m : ms.matches) {
    os << "{\"i\":" << m.i << ",\"j\":" << m.j << ",\"k\":" << m.k
       << ",\"l\":" << m.l << ",\"score\":" << m.score << ",\"xa\":" << m.xa
       << ",\"ya\":" << m.ya << ",\"xb\":" << m.xb << ",\"yb\":" << m.yb << "}\n";
  }
}

}  // namespace ncmatch

#endif  // NCMATCH_ASSIGNMENT_HPP_
