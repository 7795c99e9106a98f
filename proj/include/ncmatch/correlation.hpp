#ifndef NCMATCH_CORRELATION_HPP_
#define NCMATCH_CORRELATION_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncmatch/features.hpp"
#include "ncmatch/tensor4.hpp"

namespace ncmatch {

/// Pipeline stage of a correlation volume. Transitions only along
/// raw -> mnn -> nc -> final.
enum class CorrStage : uint8_t { Raw, Mnn, Nc, Final };

inline const char* to_string(CorrStage s) {
  switch (s) {
    case CorrStage::Raw: return "raw";
    case CorrStage::Mnn: return "mnn";
    case CorrStage::Nc: return "nc";
    case CorrStage::Final: return "final";
  }
  return "?";
}

/// 4D score volume over all pairwise matches between two feature grids.
struct CorrTensor {
  Tensor4 tensor;  // single channel, dims (hA, wA, hB, wB)
  CorrStage stage = CorrStage::Raw;
  int ha = 0, wa = 0, hb = 0, wb = 0;

  CorrTensor() = default;
  CorrTensor(Tensor4 t, CorrStage s)
      : tensor(std::move(t)), stage(s), ha(tensor.d1), wa(tensor.d2),
        hb(tensor.d3), wb(tensor.d4) {
    if (tensor.channels != 1)
      throw std::invalid_argument("CorrTensor: single-channel tensor required");
  }
};

/// In-block argmax offsets recorded during 4D max-pooling; one binary
/// grid per axis, each indexed like the pooled tensor.
struct RelocShifts {
  int ha = 0, wa = 0, hb = 0, wb = 0;
  std::vector<uint8_t> da, db, dc, dd;

  size_t index(int a, int b, int c, int d) const {
    return ((static_cast<size_t>(a) * wa + b) * hb + c) * wb + d;
  }
};

/// Exhaustive cosine-similarity correlation of two feature maps.
/// Cells whose norm is below 1e-12 contribute correlation 0.
inline CorrTensor correlate(const FeatureMap& fa, const FeatureMap& fb) {
  if (fa.d != fb.d)
    throw std::invalid_argument("correlate: descriptor dimensions differ (" +
                                std::to_string(fa.d) + " vs " + std::to_string(fb.d) + ")");
  const int d = fa.d;
  auto norms = [d](const FeatureMap& f) {
    std::vector<float> n(static_cast<size_t>(f.h) * f.w);
    for (int i = 0; i < f.h; ++i)
      for (int j = 0; j < f.w; ++j) {
        const float* v = f.cell(i, j);
        double n2 = 0;
        for (int c = 0; c < d; ++c) n2 += static_cast<double>(v[c]) * v[c];
        n[static_cast<size_t>(i) * f.w + j] = static_cast<float>(std::sqrt(n2));
      }
    return n;
  };
  const std::vector<float> na = norms(fa);
  const std::vector<float> nb = norms(fb);

  Tensor4 t(1, fa.h, fa.w, fb.h, fb.w);
  const size_t slice = static_cast<size_t>(fb.h) * fb.w;
  for (int i = 0; i < fa.h; ++i)
    for (int j = 0; j < fa.w; ++j) {
      const float* va = fa.cell(i, j);
      const float norm_a = na[static_cast<size_t>(i) * fa.w + j];
      float* dst = &t.data[(static_cast<size_t>(i) * fa.w + j) * slice];
      if (norm_a < 1e-12f) continue;  // row stays 0
      for (int k = 0; k < fb.h; ++k)
        for (int l = 0; l < fb.w; ++l) {
          const float norm_b = nb[static_cast<size_t>(k) * fb.w + l];
          if (norm_b < 1e-12f) continue;
          const float* vb = fb.cell(k, l);
          float dot = 0.f;
          for (int c = 0; c < d; ++c) dot += va[c] * vb[c];
          dst[static_cast<size_t>(k) * fb.w + l] = dot / (norm_a * norm_b);
        }
    }
  return CorrTensor(std::move(t), CorrStage::Raw);
}

/// Swaps the image-A and image-B axis pairs: out_{ijkl} = c_{klij}.
inline Tensor4 transpose_pairs(const Tensor4& t) {
  Tensor4 out(1, t.d3, t.d4, t.d1, t.d2);
  for (int i = 0; i < t.d1; ++i)
    for (int j = 0; j < t.d2; ++j)
      for (int k = 0; k < t.d3; ++k)
        for (int l = 0; l < t.d4; ++l)
          out.at(0, k, l, i, j) = t.at(0, i, j, k, l);
  return out;
}

inline CorrTensor transpose_pairs(const CorrTensor& c) {
  return CorrTensor(transpose_pairs(c.tensor), c.stage);
}

struct PooledCorr {
  CorrTensor pooled;
  RelocShifts shifts;
};

/// 4D max-pooling with kernel size 2, recording in-block argmax offsets.
/// Ties break to offset 0 per axis (lowest index).
inline PooledCorr maxpool_downsample(const CorrTensor& c) {
  const Tensor4& t = c.tensor;
  const std::array<std::pair<const char*, int>, 4> dims = {
      {{"hA", t.d1}, {"wA", t.d2}, {"hB", t.d3}, {"wB", t.d4}}};
  for (const auto& [name, dim] : dims)
    if (dim % 2 != 0)
      throw std::invalid_argument(std::string("maxpool_downsample: axis ") + name +
                                  " has odd size " + std::to_string(dim));
  Tensor4 out(1, t.d1 / 2, t.d2 / 2, t.d3 / 2, t.d4 / 2);
  RelocShifts sh;
  sh.ha = out.d1;
  sh.wa = out.d2;
  sh.hb = out.d3;
  sh.wb = out.d4;
  sh.da.assign(out.size(), 0);
  sh.db.assign(out.size(), 0);
  sh.dc.assign(out.size(), 0);
  sh.dd.assign(out.size(), 0);
  for (int a = 0; a < out.d1; ++a)
    for (int b = 0; b < out.d2; ++b)
      for (int cc = 0; cc < out.d3; ++cc)
        for (int dd = 0; dd < out.d4; ++dd) {
          float best = -std::numeric_limits<float>::infinity();
          std::array<int, 4> arg = {0, 0, 0, 0};
          for (int oi = 0; oi < 2; ++oi)
            for (int oj = 0; oj < 2; ++oj)
              for (int ok = 0; ok < 2; ++ok)
                for (int ol = 0; ol < 2; ++ol) {
                  const float v = t.at(0, 2 * a + oi, 2 * b + oj, 2 * cc + ok, 2 * dd + ol);
                  if (v > best) {
                    best = v;
                    arg = {oi, oj, ok, ol};
                  }
                }
          const size_t idx = out.index(0, a, b, cc, dd);
          out.data[idx] = best;
          sh.da[idx] = static_cast<uint8_t>(arg[0]);
          sh.db[idx] = static_cast<uint8_t>(arg[1]);
          sh.dc[idx] = static_cast<uint8_t>(arg[2]);
          sh.dd[idx] = static_cast<uint8_t>(arg[3]);
        }
  return {CorrTensor(std::move(out), c.stage), std::move(sh)};
}

/// Half-cell relocalized coordinates for a match at pooled indices
/// (a,b,c,d): each axis gets + delta/2.
inline std::array<float, 4> apply_relocalization(int a, int b, int c, int d,
                                                 const RelocShifts& sh) {
  if (a < 0 || a >= sh.ha || b < 0 || b >= sh.wa || c < 0 || c >= sh.hb || d < 0 ||
      d >= sh.wb)
    throw std::invalid_argument("apply_relocalization: indices out of pooled bounds");
  const size_t idx = sh.index(a, b, c, d);
  return {a + sh.da[idx] / 2.f, b + sh.db[idx] / 2.f, c + sh.dc[idx] / 2.f,
          d + sh.dd[idx] / 2.f};
}

}  // namespace ncmatch

#endif  // NCMATCH_CORRELATION_HPP_
