#ifndef NCMATCH_TRAINING_HPP_
#define NCMATCH_TRAINING_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ncmatch/assignment.hpp"
#include "ncmatch/correlation.hpp"
#include "ncmatch/features.hpp"
#include "ncmatch/matchfilter.hpp"
#include "ncmatch/ncnet.hpp"
#include "ncmatch/tensor4.hpp"

namespace ncmatch {

/// Loss of one weakly labelled pair: L = -y * (sbarA + sbarB), the mean
/// assigned scores in both matching directions.
struct LossRecord {
  double loss = 0;
  double sbarA = 0, sbarB = 0;
  int label = +1;
};

struct LayerGrad {
  std::vector<float> weights;
  std::vector<float> bias;
};

struct Gradients {
  std::vector<LayerGrad> layers;
};

inline Gradients zero_gradients(const NCNetParams& params) {
  Gradients g;
  for (const Conv4dLayer& layer : params.layers)
    g.layers.push_back({std::vector<float>(layer.weights.size(), 0.f),
                        std::vector<float>(layer.bias.size(), 0.f)});
  return g;
}

/// Everything the backward pass needs, cached during the forward pass.
struct ForwardCache {
  int label = +1;
  CorrTensor mnn1;            // soft-MNN of the raw correlation (NC-net input)
  NcnetCache pass_fwd;        // N(mnn1)
  NcnetCache pass_swp;        // N(transpose(mnn1))
  CorrTensor nc;              // symmetric NC-net output
  SoftMnnCache mnn2;          // second soft-MNN intermediates
  CorrTensor final;
  ScorePair sp;
  PairReduction sb_max;       // per-(i,j) argmax of sB
  PairReduction sa_max;       // per-(k,l) argmax of sA
};

struct ForwardResult {
  LossRecord record;
  ForwardCache cache;
};

/// Full pipeline: correlate -> soft-MNN -> symmetric NC-net -> soft-MNN
/// -> softmax scores -> mean assigned-score loss.
inline ForwardResult forward_pipeline(const TrainSample& sample,
                                      const NCNetParams& params) {
  if (sample.label != +1 && sample.label != -1)
    throw std::invalid_argument("forward_pipeline: label must be +1 or -1");
  ForwardResult r;
  ForwardCache& cc = r.cache;
  cc.label = sample.label;
  CorrTensor corr = correlate(sample.fa, sample.fb);
  cc.mnn1 = soft_mutual_nn(corr);
  cc.nc = ncnet_symmetric(cc.mnn1, params, &cc.pass_fwd, &cc.pass_swp);
  cc.final = soft_mutual_nn(cc.nc, &cc.mnn2);
  cc.sp = scores(cc.final);
  cc.sb_max = max_over_pair(cc.sp.sB, AxisPair::Second);
  cc.sa_max = max_over_pair(cc.sp.sA, AxisPair::First);
  double sbarB = 0, sbarA = 0;
  for (float v : cc.sb_max.values.data) sbarB += v;
  sbarB /= cc.sb_max.values.data.size();
  for (float v : cc.sa_max.values.data) sbarA += v;
  sbarA /= cc.sa_max.values.data.size();
  r.record.sbarA = sbarA;
  r.record.sbarB = sbarB;
  r.record.label = sample.label;
  r.record.loss = -sample.label * (sbarA + sbarB);
  return r;
}

namespace detail {

// Gradient of the soft-MNN gate. gout is dL/d(gated output); returns
// dL/d(gate input). Max denominators get the standard subgradient,
// routed to the cached argmax entries.
inline Tensor4 soft_mnn_backward(const Tensor4& gout, const SoftMnnCache& cache) {
  const Tensor4& p = cache.clamped;
  const int d2 = p.d2, d4 = p.d4;
  const size_t slice = static_cast<size_t>(p.d3) * p.d4;
  Tensor4 grad_p(1, p.d1, p.d2, p.d3, p.d4);
  std::vector<double> g_max_first(slice, 0.0);   // per (k,l)
  const size_t n_src = static_cast<size_t>(p.d1) * p.d2;
  std::vector<double> g_max_second(n_src, 0.0);  // per (i,j)
  for (size_t ij = 0; ij < n_src; ++ij) {
    const float mb = cache.max_second.values.data[ij] + kSoftMnnEpsilon;
    const float* pv = &p.data[ij * slice];
    const float* gv = &gout.data[ij * slice];
    float* gp = &grad_p.data[ij * slice];
    for (size_t kl = 0; kl < slice; ++kl) {
      const float ma = cache.max_first.values.data[kl] + kSoftMnnEpsilon;
      const float v = pv[kl];
      const float g = gv[kl];
      if (g == 0.f && v == 0.f) continue;
      const float v2 = v * v;
      gp[kl] += g * 3.f * v2 / (ma * mb);
      const double v3 = static_cast<double>(v2) * v;
      g_max_first[kl] -= g * v3 / (static_cast<double>(ma) * ma * mb);
      g_max_second[ij] -= g * v3 / (static_cast<double>(ma) * mb * mb);
    }
  }
  for (size_t kl = 0; kl < slice; ++kl) {
    if (g_max_first[kl] == 0.0) continue;
    const auto [ai, aj] = cache.max_first.argmax[kl];
    grad_p.data[(static_cast<size_t>(ai) * d2 + aj) * slice + kl] +=
        static_cast<float>(g_max_first[kl]);
  }
  for (size_t ij = 0; ij < n_src; ++ij) {
    if (g_max_second[ij] == 0.0) continue;
    const auto [ak, al] = cache.max_second.argmax[ij];
    grad_p.data[ij * slice + static_cast<size_t>(ak) * d4 + al] +=
        static_cast<float>(g_max_second[ij]);
  }
  // ReLU mask of the clamp preceding the gate.
  for (size_t idx = 0; idx < grad_p.data.size(); ++idx)
    if (p.data[idx] <= 0.f) grad_p.data[idx] = 0.f;
  return grad_p;
}

// Accumulates d(loss)/d(weights) for one 4D layer: per (ka, output a)
// pair, a 3D cross-correlation of the input slice against the
// output-gradient slice.
inline void conv4d_weight_grad(const Tensor4& input, const Tensor4& gout,
                               const Conv4dLayer& layer, std::vector<float>& wgrad,
                               std::vector<float>& bgrad) {
  const int k = layer.k, pad = k / 2;
  const int d2 = input.d2, d3 = input.d3, d4 = input.d4;
  for (int o = 0; o < layer.out_ch; ++o) {
    double bsum = 0;
    const float* go_base = &gout.data[gout.index(o, 0, 0, 0, 0)];
    const size_t n = static_cast<size_t>(input.d1) * d2 * d3 * d4;
    for (size_t idx = 0; idx < n; ++idx) bsum += go_base[idx];
    bgrad[o] += static_cast<float>(bsum);
  }
  const size_t slice = static_cast<size_t>(d2) * d3 * d4;
  for (int a = 0; a < input.d1; ++a)
    for (int ka = 0; ka < k; ++ka) {
      const int sa = a + ka - pad;
      if (sa < 0 || sa >= input.d1) continue;
      for (int o = 0; o < layer.out_ch; ++o) {
        const float* go_s = &gout.data[gout.index(o, a, 0, 0, 0)];
        for (int ic = 0; ic < layer.in_ch; ++ic) {
          const float* in_s = &input.data[input.index(ic, sa, 0, 0, 0)];
          float* wg = &wgrad[layer.weight_index(o, ic, ka, 0, 0, 0)];
          for (int kb = 0; kb < k; ++kb)
            for (int kc = 0; kc < k; ++kc)
              for (int kd = 0; kd < k; ++kd) {
                const int ob = kb - pad, oc = kc - pad, od = kd - pad;
                double acc = 0;
                const int blo = std::max(0, -ob), bhi = std::min(d2, d2 - ob);
                const int clo = std::max(0, -oc), chi = std::min(d3, d3 - oc);
                const int dlo = std::max(0, -od), dhi = std::min(d4, d4 - od);
                for (int b = blo; b < bhi; ++b)
                  for (int c = clo; c < chi; ++c) {
                    const float* go_row = go_s + (static_cast<size_t>(b) * d3 + c) * d4;
                    const float* in_row =
                        in_s + (static_cast<size_t>(b + ob) * d3 + (c + oc)) * d4 + od;
                    for (int d = dlo; d < dhi; ++d) acc += go_row[d] * in_row[d];
                  }
                wg[(static_cast<size_t>(kb) * k + kc) * k + kd] +=
                    static_cast<float>(acc);
              }
          (void)slice;
        }
      }
    }
}

// d(loss)/d(input) of a 4D layer: scatter of the output gradient through
// the kernel.
inline Tensor4 conv4d_input_grad(const Tensor4& gout, const Conv4dLayer& layer,
                                 int d1, int d2, int d3, int d4) {
  const int k = layer.k, pad = k / 2;
  Tensor4 gin(layer.in_ch, d1, d2, d3, d4);
  for (int a = 0; a < d1; ++a)
    for (int ka = 0; ka < k; ++ka) {
      const int sa = a + ka - pad;
      if (sa < 0 || sa >= d1) continue;
      for (int o = 0; o < layer.out_ch; ++o) {
        const float* go_s = &gout.data[gout.index(o, a, 0, 0, 0)];
        for (int ic = 0; ic < layer.in_ch; ++ic) {
          float* gin_s = &gin.data[gin.index(ic, sa, 0, 0, 0)];
          const float* w_s = &layer.weights[layer.weight_index(o, ic, ka, 0, 0, 0)];
          for (int b = 0; b < d2; ++b)
            for (int kb = 0; kb < k; ++kb) {
              const int sb = b + kb - pad;
              if (sb < 0 || sb >= d2) continue;
              for (int c = 0; c < d3; ++c)
                for (int kc = 0; kc < k; ++kc) {
                  const int sc = c + kc - pad;
                  if (sc < 0 || sc >= d3) continue;
                  const float* go_row = go_s + (static_cast<size_t>(b) * d3 + c) * d4;
                  float* gin_row = gin_s + (static_cast<size_t>(sb) * d3 + sc) * d4;
                  const float* w_row = w_s + (static_cast<size_t>(kb) * k + kc) * k;
                  for (int kd = 0; kd < k; ++kd) {
                    const float wv = w_row[kd];
                    if (wv == 0.f) continue;
                    const int off = kd - pad;
                    const int lo = std::max(0, -off);
                    const int hi = std::min(d4, d4 - off);
                    for (int d = lo; d < hi; ++d) gin_row[d + off] += wv * go_row[d];
                  }
                }
            }
        }
      }
    }
  return gin;
}

// Backpropagates through one NC-net pass, accumulating parameter grads.
inline void ncnet_backward(const NcnetCache& cache, const NCNetParams& params,
                           Tensor4 gout, Gradients& grads) {
  const size_t n_layers = params.layers.size();
  for (size_t li = n_layers; li-- > 0;) {
    const bool had_relu = li + 1 < n_layers || params.config.final_relu;
    if (had_relu) {
      const Tensor4& z = cache.preacts[li];
      for (size_t idx = 0; idx < gout.data.size(); ++idx)
        if (z.data[idx] <= 0.f) gout.data[idx] = 0.f;
    }
    const Tensor4& x = cache.inputs[li];
    conv4d_weight_grad(x, gout, params.layers[li], grads.layers[li].weights,
                       grads.layers[li].bias);
    if (li > 0)
      gout = conv4d_input_grad(gout, params.layers[li], x.d1, x.d2, x.d3, x.d4);
  }
}

// ---------------------------------------------------------------------------
// 64-bit evaluation of the loss for the finite-difference oracle. The
// convolutions are recomputed in double with independent direct loops;
// the piecewise branch selections (ReLU masks, max and hard-assignment
// indices) are the ones frozen in the forward cache, matching the
// derivative that backward_pipeline computes.
// ---------------------------------------------------------------------------

namespace oracle {

struct T4 {
  int channels = 1;
  int d1 = 0, d2 = 0, d3 = 0, d4 = 0;
  std::vector<double> data;

  T4() = default;
  T4(int ch, int a, int b, int c, int d)
      : channels(ch), d1(a), d2(b), d3(c), d4(d),
        data(static_cast<size_t>(ch) * a * b * c * d, 0.0) {}
  size_t index(int c, int i, int j, int k, int l) const {
    return ((((static_cast<size_t>(c) * d1 + i) * d2 + j) * d3 + k) * d4 + l);
  }
};

inline T4 from_f32(const Tensor4& t) {
  T4 out(t.channels, t.d1, t.d2, t.d3, t.d4);
  for (size_t i = 0; i < t.data.size(); ++i) out.data[i] = t.data[i];
  return out;
}

inline T4 transpose_pairs(const T4& t) {
  T4 out(1, t.d3, t.d4, t.d1, t.d2);
  for (int i = 0; i < t.d1; ++i)
    for (int j = 0; j < t.d2; ++j)
      for (int k = 0; k < t.d3; ++k)
        for (int l = 0; l < t.d4; ++l)
          out.data[out.index(0, k, l, i, j)] = t.data[t.index(0, i, j, k, l)];
  return out;
}

inline T4 conv4d(const T4& input, const Conv4dLayer& layer) {
  const int k = layer.k, pad = k / 2;
  T4 out(layer.out_ch, input.d1, input.d2, input.d3, input.d4);
  const int d2 = input.d2, d3 = input.d3, d4 = input.d4;
  for (int a = 0; a < input.d1; ++a)
    for (int ka = 0; ka < k; ++ka) {
      const int sa = a + ka - pad;
      if (sa < 0 || sa >= input.d1) continue;
      for (int o = 0; o < layer.out_ch; ++o) {
        double* out_s = &out.data[out.index(o, a, 0, 0, 0)];
        for (int ic = 0; ic < layer.in_ch; ++ic) {
          const double* in_s = &input.data[input.index(ic, sa, 0, 0, 0)];
          const float* w_s = &layer.weights[layer.weight_index(o, ic, ka, 0, 0, 0)];
          for (int b = 0; b < d2; ++b)
            for (int kb = 0; kb < k; ++kb) {
              const int sb = b + kb - pad;
              if (sb < 0 || sb >= d2) continue;
              for (int c = 0; c < d3; ++c)
                for (int kc = 0; kc < k; ++kc) {
                  const int sc = c + kc - pad;
                  if (sc < 0 || sc >= d3) continue;
                  const double* in_row = in_s + (static_cast<size_t>(sb) * d3 + sc) * d4;
                  double* out_row = out_s + (static_cast<size_t>(b) * d3 + c) * d4;
                  const float* w_row = w_s + (static_cast<size_t>(kb) * k + kc) * k;
                  for (int kd = 0; kd < k; ++kd) {
                    const double wv = w_row[kd];
                    const int off = kd - pad;
                    const int lo = std::max(0, -off);
                    const int hi = std::min(d4, d4 - off);
                    const double* src = in_row + off;
                    for (int d = lo; d < hi; ++d) out_row[d] += wv * src[d];
                  }
                }
            }
        }
      }
    }
  for (int o = 0; o < layer.out_ch; ++o) {
    const double b = layer.bias[o];
    double* dst = &out.data[out.index(o, 0, 0, 0, 0)];
    const size_t n = static_cast<size_t>(input.d1) * d2 * d3 * d4;
    for (size_t idx = 0; idx < n; ++idx) dst[idx] += b;
  }
  return out;
}

// Layer stack with ReLU masks frozen from a cached forward pass.
inline T4 ncnet_forward_frozen(const T4& input, const NCNetParams& params,
                               const NcnetCache& cache) {
  T4 x = input;
  for (size_t li = 0; li < params.layers.size(); ++li) {
    T4 z = conv4d(x, params.layers[li]);
    const bool had_relu = li + 1 < params.layers.size() || params.config.final_relu;
    if (had_relu) {
      const Tensor4& pre = cache.preacts[li];
      for (size_t idx = 0; idx < z.data.size(); ++idx)
        if (pre.data[idx] <= 0.f) z.data[idx] = 0.0;
    }
    x = std::move(z);
  }
  return x;
}

/// Loss of the cached sample as a smooth function of the parameters,
/// with every branch selection held at its cached value.
inline double loss_frozen(const ForwardCache& cache, const NCNetParams& params) {
  T4 u = from_f32(cache.mnn1.tensor);
  T4 fwd = ncnet_forward_frozen(u, params, cache.pass_fwd);
  T4 swp = transpose_pairs(
      ncnet_forward_frozen(transpose_pairs(u), params, cache.pass_swp));
  for (size_t i = 0; i < fwd.data.size(); ++i) fwd.data[i] += swp.data[i];

  // Frozen soft mutual NN gate.
  const int d1 = fwd.d1, d2 = fwd.d2, d4 = fwd.d4;
  const size_t slice = static_cast<size_t>(fwd.d3) * fwd.d4;
  const size_t n_src = static_cast<size_t>(d1) * d2;
  std::vector<double> p(fwd.data.size());
  for (size_t i = 0; i < p.size(); ++i)
    p[i] = cache.mnn2.clamped.data[i] > 0.f ? fwd.data[i] : 0.0;
  std::vector<double> hat(p.size());
  for (size_t ij = 0; ij < n_src; ++ij) {
    const auto [ak, al] = cache.mnn2.max_second.argmax[ij];
    const double mb =
        p[ij * slice + static_cast<size_t>(ak) * d4 + al] + kSoftMnnEpsilon;
    for (size_t kl = 0; kl < slice; ++kl) {
      const auto [ai, aj] = cache.mnn2.max_first.argmax[kl];
      const double ma =
          p[(static_cast<size_t>(ai) * d2 + aj) * slice + kl] + kSoftMnnEpsilon;
      const double v = p[ij * slice + kl];
      hat[ij * slice + kl] = v * v * v / (ma * mb);
    }
  }

  // Frozen hard assignments through both softmax directions.
  double sbarB = 0;
  for (size_t ij = 0; ij < n_src; ++ij) {
    const auto [ak, al] = cache.sb_max.argmax[ij];
    const size_t arg = static_cast<size_t>(ak) * d4 + al;
    double m = hat[ij * slice];
    for (size_t kl = 1; kl < slice; ++kl) m = std::max(m, hat[ij * slice + kl]);
    double sum = 0;
    for (size_t kl = 0; kl < slice; ++kl) sum += std::exp(hat[ij * slice + kl] - m);
    sbarB += std::exp(hat[ij * slice + arg] - m) / sum;
  }
  sbarB /= n_src;
  double sbarA = 0;
  for (size_t kl = 0; kl < slice; ++kl) {
    const auto [ai, aj] = cache.sa_max.argmax[kl];
    const size_t arg = static_cast<size_t>(ai) * d2 + aj;
    double m = hat[kl];
    for (size_t ij = 1; ij < n_src; ++ij) m = std::max(m, hat[ij * slice + kl]);
    double sum = 0;
    for (size_t ij = 0; ij < n_src; ++ij) sum += std::exp(hat[ij * slice + kl] - m);
    sbarA += std::exp(hat[arg * slice + kl] - m) / sum;
  }
  sbarA /= slice;
  return -cache.label * (sbarA + sbarB);
}

}  // namespace oracle

}  // namespace detail

/// Reverse-mode gradients of the pair loss with respect to every NC-net
/// weight and bias. Hard-assignment and max indices are the ones frozen
/// in the forward cache.
inline Gradients backward_pipeline(const ForwardCache& cache,
                                   const NCNetParams& params) {
  if (cache.pass_fwd.inputs.empty())
    throw std::invalid_argument("backward_pipeline: forward cache missing");
  const int label = cache.label;
  const Tensor4& sB = cache.sp.sB;
  const Tensor4& sA = cache.sp.sA;
  const size_t slice = static_cast<size_t>(sB.d3) * sB.d4;
  const size_t n_src = static_cast<size_t>(sB.d1) * sB.d2;
  // dL/d(final tensor) through both softmax directions. Upstream grads
  // are sparse: -y/n at the frozen per-slice argmax entries.
  Tensor4 g_final(1, sB.d1, sB.d2, sB.d3, sB.d4);
  {
    const float gval = -static_cast<float>(label) / n_src;
    for (size_t ij = 0; ij < n_src; ++ij) {
      const auto [ak, al] = cache.sb_max.argmax[ij];
      const size_t arg = static_cast<size_t>(ak) * sB.d4 + al;
      const float* s = &sB.data[ij * slice];
      float* g = &g_final.data[ij * slice];
      const float dot = gval * s[arg];
      for (size_t kl = 0; kl < slice; ++kl) g[kl] += s[kl] * ((kl == arg ? gval : 0.f) - dot);
    }
  }
  {
    const float gval = -static_cast<float>(label) / slice;
    for (size_t kl = 0; kl < slice; ++kl) {
      const auto [ai, aj] = cache.sa_max.argmax[kl];
      const size_t arg = static_cast<size_t>(ai) * sA.d2 + aj;
      const float s_arg = sA.data[arg * slice + kl];
      const float dot = gval * s_arg;
      for (size_t ij = 0; ij < n_src; ++ij) {
        const float s = sA.data[ij * slice + kl];
        g_final.data[ij * slice + kl] += s * ((ij == arg ? gval : 0.f) - dot);
      }
    }
  }
  // Through the second soft-MNN gate down to the NC-net output.
  Tensor4 g_nc = detail::soft_mnn_backward(g_final, cache.mnn2);
  // Symmetric application: both passes share parameters.
  Gradients grads = zero_gradients(params);
  detail::ncnet_backward(cache.pass_fwd, params, g_nc, grads);
  detail::ncnet_backward(cache.pass_swp, params, transpose_pairs(g_nc), grads);
  return grads;
}

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

struct FdLayerReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
};

struct FdReport {
  std::vector<FdLayerReport> layers;
  double max_rel_error = 0;
  bool pass = false;
};

/// Central finite differences over every parameter, compared against
/// backward_pipeline. A gradient passes if it agrees within rel_tol
/// relative or abs_tol absolute error.
inline FdReport finite_diff_check(const TrainSample& sample, const NCNetParams& params,
                                  double rel_tol = 1e-3, double abs_tol = 1e-6,
                                  bool corrupt_analytic = false) {
  const double h = 1e-3;
  ForwardResult fr = forward_pipeline(sample, params);
  Gradients analytic = backward_pipeline(fr.cache, params);
  if (corrupt_analytic && !analytic.layers.empty() &&
      !analytic.layers[0].weights.empty())
    analytic.layers[0].weights[0] += 1.f;
  NCNetParams probe = params;
  FdReport report;
  report.pass = true;
  for (size_t li = 0; li < params.layers.size(); ++li) {
    FdLayerReport lr;
    auto check_one = [&](float& slot, float analytic_g) {
      const float saved = slot;
      slot = saved + static_cast<float>(h);
      const double lp = detail::oracle::loss_frozen(fr.cache, probe);
      slot = saved - static_cast<float>(h);
      const double lm = detail::oracle::loss_frozen(fr.cache, probe);
      slot = saved;
      const double numeric = (lp - lm) / (2 * h);
      const double abs_err = std::abs(numeric - analytic_g);
      const double denom = std::max(std::abs(numeric), std::abs(static_cast<double>(analytic_g)));
      const double rel_err = denom > 0 ? abs_err / denom : 0.0;
      lr.max_abs_error = std::max(lr.max_abs_error, abs_err);
      if (abs_err > abs_tol) {
        lr.max_rel_error = std::max(lr.max_rel_error, rel_err);
        if (rel_err > rel_tol) report.pass = false;
      }
    };
    for (size_t wi = 0; wi < probe.layers[li].weights.size(); ++wi)
      check_one(probe.layers[li].weights[wi], analytic.layers[li].weights[wi]);
    for (size_t bi = 0; bi < probe.layers[li].bias.size(); ++bi)
      check_one(probe.layers[li].bias[bi], analytic.layers[li].bias[bi]);
    report.max_rel_error = std::max(report.max_rel_error, lr.max_rel_error);
    report.layers.push_back(lr);
  }
  if (rel_tol <= 0) report.pass = false;
  return report;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<LayerGrad> m, v;  // first and second moments
  long step = 0;
  double lr = 5e-4;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;

  static AdamState init(const NCNetParams& params, double lr) {
    AdamState s;
    s.lr = lr;
    for (const Conv4dLayer& layer : params.layers) {
      s.m.push_back({std::vector<float>(layer.weights.size(), 0.f),
                     std::vector<float>(layer.bias.size(), 0.f)});
      s.v.push_back({std::vector<float>(layer.weights.size(), 0.f),
                     std::vector<float>(layer.bias.size(), 0.f)});
    }
    return s;
  }
};

/// Bias-corrected Adam update in place.
inline void adam_step(NCNetParams& params, const Gradients& grads, AdamState& state) {
  if (grads.layers.size() != params.layers.size())
    throw std::invalid_argument("adam_step: gradient/parameter layer mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, state.step);
  const double bc2 = 1.0 - std::pow(state.beta2, state.step);
  auto update = [&](std::vector<float>& p, const std::vector<float>& g,
                    std::vector<float>& m, std::vector<float>& v) {
    if (p.size() != g.size())
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    for (size_t idx = 0; idx < p.size(); ++idx) {
      m[idx] = static_cast<float>(state.beta1 * m[idx] + (1.0 - state.beta1) * g[idx]);
      v[idx] = static_cast<float>(state.beta2 * v[idx] +
                                  (1.0 - state.beta2) * static_cast<double>(g[idx]) * g[idx]);
      const double mhat = m[idx] / bc1;
      const double vhat = v[idx] / bc2;
      p[idx] -= static_cast<float>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  };
  for (size_t li = 0; li < params.layers.size(); ++li) {
    update(params.layers[li].weights, grads.layers[li].weights,
           state.m[li].weights, state.v[li].weights);
    update(params.layers[li].bias, grads.layers[li].bias, state.m[li].bias,
           state.v[li].bias);
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 5;
  double lr = 5e-4;
  uint32_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  double mean_train_loss = 0;
  double mean_val_loss = 0;
};

struct TrainResult {
  NCNetParams params;
  std::vector<EpochLog> log;  // epoch 0 is an evaluation-only pass
};

inline double mean_loss(const std::vector<TrainSample>& samples,
                        const NCNetParams& params) {
  if (samples.empty()) return 0.0;
  double sum = 0;
  for (const TrainSample& s : samples) sum += forward_pipeline(s, params).record.loss;
  return sum / samples.size();
}

/// Sequential single-sample training with per-epoch shuffling. The
/// dataset must contain both labels.
inline TrainResult train(const std::vector<TrainSample>& dataset,
                         const std::vector<TrainSample>& validation,
                         NCNetParams params, const TrainConfig& config) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const bool has_pos = std::any_of(dataset.begin(), dataset.end(),
                                   [](const TrainSample& s) { return s.label > 0; });
  const bool has_neg = std::any_of(dataset.begin(), dataset.end(),
                                   [](const TrainSample& s) { return s.label < 0; });
  if (!has_pos || !has_neg)
    throw std::invalid_argument("train: dataset needs at least one positive and one "
                                "negative sample");
  TrainResult result;
  std::mt19937 rng(config.seed);
  AdamState state = AdamState::init(params, config.lr);
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), size_t{0});

  result.log.push_back({0, mean_loss(dataset, params), mean_loss(validation, params)});
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double train_sum = 0;
    for (size_t idx : order) {
      const TrainSample& s = dataset[idx];
      ForwardResult fr = forward_pipeline(s, params);
      train_sum += fr.record.loss;
      Gradients grads = backward_pipeline(fr.cache, params);
      adam_step(params, grads, state);
    }
    result.log.push_back({epoch, train_sum / dataset.size(),
                          mean_loss(validation, params)});
  }
  result.params = std::move(params);
  return result;
}

}  // namespace ncmatch

#endif  // NCMATCH_TRAINING_HPP_
