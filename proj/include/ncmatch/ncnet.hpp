#ifndef NCMATCH_NCNET_HPP_
#define NCMATCH_NCNET_HPP_

#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ncmatch/correlation.hpp"
#include "ncmatch/errors.hpp"
#include "ncmatch/tensor4.hpp"

namespace ncmatch {

/// One 4D convolution layer: zero-padded, stride 1, output spatial dims
/// equal input dims. Weight layout [out][in][k][k][k][k].
struct Conv4dLayer {
  int in_ch = 1, out_ch = 1, k = 3;
  std::vector<float> weights;
  std::vector<float> bias;

  Conv4dLayer() = default;
  Conv4dLayer(int in_ch_, int out_ch_, int k_)
      : in_ch(in_ch_), out_ch(out_ch_), k(k_) {
    if (k % 2 == 0) throw std::invalid_argument("Conv4dLayer: kernel size must be odd");
    weights.assign(weight_count(), 0.f);
    bias.assign(out_ch, 0.f);
  }

  size_t weight_count() const {
    const size_t k4 = static_cast<size_t>(k) * k * k * k;
    return static_cast<size_t>(out_ch) * in_ch * k4;
  }
  size_t weight_index(int o, int i, int a, int b, int c, int d) const {
    return (((((static_cast<size_t>(o) * in_ch + i) * k + a) * k + b) * k + c) * k + d);
  }
};

struct NCNetConfig {
  int num_layers = 3;
  int k = 5;
  int hidden_channels = 16;
  bool final_relu = true;

  static NCNetConfig category() { return {3, 5, 16, true}; }
  static NCNetConfig instance() { return {2, 3, 16, true}; }
};

/// Full layer stack; channel chain is 1 -> hidden -> ... -> hidden -> 1.
struct NCNetParams {
  std::vector<Conv4dLayer> layers;
  NCNetConfig config;
};

/// Reference 4D cross-correlation: naive nested loops, serves as the
/// oracle for the aggregated implementation.
inline Tensor4 conv4d_direct(const Tensor4& input, const Conv4dLayer& layer) {
  if (input.channels != layer.in_ch)
    throw std::invalid_argument("conv4d_direct: input channels " +
                                std::to_string(input.channels) + " != layer in_ch " +
                                std::to_string(layer.in_ch));
  const int k = layer.k, pad = k / 2;
  Tensor4 out(layer.out_ch, input.d1, input.d2, input.d3, input.d4);
  for (int o = 0; o < layer.out_ch; ++o)
    for (int a = 0; a < input.d1; ++a)
      for (int b = 0; b < input.d2; ++b)
        for (int c = 0; c < input.d3; ++c)
          for (int d = 0; d < input.d4; ++d) {
            float acc = layer.bias[o];
            for (int ic = 0; ic < layer.in_ch; ++ic)
              for (int ka = 0; ka < k; ++ka) {
                const int sa = a + ka - pad;
                if (sa < 0 || sa >= input.d1) continue;
                for (int kb = 0; kb < k; ++kb) {
                  const int sb = b + kb - pad;
                  if (sb < 0 || sb >= input.d2) continue;
                  for (int kc = 0; kc < k; ++kc) {
                    const int sc = c + kc - pad;
                    if (sc < 0 || sc >= input.d3) continue;
                    for (int kd = 0; kd < k; ++kd) {
                      const int sd = d + kd - pad;
                      if (sd < 0 || sd >= input.d4) continue;
                      acc += layer.weights[layer.weight_index(o, ic, ka, kb, kc, kd)] *
                             input.at(ic, sa, sb, sc, sd);
                    }
                  }
                }
              }
            out.at(o, a, b, c, d) = acc;
          }
  return out;
}

namespace detail {

// One 3D convolution accumulated into a contiguous output slice.
// in_s and out_s point at (d2*d3*d4)-sized slices; w_s holds k^3 taps.
inline void conv3d_accumulate(const float* in_s, int d2, int d3, int d4,
                              const float* w_s, int k, float* out_s) {
  const int pad = k / 2;
  for (int b = 0; b < d2; ++b)
    for (int kb = 0; kb < k; ++kb) {
      const int sb = b + kb - pad;
      if (sb < 0 || sb >= d2) continue;
      for (int c = 0; c < d3; ++c)
        for (int kc = 0; kc < k; ++kc) {
          const int sc = c + kc - pad;
          if (sc < 0 || sc >= d3) continue;
          const float* in_row = in_s + (static_cast<size_t>(sb) * d3 + sc) * d4;
          float* out_row = out_s + (static_cast<size_t>(b) * d3 + c) * d4;
          const float* w_row = w_s + (static_cast<size_t>(kb) * k + kc) * k;
          for (int kd = 0; kd < k; ++kd) {
            const float wv = w_row[kd];
            if (wv == 0.f) continue;
            const int off = kd - pad;
            const int lo = std::max(0, -off);
            const int hi = std::min(d4, d4 - off);
            const float* src = in_row + off;
            for (int d = lo; d < hi; ++d) out_row[d] += wv * src[d];
          }
        }
    }
}

}  // namespace detail

/// 4D convolution decomposed into k 3D convolutions over slices along
/// the first axis; numerically equivalent to conv4d_direct.
inline Tensor4 conv4d_aggregated(const Tensor4& input, const Conv4dLayer& layer) {
  if (input.channels != layer.in_ch)
    throw std::invalid_argument("conv4d_aggregated: input channels " +
                                std::to_string(input.channels) + " != layer in_ch " +
                                std::to_string(layer.in_ch));
  const int k = layer.k, pad = k / 2;
  const size_t slice = static_cast<size_t>(input.d2) * input.d3 * input.d4;
  const size_t k3 = static_cast<size_t>(k) * k * k;
  Tensor4 out(layer.out_ch, input.d1, input.d2, input.d3, input.d4);
  for (int a = 0; a < input.d1; ++a)
    for (int ka = 0; ka < k; ++ka) {
      const int sa = a + ka - pad;
      if (sa < 0 || sa >= input.d1) continue;
      for (int o = 0; o < layer.out_ch; ++o) {
        float* out_s = &out.data[out.index(o, a, 0, 0, 0)];
        for (int ic = 0; ic < layer.in_ch; ++ic) {
          const float* in_s = &input.data[input.index(ic, sa, 0, 0, 0)];
          const float* w_s =
              &layer.weights[layer.weight_index(o, ic, ka, 0, 0, 0)];
          detail::conv3d_accumulate(in_s, input.d2, input.d3, input.d4, w_s, k, out_s);
        }
      }
    }
  for (int o = 0; o < layer.out_ch; ++o) {
    const float b = layer.bias[o];
    float* dst = &out.data[static_cast<size_t>(o) * input.d1 * slice];
    const size_t n = static_cast<size_t>(input.d1) * slice;
    for (size_t idx = 0; idx < n; ++idx) dst[idx] += b;
  }
  return out;
}

/// Per-layer forward cache for backpropagation: the input to each layer
/// and its pre-activation output.
struct NcnetCache {
  std::vector<Tensor4> inputs;
  std::vector<Tensor4> preacts;
};

/// Sequential layer stack with ReLU after every layer (the last one
/// only when config.final_relu).
inline Tensor4 ncnet_forward(const Tensor4& input, const NCNetParams& params,
                             NcnetCache* cache = nullptr) {
  if (input.channels != 1)
    throw std::invalid_argument("ncnet_forward: single-channel input required");
  Tensor4 x = input;
  if (cache) {
    cache->inputs.clear();
    cache->preacts.clear();
  }
  for (size_t li = 0; li < params.layers.size(); ++li) {
    if (cache) cache->inputs.push_back(x);
    Tensor4 z = conv4d_aggregated(x, params.layers[li]);
    if (cache) cache->preacts.push_back(z);
    const bool apply_relu =
        li + 1 < params.layers.size() || params.config.final_relu;
    x = apply_relu ? relu(z) : std::move(z);
  }
  return x;
}

/// Order-invariant application: N(c) + transpose(N(transpose(c))).
inline CorrTensor ncnet_symmetric(const CorrTensor& c, const NCNetParams& params,
                                  NcnetCache* cache_fwd = nullptr,
                                  NcnetCache* cache_swp = nullptr) {
  if (c.stage != CorrStage::Raw && c.stage != CorrStage::Mnn)
    throw std::invalid_argument("ncnet_symmetric: expected raw or mnn stage, got " +
                                std::string(to_string(c.stage)));
  Tensor4 fwd = ncnet_forward(c.tensor, params, cache_fwd);
  Tensor4 swp = ncnet_forward(transpose_pairs(c.tensor), params, cache_swp);
  Tensor4 swp_t = transpose_pairs(swp);
  for (size_t i = 0; i < fwd.data.size(); ++i) fwd.data[i] += swp_t.data[i];
  return CorrTensor(std::move(fwd), CorrStage::Nc);
}

/// Uniform fan-in initialization: weights in +-(1/fan_in)^(1/2) with
/// fan_in = in_ch * k^4, biases zero.
inline NCNetParams init_params(const NCNetConfig& config, uint32_t seed) {
  if (config.k % 2 == 0) throw std::invalid_argument("init_params: kernel size must be odd");
  if (config.num_layers < 1)
    throw std::invalid_argument("init_params: num_layers must be >= 1");
  NCNetParams p;
  p.config = config;
  std::mt19937 rng(seed);
  for (int li = 0; li < config.num_layers; ++li) {
    const int in_ch = li == 0 ? 1 : config.hidden_channels;
    const int out_ch = li == config.num_layers - 1 ? 1 : config.hidden_channels;
    Conv4dLayer layer(in_ch, out_ch, config.k);
    const double fan_in = static_cast<double>(in_ch) * config.k * config.k *
                          config.k * config.k;
    const float bound = static_cast<float>(1.0 / std::sqrt(fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (float& w : layer.weights) w = dist(rng);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

// ---------------------------------------------------------------------------
// NCW1 weights file format:
//   magic "NCW1", little-endian u32 layer_count,
//   per layer: u32 in_ch, out_ch, k,
//              out_ch*in_ch*k^4 f32 weights ([out][in][k][k][k][k]),
//              out_ch f32 biases.
// ---------------------------------------------------------------------------

inline void save_params(const NCNetParams& p, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.write("NCW1", 4);
  detail::write_u32(os, static_cast<uint32_t>(p.layers.size()));
  for (const Conv4dLayer& layer : p.layers) {
    detail::write_u32(os, static_cast<uint32_t>(layer.in_ch));
    detail::write_u32(os, static_cast<uint32_t>(layer.out_ch));
    detail::write_u32(os, static_cast<uint32_t>(layer.k));
    detail::write_f32_array(os, layer.weights);
    detail::write_f32_array(os, layer.bias);
  }
  if (!os) throw DataError("write failed: " + path);
}

inline NCNetParams load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4)) throw TruncatedFileError("truncated file: " + path);
  if (std::memcmp(magic, "NCW1", 4) != 0)
    throw BadMagicError("bad magic in weights file: " + path);
  const uint32_t n_layers = detail::read_u32(is, "layer_count");
  if (n_layers == 0 || n_layers > 64)
    throw DimensionError("weights file layer count invalid: " + path);
  NCNetParams p;
  for (uint32_t li = 0; li < n_layers; ++li) {
    const uint32_t in_ch = detail::read_u32(is, "in_ch");
    const uint32_t out_ch = detail::read_u32(is, "out_ch");
    const uint32_t k = detail::read_u32(is, "k");
    if (in_ch == 0 || out_ch == 0 || k == 0 || k % 2 == 0 || k > 31 ||
        in_ch > 4096 || out_ch > 4096)
      throw DimensionError("weights file layer config invalid: " + path);
    if (li == 0 && in_ch != 1)
      throw DimensionError("weights file: first layer in_ch must be 1: " + path);
    if (li > 0 && static_cast<int>(in_ch) != p.layers.back().out_ch)
      throw DimensionError("weights file: channel chain broken at layer " +
                           std::to_string(li) + ": " + path);
    Conv4dLayer layer(static_cast<int>(in_ch), static_cast<int>(out_ch),
                      static_cast<int>(k));
    detail::read_f32_array(is, layer.weights, "layer weights");
    detail::read_f32_array(is, layer.bias, "layer biases");
    p.layers.push_back(std::move(layer));
  }
  if (p.layers.back().out_ch != 1)
    throw DimensionError("weights file: last layer out_ch must be 1: " + path);
  p.config.num_layers = static_cast<int>(n_layers);
  p.config.k = p.layers.front().k;
  p.config.hidden_channels =
      n_layers > 1 ? p.layers.front().out_ch : p.config.hidden_channels;
  return p;
}

}  // namespace ncmatch

#endif  // NCMATCH_NCNET_HPP_
