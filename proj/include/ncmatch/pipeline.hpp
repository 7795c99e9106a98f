#ifndef NCMATCH_PIPELINE_HPP_
#define NCMATCH_PIPELINE_HPP_

#include <optional>
#include <utility>

#include "ncmatch/assignment.hpp"
#include "ncmatch/correlation.hpp"
#include "ncmatch/features.hpp"
#include "ncmatch/matchfilter.hpp"
#include "ncmatch/ncnet.hpp"

namespace ncmatch {

struct PipelineOutput {
  CorrTensor final;
  std::optional<RelocShifts> shifts;
  MatchSet matches;
};

/// End-to-end matching: correlate -> soft-MNN -> symmetric NC-net ->
/// soft-MNN -> extraction. With relocalize, the correlation is computed
/// at the native (2h x 2w) feature resolution and max-pooled once before
/// filtering; the recorded shifts refine the final coordinates.
inline PipelineOutput match_pipeline(const FeatureMap& fa, const FeatureMap& fb,
                                     const NCNetParams& params, bool relocalize = false) {
  PipelineOutput out;
  CorrTensor corr = correlate(fa, fb);
  if (relocalize) {
    PooledCorr pooled = maxpool_downsample(corr);
    corr = std::move(pooled.pooled);
    out.shifts = std::move(pooled.shifts);
  }
  CorrTensor mnn = soft_mutual_nn(corr);
  CorrTensor nc = ncnet_symmetric(mnn, params);
  out.final = soft_mutual_nn(nc);
  out.matches = extract_matches(out.final, fa, fb, out.shifts);
  return out;
}

/// Ablation baseline: hard mutual-NN filtering of the raw correlation
/// (non-mutual entries zeroed), then the same extraction.
inline PipelineOutput mnn_baseline_pipeline(const FeatureMap& fa, const FeatureMap& fb) {
  PipelineOutput out;
  CorrTensor corr = correlate(fa, fb);
  Tensor4 filtered(1, corr.tensor.d1, corr.tensor.d2, corr.tensor.d3, corr.tensor.d4);
  for (const auto& [i, j, k, l] : hard_mutual_nn(corr))
    filtered.at(0, i, j, k, l) = corr.tensor.at(0, i, j, k, l);
  out.final = CorrTensor(std::move(filtered), CorrStage::Final);
  out.matches = extract_matches(out.final, fa, fb);
  return out;
}

}  // namespace ncmatch

#endif  // NCMATCH_PIPELINE_HPP_
