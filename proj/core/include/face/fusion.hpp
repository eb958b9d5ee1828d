#pragma once

#include <vector>

#include "face/nn.hpp"

// Cross-view fusion: align the spatial view with the graph view, capture
// cross-view dependencies with multi-head attention over the two view tokens,
// refine the spatial token residually, and concatenate.
namespace face::cvf {

struct FusionParams {
  ad::Var align_w;  // D x Fg
  ad::Var align_b;  // 1 x Fg
  struct Head {
    ad::Var wq, wk, wv;  // Fg x head_dim
  };
  std::vector<Head> heads;
  ad::Var out_proj;  // (heads * head_dim) x Fg
};

/// Project the spatial feature into the graph view's space.
ad::Var align_view(const ad::Var& zs, const FusionParams& p);

struct AttentionResult {
  ad::Var output;                     // recalibration signal at token 0
  std::vector<ad::Var> head_outputs;  // pre-projection per-head outputs
  std::vector<Tensor> weights;        // per-head attention rows (batch x T)
};

/// Scaled-dot-product attention with token 0 as the query over all tokens.
/// Every token is batch x Fg; heads are concatenated and projected by
/// `out_proj`.
AttentionResult cross_view_attention(const std::vector<ad::Var>& tokens, const FusionParams& p);

/// Unified representation: [aligned + attention-refinement ; graph view].
ad::Var fuse(const ad::Var& zs_aligned, const ad::Var& zg, const FusionParams& p);

}  // namespace face::cvf
