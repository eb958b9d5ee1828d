#include "face/fusion.hpp"

#include <cmath>

namespace face::cvf {

ad::Var align_view(const ad::Var& zs, const FusionParams& p) {
  return nn::linear(zs, p.align_w, p.align_b);
}

AttentionResult cross_view_attention(const std::vector<ad::Var>& tokens, const FusionParams& p) {
  if (tokens.empty()) throw Error("cross_view_attention: no tokens");
  if (p.heads.empty()) throw Error("cross_view_attention: no attention heads");
  const int64_t n_tokens = static_cast<int64_t>(tokens.size());
  const int64_t head_dim = p.heads[0].wq->value.cols();
  const float inv_scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

  AttentionResult result;
  ad::Var concat;
  for (const auto& head : p.heads) {
    auto q = ad::matmul(tokens[0], head.wq);
    std::vector<ad::Var> values;
    ad::Var scores;
    for (int64_t t = 0; t < n_tokens; ++t) {
      auto k = ad::matmul(tokens[t], head.wk);
      values.push_back(ad::matmul(tokens[t], head.wv));
      auto s = ad::scale(ad::sum_cols(ad::mul(q, k)), inv_scale);  // batch x 1
      scores = t == 0 ? s : ad::concat_cols(scores, s);
    }
    auto attn = ad::softmax_rows(scores);  // batch x T
    result.weights.push_back(attn->value);

    ad::Var out;
    for (int64_t t = 0; t < n_tokens; ++t) {
      auto weighted = ad::mul(ad::broadcast_col(ad::slice_cols(attn, t, 1), head_dim), values[t]);
      out = t == 0 ? weighted : ad::add(out, weighted);
    }
    result.head_outputs.push_back(out);
    concat = concat ? ad::concat_cols(concat, out) : out;
  }
  result.output = ad::matmul(concat, p.out_proj);
  return result;
}

ad::Var fuse(const ad::Var& zs_aligned, const ad::Var& zg, const FusionParams& p) {
  auto refinement = cross_view_attention({zs_aligned, zg}, p).output;
  auto refined = ad::add(zs_aligned, refinement);
  return ad::concat_cols(refined, zg);
}

}  // namespace face::cvf
