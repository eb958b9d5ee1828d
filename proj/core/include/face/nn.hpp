#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "face/autodiff.hpp"
#include "face/tensor.hpp"

// Layer primitives shared by the graph-view encoder, the spatial encoder,
// the fusion block and the adapter. Everything is built from ad:: ops so the
// whole network stays differentiable, including through gradient nodes.
namespace face::nn {

enum class BnMode { Train, Infer };

/// Running batch-norm statistics, used only at pure inference.
struct RunningStat {
  Tensor mean;
  Tensor var;

  explicit RunningStat(int64_t features = 0)
      : mean(features > 0 ? Tensor::zeros({1, features}) : Tensor()),
        var(features > 0 ? Tensor::full({1, features}, 1.0f) : Tensor()) {}
};

/// Per-feature batch normalization over the row (batch) axis.
/// Train mode normalizes with batch statistics; Infer mode uses `rs`.
/// When `update_running` is set, `rs` is folded toward the batch statistics.
ad::Var batch_norm(const ad::Var& x, const ad::Var& gamma, const ad::Var& beta, BnMode mode,
                   RunningStat* rs, bool update_running = false, float momentum = 0.1f,
                   float eps = 1e-5f);

/// x (n x in) * w (in x out) + bias (1 x out).
ad::Var linear(const ad::Var& x, const ad::Var& w, const ad::Var& bias);

/// 3x3 same-padding convolution over channel-major maps.
/// x is n x (C*H*W); w is (C*3*3) x F; bias is 1 x F.
/// Returns the patch-major activation (n*H*W) x F, which is also the layout
/// batch norm and ReLU want (per-channel statistics over batch and space).
ad::Var conv3x3_same(const ad::Var& x, const ad::Var& w, const ad::Var& bias, int64_t batch,
                     int64_t channels, int64_t height, int64_t width);

/// Permute a patch-major (n*H*W) x C activation back to channel-major n x (C*H*W).
ad::Var to_channel_major(const ad::Var& x, int64_t batch, int64_t channels, int64_t height,
                         int64_t width);

/// 2x2 max pooling with stride 2 on channel-major maps. Argmax locations are
/// taken from the forward values and held constant in backward.
ad::Var max_pool2x2(const ad::Var& x, int64_t batch, int64_t channels, int64_t height,
                    int64_t width);

/// Same-padding 1-D convolution with a single 1 x K kernel applied along the
/// last extent of x viewed as (rows x B) with `rows` independent series.
ad::Var conv1d_same(const ad::Var& x, const ad::Var& kernel, int64_t rows, int64_t series_len);

/// Row-wise softmax classifier head.
ad::Var classify(const ad::Var& features, const ad::Var& w, const ad::Var& bias);

struct LossDiag {
  int64_t clamped = 0;  // probabilities clamped at the log floor
};

/// Cross-entropy against (1-eps)*onehot + eps/c targets, averaged over rows.
/// Probabilities below 1e-12 are clamped before the log and counted in `diag`.
ad::Var smooth_cross_entropy(const ad::Var& probs, const std::vector<int>& labels, int classes,
                             float smoothing, LossDiag* diag = nullptr);

/// One-hot to smoothed target matrix, exposed for oracle tests.
Tensor smoothed_targets(const std::vector<int>& labels, int classes, float smoothing);

}  // namespace face::nn
