#pragma once

#include "face/nn.hpp"

// Few-shot adapter: bottlenecked residual transform with interleaved batch
// normalization. With a zero up-projection it is an exact identity at
// inference, so the adapter cannot degrade the pretrained model before
// adaptation.
namespace face::fsa {

struct AdapterParams {
  ad::Var down_w;  // Fu x Fb (bottleneck)
  ad::Var down_b;  // 1 x Fb
  ad::Var up_w;    // Fb x Fu, zero-initialized
  ad::Var up_b;    // 1 x Fu
  ad::Var bn1_gamma, bn1_beta;  // on the bottleneck
  ad::Var bn2_gamma, bn2_beta;  // on the restored width
  nn::RunningStat* bn1_rs = nullptr;
  nn::RunningStat* bn2_rs = nullptr;
};

/// relu(BN(up * relu(BN(down * z)))) + z
ad::Var adapt(const ad::Var& zu, const AdapterParams& p, nn::BnMode mode,
              bool update_running = false, float momentum = 0.1f);

/// Softmax prediction head over adapted features.
ad::Var predict(const ad::Var& za, const ad::Var& head_w, const ad::Var& head_b);

}  // namespace face::fsa
