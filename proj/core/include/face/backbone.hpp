#pragma once

#include <array>

#include "face/nn.hpp"

// The two view encoders: a dynamic-adjacency graph encoder over channels and
// a three-block spatial CNN over the projected scalp grid.
namespace face::backbone {

/// A_d = sigmoid(expand * relu(reduce * base)). The sigmoid keeps every entry
/// in (0,1), so the degree matrix of A_d is always invertible.
struct AdjacencyParams {
  ad::Var base;    // C x C
  ad::Var reduce;  // (C/r) x C
  ad::Var expand;  // C x (C/r)
};

ad::Var dynamic_adjacency(const AdjacencyParams& p);

struct DgcnParams {
  AdjacencyParams adj;
  ad::Var kernel1, kernel2;  // 1 x K band convolutions, stride 1
  ad::Var bn1_gamma, bn1_beta;
  ad::Var bn2_gamma, bn2_beta;
  ad::Var bn3_gamma, bn3_beta;
  nn::RunningStat* bn1_rs = nullptr;
  nn::RunningStat* bn2_rs = nullptr;
  nn::RunningStat* bn3_rs = nullptr;
};

/// Two-layer residual graph encoding of x (batch x C*B):
///   H = BN(k2 * relu(BN(k1 * x)))
///   Z = BN(D^-1 A_d H + x)
/// Output stays batch x (C*B).
ad::Var dgcn_encode(const ad::Var& x, int64_t batch, int64_t channels, int64_t bands,
                    const DgcnParams& p, nn::BnMode mode, bool update_running = false,
                    float momentum = 0.1f);

struct Conv3Params {
  struct Block {
    ad::Var w;     // (Cin*3*3) x F
    ad::Var bias;  // 1 x F
    ad::Var bn_gamma, bn_beta;
    nn::RunningStat* rs = nullptr;
  };
  std::array<Block, 3> blocks;
};

/// conv -> BN -> ReLU per block, 2x2 max pool after blocks 1 and 2 only.
/// Input is batch x (B*H*W) channel-major; output batch x (F*(H/4)*(W/4))
/// flattened channel-major.
ad::Var conv3_encode(const ad::Var& s, int64_t batch, int64_t bands, int64_t height, int64_t width,
                     const Conv3Params& p, nn::BnMode mode, bool update_running = false,
                     float momentum = 0.1f);

}  // namespace face::backbone
