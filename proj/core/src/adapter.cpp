#include "face/adapter.hpp"

namespace face::fsa {

ad::Var adapt(const ad::Var& zu, const AdapterParams& p, nn::BnMode mode, bool update_running,
              float momentum) {
  if (p.down_w->value.cols() >= p.down_w->value.rows())
    throw Error("adapt: bottleneck width must be smaller than the feature width");
  auto h = nn::linear(zu, p.down_w, p.down_b);
  h = nn::batch_norm(h, p.bn1_gamma, p.bn1_beta, mode, p.bn1_rs, update_running, momentum);
  h = ad::relu(h);
  h = nn::linear(h, p.up_w, p.up_b);
  h = nn::batch_norm(h, p.bn2_gamma, p.bn2_beta, mode, p.bn2_rs, update_running, momentum);
  h = ad::relu(h);
  return ad::add(h, zu);
}

ad::Var predict(const ad::Var& za, const ad::Var& head_w, const ad::Var& head_b) {
  return nn::classify(za, head_w, head_b);
}

}  // namespace face::fsa
