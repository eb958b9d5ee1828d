#include "face/backbone.hpp"

#include <memory>

namespace face::backbone {

namespace {

// (batch, C, B) channel-major <-> (C, batch*B) node-major, so the graph
// aggregation is a single C x C by C x (batch*B) product.
ad::IndexVec node_major_index(int64_t batch, int64_t channels, int64_t bands) {
  auto v = std::make_shared<std::vector<int64_t>>();
  v->reserve(batch * channels * bands);
  for (int64_t c = 0; c < channels; ++c)
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t f = 0; f < bands; ++f) v->push_back((b * channels + c) * bands + f);
  return v;
}

ad::IndexVec batch_major_index(int64_t batch, int64_t channels, int64_t bands) {
  auto v = std::make_shared<std::vector<int64_t>>();
  v->reserve(batch * channels * bands);
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t c = 0; c < channels; ++c)
      for (int64_t f = 0; f < bands; ++f) v->push_back((c * batch + b) * bands + f);
  return v;
}

}  // namespace

ad::Var dynamic_adjacency(const AdjacencyParams& p) {
  return ad::sigmoid(ad::matmul(p.expand, ad::relu(ad::matmul(p.reduce, p.base))));
}

ad::Var dgcn_encode(const ad::Var& x, int64_t batch, int64_t channels, int64_t bands,
                    const DgcnParams& p, nn::BnMode mode, bool update_running, float momentum) {
  if (x->value.rows() != batch || x->value.cols() != channels * bands)
    throw ShapeError("dgcn_encode: input is " + x->value.shape_str() + ", expected " +
                     std::to_string(batch) + "x" + std::to_string(channels * bands));

  // Band convolutions, each followed by per-feature batch norm.
  auto h = nn::conv1d_same(x, p.kernel1, batch * channels, bands);
  h = ad::reshape(h, {batch, channels * bands});
  h = nn::batch_norm(h, p.bn1_gamma, p.bn1_beta, mode, p.bn1_rs, update_running, momentum);
  h = ad::relu(h);
  h = nn::conv1d_same(h, p.kernel2, batch * channels, bands);
  h = nn::batch_norm(h, p.bn2_gamma, p.bn2_beta, mode, p.bn2_rs, update_running, momentum);

  // Row-normalized aggregation with residual input.
  auto adjacency = dynamic_adjacency(p.adj);
  auto degree = ad::sum_cols(adjacency);
  for (int64_t i = 0; i < channels; ++i)
    if (degree->value.at(i) == 0.0f)
      throw Error("dgcn_encode: zero row sum in the adjacency matrix (row " + std::to_string(i) +
                  ")");
  auto laplacian = ad::div(adjacency, ad::broadcast_col(degree, channels));

  auto h_nodes = ad::gather(h, node_major_index(batch, channels, bands), {channels, batch * bands});
  auto mixed = ad::matmul(laplacian, h_nodes);
  auto mixed_batch =
      ad::gather(mixed, batch_major_index(batch, channels, bands), {batch, channels * bands});
  auto residual = ad::add(mixed_batch, x);
  return nn::batch_norm(residual, p.bn3_gamma, p.bn3_beta, mode, p.bn3_rs, update_running,
                        momentum);
}

ad::Var conv3_encode(const ad::Var& s, int64_t batch, int64_t bands, int64_t height, int64_t width,
                     const Conv3Params& p, nn::BnMode mode, bool update_running, float momentum) {
  if (s->value.rows() != batch || s->value.cols() != bands * height * width)
    throw ShapeError("conv3_encode: input is " + s->value.shape_str() + ", expected " +
                     std::to_string(batch) + "x" + std::to_string(bands * height * width));

  ad::Var x = s;
  int64_t channels = bands, h = height, w = width;
  for (int block = 0; block < 3; ++block) {
    const auto& blk = p.blocks[block];
    const int64_t filters = blk.w->value.cols();
    auto y = nn::conv3x3_same(x, blk.w, blk.bias, batch, channels, h, w);
    y = nn::batch_norm(y, blk.bn_gamma, blk.bn_beta, mode, blk.rs, update_running, momentum);
    y = ad::relu(y);
    x = nn::to_channel_major(y, batch, filters, h, w);
    channels = filters;
    if (block < 2) {  // final pooling omitted to keep spatial detail
      x = nn::max_pool2x2(x, batch, channels, h, w);
      h /= 2;
      w /= 2;
    }
  }
  return x;  // batch x (F * h * w), channel-major
}

}  // namespace face::backbone
