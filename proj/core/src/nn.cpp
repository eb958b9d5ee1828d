#include "face/nn.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <tuple>

namespace face::nn {

namespace {

using ad::Var;

// Gather indices depend only on extents, so they are shared across calls and
// across threads evaluating independent graphs.
class IndexCache {
 public:
  using Key = std::tuple<int, int64_t, int64_t, int64_t, int64_t>;

  ad::IndexVec get(const Key& key, const std::function<std::vector<int64_t>()>& build) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    auto v = std::make_shared<const std::vector<int64_t>>(build());
    cache_.emplace(key, v);
    return v;
  }

 private:
  std::mutex mu_;
  std::map<Key, ad::IndexVec> cache_;
};

IndexCache& index_cache() {
  static IndexCache cache;
  return cache;
}

void check_feature_row(const char* who, const Var& v, int64_t features) {
  if (v->value.rows() != 1 || v->value.cols() != features)
    throw ShapeError(std::string(who) + ": expected 1x" + std::to_string(features) + ", got " +
                     v->value.shape_str());
}

}  // namespace

ad::Var batch_norm(const ad::Var& x, const ad::Var& gamma, const ad::Var& beta, BnMode mode,
                   RunningStat* rs, bool update_running, float momentum, float eps) {
  const int64_t n = x->value.rows();
  const int64_t f = x->value.cols();
  check_feature_row("batch_norm gamma", gamma, f);
  check_feature_row("batch_norm beta", beta, f);

  Var centered, inv_std;
  if (mode == BnMode::Train) {
    auto mean = ad::scale(ad::sum_rows(x), 1.0f / static_cast<float>(n));
    centered = ad::sub(x, ad::broadcast_row(mean, n));
    auto var = ad::scale(ad::sum_rows(ad::mul(centered, centered)), 1.0f / static_cast<float>(n));
    inv_std = ad::div(ad::constant(Tensor::full({1, f}, 1.0f)), ad::sqrt(ad::add_scalar(var, eps)));
    if (update_running && rs) {
      for (int64_t j = 0; j < f; ++j) {
        rs->mean.at(j) = (1.0f - momentum) * rs->mean.at(j) + momentum * mean->value.at(j);
        rs->var.at(j) = (1.0f - momentum) * rs->var.at(j) + momentum * var->value.at(j);
      }
    }
  } else {
    if (!rs || rs->mean.numel() != f)
      throw Error("batch_norm: inference mode needs running statistics");
    centered = ad::sub(x, ad::broadcast_row(ad::constant(rs->mean), n));
    Tensor inv({1, f});
    for (int64_t j = 0; j < f; ++j) inv.at(j) = 1.0f / std::sqrt(rs->var.at(j) + eps);
    inv_std = ad::constant(std::move(inv));
  }
  auto normalized = ad::mul(centered, ad::broadcast_row(inv_std, n));
  return ad::add(ad::mul(normalized, ad::broadcast_row(gamma, n)), ad::broadcast_row(beta, n));
}

ad::Var linear(const ad::Var& x, const ad::Var& w, const ad::Var& bias) {
  auto y = ad::matmul(x, w);
  return ad::add(y, ad::broadcast_row(bias, y->value.rows()));
}

ad::Var conv3x3_same(const ad::Var& x, const ad::Var& w, const ad::Var& bias, int64_t batch,
                     int64_t channels, int64_t height, int64_t width) {
  if (x->value.numel() != batch * channels * height * width)
    throw ShapeError("conv3x3_same: input does not match the declared extents");
  if (w->value.rows() != channels * 9)
    throw ShapeError("conv3x3_same: kernel bank expects " + std::to_string(channels * 9) +
                     " rows, got " + w->value.shape_str());

  auto idx = index_cache().get({0, batch, channels, height, width}, [&] {
    std::vector<int64_t> v;
    v.reserve(batch * height * width * channels * 9);
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t oh = 0; oh < height; ++oh)
        for (int64_t ow = 0; ow < width; ++ow)
          for (int64_t c = 0; c < channels; ++c)
            for (int64_t kh = -1; kh <= 1; ++kh)
              for (int64_t kw = -1; kw <= 1; ++kw) {
                int64_t ih = oh + kh, iw = ow + kw;
                bool inside = ih >= 0 && ih < height && iw >= 0 && iw < width;
                v.push_back(inside ? ((b * channels + c) * height + ih) * width + iw : -1);
              }
    return v;
  });
  auto patches = ad::gather(x, idx, {batch * height * width, channels * 9});
  return linear(patches, w, bias);
}

ad::Var to_channel_major(const ad::Var& x, int64_t batch, int64_t channels, int64_t height,
                         int64_t width) {
  if (x->value.numel() != batch * channels * height * width)
    throw ShapeError("to_channel_major: input does not match the declared extents");
  auto idx = index_cache().get({1, batch, channels, height, width}, [&] {
    std::vector<int64_t> v(batch * channels * height * width);
    int64_t p = 0;
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t c = 0; c < channels; ++c)
        for (int64_t h = 0; h < height; ++h)
          for (int64_t w = 0; w < width; ++w)
            v[p++] = ((b * height + h) * width + w) * channels + c;
    return v;
  });
  return ad::gather(x, idx, {batch, channels * height * width});
}

ad::Var max_pool2x2(const ad::Var& x, int64_t batch, int64_t channels, int64_t height,
                    int64_t width) {
  if (height % 2 != 0 || width % 2 != 0) throw ShapeError("max_pool2x2: extents must be even");
  if (x->value.numel() != batch * channels * height * width)
    throw ShapeError("max_pool2x2: input does not match the declared extents");
  const int64_t oh = height / 2, ow = width / 2;
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(batch * channels * oh * ow);
  const Tensor& v = x->value;
  for (int64_t bc = 0; bc < batch * channels; ++bc)
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        int64_t base = bc * height * width;
        int64_t best = base + (2 * i) * width + 2 * j;
        for (int64_t dh = 0; dh < 2; ++dh)
          for (int64_t dw = 0; dw < 2; ++dw) {
            int64_t cand = base + (2 * i + dh) * width + (2 * j + dw);
            if (v.at(cand) > v.at(best)) best = cand;
          }
        idx->push_back(best);
      }
  return ad::gather(x, ad::IndexVec(idx), {batch, channels * oh * ow});
}

ad::Var conv1d_same(const ad::Var& x, const ad::Var& kernel, int64_t rows, int64_t series_len) {
  const int64_t k = kernel->value.numel();
  if (k % 2 == 0) throw ShapeError("conv1d_same: kernel width must be odd");
  if (x->value.numel() != rows * series_len)
    throw ShapeError("conv1d_same: input does not match the declared extents");
  const int64_t pad = k / 2;
  auto idx = index_cache().get({2, rows, series_len, k, 0}, [&] {
    std::vector<int64_t> v;
    v.reserve(rows * series_len * k);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t t = 0; t < series_len; ++t)
        for (int64_t j = 0; j < k; ++j) {
          int64_t src = t + j - pad;
          v.push_back(src >= 0 && src < series_len ? r * series_len + src : -1);
        }
    return v;
  });
  auto windows = ad::gather(x, idx, {rows * series_len, k});
  auto y = ad::matmul(windows, ad::reshape(kernel, {k, 1}));
  return ad::reshape(y, x->value.shape());
}

ad::Var classify(const ad::Var& features, const ad::Var& w, const ad::Var& bias) {
  return ad::softmax_rows(linear(features, w, bias));
}

Tensor smoothed_targets(const std::vector<int>& labels, int classes, float smoothing) {
  const int64_t n = static_cast<int64_t>(labels.size());
  Tensor t({n, classes});
  const float off = smoothing / static_cast<float>(classes);
  const float on = 1.0f - smoothing + off;
  for (int64_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw Error("smoothed_targets: label " + std::to_string(labels[i]) + " out of range");
    for (int j = 0; j < classes; ++j) t.at(i * classes + j) = j == labels[i] ? on : off;
  }
  return t;
}

ad::Var smooth_cross_entropy(const ad::Var& probs, const std::vector<int>& labels, int classes,
                             float smoothing, LossDiag* diag) {
  const int64_t n = probs->value.rows();
  if (probs->value.cols() != classes) throw ShapeError("smooth_cross_entropy: class count mismatch");
  if (n != static_cast<int64_t>(labels.size()))
    throw ShapeError("smooth_cross_entropy: batch/label count mismatch");
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < classes; ++j) s += probs->value.at(i * classes + j);
    if (std::abs(s - 1.0) > 1e-5)
      throw Error("smooth_cross_entropy: row " + std::to_string(i) + " does not sum to 1");
  }

  Tensor targets = smoothed_targets(labels, classes, smoothing);
  constexpr float kLogFloor = 1e-12f;
  if (diag) {
    for (int64_t i = 0; i < probs->value.numel(); ++i)
      if (probs->value.at(i) < kLogFloor && targets.at(i) > 0.0f) ++diag->clamped;
  }
  auto log_p = ad::log(ad::clamp_min(probs, kLogFloor));
  auto weighted = ad::mul(ad::constant(std::move(targets)), log_p);
  return ad::scale(ad::sum_all(weighted), -1.0f / static_cast<float>(n));
}

}  // namespace face::nn
