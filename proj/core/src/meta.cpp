#include "face/meta.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

namespace face::meta {

namespace {

using nlohmann::ordered_json;

std::vector<int> argmax_rows(const Tensor& probs) {
  std::vector<int> out(probs.rows());
  for (int64_t i = 0; i < probs.rows(); ++i) {
    const float* row = probs.data() + i * probs.cols();
    out[i] = static_cast<int>(std::max_element(row, row + probs.cols()) - row);
  }
  return out;
}

void check_finite(const Tensor& t, const std::string& what) {
  const int64_t bad = t.first_non_finite();
  if (bad >= 0)
    throw Error(what + ": non-finite value at flat index " + std::to_string(bad) + " of " +
                t.shape_str());
}

}  // namespace

void MetaConfig::validate() const {
  if (inner_rate < 0) throw Error("MetaConfig: inner rate must be >= 0");
  if (outer_rate <= 0) throw Error("MetaConfig: outer rate must be > 0");
  if (inner_steps < 0) throw Error("MetaConfig: inner step count must be >= 0");
  if (subjects_per_episode < 1) throw Error("MetaConfig: need >= 1 subject per episode");
  if (shots < 1) throw Error("MetaConfig: need >= 1 shot");
  if (query < 1) throw Error("MetaConfig: need a non-empty query set");
  if (label_smoothing < 0 || label_smoothing >= 1)
    throw Error("MetaConfig: label smoothing must lie in [0, 1)");
  if (batch_size < 1) throw Error("MetaConfig: batch size must be >= 1");
}

std::string MetaConfig::to_json() const {
  ordered_json j{{"inner_rate", inner_rate},
                 {"outer_rate", outer_rate},
                 {"inner_steps", inner_steps},
                 {"subjects_per_episode", subjects_per_episode},
                 {"episodes", episodes},
                 {"shots", shots},
                 {"query", query},
                 {"label_smoothing", label_smoothing},
                 {"second_order", second_order},
                 {"pretrain_epochs", pretrain_epochs},
                 {"pretrain_rate", pretrain_rate},
                 {"batch_size", batch_size}};
  return j.dump();
}

MetaConfig MetaConfig::from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  MetaConfig c;
  c.inner_rate = j.value("inner_rate", c.inner_rate);
  c.outer_rate = j.value("outer_rate", c.outer_rate);
  c.inner_steps = j.value("inner_steps", c.inner_steps);
  c.subjects_per_episode = j.value("subjects_per_episode", c.subjects_per_episode);
  c.episodes = j.value("episodes", c.episodes);
  c.shots = j.value("shots", c.shots);
  c.query = j.value("query", c.query);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.second_order = j.value("second_order", c.second_order);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  c.pretrain_rate = j.value("pretrain_rate", c.pretrain_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.validate();
  return c;
}

AdamOptimizer::AdamOptimizer(std::vector<ad::Var> params, float rate, float beta1, float beta2,
                             float eps)
    : params_(std::move(params)), rate_(rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p->value.shape()));
    v_.push_back(Tensor::zeros(p->value.shape()));
  }
}

void AdamOptimizer::step(const std::vector<Tensor>& grads) {
  if (grads.size() != params_.size()) throw Error("AdamOptimizer: gradient count mismatch");
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i]->value;
    const Tensor& g = grads[i];
    if (!p.same_shape(g))
      throw Error("AdamOptimizer: gradient shape " + g.shape_str() + " does not match parameter " +
                  params_[i]->name + " " + p.shape_str());
    for (int64_t k = 0; k < p.numel(); ++k) {
      m_[i].at(k) = beta1_ * m_[i].at(k) + (1.0f - beta1_) * g.at(k);
      v_[i].at(k) = beta2_ * v_[i].at(k) + (1.0f - beta2_) * g.at(k) * g.at(k);
      const float mhat = m_[i].at(k) / bc1;
      const float vhat = v_[i].at(k) / bc2;
      p.at(k) -= rate_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

PretrainStats pretrain(FaceModel& model, const Corpus& corpus, const std::vector<int>& sources,
                       const MetaConfig& cfg, std::mt19937_64& rng, std::ostream* log) {
  cfg.validate();
  if (sources.empty()) throw Error("pretrain: need at least one source subject");

  // Pooled (subject, sample) index.
  std::vector<std::pair<int, int64_t>> pool;
  for (int s : sources)
    for (int64_t i = 0; i < corpus.subjects.at(s).num_samples(); ++i) pool.emplace_back(s, i);

  AdamOptimizer opt(model.params().all_vars(), cfg.pretrain_rate);
  const ParamMap leaves = model.leaf_map();
  const auto wrt = model.params().all_vars();
  PretrainStats stats;

  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    std::shuffle(pool.begin(), pool.end(), rng);
    double loss_sum = 0.0;
    int64_t batches = 0;
    for (size_t off = 0; off < pool.size(); off += cfg.batch_size) {
      const size_t end = std::min(pool.size(), off + cfg.batch_size);
      // Group the slice by subject so each forward gets one homogeneous batch;
      // mixed-subject minibatches would need per-sample subject bookkeeping
      // the Batch layout does not carry.
      std::map<int, std::vector<int64_t>> by_subject;
      for (size_t i = off; i < end; ++i) by_subject[pool[i].first].push_back(pool[i].second);
      for (const auto& [s, indices] : by_subject) {
        Batch batch = corpus.make_batch(s, indices);
        auto probs = model.forward(batch, leaves, nn::BnMode::Train, /*update_running=*/true);
        auto loss = nn::smooth_cross_entropy(probs, batch.labels, corpus.classes(),
                                             cfg.label_smoothing);
        if (!loss->value.all_finite())
          throw Error("pretrain: loss diverged (non-finite) at epoch " + std::to_string(epoch));
        loss_sum += loss->value.at(0) * batch.size();
        auto grads = ad::grad(loss, wrt);
        std::vector<Tensor> g;
        for (const auto& gv : grads) {
          check_finite(gv->value, "pretrain: gradient");
          g.push_back(gv->value);
        }
        opt.step(g);
        ++batches;
      }
    }
    stats.epoch_loss.push_back(pool.empty() ? 0.0 : loss_sum / pool.size());
    if (log)
      *log << "pretrain epoch " << epoch << " loss " << stats.epoch_loss.back() << " ("
           << batches << " batches)\n";
  }

  // Training accuracy on the pooled sources with running-stat inference.
  int64_t correct = 0, total = 0;
  for (int s : sources) {
    std::vector<int64_t> all(corpus.subjects.at(s).num_samples());
    std::iota(all.begin(), all.end(), 0);
    const double acc = score_accuracy(model, corpus, s, all, leaves, nn::BnMode::Infer);
    correct += static_cast<int64_t>(std::lround(acc * all.size()));
    total += all.size();
  }
  stats.train_accuracy = total == 0 ? 0.0 : static_cast<double>(correct) / total;
  return stats;
}

ParamMap inner_update(FaceModel& model, const ParamMap& start, const Batch& support, float rate,
                      int steps, bool second_order, float smoothing) {
  if (support.size() == 0) throw Error("inner_update: empty support set");
  ParamMap pm = start;
  for (int step = 0; step < steps; ++step) {
    auto probs = model.forward(support, pm, nn::BnMode::Train);
    auto loss = nn::smooth_cross_entropy(probs, support.labels, model.config().classes, smoothing);
    auto grads = ad::grad(loss, model.meta_vars(pm));
    const auto& names = model.meta_names();
    for (size_t i = 0; i < names.size(); ++i) {
      auto g = second_order ? grads[i] : ad::detach(grads[i]);
      pm[names[i]] = ad::sub(pm.at(names[i]), ad::scale(g, rate));
    }
  }
  return pm;
}

ad::Var episode_query_loss(FaceModel& model, const Batch& support, const Batch& query,
                           const MetaConfig& cfg) {
  ParamMap adapted = inner_update(model, model.leaf_map(), support, cfg.inner_rate,
                                  cfg.inner_steps, cfg.second_order, cfg.label_smoothing);
  auto probs = model.forward(query, adapted, nn::BnMode::Train);
  return nn::smooth_cross_entropy(probs, query.labels, model.config().classes,
                                  cfg.label_smoothing);
}

std::vector<double> meta_train(FaceModel& model, const Corpus& corpus,
                               const std::vector<int>& sources, const MetaConfig& cfg,
                               std::mt19937_64& rng, std::ostream* log) {
  cfg.validate();
  if (static_cast<int>(sources.size()) < cfg.subjects_per_episode)
    throw Error("meta_train: fewer source subjects than subjects per episode");

  AdamOptimizer opt(model.params().all_vars(), cfg.outer_rate);
  const auto wrt = model.params().all_vars();
  std::vector<double> episode_losses;

  for (int episode = 0; episode < cfg.episodes; ++episode) {
    // Without replacement within the episode, with replacement across them.
    std::vector<int> picks = sources;
    std::shuffle(picks.begin(), picks.end(), rng);
    picks.resize(cfg.subjects_per_episode);

    ad::Var total;
    for (int s : picks) {
      const auto& fs = corpus.subjects.at(s);
      auto ep = data::sample_episode(fs, cfg.shots, cfg.query, rng);
      Batch support = corpus.make_batch(s, ep.support);
      Batch query = corpus.make_batch(s, ep.query);
      auto loss = episode_query_loss(model, support, query, cfg);
      total = total ? ad::add(total, loss) : loss;
    }

    auto grads = ad::grad(total, wrt);
    std::vector<Tensor> g;
    for (size_t i = 0; i < grads.size(); ++i) {
      check_finite(grads[i]->value, "meta_train: outer gradient of " + wrt[i]->name);
      g.push_back(grads[i]->value);
    }
    opt.step(g);
    episode_losses.push_back(total->value.at(0));
    if (log)
      *log << "episode " << episode << " query loss " << episode_losses.back() << "\n";
  }
  return episode_losses;
}

ParamMap test_adapt(FaceModel& model, const Batch& support, const MetaConfig& cfg) {
  // No outer step follows, so the graph-valued update is unnecessary weight.
  return inner_update(model, model.leaf_map(), support, cfg.inner_rate, cfg.inner_steps,
                      /*second_order=*/false, cfg.label_smoothing);
}

Tensor predict(FaceModel& model, const Batch& batch, const ParamMap& pm, nn::BnMode mode) {
  return model.forward(batch, pm, mode)->value;
}

double score_accuracy(FaceModel& model, const Corpus& corpus, int subject,
                      const std::vector<int64_t>& indices, const ParamMap& pm, nn::BnMode mode,
                      int64_t chunk) {
  if (indices.empty()) throw Error("score_accuracy: empty index set");
  int64_t correct = 0;
  for (size_t off = 0; off < indices.size(); off += chunk) {
    const size_t end = std::min(indices.size(), off + chunk);
    Batch batch = corpus.make_batch(
        subject, std::vector<int64_t>(indices.begin() + off, indices.begin() + end));
    const auto pred = argmax_rows(predict(model, batch, pm, mode));
    for (size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == batch.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / indices.size();
}

}  // namespace face::meta
