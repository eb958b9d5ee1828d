#pragma once

#include <ostream>

#include "face/model.hpp"

// Two-stage optimization: supervised pretraining on pooled source subjects,
// then episodic bi-level meta-training with partial-parameter inner loops,
// and k-shot test-time adaptation.
namespace face::meta {

struct MetaConfig {
  float inner_rate = 0.01f;      // alpha
  float outer_rate = 0.001f;     // beta
  int inner_steps = 10;          // m
  int subjects_per_episode = 2;  // n
  int episodes = 50;             // N_e
  int shots = 5;                 // K
  int query = 20;                // Q
  float label_smoothing = 0.1f;
  bool second_order = true;
  int pretrain_epochs = 50;
  float pretrain_rate = 0.001f;
  int batch_size = 64;

  void validate() const;
  std::string to_json() const;
  static MetaConfig from_json(const std::string& text);
};

/// Adaptive-moment optimizer over a fixed leaf set; state is positional.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<ad::Var> params, float rate, float beta1 = 0.9f, float beta2 = 0.999f,
                float eps = 1e-8f);
  void step(const std::vector<Tensor>& grads);
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<ad::Var> params_;
  std::vector<Tensor> m_, v_;
  float rate_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

struct PretrainStats {
  std::vector<double> epoch_loss;  // mean smoothed CE per epoch
  double train_accuracy = 0.0;     // pooled sources, running-stat inference
};

/// Minibatch training of all parameters on pooled source data. Updates the
/// batch-norm running statistics (the only stage that does).
PretrainStats pretrain(FaceModel& model, const Corpus& corpus, const std::vector<int>& sources,
                       const MetaConfig& cfg, std::mt19937_64& rng, std::ostream* log = nullptr);

/// `steps` plain gradient-descent updates of the META bindings on the support
/// batch. The returned map binds META names to on-graph update expressions,
/// so an outer loss built from it is differentiable through the adaptation;
/// with `second_order` off the inner gradients are detached first.
ParamMap inner_update(FaceModel& model, const ParamMap& start, const Batch& support, float rate,
                      int steps, bool second_order, float smoothing);

/// Post-adaptation query loss of one episode as a single graph rooted at the
/// stored leaves. Exposed for the finite-difference oracle of the outer step.
ad::Var episode_query_loss(FaceModel& model, const Batch& support, const Batch& query,
                           const MetaConfig& cfg);

/// Algorithm: per episode sample n distinct source subjects, inner-adapt each
/// on its support set, sum post-adaptation query losses, and take one outer
/// optimizer step on all parameters through the inner updates.
/// Returns the per-episode summed query loss.
std::vector<double> meta_train(FaceModel& model, const Corpus& corpus,
                               const std::vector<int>& sources, const MetaConfig& cfg,
                               std::mt19937_64& rng, std::ostream* log = nullptr);

/// Inner-loop mechanics on target support with no outer step; the result is
/// ready for query inference.
ParamMap test_adapt(FaceModel& model, const Batch& support, const MetaConfig& cfg);

/// Eager class probabilities for a batch under the given bindings.
Tensor predict(FaceModel& model, const Batch& batch, const ParamMap& pm, nn::BnMode mode);

/// Fraction of correctly argmax-classified samples, evaluated in chunks so
/// large query sets never build one huge graph.
double score_accuracy(FaceModel& model, const Corpus& corpus, int subject,
                      const std::vector<int64_t>& indices, const ParamMap& pm, nn::BnMode mode,
                      int64_t chunk = 128);

}  // namespace face::meta
