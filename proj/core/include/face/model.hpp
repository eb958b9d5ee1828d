#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "face/adapter.hpp"
#include "face/backbone.hpp"
#include "face/dataset.hpp"
#include "face/fusion.hpp"

namespace face {

/// META parameters are the target of per-subject inner-loop adaptation;
/// BASE parameters (the pretrained encoders and view alignment) only move in
/// the outer meta-update.
enum class Partition { Base, Meta };

/// Named parameter store with a META/BASE partition tag per tensor.
class ParamSet {
 public:
  void add(const std::string& name, Tensor value, Partition tag);
  const ad::Var& at(const std::string& name) const;
  Partition tag(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  std::vector<std::string> names_of(Partition tag) const;
  std::vector<ad::Var> vars_of(Partition tag) const;
  std::vector<ad::Var> all_vars() const;
  int64_t count(Partition tag) const;
  bool has(const std::string& name) const { return vars_.count(name) > 0; }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, ad::Var> vars_;
  std::unordered_map<std::string, Partition> tags_;
};

/// Name -> node binding used by a forward pass. Inner-loop adaptation swaps
/// META entries for on-graph update expressions; BASE entries always point at
/// the stored leaves.
using ParamMap = std::unordered_map<std::string, ad::Var>;

struct ModelConfig {
  int channels = 62;
  int bands = 5;
  int classes = 3;
  int grid = 32;               // resized spatial resolution
  int conv_filters = 32;
  int reduction = 2;           // adjacency bottleneck ratio r
  int band_kernel = 5;         // 1 x K band convolution width
  int heads = 2;               // attention head count L
  int head_dim = 24;           // per-head key/value width
  int adapter_bottleneck = 64;
  bool use_cvf = true;
  bool use_fsa = true;
  float bn_momentum = 0.1f;

  int64_t graph_dim() const { return static_cast<int64_t>(channels) * bands; }
  int64_t spatial_dim() const {
    return static_cast<int64_t>(conv_filters) * (grid / 4) * (grid / 4);
  }
  int64_t fused_dim() const { return use_cvf ? 2 * graph_dim() : graph_dim(); }

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// A batch ready for the two encoders.
struct Batch {
  Tensor graph_x;    // {n, C, B}
  Tensor spatial_x;  // {n, B*grid*grid}
  std::vector<int> labels;

  int64_t size() const { return graph_x.shape().empty() ? 0 : graph_x.shape()[0]; }
};

/// A loaded dataset with per-subject spatial projections precomputed.
struct Corpus {
  std::vector<data::FeatureSet> subjects;
  std::vector<Tensor> spatial;  // per subject {N, B*grid*grid}
  data::ElectrodeMap map;
  int grid = 32;

  static Corpus build(std::vector<data::FeatureSet> subjects, data::ElectrodeMap map,
                      int grid = 32);
  Batch make_batch(int subject, const std::vector<int64_t>& indices) const;
  int classes() const { return subjects.at(0).classes; }
};

class FaceModel {
 public:
  FaceModel(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  std::map<std::string, nn::RunningStat>& running_stats() { return stats_; }

  /// Leaf bindings for a plain (non-adapted) forward pass.
  ParamMap leaf_map() const;
  /// META parameter names in a fixed order.
  const std::vector<std::string>& meta_names() const { return meta_names_; }
  std::vector<ad::Var> meta_vars(const ParamMap& pm) const;

  /// Class probabilities for a batch. `update_running` folds batch statistics
  /// into the running estimates (pretraining only).
  ad::Var forward(const Batch& batch, const ParamMap& pm, nn::BnMode mode,
                  bool update_running = false);

  /// Fraction of all parameters in the META partition.
  double meta_fraction() const;

 private:
  ModelConfig cfg_;
  ParamSet params_;
  std::map<std::string, nn::RunningStat> stats_;
  std::vector<std::string> meta_names_;
};

/// Checkpointing: manifest plus raw parameter arrays, the same container
/// conventions as the dataset format.
void save_checkpoint(const FaceModel& model, const std::filesystem::path& dir);
FaceModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace face
