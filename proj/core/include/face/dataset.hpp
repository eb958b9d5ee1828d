#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "face/tensor.hpp"

// Dataset ingestion, synthetic multi-subject generation, spatial projection
// and episode/split sampling.
namespace face::data {

/// Precomputed differential-entropy features for one subject:
/// samples is N x C x B (channels x frequency bands), labels are class ids.
struct FeatureSet {
  std::string subject_id;
  Tensor samples;           // {N, C, B}
  std::vector<int> labels;  // N entries in [0, classes)
  int classes = 0;

  int64_t num_samples() const { return samples.shape()[0]; }
  int64_t channels() const { return samples.shape()[1]; }
  int64_t bands() const { return samples.shape()[2]; }
};

/// Channel -> (row, col) placement on an H x W scalp grid.
struct ElectrodeMap {
  int64_t grid_h = 0;
  int64_t grid_w = 0;
  std::vector<std::string> names;                    // channel order
  std::vector<std::pair<int64_t, int64_t>> cells;    // one per channel

  int64_t channels() const { return static_cast<int64_t>(cells.size()); }
  void validate() const;

  static ElectrodeMap load(const std::filesystem::path& json_path,
                           const std::vector<std::string>& channel_order);
  /// Standard 62-channel cap layout on a 9x9 grid.
  static ElectrodeMap standard62();
  /// Row-major placement of C unnamed channels, for synthetic data.
  static ElectrodeMap dense(int64_t channels, int64_t grid_h = 9, int64_t grid_w = 9);
};

/// One subject's support/query split.
struct Episode {
  std::string subject_id;
  std::vector<int64_t> support;  // exactly K per class
  std::vector<int64_t> query;
};

struct LosoSplit {
  int target = 0;               // index into the dataset vector
  std::vector<int> sources;
};

/// Load a dataset directory: manifest.json plus per-subject raw arrays.
std::vector<FeatureSet> load_features(const std::filesystem::path& dir);

/// Write a dataset in the same format load_features reads.
void save_features(const std::filesystem::path& dir, const std::vector<FeatureSet>& subjects,
                   const std::vector<std::string>& channel_names = {});

/// Multi-subject synthetic DE-like features. Subjects share class prototypes
/// and differ by a subject-specific affine distortion scaled by
/// `shift_strength`; deterministic in `seed`.
std::vector<FeatureSet> synth_generate(int num_subjects, int samples_per_class, int classes,
                                       int channels, int bands, float shift_strength,
                                       uint64_t seed);

/// C x B features onto the scalp grid: out[b][row][col] = x[ch][b] at mapped
/// cells, zero elsewhere.
Tensor spatial_project(const Tensor& x, const ElectrodeMap& map);

/// Inverse lookup of spatial_project (exact; test support).
Tensor spatial_unproject(const Tensor& grid, const ElectrodeMap& map);

/// Corner-aligned bilinear interpolation per band, {B,H,W} -> {B,out,out}.
Tensor resize_grid(const Tensor& grid, int64_t out_h = 32, int64_t out_w = 32);

/// Sample a K-shot episode with a class-balanced query of size Q.
Episode sample_episode(const FeatureSet& fs, int shots, int query, std::mt19937_64& rng);
Episode sample_episode(const FeatureSet& fs, int shots, int query, uint64_t seed);

std::vector<LosoSplit> loso_splits(int num_subjects);

}  // namespace face::data
