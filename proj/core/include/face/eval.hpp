#pragma once

#include <filesystem>
#include <ostream>

#include "face/meta.hpp"

// Leave-one-subject-out evaluation harness, repeated-trial statistics,
// paired significance testing and report serialization.
namespace face::eval {

struct EvalConfig {
  int shots = 5;
  int repeats = 200;
  uint64_t seed = 0;
  bool audit = false;  // keep per-trial support/query indices in the report

  void validate() const;
};

struct TrialResult {
  std::string subject;
  int subject_index = 0;
  int trial = 0;
  uint64_t seed = 0;
  int shots = 0;
  double accuracy = 0.0;                // correct / total on the query set
  std::vector<int64_t> support, query;  // audit mode only
};

struct SubjectReport {
  std::string subject;
  int subject_index = 0;
  double mean = 0.0;
  double stddev = 0.0;
  int trials = 0;
};

struct RunReport {
  std::string model_config;  // JSON snapshot
  std::string meta_config;   // JSON snapshot
  int shots = 0;
  int repeats = 0;
  uint64_t seed = 0;
  std::vector<TrialResult> trials;
  std::vector<SubjectReport> subjects;
  double grand_mean = 0.0;  // mean of per-subject means (subject-balanced)
  double grand_std = 0.0;   // sample std of per-subject means
  double pooled_mean = 0.0; // mean over all trials

  /// Recompute subjects and the aggregate rows from the trial records.
  void finalize();
};

/// Independent per-trial seed from (base, subject, trial).
uint64_t trial_seed(uint64_t base, int subject, int trial);

/// For every LOSO split: pretrain + meta-train on the sources, then run
/// `repeats` adaptation trials against the held-out target, scoring on every
/// target sample outside the support set. `partial` (optional) is kept current
/// trial by trial so callers can flush progress if a later split aborts.
RunReport run_loso(const Corpus& corpus, const ModelConfig& model_cfg,
                   const meta::MetaConfig& meta_cfg, const EvalConfig& cfg,
                   std::ostream* log = nullptr, RunReport* partial = nullptr);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  bool degenerate = false;  // zero variance of the differences
};

/// Two-sided paired t-test with n-1 degrees of freedom. Zero-variance
/// differences use the degenerate convention: p=1 if the means agree,
/// p=0 otherwise.
TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b);

struct AblationEntry {
  bool cvf = true;
  bool fsa = true;
  RunReport report;
};

/// run_loso per CVF/FSA switch combination, full model first.
std::vector<AblationEntry> ablation_run(const Corpus& corpus, ModelConfig model_cfg,
                                        const meta::MetaConfig& meta_cfg, const EvalConfig& cfg,
                                        std::ostream* log = nullptr);

/// format "json" round-trips through load_report; "csv" writes one row per
/// trial plus summary rows. Serialization is deterministic.
void emit_report(const RunReport& report, const std::filesystem::path& path,
                 const std::string& format);
RunReport load_report(const std::filesystem::path& path);

}  // namespace face::eval
