// Acceptance gate: one check per release criterion, one PASS/FAIL line each.
// Usage: face_acceptance <path-to-cli-binary>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include "face/eval.hpp"
#include "support/fd.hpp"

using namespace face;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

std::string g_cli;  // path to the command-line binary, for the reproducibility check

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---- shared model profiles ------------------------------------------------

ModelConfig tiny_config() {
  ModelConfig c;
  c.channels = 4;
  c.bands = 3;
  c.classes = 3;
  c.grid = 8;
  c.conv_filters = 2;
  c.reduction = 2;
  c.band_kernel = 3;
  c.heads = 2;
  c.head_dim = 4;
  c.adapter_bottleneck = 4;
  return c;
}

Corpus tiny_corpus(int subjects, int per_class, uint64_t seed) {
  auto cfg = tiny_config();
  auto sets = data::synth_generate(subjects, per_class, cfg.classes, cfg.channels, cfg.bands,
                                   1.0f, seed);
  return Corpus::build(std::move(sets), data::ElectrodeMap::dense(cfg.channels, 2, 2), cfg.grid);
}

// Graph-only model small enough for exhaustive finite differences.
ModelConfig micro_config() {
  ModelConfig c;
  c.channels = 2;
  c.bands = 2;
  c.classes = 2;
  c.reduction = 2;
  c.band_kernel = 1;
  c.use_cvf = false;
  c.adapter_bottleneck = 2;
  return c;
}

// Student-t two-sided tail probability by Simpson integration, independent of
// the statistics library used by the evaluation code.
double t_two_sided(double t, int df) {
  const double v = df;
  const double logc =
      std::lgamma((v + 1) / 2) - std::lgamma(v / 2) - 0.5 * std::log(v * M_PI);
  auto pdf = [&](double x) { return std::exp(logc - (v + 1) / 2 * std::log1p(x * x / v)); };
  const double a = std::abs(t), b = a + 400.0;
  const int steps = 400000;
  const double h = (b - a) / steps;
  double s = pdf(a) + pdf(b);
  for (int i = 1; i < steps; ++i) s += pdf(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return 2.0 * s * h / 3.0;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

// ---- criterion 1: reverse-mode gradients vs finite differences ------------

bool random_gradient_checks(std::string& note) {
  std::mt19937_64 rng(2024);
  int64_t total = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int64_t n = 2 + static_cast<int64_t>(rng() % 3);
    const int64_t k = 2 + static_cast<int64_t>(rng() % 4);
    const int64_t c = 2 + static_cast<int64_t>(rng() % 3);
    auto p = ad::param(Tensor::randn({n, k}, rng, 0.6f), "p");
    auto q = ad::param(Tensor::randn({k, c}, rng, 0.6f), "q");
    auto r = ad::param(Tensor::randn({1, c}, rng, 0.4f), "r");
    const int pick = static_cast<int>(rng() % 6);
    auto build = [&] {
      auto z = ad::add(ad::matmul(p, q), ad::broadcast_row(r, n));
      switch (pick) {
        case 0: z = ad::relu(z); break;
        case 1: z = ad::sigmoid(z); break;
        case 2: z = ad::softmax_rows(z); break;
        case 3: z = ad::exp(ad::scale(z, 0.3f)); break;
        case 4: z = ad::mul(z, ad::sigmoid(z)); break;
        default: z = ad::log(ad::add_scalar(ad::mul(z, z), 1.0f)); break;
      }
      auto folded = ad::sum_rows(ad::mul(z, z));
      return ad::mean_all(folded);
    };
    auto res = test::check_grads(build, {p, q, r});
    total += res.checked;
    if (!res.ok) {
      note = "trial " + std::to_string(trial) + ": " + res.detail;
      return false;
    }
  }
  note = std::to_string(total) + " partial derivatives across 60 random graphs";
  return true;
}

// ---- criterion 2: outer gradients through the inner loop ------------------

bool second_order_oracle(std::string& note) {
  auto mc = micro_config();
  auto sets = data::synth_generate(1, 4, 2, 2, 2, 0.5f, 3);
  auto corpus = Corpus::build(std::move(sets), data::ElectrodeMap::dense(2, 2, 2), mc.grid);
  FaceModel model(mc, 7);
  // The zero-initialized up-projection is a relu kink; differencing across it
  // is meaningless, so move it off first.
  std::mt19937_64 jitter(99);
  model.params().at("adapter.up.w")->value = Tensor::randn({2, 4}, jitter, 0.3f);
  model.params().at("adapter.up.b")->value = Tensor::randn({1, 4}, jitter, 0.1f);
  int64_t total = 0;
  for (const auto& v : model.params().all_vars()) total += v->value.numel();
  if (total > 100) {
    note = "oracle model has " + std::to_string(total) + " parameters (want <= 100)";
    return false;
  }
  Batch support = corpus.make_batch(0, {0, 4, 1, 5});
  Batch query = corpus.make_batch(0, {2, 3, 6, 7});
  for (int steps : {1, 2}) {
    meta::MetaConfig cfg;
    cfg.inner_steps = steps;
    cfg.inner_rate = 0.05f;
    auto build = [&] { return meta::episode_query_loss(model, support, query, cfg); };
    auto res = test::check_grads(build, model.params().all_vars(), 3e-2);
    if (!res.ok) {
      note = "m=" + std::to_string(steps) + ": " + res.detail;
      return false;
    }
  }
  note = std::to_string(total) + " parameters, unrolled depth 1 and 2";
  return true;
}

// ---- criterion 3: the partition contract ----------------------------------

bool partition_contract(std::string& note) {
  auto corpus = tiny_corpus(3, 8, 11);
  FaceModel model(tiny_config(), 3);
  std::vector<Tensor> before;
  for (const auto& v : model.params().vars_of(Partition::Base)) before.push_back(v->value);
  std::mt19937_64 rng(0);
  for (int round = 0; round < 1000; ++round) {
    auto ep = data::sample_episode(corpus.subjects[round % 3], 2, 6, rng);
    Batch support = corpus.make_batch(round % 3, ep.support);
    meta::inner_update(model, model.leaf_map(), support, 0.05f, 1, (round % 2) == 0, 0.1f);
  }
  auto base = model.params().vars_of(Partition::Base);
  for (size_t i = 0; i < base.size(); ++i)
    if (base[i]->value.vec() != before[i].vec()) {
      note = "a backbone tensor changed during inner-loop adaptation";
      return false;
    }
  note = "1000 inner updates, all backbone tensors bitwise unchanged";
  return true;
}

// ---- criterion 4: adapter starts as the identity --------------------------

bool adapter_identity(std::string& note) {
  std::mt19937_64 rng(4);
  const int64_t fu = 12, fb = 3;
  fsa::AdapterParams p;
  p.down_w = ad::param(Tensor::randn({fu, fb}, rng, 0.5f), "down.w");
  p.down_b = ad::param(Tensor::randn({1, fb}, rng, 0.2f), "down.b");
  p.up_w = ad::param(Tensor::zeros({fb, fu}), "up.w");
  p.up_b = ad::param(Tensor::zeros({1, fu}), "up.b");
  p.bn1_gamma = ad::constant(Tensor::full({1, fb}, 1.0f));
  p.bn1_beta = ad::constant(Tensor::zeros({1, fb}));
  p.bn2_gamma = ad::constant(Tensor::full({1, fu}, 1.0f));
  p.bn2_beta = ad::constant(Tensor::zeros({1, fu}));
  nn::RunningStat rs1(fb), rs2(fu);
  p.bn1_rs = &rs1;
  p.bn2_rs = &rs2;
  for (int trial = 0; trial < 100; ++trial) {
    auto z = ad::constant(Tensor::randn({4, fu}, rng, 2.0f));
    auto out = fsa::adapt(z, p, nn::BnMode::Infer);
    if (out->value.vec() != z->value.vec()) {
      note = "trial " + std::to_string(trial) + ": output differs from input";
      return false;
    }
  }
  note = "bit-exact identity on 100 random inputs";
  return true;
}

// ---- criterion 5: attention invariants ------------------------------------

bool attention_invariants(std::string& note) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t fg = 3 + static_cast<int64_t>(rng() % 6);
    const int heads = 1 + static_cast<int>(rng() % 3);
    const int64_t dh = 2 + static_cast<int64_t>(rng() % 3);
    const int64_t n = 1 + static_cast<int64_t>(rng() % 4);
    cvf::FusionParams p;
    for (int h = 0; h < heads; ++h)
      p.heads.push_back({ad::param(Tensor::randn({fg, dh}, rng, 0.5f), "wq"),
                         ad::param(Tensor::randn({fg, dh}, rng, 0.5f), "wk"),
                         ad::param(Tensor::randn({fg, dh}, rng, 0.5f), "wv")});
    p.out_proj = ad::param(Tensor::randn({heads * dh, fg}, rng, 0.5f), "out");

    auto t0 = ad::constant(Tensor::randn({n, fg}, rng));
    auto t1 = ad::constant(Tensor::randn({n, fg}, rng));
    auto res = cvf::cross_view_attention({t0, t1}, p);
    for (const auto& w : res.weights)
      for (int64_t i = 0; i < n; ++i) {
        double row = 0;
        for (int64_t j = 0; j < 2; ++j) {
          if (w.at(i * 2 + j) < 0) {
            note = "negative attention weight";
            return false;
          }
          row += w.at(i * 2 + j);
        }
        if (std::abs(row - 1.0) > 1e-4) {
          note = "attention row sums to " + std::to_string(row);
          return false;
        }
      }

    auto single = cvf::cross_view_attention({t0}, p);
    for (int h = 0; h < heads; ++h) {
      auto v = ad::matmul(t0, p.heads[h].wv);
      for (int64_t i = 0; i < v->value.numel(); ++i)
        if (std::abs(single.head_outputs[h]->value.at(i) - v->value.at(i)) > 1e-4) {
          note = "single-token attention is not the value projection";
          return false;
        }
    }
  }
  note = "row-normalized nonnegative weights; single-token case exact, 50 random shapes";
  return true;
}

// ---- criterion 6: evaluation protocol soundness ---------------------------

bool protocol_soundness(std::string& note) {
  auto corpus = tiny_corpus(6, 8, 41);
  const int64_t per_subject = corpus.subjects[0].num_samples();
  meta::MetaConfig mcfg;
  mcfg.inner_steps = 2;
  mcfg.episodes = 2;
  mcfg.query = 4;
  mcfg.pretrain_epochs = 1;
  mcfg.batch_size = 12;
  for (int shots : {1, 5}) {
    eval::EvalConfig ec;
    ec.shots = shots;
    ec.repeats = 20;
    ec.seed = 100 + shots;
    ec.audit = true;
    mcfg.shots = shots;
    auto report = eval::run_loso(corpus, tiny_config(), mcfg, ec);
    if (report.trials.size() != 6u * 20u) {
      note = "expected 120 trials, got " + std::to_string(report.trials.size());
      return false;
    }
    std::set<uint64_t> seeds;
    for (const auto& t : report.trials) {
      if (!seeds.insert(t.seed).second) {
        note = "duplicate trial seed";
        return false;
      }
      if (static_cast<int>(t.support.size()) != shots * corpus.classes()) {
        note = "support size is not K per class";
        return false;
      }
      if (static_cast<int64_t>(t.support.size() + t.query.size()) != per_subject) {
        note = "query set is not the complement of the support set";
        return false;
      }
      std::set<int64_t> sup(t.support.begin(), t.support.end());
      for (int64_t q : t.query)
        if (sup.count(q)) {
          note = "support/query overlap";
          return false;
        }
    }
  }
  note = "6 subjects x 20 trials at K=1 and K=5, no leakage, unique seeds";
  return true;
}

// ---- criterion 7: end-to-end trends on shifted synthetic data -------------

struct TrendPoint {
  double full_k1 = 0, full_k5 = 0, full_k10 = 0;
  double baseline = 0;  // pretrained, no adaptation
  double no_cvf = 0, no_fsa = 0, neither = 0;
};

ModelConfig trend_config() {
  ModelConfig c;
  c.channels = 8;
  c.bands = 3;
  c.classes = 3;
  c.grid = 16;
  c.conv_filters = 8;
  c.reduction = 2;
  c.band_kernel = 3;
  c.heads = 2;
  c.head_dim = 8;
  c.adapter_bottleneck = 8;
  return c;
}

double mean_trial_accuracy(FaceModel& model, const Corpus& corpus, int target,
                          const meta::MetaConfig& cfg, int shots, int trials, uint64_t seed,
                          bool adapt) {
  double sum = 0;
  meta::MetaConfig trial_cfg = cfg;
  trial_cfg.shots = shots;
  for (int t = 0; t < trials; ++t) {
    std::mt19937_64 rng(eval::trial_seed(seed, target, t));
    auto ep = data::sample_episode(corpus.subjects[target], shots, 60, rng);
    ParamMap pm = model.leaf_map();
    if (adapt) {
      Batch support = corpus.make_batch(target, ep.support);
      pm = meta::test_adapt(model, support, trial_cfg);
    }
    sum += meta::score_accuracy(model, corpus, target, ep.query, pm, nn::BnMode::Infer);
  }
  return sum / trials;
}

TrendPoint run_trend_seed(uint64_t seed) {
  auto mc = trend_config();
  auto sets = data::synth_generate(6, 200, 3, mc.channels, mc.bands, 1.0f, seed);
  auto corpus =
      Corpus::build(std::move(sets), data::ElectrodeMap::dense(mc.channels, 3, 3), mc.grid);
  const int target = static_cast<int>(seed % 6);
  std::vector<int> sources;
  for (int s = 0; s < 6; ++s)
    if (s != target) sources.push_back(s);

  meta::MetaConfig cfg;
  cfg.inner_steps = 5;
  cfg.inner_rate = 0.05f;
  cfg.episodes = 25;
  cfg.shots = 5;
  cfg.query = 15;
  cfg.pretrain_epochs = 3;
  cfg.batch_size = 64;

  auto train = [&](ModelConfig variant) {
    auto model = std::make_unique<FaceModel>(variant, seed * 31 + 7);
    std::mt19937_64 rng(seed * 131 + 5);
    meta::pretrain(*model, corpus, sources, cfg, rng);
    meta::meta_train(*model, corpus, sources, cfg, rng);
    return model;
  };

  TrendPoint p;
  auto full = train(mc);
  p.full_k1 = mean_trial_accuracy(*full, corpus, target, cfg, 1, 10, seed, true);
  p.full_k5 = mean_trial_accuracy(*full, corpus, target, cfg, 5, 10, seed, true);
  p.full_k10 = mean_trial_accuracy(*full, corpus, target, cfg, 10, 10, seed, true);

  // Baseline: same pretraining, no episodic training, no adaptation.
  {
    FaceModel base(mc, seed * 31 + 7);
    std::mt19937_64 rng(seed * 131 + 5);
    meta::pretrain(base, corpus, sources, cfg, rng);
    p.baseline = mean_trial_accuracy(base, corpus, target, cfg, 5, 10, seed, false);
  }

  ModelConfig v = mc;
  v.use_cvf = false;
  p.no_cvf = mean_trial_accuracy(*train(v), corpus, target, cfg, 5, 10, seed, true);
  v = mc;
  v.use_fsa = false;
  p.no_fsa = mean_trial_accuracy(*train(v), corpus, target, cfg, 5, 10, seed, true);
  v.use_cvf = false;
  p.neither = mean_trial_accuracy(*train(v), corpus, target, cfg, 5, 10, seed, true);
  return p;
}

bool synthetic_trends(std::string& note) {
  const int seeds = 5;
  double full5 = 0, base5 = 0, no_cvf = 0, no_fsa = 0, neither = 0;
  int nondecreasing = 0;
  std::ostringstream detail;
  for (uint64_t s = 0; s < seeds; ++s) {
    auto p = run_trend_seed(s + 1);
    full5 += p.full_k5;
    base5 += p.baseline;
    no_cvf += p.no_cvf;
    no_fsa += p.no_fsa;
    neither += p.neither;
    if (p.full_k10 >= p.full_k1) ++nondecreasing;
    detail << " seed" << (s + 1) << "[k1 " << p.full_k1 << " k5 " << p.full_k5 << " k10 "
           << p.full_k10 << " base " << p.baseline << "]";
  }
  full5 /= seeds;
  base5 /= seeds;
  no_cvf /= seeds;
  no_fsa /= seeds;
  neither /= seeds;

  std::ostringstream s;
  s.precision(4);
  s << "full@5 " << full5 << " vs baseline " << base5 << "; k1->k10 non-decreasing in "
    << nondecreasing << "/5 seeds; ablations cvf-off " << no_cvf << " fsa-off " << no_fsa
    << " both-off " << neither;
  note = s.str();
  if (full5 < base5 + 0.05) {
    note += " -- adaptation gain under 5 points";
    return false;
  }
  if (nondecreasing < 4) {
    note += " -- shot curve not non-decreasing";
    return false;
  }
  if (full5 + 1e-9 < no_cvf || full5 + 1e-9 < no_fsa || full5 + 1e-9 < neither) {
    note += " -- an ablation beats the full model";
    return false;
  }
  return true;
}

// ---- criterion 8: reproducible evaluation reports -------------------------

bool reproducible_reports(std::string& note) {
  if (g_cli.empty() || !fs::exists(g_cli)) {
    note = "command-line binary not found (pass its path as argv[1])";
    return false;
  }
  auto dir = fs::temp_directory_path() / "face_accept_repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path datadir = dir / "data";
  const fs::path cfgfile = dir / "config.json";
  {
    auto mc = tiny_config();
    meta::MetaConfig cfg;
    cfg.inner_steps = 2;
    cfg.episodes = 2;
    cfg.query = 4;
    cfg.pretrain_epochs = 1;
    cfg.batch_size = 12;
    std::ofstream f(cfgfile);
    f << "{\"model\": " << mc.to_json() << ", \"meta\": " << cfg.to_json() << "}\n";
  }
  auto run = [&](const std::string& cmd) {
    const std::string full = cmd + " > /dev/null 2>&1";
    return std::system(full.c_str()) == 0;
  };
  if (!run(g_cli + " synth --out " + datadir.string() +
           " --subjects 3 --samples-per-class 8 --classes 3 --channels 4 --bands 3 --seed 2")) {
    note = "synth invocation failed";
    return false;
  }
  const std::string eval_cmd = g_cli + " evaluate --data " + datadir.string() + " --config " +
                               cfgfile.string() +
                               " --shots 1 --repeats 2 --seed 9 --format json --out ";
  if (!run(eval_cmd + (dir / "a.json").string()) || !run(eval_cmd + (dir / "b.json").string())) {
    note = "evaluate invocation failed";
    return false;
  }
  const std::string a = slurp(dir / "a.json"), b = slurp(dir / "b.json");
  if (a.empty() || a != b) {
    note = "reports differ between identical invocations";
    return false;
  }
  note = "two identical CLI runs, byte-identical JSON (" + std::to_string(a.size()) + " bytes)";
  return true;
}

// ---- criterion 9: significance test against an independent reference ------

bool ttest_reference(std::string& note) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> noise(0.0, 0.05);
  double worst = 0;
  for (int pair = 0; pair < 10; ++pair) {
    std::vector<double> a, b;
    const double effect = 0.015 * pair;
    for (int i = 0; i < 8 + pair; ++i) {
      const double base = 0.6 + noise(rng);
      a.push_back(base + effect + noise(rng));
      b.push_back(base + noise(rng));
    }
    auto res = eval::paired_ttest(a, b);
    if (res.degenerate) continue;
    const double ref = t_two_sided(res.t, static_cast<int>(a.size()) - 1);
    worst = std::max(worst, std::abs(res.p - ref));
    if (std::abs(res.p - ref) > 1e-3) {
      note = "pair " + std::to_string(pair) + ": p " + std::to_string(res.p) + " vs reference " +
             std::to_string(ref);
      return false;
    }
  }
  std::ostringstream s;
  s.precision(3);
  s << "10 random pairs, max |p - reference| = " << worst;
  note = s.str();
  return true;
}

struct Criterion {
  const char* name;
  bool (*fn)(std::string&);
  double limit_s;  // 0 = no explicit budget
};

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_cli = argv[1];
  const Criterion criteria[] = {
      {"gradients match finite differences on random graphs", random_gradient_checks, 120},
      {"outer gradients flow through the unrolled inner loop", second_order_oracle, 60},
      {"inner-loop adaptation never touches backbone tensors", partition_contract, 0},
      {"freshly initialized adapter is the identity", adapter_identity, 0},
      {"cross-view attention weights are a distribution", attention_invariants, 0},
      {"LOSO protocol has no support/query leakage", protocol_soundness, 0},
      {"few-shot adaptation beats the unadapted baseline", synthetic_trends, 1800},
      {"evaluation reports are byte-reproducible", reproducible_reports, 0},
      {"paired t-test matches an independent reference", ttest_reference, 0},
  };

  int failed = 0, index = 0;
  for (const auto& c : criteria) {
    ++index;
    std::string note;
    bool ok = false;
    const auto t0 = Clock::now();
    try {
      ok = c.fn(note);
    } catch (const std::exception& e) {
      note = std::string("exception: ") + e.what();
    }
    const double dt = seconds_since(t0);
    if (ok && c.limit_s > 0 && dt > c.limit_s) {
      ok = false;
      note += " -- over the " + std::to_string(static_cast<int>(c.limit_s)) + "s budget";
    }
    if (!ok) ++failed;
    std::printf("[%d] %s: %s (%.1fs) %s\n", index, c.name, ok ? "PASS" : "FAIL", dt,
                note.c_str());
    std::fflush(stdout);
  }
  std::printf("ACCEPTANCE: %d/9 criteria passed\n", 9 - failed);
  return failed == 0 ? 0 : 1;
}
