#include "face/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

namespace face::eval {

namespace {

using nlohmann::ordered_json;

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (v.size() - 1));
}

uint64_t splitmix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void EvalConfig::validate() const {
  if (shots < 1) throw Error("EvalConfig: shots must be >= 1");
  if (repeats < 1) throw Error("EvalConfig: repeats must be >= 1");
}

uint64_t trial_seed(uint64_t base, int subject, int trial) {
  return splitmix(splitmix(base ^ splitmix(static_cast<uint64_t>(subject) + 1)) ^
                  splitmix(static_cast<uint64_t>(trial) + 1));
}

void RunReport::finalize() {
  subjects.clear();
  std::map<int, std::vector<double>> by_subject;
  std::map<int, std::string> names;
  std::vector<double> pooled;
  for (const auto& t : trials) {
    by_subject[t.subject_index].push_back(t.accuracy);
    names[t.subject_index] = t.subject;
    pooled.push_back(t.accuracy);
  }
  std::vector<double> subject_means;
  for (const auto& [idx, accs] : by_subject) {
    SubjectReport sr;
    sr.subject = names[idx];
    sr.subject_index = idx;
    sr.mean = mean_of(accs);
    sr.stddev = sample_std(accs, sr.mean);
    sr.trials = static_cast<int>(accs.size());
    subject_means.push_back(sr.mean);
    subjects.push_back(std::move(sr));
  }
  grand_mean = mean_of(subject_means);
  grand_std = sample_std(subject_means, grand_mean);
  pooled_mean = mean_of(pooled);
}

RunReport run_loso(const Corpus& corpus, const ModelConfig& model_cfg,
                   const meta::MetaConfig& meta_cfg, const EvalConfig& cfg, std::ostream* log,
                   RunReport* partial) {
  cfg.validate();
  meta_cfg.validate();
  if (corpus.subjects.size() < 2) throw Error("run_loso: need at least two subjects");

  RunReport local;
  RunReport& report = partial ? *partial : local;
  report = RunReport{};
  report.model_config = model_cfg.to_json();
  report.meta_config = meta_cfg.to_json();
  report.shots = cfg.shots;
  report.repeats = cfg.repeats;
  report.seed = cfg.seed;

  for (const auto& split : data::loso_splits(static_cast<int>(corpus.subjects.size()))) {
    const auto& target = corpus.subjects.at(split.target);
    if (log) *log << "[loso] target " << target.subject_id << "\n";

    FaceModel model(model_cfg, trial_seed(cfg.seed, split.target, -1));
    std::mt19937_64 train_rng(trial_seed(cfg.seed, split.target, -2));
    meta::MetaConfig train_cfg = meta_cfg;
    train_cfg.shots = cfg.shots;
    meta::pretrain(model, corpus, split.sources, train_cfg, train_rng, log);
    meta::meta_train(model, corpus, split.sources, train_cfg, train_rng, log);

    for (int trial = 0; trial < cfg.repeats; ++trial) {
      const uint64_t tseed = trial_seed(cfg.seed, split.target, trial);
      std::mt19937_64 rng(tseed);
      // Shuffle per class and take K support samples; the query is every
      // remaining target sample, not a fixed-size draw.
      auto ep = data::sample_episode(target, cfg.shots, /*query=*/1, rng);
      std::set<int64_t> support_set(ep.support.begin(), ep.support.end());
      std::vector<int64_t> query;
      for (int64_t i = 0; i < target.num_samples(); ++i)
        if (!support_set.count(i)) query.push_back(i);
      if (query.empty()) throw Error("run_loso: support consumed every target sample");
      for (int64_t q : query)
        if (support_set.count(q)) throw Error("run_loso: support/query overlap");

      Batch support = corpus.make_batch(split.target, ep.support);
      ParamMap adapted = meta::test_adapt(model, support, train_cfg);
      TrialResult tr;
      tr.subject = target.subject_id;
      tr.subject_index = split.target;
      tr.trial = trial;
      tr.seed = tseed;
      tr.shots = cfg.shots;
      tr.accuracy =
          meta::score_accuracy(model, corpus, split.target, query, adapted, nn::BnMode::Infer);
      if (cfg.audit) {
        tr.support = ep.support;
        tr.query = query;
      }
      report.trials.push_back(std::move(tr));
    }
    if (log) {
      double m = 0.0;
      for (int t = 0; t < cfg.repeats; ++t)
        m += report.trials[report.trials.size() - cfg.repeats + t].accuracy;
      *log << "[loso] target " << target.subject_id << " mean accuracy "
           << m / cfg.repeats << "\n";
    }
  }
  report.finalize();
  if (partial) return *partial;
  return local;
}

TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("paired_ttest: length mismatch");
  if (a.size() < 2) throw Error("paired_ttest: need at least two pairs");
  std::vector<double> d(a.size());
  for (size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double mean = mean_of(d);
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double var = ss / (d.size() - 1);

  TTestResult r;
  // Differences that agree to machine precision count as zero-variance; the
  // subtraction above leaves last-ulp noise for textbook inputs like 0.1.
  const double var_floor = 1e-24 * std::max(1.0, mean * mean);
  if (var <= var_floor) {
    r.degenerate = true;
    if (mean == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = mean > 0 ? std::numeric_limits<double>::infinity()
                     : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = mean / std::sqrt(var / d.size());
  boost::math::students_t dist(static_cast<double>(d.size() - 1));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
  return r;
}

std::vector<AblationEntry> ablation_run(const Corpus& corpus, ModelConfig model_cfg,
                                        const meta::MetaConfig& meta_cfg, const EvalConfig& cfg,
                                        std::ostream* log) {
  std::vector<AblationEntry> out;
  for (auto [cvf, fsa] : {std::pair{true, true}, {true, false}, {false, true}, {false, false}}) {
    if (log) *log << "[ablate] cvf=" << (cvf ? "on" : "off") << " fsa=" << (fsa ? "on" : "off")
                  << "\n";
    model_cfg.use_cvf = cvf;
    model_cfg.use_fsa = fsa;
    out.push_back({cvf, fsa, run_loso(corpus, model_cfg, meta_cfg, cfg, log)});
  }
  return out;
}

namespace {

ordered_json report_to_json(const RunReport& r) {
  ordered_json j;
  j["model_config"] = ordered_json::parse(r.model_config);
  j["meta_config"] = ordered_json::parse(r.meta_config);
  j["shots"] = r.shots;
  j["repeats"] = r.repeats;
  j["seed"] = r.seed;
  j["grand_mean"] = r.grand_mean;
  j["grand_std"] = r.grand_std;
  j["pooled_mean"] = r.pooled_mean;
  j["subjects"] = ordered_json::array();
  for (const auto& s : r.subjects)
    j["subjects"].push_back({{"subject", s.subject},
                             {"subject_index", s.subject_index},
                             {"mean", s.mean},
                             {"stddev", s.stddev},
                             {"trials", s.trials}});
  j["trials"] = ordered_json::array();
  for (const auto& t : r.trials) {
    ordered_json jt{{"subject", t.subject}, {"subject_index", t.subject_index},
                    {"trial", t.trial},     {"seed", t.seed},
                    {"shots", t.shots},     {"accuracy", t.accuracy}};
    if (!t.support.empty()) jt["support"] = t.support;
    if (!t.query.empty()) jt["query"] = t.query;
    j["trials"].push_back(std::move(jt));
  }
  return j;
}

}  // namespace

void emit_report(const RunReport& report, const std::filesystem::path& path,
                 const std::string& format) {
  std::ofstream out(path);
  if (!out) throw Error("emit_report: cannot open " + path.string() + " for writing");
  if (format == "json") {
    out << report_to_json(report).dump(2) << "\n";
  } else if (format == "csv") {
    out << "record,subject,subject_index,trial,seed,shots,accuracy\n";
    out.precision(17);
    for (const auto& t : report.trials)
      out << "trial," << t.subject << "," << t.subject_index << "," << t.trial << "," << t.seed
          << "," << t.shots << "," << t.accuracy << "\n";
    for (const auto& s : report.subjects) {
      out << "subject_mean," << s.subject << "," << s.subject_index << ",,,," << s.mean << "\n";
      out << "subject_std," << s.subject << "," << s.subject_index << ",,,," << s.stddev << "\n";
    }
    out << "grand_mean,,,,,," << report.grand_mean << "\n";
    out << "grand_std,,,,,," << report.grand_std << "\n";
    out << "pooled_mean,,,,,," << report.pooled_mean << "\n";
  } else {
    throw Error("emit_report: unknown format '" + format + "' (expected json or csv)");
  }
  if (!out) throw Error("emit_report: write failed for " + path.string());
}

RunReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_report: cannot open " + path.string());
  ordered_json j;
  in >> j;
  RunReport r;
  r.model_config = j.at("model_config").dump();
  r.meta_config = j.at("meta_config").dump();
  r.shots = j.at("shots").get<int>();
  r.repeats = j.at("repeats").get<int>();
  r.seed = j.at("seed").get<uint64_t>();
  r.grand_mean = j.at("grand_mean").get<double>();
  r.grand_std = j.at("grand_std").get<double>();
  r.pooled_mean = j.at("pooled_mean").get<double>();
  for (const auto& js : j.at("subjects")) {
    SubjectReport s;
    s.subject = js.at("subject").get<std::string>();
    s.subject_index = js.at("subject_index").get<int>();
    s.mean = js.at("mean").get<double>();
    s.stddev = js.at("stddev").get<double>();
    s.trials = js.at("trials").get<int>();
    r.subjects.push_back(std::move(s));
  }
  for (const auto& jt : j.at("trials")) {
    TrialResult t;
    t.subject = jt.at("subject").get<std::string>();
    t.subject_index = jt.at("subject_index").get<int>();
    t.trial = jt.at("trial").get<int>();
    t.seed = jt.at("seed").get<uint64_t>();
    t.shots = jt.at("shots").get<int>();
    t.accuracy = jt.at("accuracy").get<double>();
    if (jt.contains("support")) t.support = jt.at("support").get<std::vector<int64_t>>();
    if (jt.contains("query")) t.query = jt.at("query").get<std::vector<int64_t>>();
    r.trials.push_back(std::move(t));
  }
  return r;
}

}  // namespace face::eval
