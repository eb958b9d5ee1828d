// Command-line front end: dataset synthesis, the two training stages, LOSO
// evaluation, ablations, the attention-head sweep and report reshaping.
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "face/eval.hpp"

namespace {

using face::eval::EvalConfig;
using face::meta::MetaConfig;
using nlohmann::ordered_json;

struct CommonArgs {
  std::string data;
  std::string config;
  std::string map_file;
  int shots = 5;
  int repeats = 200;
  uint64_t seed = 0;
  std::string out;
  std::string format = "json";
  std::string cvf = "on";
  std::string fsa = "on";
  std::string second_order = "on";
};

bool parse_switch(const std::string& v, const char* flag) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw face::Error(std::string("expected 'on' or 'off' for ") + flag + ", got '" + v + "'");
}

void add_common(CLI::App* cmd, CommonArgs& a, bool needs_data) {
  auto* data = cmd->add_option("--data", a.data, "dataset directory");
  if (needs_data) data->required();
  cmd->add_option("--config", a.config, "JSON config with optional 'model' and 'meta' objects");
  cmd->add_option("--map", a.map_file, "electrode map JSON (default: built-in layouts)");
  cmd->add_option("--shots", a.shots, "support samples per class (K)");
  cmd->add_option("--repeats", a.repeats, "adaptation trials per target subject (R)");
  cmd->add_option("--seed", a.seed, "base RNG seed");
  cmd->add_option("--out", a.out, "output path");
  cmd->add_option("--format", a.format, "report format: json or csv");
  cmd->add_option("--cvf", a.cvf, "cross-view fusion branch: on or off");
  cmd->add_option("--fsa", a.fsa, "few-shot adapter: on or off");
  cmd->add_option("--second-order", a.second_order, "second-order outer gradients: on or off");
}

struct Configs {
  face::ModelConfig model;
  MetaConfig meta;
};

Configs load_configs(const CommonArgs& a) {
  Configs c;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw face::Error("cannot open config file " + a.config);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw face::Error("malformed JSON in " + a.config + ": " + e.what());
    }
    if (j.contains("model")) c.model = face::ModelConfig::from_json(j.at("model").dump());
    if (j.contains("meta")) c.meta = MetaConfig::from_json(j.at("meta").dump());
  }
  c.model.use_cvf = parse_switch(a.cvf, "--cvf");
  c.model.use_fsa = parse_switch(a.fsa, "--fsa");
  c.meta.second_order = parse_switch(a.second_order, "--second-order");
  c.meta.shots = a.shots;
  return c;
}

face::Corpus load_corpus(const CommonArgs& a, const face::ModelConfig& model_cfg) {
  auto subjects = face::data::load_features(a.data);
  const int64_t channels = subjects.at(0).channels();

  std::vector<std::string> order;
  {
    std::ifstream in(std::filesystem::path(a.data) / "manifest.json");
    nlohmann::json manifest;
    in >> manifest;
    if (manifest.contains("channel_names"))
      order = manifest.at("channel_names").get<std::vector<std::string>>();
  }

  face::data::ElectrodeMap map;
  if (!a.map_file.empty())
    map = face::data::ElectrodeMap::load(a.map_file, order);
  else if (channels == 62)
    map = face::data::ElectrodeMap::standard62();
  else
    map = face::data::ElectrodeMap::dense(channels);
  if (map.channels() != channels)
    throw face::Error("electrode map covers " + std::to_string(map.channels()) +
                      " channels, dataset has " + std::to_string(channels));
  return face::Corpus::build(std::move(subjects), std::move(map), model_cfg.grid);
}

std::vector<int> all_subjects(const face::Corpus& corpus) {
  std::vector<int> s(corpus.subjects.size());
  std::iota(s.begin(), s.end(), 0);
  return s;
}

void print_summary(const face::eval::RunReport& r) {
  std::cout << "subjects:\n";
  for (const auto& s : r.subjects)
    std::cout << "  " << s.subject << "  mean " << s.mean << "  std " << s.stddev << "  ("
              << s.trials << " trials)\n";
  std::cout << "grand mean " << r.grand_mean << "  std " << r.grand_std << "  pooled "
            << r.pooled_mean << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"Few-shot adapter + cross-view fusion for cross-subject EEG emotion recognition"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-subject dataset");
  CommonArgs sa;
  int subjects = 6, samples_per_class = 200, classes = 3, channels = 62, bands = 5;
  float shift = 1.0f;
  add_common(synth, sa, /*needs_data=*/false);
  synth->add_option("--subjects", subjects, "number of subjects");
  synth->add_option("--samples-per-class", samples_per_class, "samples per class per subject");
  synth->add_option("--classes", classes, "class count");
  synth->add_option("--channels", channels, "channel count");
  synth->add_option("--bands", bands, "frequency band count");
  synth->add_option("--shift", shift, "subject-shift strength");

  // training stages
  auto* pre = app.add_subcommand("pretrain", "supervised pretraining on all subjects");
  CommonArgs pa;
  add_common(pre, pa, true);

  auto* mt = app.add_subcommand("meta-train", "pretrain + episodic meta-training");
  CommonArgs ma;
  std::string init_ckpt;
  add_common(mt, ma, true);
  mt->add_option("--init", init_ckpt, "checkpoint to start from (skips pretraining)");

  // evaluation family
  auto* ev = app.add_subcommand("evaluate", "leave-one-subject-out k-shot evaluation");
  CommonArgs ea;
  add_common(ev, ea, true);

  auto* ab = app.add_subcommand("ablate", "CVF/FSA switch ablation (four LOSO runs)");
  CommonArgs aa;
  add_common(ab, aa, true);

  auto* sw = app.add_subcommand("sweep-heads", "attention-head-count sweep");
  CommonArgs wa;
  std::vector<int> head_counts{1, 2, 5};
  add_common(sw, wa, true);
  sw->add_option("--heads", head_counts, "head counts to sweep");

  auto* rp = app.add_subcommand("report", "reload a JSON report, print and re-emit it");
  CommonArgs ra;
  std::string report_in;
  add_common(rp, ra, false);
  rp->add_option("--in", report_in, "input report (json)")->required();

  CLI11_PARSE(app, argc, argv);

  if (*synth) {
    if (sa.out.empty()) throw face::Error("synth: --out DIR is required");
    auto sets = face::data::synth_generate(subjects, samples_per_class, classes, channels, bands,
                                           shift, sa.seed);
    std::vector<std::string> names;
    if (channels == 62) names = face::data::ElectrodeMap::standard62().names;
    face::data::save_features(sa.out, sets, names);
    std::cout << "wrote " << sets.size() << " subjects to " << sa.out << "\n";
    return 0;
  }

  if (*pre || *mt) {
    CommonArgs& a = *pre ? pa : ma;
    auto cfgs = load_configs(a);
    auto corpus = load_corpus(a, cfgs.model);
    std::mt19937_64 rng(a.seed);

    face::FaceModel model = (*mt && !init_ckpt.empty())
                                ? face::load_checkpoint(init_ckpt)
                                : face::FaceModel(cfgs.model, a.seed);
    if (!(*mt && !init_ckpt.empty())) {
      auto stats = face::meta::pretrain(model, corpus, all_subjects(corpus), cfgs.meta, rng,
                                        &std::cout);
      std::cout << "pretrain accuracy " << stats.train_accuracy << "\n";
    }
    if (*mt) {
      auto losses = face::meta::meta_train(model, corpus, all_subjects(corpus), cfgs.meta, rng,
                                           &std::cout);
      if (!losses.empty()) std::cout << "final episode loss " << losses.back() << "\n";
    }
    if (!a.out.empty()) {
      face::save_checkpoint(model, a.out);
      std::cout << "checkpoint written to " << a.out << "\n";
    }
    return 0;
  }

  if (*ev) {
    auto cfgs = load_configs(ea);
    auto corpus = load_corpus(ea, cfgs.model);
    EvalConfig ec;
    ec.shots = ea.shots;
    ec.repeats = ea.repeats;
    ec.seed = ea.seed;
    const std::string out = ea.out.empty() ? "report.json" : ea.out;
    face::eval::RunReport partial;
    try {
      face::eval::run_loso(corpus, cfgs.model, cfgs.meta, ec, &std::cout, &partial);
    } catch (...) {
      if (!partial.trials.empty()) {  // flush what completed before the abort
        partial.finalize();
        face::eval::emit_report(partial, out + ".partial", ea.format);
        std::cerr << "partial report flushed to " << out << ".partial\n";
      }
      throw;
    }
    face::eval::emit_report(partial, out, ea.format);
    print_summary(partial);
    return 0;
  }

  if (*ab) {
    auto cfgs = load_configs(aa);
    auto corpus = load_corpus(aa, cfgs.model);
    EvalConfig ec;
    ec.shots = aa.shots;
    ec.repeats = aa.repeats;
    ec.seed = aa.seed;
    const std::filesystem::path dir = aa.out.empty() ? "ablation" : aa.out;
    std::filesystem::create_directories(dir);
    auto entries = face::eval::ablation_run(corpus, cfgs.model, cfgs.meta, ec, &std::cout);

    ordered_json summary = ordered_json::array();
    std::vector<double> full_means;
    for (const auto& e : entries) {
      const std::string stem = std::string("ablation_cvf-") + (e.cvf ? "on" : "off") + "_fsa-" +
                               (e.fsa ? "on" : "off");
      face::eval::emit_report(e.report, dir / (stem + "." + aa.format), aa.format);
      std::vector<double> means;
      for (const auto& s : e.report.subjects) means.push_back(s.mean);
      ordered_json row{{"cvf", e.cvf}, {"fsa", e.fsa}, {"grand_mean", e.report.grand_mean},
                       {"grand_std", e.report.grand_std}};
      if (e.cvf && e.fsa) {
        full_means = means;
      } else {
        auto tt = face::eval::paired_ttest(full_means, means);
        row["t_vs_full"] = tt.t;
        row["p_vs_full"] = tt.p;
      }
      summary.push_back(std::move(row));
      std::cout << "cvf=" << e.cvf << " fsa=" << e.fsa << " grand mean "
                << e.report.grand_mean << "\n";
    }
    std::ofstream sout(dir / "summary.json");
    sout << summary.dump(2) << "\n";
    return 0;
  }

  if (*sw) {
    auto cfgs = load_configs(wa);
    auto corpus = load_corpus(wa, cfgs.model);
    EvalConfig ec;
    ec.shots = wa.shots;
    ec.repeats = wa.repeats;
    ec.seed = wa.seed;
    const std::filesystem::path dir = wa.out.empty() ? "sweep" : wa.out;
    std::filesystem::create_directories(dir);
    ordered_json summary = ordered_json::array();
    for (int heads : head_counts) {
      face::ModelConfig mc = cfgs.model;
      mc.heads = heads;
      std::cout << "[sweep] heads=" << heads << "\n";
      auto report = face::eval::run_loso(corpus, mc, cfgs.meta, ec, &std::cout);
      face::eval::emit_report(report, dir / ("heads_" + std::to_string(heads) + "." + wa.format),
                              wa.format);
      summary.push_back({{"heads", heads},
                         {"grand_mean", report.grand_mean},
                         {"grand_std", report.grand_std}});
      std::cout << "heads=" << heads << " grand mean " << report.grand_mean << "\n";
    }
    std::ofstream sout(dir / "summary.json");
    sout << summary.dump(2) << "\n";
    return 0;
  }

  if (*rp) {
    auto report = face::eval::load_report(report_in);
    print_summary(report);
    if (!ra.out.empty()) face::eval::emit_report(report, ra.out, ra.format);
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    nlohmann::ordered_json err{{"error", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
