#include "face/model.hpp"

#include <fstream>

#include <json.hpp>

namespace face {

namespace {

using nlohmann::ordered_json;

const ad::Var& lookup(const ParamMap& pm, const std::string& name) {
  auto it = pm.find(name);
  if (it == pm.end()) throw Error("forward: missing parameter binding '" + name + "'");
  return it->second;
}

std::vector<float> read_raw(const std::filesystem::path& p, int64_t count) {
  std::ifstream in(p, std::ios::binary | std::ios::ate);
  if (!in) throw Error("cannot open " + p.string());
  if (static_cast<int64_t>(in.tellg()) != count * 4)
    throw Error(p.string() + ": unexpected size");
  std::vector<float> v(count);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(v.data()), count * 4);
  return v;
}

void write_raw(const std::filesystem::path& p, const float* data, int64_t count) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot open " + p.string() + " for writing");
  out.write(reinterpret_cast<const char*>(data), count * 4);
}

}  // namespace

void ParamSet::add(const std::string& name, Tensor value, Partition tag) {
  if (vars_.count(name)) throw Error("ParamSet: duplicate parameter '" + name + "'");
  order_.push_back(name);
  vars_.emplace(name, ad::param(std::move(value), name));
  tags_.emplace(name, tag);
}

const ad::Var& ParamSet::at(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw Error("ParamSet: unknown parameter '" + name + "'");
  return it->second;
}

Partition ParamSet::tag(const std::string& name) const {
  auto it = tags_.find(name);
  if (it == tags_.end()) throw Error("ParamSet: unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamSet::names_of(Partition tag) const {
  std::vector<std::string> out;
  for (const auto& n : order_)
    if (tags_.at(n) == tag) out.push_back(n);
  return out;
}

std::vector<ad::Var> ParamSet::vars_of(Partition tag) const {
  std::vector<ad::Var> out;
  for (const auto& n : order_)
    if (tags_.at(n) == tag) out.push_back(vars_.at(n));
  return out;
}

std::vector<ad::Var> ParamSet::all_vars() const {
  std::vector<ad::Var> out;
  for (const auto& n : order_) out.push_back(vars_.at(n));
  return out;
}

int64_t ParamSet::count(Partition tag) const {
  int64_t n = 0;
  for (const auto& name : order_)
    if (tags_.at(name) == tag) n += vars_.at(name)->value.numel();
  return n;
}

std::string ModelConfig::to_json() const {
  ordered_json j{{"channels", channels},
                 {"bands", bands},
                 {"classes", classes},
                 {"grid", grid},
                 {"conv_filters", conv_filters},
                 {"reduction", reduction},
                 {"band_kernel", band_kernel},
                 {"heads", heads},
                 {"head_dim", head_dim},
                 {"adapter_bottleneck", adapter_bottleneck},
                 {"use_cvf", use_cvf},
                 {"use_fsa", use_fsa},
                 {"bn_momentum", bn_momentum}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  ModelConfig c;
  c.channels = j.value("channels", c.channels);
  c.bands = j.value("bands", c.bands);
  c.classes = j.value("classes", c.classes);
  c.grid = j.value("grid", c.grid);
  c.conv_filters = j.value("conv_filters", c.conv_filters);
  c.reduction = j.value("reduction", c.reduction);
  c.band_kernel = j.value("band_kernel", c.band_kernel);
  c.heads = j.value("heads", c.heads);
  c.head_dim = j.value("head_dim", c.head_dim);
  c.adapter_bottleneck = j.value("adapter_bottleneck", c.adapter_bottleneck);
  c.use_cvf = j.value("use_cvf", c.use_cvf);
  c.use_fsa = j.value("use_fsa", c.use_fsa);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  return c;
}

Corpus Corpus::build(std::vector<data::FeatureSet> subjects, data::ElectrodeMap electrode_map,
                     int grid) {
  Corpus corpus;
  corpus.map = std::move(electrode_map);
  corpus.grid = grid;
  corpus.subjects = std::move(subjects);
  for (const auto& fs : corpus.subjects) {
    if (fs.channels() != corpus.map.channels())
      throw Error("Corpus: subject " + fs.subject_id + " has " + std::to_string(fs.channels()) +
                  " channels but the electrode map has " +
                  std::to_string(corpus.map.channels()));
    const int64_t n = fs.num_samples(), c = fs.channels(), b = fs.bands();
    Tensor flat({n, b * grid * grid});
    for (int64_t i = 0; i < n; ++i) {
      Tensor sample({c, b});
      std::copy_n(fs.samples.data() + i * c * b, c * b, sample.data());
      Tensor resized = data::resize_grid(data::spatial_project(sample, corpus.map), grid, grid);
      std::copy_n(resized.data(), resized.numel(), flat.data() + i * flat.cols());
    }
    corpus.spatial.push_back(std::move(flat));
  }
  return corpus;
}

Batch Corpus::make_batch(int subject, const std::vector<int64_t>& indices) const {
  const auto& fs = subjects.at(subject);
  const auto& sp = spatial.at(subject);
  const int64_t c = fs.channels(), b = fs.bands();
  Batch batch;
  batch.graph_x = Tensor({static_cast<int64_t>(indices.size()), c, b});
  batch.spatial_x = Tensor({static_cast<int64_t>(indices.size()), sp.cols()});
  for (size_t i = 0; i < indices.size(); ++i) {
    const int64_t idx = indices[i];
    if (idx < 0 || idx >= fs.num_samples())
      throw Error("make_batch: sample index out of range for subject " + fs.subject_id);
    std::copy_n(fs.samples.data() + idx * c * b, c * b, batch.graph_x.data() + i * c * b);
    std::copy_n(sp.data() + idx * sp.cols(), sp.cols(), batch.spatial_x.data() + i * sp.cols());
    batch.labels.push_back(fs.labels[idx]);
  }
  return batch;
}

FaceModel::FaceModel(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
  const int64_t c = cfg.channels, b = cfg.bands, fg = cfg.graph_dim();
  const int64_t d = cfg.spatial_dim(), fu = cfg.fused_dim(), filters = cfg.conv_filters;
  if (c % cfg.reduction != 0) throw Error("FaceModel: channels must be divisible by reduction");
  if (cfg.grid % 4 != 0) throw Error("FaceModel: grid must be divisible by 4");
  if (cfg.band_kernel % 2 == 0) throw Error("FaceModel: band kernel width must be odd");
  if (cfg.use_fsa && cfg.adapter_bottleneck >= fu)
    throw Error("FaceModel: adapter bottleneck must be below the feature width");

  std::mt19937_64 rng(seed);
  auto randn = [&rng](std::vector<int64_t> shape, float stddev) {
    return Tensor::randn(std::move(shape), rng, stddev);
  };
  auto ones = [](int64_t n) { return Tensor::full({1, n}, 1.0f); };
  auto zeros = [](std::vector<int64_t> shape) { return Tensor::zeros(std::move(shape)); };

  // Graph-view encoder. The base adjacency stays strictly positive so the
  // degree matrix is invertible from the first step.
  Tensor base = Tensor::uniform({c, c}, rng, 0.0f, 1.0f);
  for (int64_t i = 0; i < base.numel(); ++i) base.at(i) = base.at(i) * 0.01f + 0.01f;
  params_.add("gcn.adj.base", std::move(base), Partition::Base);
  params_.add("gcn.adj.reduce", randn({c / cfg.reduction, c}, 1.0f / std::sqrt(float(c))),
              Partition::Base);
  params_.add("gcn.adj.expand",
              randn({c, c / cfg.reduction}, 1.0f / std::sqrt(float(c / cfg.reduction))),
              Partition::Base);
  for (const char* k : {"gcn.kernel1", "gcn.kernel2"})
    params_.add(k, randn({1, cfg.band_kernel}, 1.0f / std::sqrt(float(cfg.band_kernel))),
                Partition::Base);
  for (const char* bn : {"gcn.bn1", "gcn.bn2", "gcn.bn3"}) {
    params_.add(std::string(bn) + ".gamma", ones(fg), Partition::Base);
    params_.add(std::string(bn) + ".beta", zeros({1, fg}), Partition::Base);
    stats_.emplace(bn, nn::RunningStat(fg));
  }

  if (cfg.use_cvf) {
    int64_t in_ch = b;
    for (int block = 0; block < 3; ++block) {
      const std::string p = "cnn.b" + std::to_string(block);
      params_.add(p + ".w", randn({in_ch * 9, filters}, std::sqrt(2.0f / float(in_ch * 9))),
                  Partition::Base);
      params_.add(p + ".bias", zeros({1, filters}), Partition::Base);
      params_.add(p + ".bn.gamma", ones(filters), Partition::Base);
      params_.add(p + ".bn.beta", zeros({1, filters}), Partition::Base);
      stats_.emplace(p, nn::RunningStat(filters));
      in_ch = filters;
    }
    params_.add("fuse.align.w", randn({d, fg}, 1.0f / std::sqrt(float(d))), Partition::Base);
    params_.add("fuse.align.b", zeros({1, fg}), Partition::Base);
    for (int h = 0; h < cfg.heads; ++h) {
      const std::string p = "fuse.h" + std::to_string(h);
      for (const char* m : {".wq", ".wk", ".wv"})
        params_.add(p + m, randn({fg, cfg.head_dim}, 1.0f / std::sqrt(float(fg))),
                    Partition::Meta);
    }
    params_.add("fuse.out",
                randn({int64_t(cfg.heads) * cfg.head_dim, fg},
                      1.0f / std::sqrt(float(cfg.heads * cfg.head_dim))),
                Partition::Meta);
  }

  if (cfg.use_fsa) {
    const int64_t fb = cfg.adapter_bottleneck;
    params_.add("adapter.down.w", randn({fu, fb}, 1.0f / std::sqrt(float(fu))), Partition::Meta);
    params_.add("adapter.down.b", zeros({1, fb}), Partition::Meta);
    params_.add("adapter.up.w", zeros({fb, fu}), Partition::Meta);  // identity at init
    params_.add("adapter.up.b", zeros({1, fu}), Partition::Meta);
    params_.add("adapter.bn1.gamma", ones(fb), Partition::Meta);
    params_.add("adapter.bn1.beta", zeros({1, fb}), Partition::Meta);
    params_.add("adapter.bn2.gamma", ones(fu), Partition::Meta);
    params_.add("adapter.bn2.beta", zeros({1, fu}), Partition::Meta);
    stats_.emplace("adapter.bn1", nn::RunningStat(fb));
    stats_.emplace("adapter.bn2", nn::RunningStat(fu));
  }

  params_.add("head.w", randn({fu, cfg.classes}, 0.01f), Partition::Meta);
  params_.add("head.b", zeros({1, cfg.classes}), Partition::Meta);

  meta_names_ = params_.names_of(Partition::Meta);
}

ParamMap FaceModel::leaf_map() const {
  ParamMap pm;
  for (const auto& name : params_.names()) pm.emplace(name, params_.at(name));
  return pm;
}

std::vector<ad::Var> FaceModel::meta_vars(const ParamMap& pm) const {
  std::vector<ad::Var> out;
  for (const auto& name : meta_names_) out.push_back(lookup(pm, name));
  return out;
}

ad::Var FaceModel::forward(const Batch& batch, const ParamMap& pm, nn::BnMode mode,
                           bool update_running) {
  const int64_t n = batch.size();
  const float mom = cfg_.bn_momentum;
  auto x = ad::constant(Tensor({n, cfg_.graph_dim()}, batch.graph_x.vec()));

  backbone::DgcnParams gp;
  gp.adj = {lookup(pm, "gcn.adj.base"), lookup(pm, "gcn.adj.reduce"), lookup(pm, "gcn.adj.expand")};
  gp.kernel1 = lookup(pm, "gcn.kernel1");
  gp.kernel2 = lookup(pm, "gcn.kernel2");
  gp.bn1_gamma = lookup(pm, "gcn.bn1.gamma");
  gp.bn1_beta = lookup(pm, "gcn.bn1.beta");
  gp.bn2_gamma = lookup(pm, "gcn.bn2.gamma");
  gp.bn2_beta = lookup(pm, "gcn.bn2.beta");
  gp.bn3_gamma = lookup(pm, "gcn.bn3.gamma");
  gp.bn3_beta = lookup(pm, "gcn.bn3.beta");
  gp.bn1_rs = &stats_.at("gcn.bn1");
  gp.bn2_rs = &stats_.at("gcn.bn2");
  gp.bn3_rs = &stats_.at("gcn.bn3");
  auto zg = backbone::dgcn_encode(x, n, cfg_.channels, cfg_.bands, gp, mode, update_running, mom);

  ad::Var zu = zg;
  if (cfg_.use_cvf) {
    auto s = ad::constant(batch.spatial_x);
    backbone::Conv3Params cp;
    for (int block = 0; block < 3; ++block) {
      const std::string p = "cnn.b" + std::to_string(block);
      cp.blocks[block] = {lookup(pm, p + ".w"), lookup(pm, p + ".bias"), lookup(pm, p + ".bn.gamma"),
                          lookup(pm, p + ".bn.beta"), &stats_.at(p)};
    }
    auto zs = backbone::conv3_encode(s, n, cfg_.bands, cfg_.grid, cfg_.grid, cp, mode,
                                     update_running, mom);

    cvf::FusionParams fp;
    fp.align_w = lookup(pm, "fuse.align.w");
    fp.align_b = lookup(pm, "fuse.align.b");
    for (int h = 0; h < cfg_.heads; ++h) {
      const std::string p = "fuse.h" + std::to_string(h);
      fp.heads.push_back({lookup(pm, p + ".wq"), lookup(pm, p + ".wk"), lookup(pm, p + ".wv")});
    }
    fp.out_proj = lookup(pm, "fuse.out");
    zu = cvf::fuse(cvf::align_view(zs, fp), zg, fp);
  }

  ad::Var za = zu;
  if (cfg_.use_fsa) {
    fsa::AdapterParams ap;
    ap.down_w = lookup(pm, "adapter.down.w");
    ap.down_b = lookup(pm, "adapter.down.b");
    ap.up_w = lookup(pm, "adapter.up.w");
    ap.up_b = lookup(pm, "adapter.up.b");
    ap.bn1_gamma = lookup(pm, "adapter.bn1.gamma");
    ap.bn1_beta = lookup(pm, "adapter.bn1.beta");
    ap.bn2_gamma = lookup(pm, "adapter.bn2.gamma");
    ap.bn2_beta = lookup(pm, "adapter.bn2.beta");
    ap.bn1_rs = &stats_.at("adapter.bn1");
    ap.bn2_rs = &stats_.at("adapter.bn2");
    za = fsa::adapt(zu, ap, mode, update_running, mom);
  }

  return fsa::predict(za, lookup(pm, "head.w"), lookup(pm, "head.b"));
}

double FaceModel::meta_fraction() const {
  const double meta = static_cast<double>(params_.count(Partition::Meta));
  const double base = static_cast<double>(params_.count(Partition::Base));
  return meta / (meta + base);
}

void save_checkpoint(const FaceModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ordered_json manifest;
  manifest["config"] = nlohmann::json::parse(model.config().to_json());
  manifest["params"] = ordered_json::array();
  for (const auto& name : model.params().names()) {
    const auto& var = model.params().at(name);
    const std::string file = name + ".f32";
    write_raw(dir / file, var->value.data(), var->value.numel());
    manifest["params"].push_back({{"name", name},
                                  {"partition",
                                   model.params().tag(name) == Partition::Meta ? "meta" : "base"},
                                  {"shape", var->value.shape()},
                                  {"file", file}});
  }
  manifest["stats"] = ordered_json::array();
  auto& stats = const_cast<FaceModel&>(model).running_stats();
  for (const auto& [name, rs] : stats) {
    const std::string file = name + ".stat.f32";
    std::vector<float> packed(rs.mean.vec());
    packed.insert(packed.end(), rs.var.vec().begin(), rs.var.vec().end());
    write_raw(dir / file, packed.data(), packed.size());
    manifest["stats"].push_back({{"name", name}, {"features", rs.mean.numel()}, {"file", file}});
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
}

FaceModel load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("cannot open checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  in >> manifest;
  FaceModel model(ModelConfig::from_json(manifest.at("config").dump()), 0);
  for (const auto& p : manifest.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    auto& var = const_cast<ad::Var&>(model.params().at(name));
    std::vector<int64_t> shape = p.at("shape").get<std::vector<int64_t>>();
    Tensor t(shape, read_raw(dir / p.at("file").get<std::string>(),
                             Tensor(shape).numel()));
    if (!var->value.same_shape(t))
      throw Error("checkpoint: shape mismatch for '" + name + "'");
    var->value = std::move(t);
  }
  for (const auto& s : manifest.at("stats")) {
    const std::string name = s.at("name").get<std::string>();
    const int64_t f = s.at("features").get<int64_t>();
    auto packed = read_raw(dir / s.at("file").get<std::string>(), 2 * f);
    auto& rs = model.running_stats().at(name);
    std::copy_n(packed.data(), f, rs.mean.data());
    std::copy_n(packed.data() + f, f, rs.var.data());
  }
  return model;
}

}  // namespace face
