#include "face/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

namespace face::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error("malformed JSON in " + p.string() + ": " + e.what());
  }
  return j;
}

std::vector<float> read_f32(const fs::path& p, int64_t expected) {
  std::ifstream in(p, std::ios::binary | std::ios::ate);
  if (!in) throw Error("cannot open " + p.string());
  const auto bytes = static_cast<int64_t>(in.tellg());
  if (bytes != expected * 4)
    throw Error(p.string() + ": expected " + std::to_string(expected * 4) + " bytes, found " +
                std::to_string(bytes));
  std::vector<float> v(expected);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(v.data()), bytes);
  if (!in) throw Error("short read from " + p.string());
  return v;
}

}  // namespace

void ElectrodeMap::validate() const {
  if (names.size() != cells.size()) throw Error("ElectrodeMap: name/cell count mismatch");
  std::set<std::pair<int64_t, int64_t>> seen;
  for (const auto& [r, c] : cells) {
    if (r < 0 || r >= grid_h || c < 0 || c >= grid_w)
      throw Error("ElectrodeMap: cell out of the " + std::to_string(grid_h) + "x" +
                  std::to_string(grid_w) + " grid");
    if (!seen.insert({r, c}).second) throw Error("ElectrodeMap: duplicate cell assignment");
  }
}

ElectrodeMap ElectrodeMap::load(const fs::path& json_path,
                                const std::vector<std::string>& channel_order) {
  json j = read_json(json_path);
  ElectrodeMap m;
  m.grid_h = j.at("grid").at(0).get<int64_t>();
  m.grid_w = j.at("grid").at(1).get<int64_t>();
  std::vector<std::string> names;
  std::vector<std::pair<int64_t, int64_t>> cells;
  for (const auto& ch : j.at("channels")) {
    names.push_back(ch.at("name").get<std::string>());
    cells.emplace_back(ch.at("row").get<int64_t>(), ch.at("col").get<int64_t>());
  }
  if (channel_order.empty()) {
    m.names = std::move(names);
    m.cells = std::move(cells);
  } else {
    for (const auto& want : channel_order) {
      auto it = std::find(names.begin(), names.end(), want);
      if (it == names.end())
        throw Error("electrode map " + json_path.string() + " has no channel named '" + want + "'");
      m.names.push_back(want);
      m.cells.push_back(cells[it - names.begin()]);
    }
  }
  m.validate();
  return m;
}

ElectrodeMap ElectrodeMap::standard62() {
  // 62-channel cap arranged on the conventional 9x9 scalp grid.
  static const std::vector<std::pair<std::string, std::pair<int64_t, int64_t>>> layout = {
      {"FP1", {0, 3}},  {"FPZ", {0, 4}}, {"FP2", {0, 5}},
      {"AF3", {1, 3}},  {"AF4", {1, 5}},
      {"F7", {2, 0}},   {"F5", {2, 1}},  {"F3", {2, 2}},  {"F1", {2, 3}},  {"FZ", {2, 4}},
      {"F2", {2, 5}},   {"F4", {2, 6}},  {"F6", {2, 7}},  {"F8", {2, 8}},
      {"FT7", {3, 0}},  {"FC5", {3, 1}}, {"FC3", {3, 2}}, {"FC1", {3, 3}}, {"FCZ", {3, 4}},
      {"FC2", {3, 5}},  {"FC4", {3, 6}}, {"FC6", {3, 7}}, {"FT8", {3, 8}},
      {"T7", {4, 0}},   {"C5", {4, 1}},  {"C3", {4, 2}},  {"C1", {4, 3}},  {"CZ", {4, 4}},
      {"C2", {4, 5}},   {"C4", {4, 6}},  {"C6", {4, 7}},  {"T8", {4, 8}},
      {"TP7", {5, 0}},  {"CP5", {5, 1}}, {"CP3", {5, 2}}, {"CP1", {5, 3}}, {"CPZ", {5, 4}},
      {"CP2", {5, 5}},  {"CP4", {5, 6}}, {"CP6", {5, 7}}, {"TP8", {5, 8}},
      {"P7", {6, 0}},   {"P5", {6, 1}},  {"P3", {6, 2}},  {"P1", {6, 3}},  {"PZ", {6, 4}},
      {"P2", {6, 5}},   {"P4", {6, 6}},  {"P6", {6, 7}},  {"P8", {6, 8}},
      {"PO7", {7, 1}},  {"PO5", {7, 2}}, {"PO3", {7, 3}}, {"POZ", {7, 4}}, {"PO4", {7, 5}},
      {"PO6", {7, 6}},  {"PO8", {7, 7}},
      {"CB1", {8, 2}},  {"O1", {8, 3}},  {"OZ", {8, 4}},  {"O2", {8, 5}},  {"CB2", {8, 6}},
  };
  ElectrodeMap m;
  m.grid_h = 9;
  m.grid_w = 9;
  for (const auto& [name, cell] : layout) {
    m.names.push_back(name);
    m.cells.push_back(cell);
  }
  m.validate();
  return m;
}

ElectrodeMap ElectrodeMap::dense(int64_t channels, int64_t grid_h, int64_t grid_w) {
  if (channels > grid_h * grid_w) throw Error("ElectrodeMap::dense: grid too small");
  ElectrodeMap m;
  m.grid_h = grid_h;
  m.grid_w = grid_w;
  for (int64_t c = 0; c < channels; ++c) {
    m.names.push_back("CH" + std::to_string(c));
    m.cells.emplace_back(c / grid_w, c % grid_w);
  }
  m.validate();
  return m;
}

std::vector<FeatureSet> load_features(const fs::path& dir) {
  json manifest = read_json(dir / "manifest.json");
  const int classes = manifest.at("classes").get<int>();
  const int64_t channels = manifest.at("channels").get<int64_t>();
  const int64_t bands = manifest.at("bands").get<int64_t>();
  if (classes < 1 || channels < 1 || bands < 1) throw Error("manifest: non-positive extents");

  std::vector<FeatureSet> out;
  for (const auto& subj : manifest.at("subjects")) {
    FeatureSet fsd;
    fsd.subject_id = subj.at("id").get<std::string>();
    fsd.classes = classes;
    const int64_t n = subj.at("num_samples").get<int64_t>();
    if (n < 1) throw Error("manifest: subject " + fsd.subject_id + " has no samples");
    auto values = read_f32(dir / subj.at("features").get<std::string>(), n * channels * bands);
    fsd.samples = Tensor({n, channels, bands}, std::move(values));
    const int64_t bad = fsd.samples.first_non_finite();
    if (bad >= 0)
      throw Error("subject " + fsd.subject_id + ": non-finite value at offset " +
                  std::to_string(bad));

    const fs::path label_path = dir / subj.at("labels").get<std::string>();
    std::ifstream lin(label_path, std::ios::binary);
    if (!lin) throw Error("cannot open " + label_path.string());
    std::vector<unsigned char> raw(n);
    lin.read(reinterpret_cast<char*>(raw.data()), n);
    if (!lin || lin.peek() != EOF)
      throw Error(label_path.string() + ": expected exactly " + std::to_string(n) + " label bytes");
    fsd.labels.reserve(n);
    for (int64_t i = 0; i < n; ++i) {
      if (raw[i] >= classes)
        throw Error("subject " + fsd.subject_id + ": label " + std::to_string(raw[i]) +
                    " at sample " + std::to_string(i) + " exceeds " + std::to_string(classes - 1));
      fsd.labels.push_back(raw[i]);
    }
    out.push_back(std::move(fsd));
  }
  return out;
}

void save_features(const fs::path& dir, const std::vector<FeatureSet>& subjects,
                   const std::vector<std::string>& channel_names) {
  fs::create_directories(dir);
  nlohmann::ordered_json manifest;
  if (subjects.empty()) throw Error("save_features: nothing to write");
  manifest["classes"] = subjects[0].classes;
  manifest["channels"] = subjects[0].channels();
  manifest["bands"] = subjects[0].bands();
  if (!channel_names.empty()) manifest["channel_names"] = channel_names;
  manifest["subjects"] = nlohmann::ordered_json::array();

  for (const auto& s : subjects) {
    const std::string feat_name = s.subject_id + ".f32";
    const std::string label_name = s.subject_id + ".labels";
    std::ofstream fout(dir / feat_name, std::ios::binary);
    fout.write(reinterpret_cast<const char*>(s.samples.data()), s.samples.numel() * 4);
    std::ofstream lout(dir / label_name, std::ios::binary);
    for (int lab : s.labels) {
      auto b = static_cast<unsigned char>(lab);
      lout.write(reinterpret_cast<const char*>(&b), 1);
    }
    manifest["subjects"].push_back({{"id", s.subject_id},
                                    {"num_samples", s.num_samples()},
                                    {"features", feat_name},
                                    {"labels", label_name}});
  }
  std::ofstream mout(dir / "manifest.json");
  mout << manifest.dump(2) << "\n";
}

std::vector<FeatureSet> synth_generate(int num_subjects, int samples_per_class, int classes,
                                       int channels, int bands, float shift_strength,
                                       uint64_t seed) {
  if (num_subjects < 1 || samples_per_class < 1 || classes < 1 || channels < 1 || bands < 1)
    throw Error("synth_generate: all counts must be positive");
  if (shift_strength < 0) throw Error("synth_generate: shift_strength must be >= 0");

  std::mt19937_64 rng(seed);
  const int64_t dim = static_cast<int64_t>(channels) * bands;

  // Shared class prototypes, then a subject-specific affine distortion.
  std::vector<Tensor> prototypes;
  for (int k = 0; k < classes; ++k) prototypes.push_back(Tensor::randn({1, dim}, rng));

  std::vector<FeatureSet> out;
  std::normal_distribution<float> noise(0.0f, 0.6f);
  for (int s = 0; s < num_subjects; ++s) {
    Tensor mix = Tensor::randn({dim, dim}, rng, 1.0f / std::sqrt(static_cast<float>(dim)));
    Tensor bias = Tensor::randn({1, dim}, rng, 2.0f);

    FeatureSet fsd;
    char id[8];
    std::snprintf(id, sizeof(id), "s%02d", s);
    fsd.subject_id = id;
    fsd.classes = classes;
    const int64_t n = static_cast<int64_t>(samples_per_class) * classes;
    fsd.samples = Tensor({n, channels, bands});
    fsd.labels.resize(n);

    int64_t row = 0;
    std::vector<float> clean(dim), shifted(dim);
    for (int k = 0; k < classes; ++k)
      for (int i = 0; i < samples_per_class; ++i, ++row) {
        for (int64_t d = 0; d < dim; ++d) clean[d] = prototypes[k].at(d) + noise(rng);
        for (int64_t d = 0; d < dim; ++d) {
          float acc = clean[d] + shift_strength * bias.at(d);
          for (int64_t e = 0; e < dim; ++e) acc += shift_strength * mix.at(d * dim + e) * clean[e];
          shifted[d] = acc;
        }
        std::copy(shifted.begin(), shifted.end(), fsd.samples.data() + row * dim);
        fsd.labels[row] = k;
      }
    out.push_back(std::move(fsd));
  }
  return out;
}

Tensor spatial_project(const Tensor& x, const ElectrodeMap& map) {
  if (x.shape().size() != 2 || x.shape()[0] != map.channels())
    throw Error("spatial_project: expected " + std::to_string(map.channels()) +
                " channel rows, got " + x.shape_str());
  const int64_t bands = x.shape()[1];
  Tensor out({bands, map.grid_h, map.grid_w});
  for (int64_t c = 0; c < map.channels(); ++c) {
    const auto [r, col] = map.cells[c];
    for (int64_t b = 0; b < bands; ++b)
      out.at((b * map.grid_h + r) * map.grid_w + col) = x.at(c * bands + b);
  }
  return out;
}

Tensor spatial_unproject(const Tensor& grid, const ElectrodeMap& map) {
  if (grid.shape().size() != 3 || grid.shape()[1] != map.grid_h || grid.shape()[2] != map.grid_w)
    throw Error("spatial_unproject: grid shape mismatch " + grid.shape_str());
  const int64_t bands = grid.shape()[0];
  Tensor out({map.channels(), bands});
  for (int64_t c = 0; c < map.channels(); ++c) {
    const auto [r, col] = map.cells[c];
    for (int64_t b = 0; b < bands; ++b)
      out.at(c * bands + b) = grid.at((b * map.grid_h + r) * map.grid_w + col);
  }
  return out;
}

Tensor resize_grid(const Tensor& grid, int64_t out_h, int64_t out_w) {
  if (grid.shape().size() != 3) throw Error("resize_grid: expected {B,H,W}, got " + grid.shape_str());
  const int64_t bands = grid.shape()[0], h = grid.shape()[1], w = grid.shape()[2];
  if (h < 2 || w < 2) throw Error("resize_grid: input grid too small");
  Tensor out({bands, out_h, out_w});
  const double sh = static_cast<double>(h - 1) / static_cast<double>(out_h - 1);
  const double sw = static_cast<double>(w - 1) / static_cast<double>(out_w - 1);
  for (int64_t b = 0; b < bands; ++b)
    for (int64_t i = 0; i < out_h; ++i) {
      const double fy = i * sh;
      const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(fy), h - 2);
      const double wy = fy - y0;
      for (int64_t j = 0; j < out_w; ++j) {
        const double fx = j * sw;
        const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(fx), w - 2);
        const double wx = fx - x0;
        auto g = [&](int64_t y, int64_t x) {
          return static_cast<double>(grid.at((b * h + y) * w + x));
        };
        out.at((b * out_h + i) * out_w + j) = static_cast<float>(
            (1 - wy) * ((1 - wx) * g(y0, x0) + wx * g(y0, x0 + 1)) +
            wy * ((1 - wx) * g(y0 + 1, x0) + wx * g(y0 + 1, x0 + 1)));
      }
    }
  return out;
}

Episode sample_episode(const FeatureSet& fs, int shots, int query, std::mt19937_64& rng) {
  const int classes = fs.classes;
  std::vector<std::vector<int64_t>> by_class(classes);
  for (int64_t i = 0; i < fs.num_samples(); ++i) by_class[fs.labels[i]].push_back(i);

  Episode ep;
  ep.subject_id = fs.subject_id;
  std::vector<std::vector<int64_t>> remaining(classes);
  for (int k = 0; k < classes; ++k) {
    auto& pool = by_class[k];
    if (static_cast<int>(pool.size()) < shots)
      throw Error("sample_episode: class " + std::to_string(k) + " has " +
                  std::to_string(pool.size()) + " samples, need " + std::to_string(shots));
    std::shuffle(pool.begin(), pool.end(), rng);
    ep.support.insert(ep.support.end(), pool.begin(), pool.begin() + shots);
    remaining[k].assign(pool.begin() + shots, pool.end());
  }

  int64_t pool_total = 0;
  for (const auto& r : remaining) pool_total += r.size();
  if (pool_total < query)
    throw Error("sample_episode: query pool has " + std::to_string(pool_total) +
                " samples, need " + std::to_string(query));

  // Class-balanced query; the remainder goes to the lowest class indices, and
  // any deficit in a class is refilled from the others in class order.
  std::vector<int> want(classes, query / classes);
  for (int k = 0; k < query % classes; ++k) ++want[k];
  int deficit = 0;
  for (int k = 0; k < classes; ++k) {
    const int take = std::min<int>(want[k], static_cast<int>(remaining[k].size()));
    deficit += want[k] - take;
    want[k] = take;
  }
  for (int k = 0; k < classes && deficit > 0; ++k) {
    const int extra =
        std::min<int>(deficit, static_cast<int>(remaining[k].size()) - want[k]);
    want[k] += extra;
    deficit -= extra;
  }
  for (int k = 0; k < classes; ++k)
    ep.query.insert(ep.query.end(), remaining[k].begin(), remaining[k].begin() + want[k]);
  return ep;
}

Episode sample_episode(const FeatureSet& fs, int shots, int query, uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_episode(fs, shots, query, rng);
}

std::vector<LosoSplit> loso_splits(int num_subjects) {
  if (num_subjects < 2) throw Error("loso_splits: need at least 2 subjects");
  std::vector<LosoSplit> out;
  for (int t = 0; t < num_subjects; ++t) {
    LosoSplit s;
    s.target = t;
    for (int j = 0; j < num_subjects; ++j)
      if (j != t) s.sources.push_back(j);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace face::data
