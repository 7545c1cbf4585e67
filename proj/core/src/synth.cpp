#include "zori/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "zori/error.hpp"
#include "zori/zemb.hpp"

namespace zori {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix(std::uint64_t x) {
  std::uint64_t z = x + kGolden;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t {
  kPlantedStream = 1,
  kTextStream = 2,
  kVisualStream = 3,
  kConfusionStream = 4,
  kSceneStreamBase = 1000,
};

std::uint64_t scene_stream(std::size_t index, SceneKind kind) {
  return kSceneStreamBase + 2 * index + (kind == SceneKind::kTrain ? 1 : 0);
}

}  // namespace

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream) : key_(mix(seed ^ mix(stream))) {}

std::uint64_t CounterRng::next_u64() { return mix(key_ + (counter_++) * kGolden); }

double CounterRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double CounterRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double CounterRng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t CounterRng::below(std::uint64_t n) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

void SynthConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::kBadConfig, field + " " + why).with_field(field);
  };
  if (n_seen < 1) bad("n_seen", "must be >= 1");
  if (n_unseen < 1) bad("n_unseen", "must be >= 1");
  if (text_dim < 1) bad("D_text", "must be >= 1");
  if (backbone_dim < 1) bad("D_backbone", "must be >= 1");
  if (n_discriminative_channels < 1 || n_discriminative_channels > text_dim) {
    bad("n_discriminative_channels", "must be in [1, D_text]");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) bad("noise_sigma", "must be >= 0");
  if (instances_per_class < 1) bad("instances_per_class", "must be >= 1");
  if (image_height < 1 || image_width < 1) bad("image_size", "must be positive");
  if (n_images < 1) bad("n_images", "must be >= 1");
  if (n_train_images < 1) bad("n_train_images", "must be >= 1");
  if (proposal_jitter < 0) bad("proposal_jitter", "must be >= 0");
  if (!(domain_gap >= 0.0) || !std::isfinite(domain_gap)) bad("domain_gap", "must be >= 0");
  if (!(in_vocab_confusion >= 0.0 && in_vocab_confusion <= 1.0)) {
    bad("in_vocab_confusion", "must be in [0, 1]");
  }
}

nlohmann::json to_json(const SynthConfig& cfg) {
  return {{"seed", cfg.seed},
          {"n_seen", cfg.n_seen},
          {"n_unseen", cfg.n_unseen},
          {"D_text", cfg.text_dim},
          {"D_backbone", cfg.backbone_dim},
          {"n_discriminative_channels", cfg.n_discriminative_channels},
          {"noise_sigma", cfg.noise_sigma},
          {"instances_per_class", cfg.instances_per_class},
          {"image_size", {cfg.image_height, cfg.image_width}},
          {"n_images", cfg.n_images},
          {"n_train_images", cfg.n_train_images},
          {"proposal_jitter", cfg.proposal_jitter},
          {"domain_gap", cfg.domain_gap},
          {"in_vocab_confusion", cfg.in_vocab_confusion}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j, const SynthConfig& base) {
  if (!j.is_object()) throw Error(ErrorCode::kConfigError, "synth config must be an object");
  SynthConfig cfg = base;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else if (key == "n_seen") cfg.n_seen = value.get<std::size_t>();
      else if (key == "n_unseen") cfg.n_unseen = value.get<std::size_t>();
      else if (key == "D_text") cfg.text_dim = value.get<std::size_t>();
      else if (key == "D_backbone") cfg.backbone_dim = value.get<std::size_t>();
      else if (key == "n_discriminative_channels") cfg.n_discriminative_channels = value.get<std::size_t>();
      else if (key == "noise_sigma") cfg.noise_sigma = value.get<double>();
      else if (key == "instances_per_class") cfg.instances_per_class = value.get<std::size_t>();
      else if (key == "image_size") {
        const auto hw = value.get<std::vector<std::size_t>>();
        if (hw.size() != 2) throw Error(ErrorCode::kConfigError, "image_size must be [H, W]");
        cfg.image_height = hw[0];
        cfg.image_width = hw[1];
      } else if (key == "n_images") cfg.n_images = value.get<std::size_t>();
      else if (key == "n_train_images") cfg.n_train_images = value.get<std::size_t>();
      else if (key == "proposal_jitter") cfg.proposal_jitter = value.get<std::int64_t>();
      else if (key == "domain_gap") cfg.domain_gap = value.get<double>();
      else if (key == "in_vocab_confusion") cfg.in_vocab_confusion = value.get<double>();
      else throw Error(ErrorCode::kConfigError, "unknown key");
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kConfigError, std::string("wrong type: ") + e.what())
          .with_field("synth." + key);
    } catch (Error& e) {
      if (!e.field()) e.with_field("synth." + key);
      throw;
    }
  }
  try {
    cfg.validate();
  } catch (Error& e) {
    throw Error(ErrorCode::kConfigError, e.what()).with_field("synth." + e.field().value_or(""));
  }
  return cfg;
}

std::vector<std::string> synth_class_names(const SynthConfig& cfg) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < cfg.num_classes(); ++c) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%02zu", c < cfg.n_seen ? "seen" : "unseen", c);
    names.emplace_back(buf);
  }
  return names;
}

SeenUnseenSplit synth_split(const SynthConfig& cfg) {
  const auto names = synth_class_names(cfg);
  SeenUnseenSplit split{"synth", {}, {}};
  for (std::size_t c = 0; c < names.size(); ++c) {
    (c < cfg.n_seen ? split.seen : split.unseen).push_back(names[c]);
  }
  return split;
}

ClassEmbeddings generate_class_embeddings(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.num_classes();
  const std::size_t d = cfg.text_dim;

  // Planted channels: a seeded partial Fisher-Yates shuffle.
  CounterRng pick(cfg.seed, kPlantedStream);
  std::vector<std::size_t> channels(d);
  for (std::size_t i = 0; i < d; ++i) channels[i] = i;
  for (std::size_t i = 0; i < cfg.n_discriminative_channels; ++i) {
    std::swap(channels[i], channels[i + pick.below(d - i)]);
  }
  std::vector<std::size_t> planted(channels.begin(),
                                   channels.begin() + static_cast<std::ptrdiff_t>(cfg.n_discriminative_channels));
  std::sort(planted.begin(), planted.end());
  std::vector<bool> is_planted(d, false);
  for (const auto c : planted) is_planted[c] = true;

  CounterRng rng(cfg.seed, kTextStream);
  std::vector<std::vector<double>> raw(n, std::vector<double>(d, 0.0));
  for (std::size_t c = 0; c < d; ++c) {
    if (is_planted[c]) {
      // Class-specific values, centered across classes and scaled to unit
      // spread: negative pairwise similarity, high variance.
      std::vector<double> v(n);
      for (auto& x : v) x = rng.normal();
      double mean = 0.0;
      for (const auto x : v) mean += x;
      mean /= static_cast<double>(n);
      double spread = 0.0;
      for (auto& x : v) {
        x -= mean;
        spread += x * x;
      }
      spread = std::sqrt(spread / static_cast<double>(n));
      for (std::size_t i = 0; i < n; ++i) raw[i][c] = spread > 0.0 ? v[i] / spread : 1.0;
    } else {
      // Shared signal: identical across classes.
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      const double value = sign * rng.uniform(0.5, 1.5);
      for (std::size_t i = 0; i < n; ++i) raw[i][c] = value;
    }
  }
  std::vector<std::vector<double>> noisy = raw;
  for (auto& row : noisy) {
    for (auto& x : row) x += cfg.noise_sigma * rng.normal();
  }
  auto m = l2_normalize_rows(EmbeddingMatrix::from_rows(noisy, synth_class_names(cfg)));
  return {std::move(m), std::move(planted), std::move(raw)};
}

std::vector<std::vector<double>> generate_visual_prototypes(const SynthConfig& cfg,
                                                            const ClassEmbeddings& text) {
  CounterRng rng(cfg.seed, kVisualStream);
  std::vector<std::vector<double>> protos;
  for (std::size_t c = 0; c < cfg.num_classes(); ++c) {
    std::vector<double> v(cfg.backbone_dim);
    for (std::size_t d = 0; d < v.size(); ++d) {
      const double base = cfg.backbone_dim == cfg.text_dim ? text.raw[c][d] : 0.0;
      const double gap = cfg.backbone_dim == cfg.text_dim ? cfg.domain_gap : 1.0;
      v[d] = base + gap * rng.normal();
    }
    protos.push_back(std::move(v));
  }
  return protos;
}

nlohmann::json to_json(const Proposal& p) {
  return {{"image_id", p.image_id},
          {"class_id", p.class_id},
          {"score", p.score},
          {"mask", mask_to_json(p.mask)},
          {"embedding", p.class_embedding}};
}

Proposal proposal_from_json(const nlohmann::json& j) {
  try {
    return {j.at("image_id").get<std::string>(), j.value("class_id", std::size_t{0}),
            j.at("score").get<double>(), mask_from_json(j.at("mask")),
            j.at("embedding").get<std::vector<double>>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("bad proposal: ") + e.what());
  }
}

std::vector<Proposal> read_proposals(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<Proposal> out;
  std::string line;
  std::uint64_t offset = 0;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto start = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(proposal_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::kFormatError, path.string() + ": " + e.what())
          .with_offset(start + e.byte - 1)
          .with_index(line_no);
    } catch (Error& e) {
      throw Error(e.code(), path.string() + " line " + std::to_string(line_no) + ": " + e.what())
          .with_offset(start)
          .with_index(line_no);
    }
  }
  return out;
}

void write_proposals(const std::filesystem::path& path, const std::vector<Proposal>& proposals) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  for (const auto& p : proposals) out << to_json(p).dump() << '\n';
}

Scene generate_scene(const SynthConfig& cfg, std::size_t index, SceneKind kind) {
  cfg.validate();
  const auto text = generate_class_embeddings(cfg);
  const auto protos = generate_visual_prototypes(cfg, text);
  const std::size_t n_classes = kind == SceneKind::kTrain ? cfg.n_seen : cfg.num_classes();
  const std::size_t n_instances = n_classes * cfg.instances_per_class;
  const std::size_t h = cfg.image_height;
  const std::size_t w = cfg.image_width;

  const auto grid_cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_instances))));
  const std::size_t grid_rows = (n_instances + grid_cols - 1) / grid_cols;
  const std::size_t cell_h = h / grid_rows;
  const std::size_t cell_w = w / grid_cols;
  if (cell_h < 4 || cell_w < 4) {
    throw Error(ErrorCode::kDoesNotFit, std::to_string(n_instances) + " instances do not fit in " +
                                            std::to_string(h) + "x" + std::to_string(w));
  }

  CounterRng rng(cfg.seed, scene_stream(index, kind));
  Scene scene{{(kind == SceneKind::kTrain ? "train_" : "test_") + std::to_string(index), w, h},
              FeatureMap(1, 1, 1, {0.0}),
              {},
              {}};

  std::vector<std::size_t> cells(grid_rows * grid_cols);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
  for (std::size_t i = 0; i + 1 < cells.size(); ++i) {
    std::swap(cells[i], cells[i + rng.below(cells.size() - i)]);
  }

  const std::size_t d = cfg.backbone_dim;
  std::vector<double> data(d * h * w);
  for (auto& x : data) x = cfg.noise_sigma * rng.normal();

  const auto names = synth_class_names(cfg);
  CounterRng confusion(cfg.seed, kConfusionStream);
  std::vector<std::size_t> confused_with(cfg.num_classes());
  for (std::size_t c = 0; c < cfg.num_classes(); ++c) confused_with[c] = confusion.below(cfg.n_seen);

  for (std::size_t i = 0; i < n_instances; ++i) {
    const std::size_t cls = i / cfg.instances_per_class;
    const std::size_t cell = cells[i];
    const auto cy = static_cast<std::int64_t>((cell / grid_cols) * cell_h);
    const auto cx = static_cast<std::int64_t>((cell % grid_cols) * cell_w);
    const auto rh = static_cast<std::int64_t>(cell_h / 2 + rng.below(cell_h - cell_h / 2));
    const auto rw = static_cast<std::int64_t>(cell_w / 2 + rng.below(cell_w - cell_w / 2));
    const auto oy = cy + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(cell_h) - rh + 1));
    const auto ox = cx + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(cell_w) - rw + 1));
    auto mask = BinaryMask::rectangle(h, w, oy, ox, rh, rw);

    std::vector<double> instance(protos[cls]);
    for (auto& x : instance) x += cfg.noise_sigma * rng.normal();
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        if (!mask.get(y, x)) continue;
        for (std::size_t c = 0; c < d; ++c) data[(c * h + y) * w + x] += instance[c];
      }
    }

    std::int64_t dy = 0;
    std::int64_t dx = 0;
    if (cfg.proposal_jitter > 0) {
      const auto span = static_cast<std::uint64_t>(2 * cfg.proposal_jitter + 1);
      dy = static_cast<std::int64_t>(rng.below(span)) - cfg.proposal_jitter;
      dx = static_cast<std::int64_t>(rng.below(span)) - cfg.proposal_jitter;
    }
    auto proposal_mask = BinaryMask::rectangle(h, w, oy + dy, ox + dx, rh, rw);

    std::vector<double> embedding(cfg.text_dim);
    const bool unseen = cls >= cfg.n_seen;
    const double pull = unseen ? cfg.in_vocab_confusion : 0.0;
    for (std::size_t c = 0; c < cfg.text_dim; ++c) {
      embedding[c] = (1.0 - pull) * text.raw[cls][c] + pull * text.raw[confused_with[cls]][c] +
                     cfg.noise_sigma * rng.normal();
    }
    const double score = rng.uniform(0.5, 1.0);

    scene.annotations.push_back({scene.image.id, cls, std::move(mask)});
    scene.proposals.push_back(
        {scene.image.id, cls, score, std::move(proposal_mask), std::move(embedding)});
  }
  scene.features = FeatureMap(d, h, w, std::move(data));
  return scene;
}

void write_synth_fixture(const SynthConfig& cfg, const std::filesystem::path& dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(dir / "test" / "features");
  const auto text = generate_class_embeddings(cfg);
  const auto names = synth_class_names(cfg);
  write_embeddings(dir / "text_embeddings.zemb", text.embeddings);
  {
    std::ofstream out(dir / "split.json");
    out << to_json(synth_split(cfg)).dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "synth_truth.json");
    out << nlohmann::json{{"planted_channels", text.planted}, {"synth", to_json(cfg)}}.dump(2)
        << '\n';
  }

  std::vector<std::vector<double>> train_rows;
  std::vector<std::string> train_labels;
  for (std::size_t i = 0; i < cfg.n_train_images; ++i) {
    const auto scene = generate_scene(cfg, i, SceneKind::kTrain);
    for (const auto& a : scene.annotations) {
      train_rows.push_back(mask_pool(scene.features, a.mask));
      train_labels.push_back(names[a.class_id]);
    }
  }
  write_embeddings(dir / "train_instances.zemb",
                   EmbeddingMatrix::from_rows(train_rows, train_labels));

  AnnotationSet test;
  test.categories = names;
  std::vector<Proposal> proposals;
  for (std::size_t i = 0; i < cfg.n_images; ++i) {
    auto scene = generate_scene(cfg, i, SceneKind::kTest);
    write_feature_map(dir / "test" / "features" / (scene.image.id + ".zemb"), scene.features);
    test.images.push_back(scene.image);
    for (auto& a : scene.annotations) test.annotations.push_back(std::move(a));
    for (auto& p : scene.proposals) proposals.push_back(std::move(p));
  }
  write_annotation_set(dir / "test" / "annotations.json", test);
  write_proposals(dir / "test" / "proposals.jsonl", proposals);
}

}  // namespace zori
