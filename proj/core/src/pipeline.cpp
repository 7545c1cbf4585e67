#include "zori/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "zori/error.hpp"
#include "zori/eval.hpp"
#include "zori/protocol.hpp"
#include "zori/zemb.hpp"

namespace zori {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& field, const std::string& message) {
  throw Error(ErrorCode::kConfigError, field + ": " + message).with_field(field);
}

template <typename T>
T get_field(const json& value, const std::string& field) {
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    config_error(field, "wrong type (" + std::string(value.type_name()) + ")");
  }
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kFormatError, path.string() + ": " + e.what())
        .with_offset(static_cast<std::uint64_t>(e.byte));
  }
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_config_snapshot(const RunConfig& cfg, const fs::path& output, const std::string& stage) {
  const auto dir = fs::is_directory(output) ? output : output.parent_path();
  write_json_file(dir / ("effective_config." + stage + ".json"), to_json(cfg));
}

fs::path selection_path_for(const fs::path& classifier) {
  auto p = classifier;
  p.replace_extension(".selection.json");
  return p;
}

std::vector<std::string> labels_of(const EmbeddingMatrix& m, const std::string& what) {
  if (!m.row_labels()) throw Error(ErrorCode::kFormatError, what + " has no row labels");
  return *m.row_labels();
}

std::size_t class_position(const std::vector<std::string>& names, const std::string& name) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    throw Error(ErrorCode::kSplitMismatch, "class '" + name + "' is not in the class list");
  }
  return static_cast<std::size_t>(it - names.begin());
}

// Instance rows grouped by class name, in file order.
std::map<std::string, std::vector<std::vector<double>>> group_instances(const EmbeddingMatrix& m) {
  const auto labels = labels_of(m, "instance file");
  std::map<std::string, std::vector<std::vector<double>>> groups;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    groups[labels[r]].emplace_back(row.begin(), row.end());
  }
  return groups;
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

SeenUnseenSplit load_split(const RunConfig& cfg) {
  const auto& s = cfg.split;
  if (s == "isaid" || s == "nwpu" || s == "sior") return builtin_split(s);
  return resolve_split(cfg.resolve(s).string());
}

}  // namespace

void RunConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) config_error("lambda", "must be in [0, 1]");
  if (k_channels < 1) config_error("k_channels", "must be >= 1");
  if (!std::isfinite(alpha) || alpha < 0.0) config_error("alpha", "must be >= 0");
  if (cache_K < 1) config_error("cache_K", "must be >= 1");
  if (n_trainable < 1) config_error("n_trainable", "must be >= 1");
  if (T < 1) config_error("T", "must be >= 1");
  if (!(beta_seen >= 0.0 && beta_seen <= 1.0)) config_error("ensemble.beta_seen", "must be in [0, 1]");
  if (!(beta_unseen >= 0.0 && beta_unseen <= 1.0)) {
    config_error("ensemble.beta_unseen", "must be in [0, 1]");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) config_error("temperature", "must be > 0");
  if (workers < 1) config_error("workers", "must be >= 1");
  if (split.empty()) config_error("split", "must name a builtin split or a JSON file");
  try {
    synth.validate();
  } catch (const Error& e) {
    config_error("synth." + e.field().value_or(""), e.what());
  }
}

fs::path RunConfig::resolve(const std::string& relative) const {
  const fs::path p(relative);
  return p.is_absolute() ? p : fs::path(paths.work_dir) / p;
}

bool operator==(const RunConfig& a, const RunConfig& b) { return to_json(a) == to_json(b); }

json to_json(const RunConfig& cfg) {
  const auto& p = cfg.paths;
  return {{"lambda", cfg.lambda},
          {"k_channels", cfg.k_channels},
          {"use_dec", cfg.use_dec},
          {"alpha", cfg.alpha},
          {"cache_K", cfg.cache_K},
          {"n_trainable", cfg.n_trainable},
          {"T", cfg.T},
          {"ensemble", {{"beta_seen", cfg.beta_seen}, {"beta_unseen", cfg.beta_unseen}}},
          {"temperature", cfg.temperature},
          {"protocol", protocol_name(cfg.protocol)},
          {"split", cfg.split},
          {"workers", cfg.workers},
          {"paths",
           {{"work_dir", p.work_dir},
            {"text_embeddings", p.text_embeddings},
            {"train_instances", p.train_instances},
            {"selection", p.selection},
            {"classifier", p.classifier},
            {"partition", p.partition},
            {"adapter", p.adapter},
            {"bank_dir", p.bank_dir},
            {"test_dir", p.test_dir},
            {"annotations", p.annotations},
            {"detections", p.detections},
            {"report", p.report},
            {"split_input", p.split_input},
            {"split_out_dir", p.split_out_dir}}},
          {"synth", to_json(cfg.synth)}};
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) config_error("<root>", "config must be a JSON object");
  RunConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "lambda") cfg.lambda = get_field<double>(value, key);
    else if (key == "k_channels") cfg.k_channels = get_field<std::size_t>(value, key);
    else if (key == "use_dec") cfg.use_dec = get_field<bool>(value, key);
    else if (key == "alpha") cfg.alpha = get_field<double>(value, key);
    else if (key == "cache_K") cfg.cache_K = get_field<std::size_t>(value, key);
    else if (key == "n_trainable") cfg.n_trainable = get_field<std::size_t>(value, key);
    else if (key == "T") cfg.T = get_field<std::size_t>(value, key);
    else if (key == "temperature") cfg.temperature = get_field<double>(value, key);
    else if (key == "split") cfg.split = get_field<std::string>(value, key);
    else if (key == "workers") cfg.workers = get_field<std::size_t>(value, key);
    else if (key == "protocol") {
      try {
        cfg.protocol = protocol_from_name(get_field<std::string>(value, key));
      } catch (const Error&) {
        config_error(key, "must be \"ZSRI\" or \"GZSRI\"");
      }
    } else if (key == "ensemble") {
      if (!value.is_object()) config_error(key, "must be an object");
      for (const auto& [k, v] : value.items()) {
        const auto field = "ensemble." + k;
        if (k == "beta_seen") cfg.beta_seen = get_field<double>(v, field);
        else if (k == "beta_unseen") cfg.beta_unseen = get_field<double>(v, field);
        else config_error(field, "unknown key");
      }
    } else if (key == "paths") {
      if (!value.is_object()) config_error(key, "must be an object");
      auto& p = cfg.paths;
      const std::map<std::string, std::string*> fields = {
          {"work_dir", &p.work_dir},           {"text_embeddings", &p.text_embeddings},
          {"train_instances", &p.train_instances}, {"selection", &p.selection},
          {"classifier", &p.classifier},       {"partition", &p.partition},
          {"adapter", &p.adapter},             {"bank_dir", &p.bank_dir},
          {"test_dir", &p.test_dir},           {"annotations", &p.annotations},
          {"detections", &p.detections},       {"report", &p.report},
          {"split_input", &p.split_input},     {"split_out_dir", &p.split_out_dir}};
      for (const auto& [k, v] : value.items()) {
        const auto it = fields.find(k);
        if (it == fields.end()) config_error("paths." + k, "unknown key");
        *it->second = get_field<std::string>(v, "paths." + k);
      }
    } else if (key == "synth") {
      cfg.synth = synth_config_from_json(value, cfg.synth);
    } else {
      config_error(key, "unknown key");
    }
  }
  cfg.validate();
  return cfg;
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    config_error(assignment, "override must look like key=value");
  }
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) config_error(key, "empty path component");
    if (!node->is_object()) config_error(key, "cannot descend into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json j = path.empty() ? json::object() : read_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  auto cfg = run_config_from_json(j);
  // Relative paths in a config file are relative to the file itself.
  if (!path.empty() && fs::path(cfg.paths.work_dir).is_relative()) {
    cfg.paths.work_dir = (path.parent_path() / cfg.paths.work_dir).lexically_normal().string();
    if (cfg.paths.work_dir.empty()) cfg.paths.work_dir = ".";
  }
  return cfg;
}

fs::path run_synth(const RunConfig& cfg) {
  const fs::path dir(cfg.paths.work_dir);
  write_synth_fixture(cfg.synth, dir);
  write_config_snapshot(cfg, dir, "synth");
  return dir;
}

fs::path run_select_channels(const RunConfig& cfg) {
  const auto text = read_embeddings(cfg.resolve(cfg.paths.text_embeddings));
  const auto score = score_channels(text, cfg.lambda);
  const auto selection = select_top_k(score, cfg.k_channels);
  const auto out = cfg.resolve(cfg.paths.selection);
  write_json_file(out, to_json(selection));
  write_config_snapshot(cfg, out, "select-channels");
  return out;
}

fs::path run_build_classifier(const RunConfig& cfg) {
  const auto text = read_embeddings(cfg.resolve(cfg.paths.text_embeddings));
  const auto names = labels_of(text, "text embedding file");
  const auto out = cfg.resolve(cfg.paths.classifier);
  const auto sel_out = selection_path_for(out);
  if (cfg.use_dec) {
    const auto selection =
        channel_selection_from_json(read_json_file(cfg.resolve(cfg.paths.selection)));
    const auto classifier = build_refined_classifier(text, selection, names);
    write_embeddings(out, classifier.weights());
    write_json_file(sel_out, to_json(selection));
  } else {
    write_embeddings(out, build_naive_classifier(text, names).weights());
    fs::remove(sel_out);
  }
  write_config_snapshot(cfg, out, "build-classifier");
  return out;
}

fs::path run_partition_channels(const RunConfig& cfg) {
  const auto split = load_split(cfg);
  const auto groups = group_instances(read_embeddings(cfg.resolve(cfg.paths.train_instances)));
  std::vector<std::vector<std::vector<double>>> per_class;
  for (const auto& name : split.seen) {
    const auto it = groups.find(name);
    if (it == groups.end()) {
      throw Error(ErrorCode::kInsufficientInstances, "no instances for seen class '" + name + "'");
    }
    per_class.push_back(it->second);
  }
  const auto partition = partition_channels(class_feature_means(per_class, cfg.T), cfg.lambda,
                                            cfg.n_trainable);
  const auto out = cfg.resolve(cfg.paths.partition);
  write_json_file(out, to_json(partition));
  write_config_snapshot(cfg, out, "partition-channels");
  return out;
}

fs::path run_build_cache(const RunConfig& cfg) {
  const auto split = load_split(cfg);
  const auto names =
      labels_of(read_embeddings(cfg.resolve(cfg.paths.text_embeddings)), "text embedding file");
  auto groups = group_instances(read_embeddings(cfg.resolve(cfg.paths.train_instances)));
  std::vector<ClassInstances> seen;
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (!split.is_seen(names[c])) continue;
    seen.push_back({c, std::move(groups[names[c]])});
  }
  const auto bank = build_seen_bank(seen, cfg.cache_K, names);
  const auto out = cfg.resolve(cfg.paths.bank_dir);
  write_cache_bank(out, bank);
  write_config_snapshot(cfg, out, "build-cache");
  return out;
}

PredictInputs load_predict_inputs(const RunConfig& cfg) {
  const auto classifier_path = cfg.resolve(cfg.paths.classifier);
  const auto weights = read_embeddings(classifier_path);
  const auto names = labels_of(weights, "classifier file");
  std::optional<ChannelSelection> selection;
  if (const auto sel = selection_path_for(classifier_path); fs::exists(sel)) {
    selection = channel_selection_from_json(read_json_file(sel));
  }
  Classifier classifier(weights, names, selection);
  auto bank = read_cache_bank(cfg.resolve(cfg.paths.bank_dir));
  if (bank.class_names() != names) {
    throw Error(ErrorCode::kClassCountMismatch, "cache bank classes differ from classifier classes");
  }

  const auto split = load_split(cfg);
  EnsembleConfig ensemble{cfg.beta_seen, cfg.beta_unseen, {}};
  for (const auto& n : names) ensemble.seen_mask.push_back(split.is_seen(n));
  for (const auto& n : split.seen) class_position(names, n);
  for (const auto& n : split.unseen) class_position(names, n);

  const fs::path test_dir = cfg.resolve(cfg.paths.test_dir);
  auto proposals = read_proposals(test_dir / "proposals.jsonl");
  std::vector<std::string> image_ids;
  std::map<std::string, std::size_t> image_pos;
  std::vector<std::vector<Proposal>> by_image;
  for (auto& p : proposals) {
    auto [it, inserted] = image_pos.emplace(p.image_id, image_ids.size());
    if (inserted) {
      image_ids.push_back(p.image_id);
      by_image.emplace_back();
    }
    by_image[it->second].push_back(std::move(p));
  }
  std::vector<fs::path> feature_paths;
  for (const auto& id : image_ids) feature_paths.push_back(test_dir / "features" / (id + ".zemb"));

  std::optional<ChannelAdapter> adapter;
  if (!cfg.paths.adapter.empty()) {
    auto partition = channel_partition_from_json(read_json_file(cfg.resolve(cfg.paths.partition)));
    adapter = ChannelAdapter::from_state(std::move(partition),
                                         read_embeddings(cfg.resolve(cfg.paths.adapter)));
  }
  return {std::move(classifier), std::move(bank),      std::move(image_ids), std::move(by_image),
          std::move(feature_paths), std::move(adapter), std::move(ensemble)};
}

std::vector<Detection> predict(const PredictInputs& in, double alpha, double temperature,
                               std::size_t workers) {
  const std::size_t n_images = in.image_ids.size();
  const std::size_t n_classes = in.classifier.num_classes();

  // Pass 1: per-proposal branch logits with alpha = 0.
  std::vector<std::vector<ProposalOutcome>> outcomes(n_images);
  parallel_for(n_images, workers, [&](std::size_t i) {
    auto fm = read_feature_map(in.feature_paths[i]);
    if (in.adapter) fm = apply_adapter(*in.adapter, fm);
    for (const auto& p : in.proposals_by_image[i]) {
      ProposalOutcome o;
      o.in_vocab_logits = classify(in.classifier, p.class_embedding);
      o.pooled = mask_pool(fm, p.mask);
      o.clip_logits = classify(in.classifier, o.pooled);
      outcomes[i].push_back(std::move(o));
    }
  });

  // The most confident alpha = 0 prediction of each unseen class becomes its
  // pseudo visual sample.
  const auto counts = in.seen_bank.rows_per_class();
  std::vector<UnseenPseudoSamples> pseudo;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (counts[c] == 0) pseudo.push_back({c, {}});
  }
  for (std::size_t i = 0; i < n_images; ++i) {
    for (const auto& o : outcomes[i]) {
      const auto probs =
          fused_probabilities(o.in_vocab_logits, o.clip_logits, in.ensemble, temperature);
      for (auto& u : pseudo) u.candidates.push_back({probs[u.class_index], o.pooled});
    }
  }
  const auto bank = augment_unseen(in.seen_bank, pseudo);

  // Pass 2: prior-injected prediction.
  std::vector<std::vector<Detection>> per_image(n_images);
  parallel_for(n_images, workers, [&](std::size_t i) {
    const auto& props = in.proposals_by_image[i];
    for (std::size_t j = 0; j < props.size(); ++j) {
      const auto& o = outcomes[i][j];
      const auto pip = prior_injected_logits(in.classifier, bank, o.pooled, alpha);
      const auto pred = final_prediction(o.in_vocab_logits, pip, in.ensemble, temperature);
      per_image[i].push_back(
          {props[j].image_id, pred.class_index, pred.probability * props[j].score, props[j].mask});
    }
  });

  std::vector<Detection> dets;
  for (auto& image_dets : per_image) {
    for (auto& d : image_dets) dets.push_back(std::move(d));
  }
  return dets;
}

fs::path run_predict(const RunConfig& cfg) {
  const auto inputs = load_predict_inputs(cfg);
  const auto dets = predict(inputs, cfg.alpha, cfg.temperature, cfg.workers);
  const auto out = cfg.resolve(cfg.paths.detections);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_detections(out, dets);
  write_config_snapshot(cfg, out, "predict");
  return out;
}

fs::path run_evaluate(const RunConfig& cfg) {
  const auto split = load_split(cfg);
  const auto gt = filter_test(read_annotation_set(cfg.resolve(cfg.paths.annotations)), split,
                              cfg.protocol);
  const auto dets = read_detections(cfg.resolve(cfg.paths.detections));
  const auto report = evaluate(dets, gt, split, cfg.protocol);
  const auto out = cfg.resolve(cfg.paths.report);
  write_json_file(out, to_json(report));
  auto table = out;
  table.replace_extension(".txt");
  std::ofstream t(table, std::ios::binary | std::ios::trunc);
  if (!t) throw Error(ErrorCode::kIoError, "cannot write " + table.string());
  t << format_report_table(report);
  write_config_snapshot(cfg, out, "evaluate");
  return out;
}

fs::path run_split_dataset(const RunConfig& cfg) {
  if (cfg.paths.split_input.empty()) config_error("paths.split_input", "must be set");
  const auto split = load_split(cfg);
  const auto set = read_annotation_set(cfg.resolve(cfg.paths.split_input));
  const auto dir = cfg.resolve(cfg.paths.split_out_dir);
  fs::create_directories(dir);
  write_annotation_set(dir / train_file_name(split), filter_train(set, split));
  write_annotation_set(dir / test_file_name(split, Protocol::kGZSRI),
                       filter_test(set, split, Protocol::kGZSRI));
  write_annotation_set(dir / test_file_name(split, Protocol::kZSRI),
                       filter_test(set, split, Protocol::kZSRI));
  write_config_snapshot(cfg, dir, "split-dataset");
  return dir;
}

}  // namespace zori
