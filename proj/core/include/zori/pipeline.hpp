#pragma once

// Run configuration and the pipeline stages behind each CLI subcommand.
// Every stage reads its inputs from, and writes its outputs to, paths
// resolved against `work_dir`, and leaves an effective-config snapshot next
// to its output.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "zori/cachebank.hpp"
#include "zori/dec.hpp"
#include "zori/ensemble.hpp"
#include "zori/instances.hpp"
#include "zori/kma.hpp"
#include "zori/synth.hpp"

namespace zori {

struct PathConfig {
  std::string work_dir = ".";
  std::string text_embeddings = "text_embeddings.zemb";
  std::string train_instances = "train_instances.zemb";
  std::string selection = "selection.json";
  std::string classifier = "classifier.zemb";
  std::string partition = "partition.json";
  std::string adapter;  // optional 2 x D adapter state; empty = none
  std::string bank_dir = "cache_bank";
  std::string test_dir = "test";
  std::string annotations = "test/annotations.json";
  std::string detections = "detections.jsonl";
  std::string report = "report.json";
  std::string split_input;  // split-dataset source annotations
  std::string split_out_dir = "splits";

  friend bool operator==(const PathConfig&, const PathConfig&) = default;
};

struct RunConfig {
  double lambda = kDefaultLambda;
  std::size_t k_channels = kDefaultTopK;
  bool use_dec = true;
  double alpha = kDefaultAlpha;
  std::size_t cache_K = kDefaultCacheSize;
  std::size_t n_trainable = kDefaultTrainableChannels;
  std::size_t T = kDefaultInstancesPerClass;
  double beta_seen = kDefaultBetaSeen;
  double beta_unseen = kDefaultBetaUnseen;
  double temperature = kDefaultTemperature;
  Protocol protocol = Protocol::kGZSRI;
  std::string split = "isaid";  // builtin name or split JSON path
  std::size_t workers = 1;
  PathConfig paths;
  SynthConfig synth;

  // Throws ConfigError carrying the dotted field path.
  void validate() const;
  std::filesystem::path resolve(const std::string& relative) const;
};

bool operator==(const RunConfig& a, const RunConfig& b);

nlohmann::json to_json(const RunConfig& cfg);
// Missing keys keep defaults; unknown keys and bad values raise ConfigError
// with the field path.
RunConfig run_config_from_json(const nlohmann::json& j);
// `key=value` with a dotted key; the value is parsed as JSON when it can
// be, otherwise taken as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides);

// Subcommands. Each returns the primary output path.
std::filesystem::path run_synth(const RunConfig& cfg);
std::filesystem::path run_select_channels(const RunConfig& cfg);
std::filesystem::path run_build_classifier(const RunConfig& cfg);
std::filesystem::path run_partition_channels(const RunConfig& cfg);
std::filesystem::path run_build_cache(const RunConfig& cfg);
std::filesystem::path run_predict(const RunConfig& cfg);
std::filesystem::path run_evaluate(const RunConfig& cfg);
std::filesystem::path run_split_dataset(const RunConfig& cfg);

struct ProposalOutcome {
  std::vector<double> in_vocab_logits;
  std::vector<double> clip_logits;  // classifier score of the pooled feature
  std::vector<double> pooled;       // mask-pooled backbone feature
};

// Everything `predict` needs, loaded once.
struct PredictInputs {
  Classifier classifier;
  CacheBank seen_bank;
  std::vector<std::string> image_ids;  // first-appearance order in proposals.jsonl
  std::vector<std::vector<Proposal>> proposals_by_image;
  std::vector<std::filesystem::path> feature_paths;
  std::optional<ChannelAdapter> adapter;
  EnsembleConfig ensemble;
};

PredictInputs load_predict_inputs(const RunConfig& cfg);
// Two passes: alpha = 0 predictions choose the unseen pseudo samples, then
// the augmented cache bank drives the final prediction. Output order is
// image order then proposal order regardless of `workers`.
std::vector<Detection> predict(const PredictInputs& inputs, double alpha, double temperature,
                               std::size_t workers);

}  // namespace zori
