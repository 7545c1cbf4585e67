#pragma once

// Seeded synthetic fixtures with planted structure.
//
// Randomness comes from CounterRng, a counter-based generator defined here
// so that fixtures are identical on every platform:
//
//   mix(x)        = SplitMix64 finalizer of x + 0x9E3779B97F4A7C15
//   key           = mix(seed ^ mix(stream))
//   draw(counter) = mix(key + counter * 0x9E3779B97F4A7C15)
//
// A uniform double is (draw >> 11) * 2^-53. A normal deviate uses one
// Box-Muller transform on two consecutive uniforms (the sine half is
// dropped). Integers in [0, n) take the high 64 bits of draw * n.
// Each logical purpose (class embeddings, scene i, ...) has its own stream
// so adding draws to one never shifts another.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "zori/instances.hpp"
#include "zori/protocol.hpp"
#include "zori/tensor.hpp"

namespace zori {

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  double normal();                         // N(0, 1)
  std::uint64_t below(std::uint64_t n);    // [0, n)
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t n_seen = 6;
  std::size_t n_unseen = 2;
  std::size_t text_dim = 64;
  std::size_t backbone_dim = 64;
  std::size_t n_discriminative_channels = 8;
  double noise_sigma = 0.05;
  std::size_t instances_per_class = 2;  // per scene
  std::size_t image_height = 48;
  std::size_t image_width = 48;
  std::size_t n_images = 3;             // test scenes
  std::size_t n_train_images = 2;       // seen-only scenes feeding the cache
  std::int64_t proposal_jitter = 0;     // max pixel shift of proposal masks
  double domain_gap = 0.6;              // visual prototype offset from text
  double in_vocab_confusion = 0.5;      // unseen in-vocab pull toward a seen class

  void validate() const;
  std::size_t num_classes() const noexcept { return n_seen + n_unseen; }
};

nlohmann::json to_json(const SynthConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
SynthConfig synth_config_from_json(const nlohmann::json& j, const SynthConfig& base = {});

std::vector<std::string> synth_class_names(const SynthConfig& cfg);
SeenUnseenSplit synth_split(const SynthConfig& cfg);

struct ClassEmbeddings {
  EmbeddingMatrix embeddings;            // N x text_dim, unit rows
  std::vector<std::size_t> planted;      // ascending
  std::vector<std::vector<double>> raw;  // pre-normalization text signal
};

ClassEmbeddings generate_class_embeddings(const SynthConfig& cfg);

// Un-normalized visual prototype of every class (backbone_dim).
std::vector<std::vector<double>> generate_visual_prototypes(const SynthConfig& cfg,
                                                            const ClassEmbeddings& text);

struct Proposal {
  std::string image_id;
  std::size_t class_id = 0;  // source instance class; not used by prediction
  double score = 0.0;
  BinaryMask mask;
  std::vector<double> class_embedding;  // in-vocabulary embedding, text_dim
};

nlohmann::json to_json(const Proposal& p);
Proposal proposal_from_json(const nlohmann::json& j);
std::vector<Proposal> read_proposals(const std::filesystem::path& path);
void write_proposals(const std::filesystem::path& path, const std::vector<Proposal>& proposals);

struct Scene {
  ImageInfo image;
  FeatureMap features;
  std::vector<InstanceAnnotation> annotations;
  std::vector<Proposal> proposals;
};

enum class SceneKind { kTest, kTrain };

// Non-overlapping rectangular instances on a grid; the feature map holds
// each instance's embedding (prototype + noise) inside its mask, plus
// per-pixel noise. Train scenes contain seen classes only.
Scene generate_scene(const SynthConfig& cfg, std::size_t index, SceneKind kind = SceneKind::kTest);

// Writes a complete work directory (see README for the layout).
void write_synth_fixture(const SynthConfig& cfg, const std::filesystem::path& dir);

}  // namespace zori
