#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace zori {

inline constexpr double kDefaultBetaSeen = 0.4;
inline constexpr double kDefaultBetaUnseen = 0.8;
inline constexpr double kDefaultTemperature = 0.01;

struct EnsembleConfig {
  double beta_seen = kDefaultBetaSeen;
  double beta_unseen = kDefaultBetaUnseen;
  std::vector<bool> seen_mask;  // one entry per class
};

// Geometric ensemble of an in-vocabulary and an out-of-vocabulary
// probability vector:
//   fused_c ∝ p_in[c]^(1 - beta_c) * p_out[c]^beta_c
// with beta_c chosen by whether class c is seen. Inputs are clamped to
// 1e-12 before exponentiation.
std::vector<double> fuse(std::span<const double> p_in, std::span<const double> p_out,
                         const EnsembleConfig& cfg);

struct Prediction {
  std::size_t class_index = 0;
  double probability = 0.0;
};

// Softmax of logits/temperature on both branches, fuse, argmax (lowest
// index on ties).
Prediction final_prediction(std::span<const double> in_vocab_logits,
                            std::span<const double> pip_logits, const EnsembleConfig& cfg,
                            double temperature = kDefaultTemperature);

std::vector<double> fused_probabilities(std::span<const double> in_vocab_logits,
                                        std::span<const double> pip_logits,
                                        const EnsembleConfig& cfg,
                                        double temperature = kDefaultTemperature);

}  // namespace zori
