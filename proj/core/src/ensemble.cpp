#include "zori/ensemble.hpp"

#include <algorithm>
#include <cmath>

#include "zori/error.hpp"
#include "zori/tensor.hpp"

namespace zori {

namespace {

constexpr double kProbabilityFloor = 1e-12;
constexpr double kSumTolerance = 1e-6;

void require_probability_vector(std::span<const double> p, const char* which) {
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0) || !std::isfinite(p[i])) {
      throw Error(ErrorCode::kNotAProbabilityVector, std::string(which) + " has a negative entry")
          .with_index(static_cast<std::int64_t>(i));
    }
    sum += p[i];
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw Error(ErrorCode::kNotAProbabilityVector,
                std::string(which) + " sums to " + std::to_string(sum));
  }
}

void check_beta(double beta, const char* name) {
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, std::string(name) + " must be in [0, 1]");
  }
}

}  // namespace

std::vector<double> fuse(std::span<const double> p_in, std::span<const double> p_out,
                         const EnsembleConfig& cfg) {
  if (p_in.size() != p_out.size() || cfg.seen_mask.size() != p_in.size()) {
    throw Error(ErrorCode::kLengthMismatch, "ensemble inputs differ in length");
  }
  require_probability_vector(p_in, "in-vocabulary probabilities");
  require_probability_vector(p_out, "out-of-vocabulary probabilities");
  check_beta(cfg.beta_seen, "beta_seen");
  check_beta(cfg.beta_unseen, "beta_unseen");

  // Work in log space and subtract the max before exponentiating.
  std::vector<double> log_fused(p_in.size());
  for (std::size_t c = 0; c < p_in.size(); ++c) {
    const double beta = cfg.seen_mask[c] ? cfg.beta_seen : cfg.beta_unseen;
    log_fused[c] = (1.0 - beta) * std::log(std::max(p_in[c], kProbabilityFloor)) +
                   beta * std::log(std::max(p_out[c], kProbabilityFloor));
  }
  return softmax(log_fused);
}

std::vector<double> fused_probabilities(std::span<const double> in_vocab_logits,
                                        std::span<const double> pip_logits,
                                        const EnsembleConfig& cfg, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::kInvalidArgument, "temperature must be > 0");
  if (in_vocab_logits.size() != pip_logits.size()) {
    throw Error(ErrorCode::kLengthMismatch, "branch logits differ in length");
  }
  std::vector<double> a(in_vocab_logits.begin(), in_vocab_logits.end());
  std::vector<double> b(pip_logits.begin(), pip_logits.end());
  for (auto& v : a) v /= temperature;
  for (auto& v : b) v /= temperature;
  return fuse(softmax(a), softmax(b), cfg);
}

Prediction final_prediction(std::span<const double> in_vocab_logits,
                            std::span<const double> pip_logits, const EnsembleConfig& cfg,
                            double temperature) {
  const auto fused = fused_probabilities(in_vocab_logits, pip_logits, cfg, temperature);
  const auto best = std::max_element(fused.begin(), fused.end());
  return {static_cast<std::size_t>(best - fused.begin()), *best};
}

}  // namespace zori
