// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../support/oracles.hpp"
#include "zori/cachebank.hpp"
#include "zori/dec.hpp"
#include "zori/eval.hpp"
#include "zori/kma.hpp"
#include "zori/pipeline.hpp"
#include "zori/protocol.hpp"
#include "zori/synth.hpp"
#include "zori/zemb.hpp"

namespace fs = std::filesystem;
using namespace zori;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void run(const char* name, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const auto ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s %s: %s (%.1f ms)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), ms);
  std::fflush(stdout);
  if (!o.pass) ++g_failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path scratch(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("zori_acceptance_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------

Outcome harmonic_mean_table() {
  const double a = harmonic_mean(47.05, 9.30);
  const double b = harmonic_mean(80.57, 12.26);
  const bool ok = std::abs(a - 15.53) <= 0.01 && std::abs(b - 21.28) <= 0.01;
  return {ok, fmt("HM(47.05, 9.30) = %.4f, HM(80.57, 12.26) = %.4f", a, b)};
}

Outcome dec_closed_forms() {
  const auto close = [](double x, double y) { return std::abs(x - y) <= 1e-12; };
  bool ok = true;
  const auto same = score_channels(EmbeddingMatrix::from_rows({{1, 0}, {1, 0}}), 0.7);
  ok = ok && close(same.similarity[0], 1) && close(same.similarity[1], 0);
  ok = ok && close(same.variance[0], 0) && close(same.variance[1], 0);
  ok = ok && close(same.objective[0], -0.7) && close(same.objective[1], 0);
  ok = ok && select_top_k(same, 1).indices == std::vector<std::size_t>{1};
  const auto orth = score_channels(EmbeddingMatrix::from_rows({{1, 0}, {0, 1}}), 0.7);
  for (std::size_t d = 0; d < 2; ++d) {
    ok = ok && close(orth.similarity[d], 0) && close(orth.variance[d], 0.25) &&
         close(orth.objective[d], 0.075);
  }
  if (!ok) return {false, "closed-form scores differ"};

  std::size_t cases = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    CounterRng rng(seed, 500);
    const std::size_t n = 2 + rng.below(6);
    const std::size_t d = 2 + rng.below(30);
    oracle::Matrix rows(n, std::vector<double>(d));
    for (auto& r : rows) {
      for (auto& v : r) v = rng.normal();
    }
    // Duplicated columns give exact ties, broken by index.
    for (std::size_t k = 0; k < d / 4; ++k) {
      const std::size_t from = rng.below(d);
      const std::size_t to = rng.below(d);
      for (auto& r : rows) r[to] = r[from];
    }
    const auto x = EmbeddingMatrix::from_rows(rows);
    const auto unit = oracle::unit_rows(rows);
    const auto var_order = oracle::sorted_indices(oracle::population_variance(unit), true);
    const auto sim_order = oracle::sorted_indices(oracle::pairwise_similarity(unit), false);
    if (select_top_k(score_channels(x, 0.0), d).indices != var_order) {
      return {false, fmt("lambda=0 order differs from variance sort (seed %llu)",
                         static_cast<unsigned long long>(seed))};
    }
    if (select_top_k(score_channels(x, 1.0), d).indices != sim_order) {
      return {false, fmt("lambda=1 order differs from similarity sort (seed %llu)",
                         static_cast<unsigned long long>(seed))};
    }
    ++cases;
  }
  return {true, fmt("closed forms exact to 1e-12; lambda endpoints match %zu sorted cases", cases)};
}

Outcome planted_recovery() {
  std::size_t worst = 8;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.text_dim = 128;
    cfg.backbone_dim = 128;
    cfg.n_discriminative_channels = 8;
    cfg.n_seen = 6;
    cfg.n_unseen = 2;
    cfg.noise_sigma = 0.05;
    const auto emb = generate_class_embeddings(cfg);
    const auto sel = select_top_k(score_channels(emb.embeddings), 8);
    const std::set<std::size_t> planted(emb.planted.begin(), emb.planted.end());
    std::size_t hit = 0;
    for (const auto c : sel.indices) hit += planted.count(c);
    worst = std::min(worst, hit);
  }
  return {worst >= 7, fmt("worst recovery over 20 seeds: %zu of 8 planted channels", worst)};
}

struct Toy {
  Classifier classifier;
  std::vector<LabeledFeature> batch;
  ChannelPartition partition;
};

Toy seeded_toy(std::uint64_t seed, std::size_t d, std::size_t classes, std::size_t n_trainable) {
  CounterRng rng(seed, 600);
  std::vector<std::vector<double>> protos(classes, std::vector<double>(d));
  for (auto& r : protos) {
    for (auto& v : r) v = rng.normal();
  }
  std::vector<std::string> names;
  for (std::size_t c = 0; c < classes; ++c) names.push_back("c" + std::to_string(c));
  Toy toy{build_naive_classifier(EmbeddingMatrix::from_rows(protos), names), {}, {}};
  std::vector<std::vector<std::vector<double>>> per_class(classes);
  for (std::size_t i = 0; i < 4 * classes; ++i) {
    const std::size_t label = i % classes;
    auto f = protos[label];
    for (auto& v : f) v = 0.5 * v + 0.8 * rng.normal();
    per_class[label].push_back(f);
    toy.batch.push_back({std::move(f), label});
  }
  toy.partition = partition_channels(class_feature_means(per_class, 1), 0.7, n_trainable);
  return toy;
}

double max_fd_error(const Toy& toy, const ChannelAdapter& adapter, double logit_scale) {
  const auto g = adapter_gradient(adapter, toy.batch, toy.classifier, logit_scale);
  const double eps = 1e-5;
  double worst = 0.0;
  for (const auto c : toy.partition.trainable) {
    for (const bool scale : {true, false}) {
      std::vector<double> s(adapter.scale().begin(), adapter.scale().end());
      std::vector<double> b(adapter.bias().begin(), adapter.bias().end());
      auto& p = scale ? s : b;
      const double orig = p[c];
      p[c] = orig + eps;
      const double up = adapter_loss(ChannelAdapter::with_params(toy.partition, s, b), toy.batch,
                                     toy.classifier, logit_scale);
      p[c] = orig - eps;
      const double down = adapter_loss(ChannelAdapter::with_params(toy.partition, s, b), toy.batch,
                                       toy.classifier, logit_scale);
      const double fd = (up - down) / (2 * eps);
      const double an = scale ? g.grad_scale[c] : g.grad_bias[c];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
  }
  return worst;
}

Outcome kma_invariance() {
  double worst_fd = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto toy = seeded_toy(seed, 24, 5, 8);
    ChannelAdapter adapter(toy.partition);
    worst_fd = std::max(worst_fd, max_fd_error(toy, adapter, 10.0));
    for (int step = 0; step < 100; ++step) {
      adapter_step(adapter, toy.batch, toy.classifier, 0.1, 10.0);
    }
    for (const auto c : toy.partition.frozen) {
      if (std::bit_cast<std::uint64_t>(adapter.scale()[c]) != std::bit_cast<std::uint64_t>(1.0) ||
          std::bit_cast<std::uint64_t>(adapter.bias()[c]) != std::bit_cast<std::uint64_t>(0.0)) {
        return {false, fmt("frozen channel %zu moved (seed %llu)", c,
                           static_cast<unsigned long long>(seed))};
      }
    }
    worst_fd = std::max(worst_fd, max_fd_error(toy, adapter, 10.0));
  }
  return {worst_fd < 1e-4,
          fmt("frozen entries bitwise (1, 0) after 100 steps; max relative FD error %.2e",
              worst_fd)};
}

double unseen_accuracy(const PredictInputs& in, double alpha, double temperature,
                       std::size_t n_seen) {
  const auto dets = predict(in, alpha, temperature, 1);
  std::size_t total = 0;
  std::size_t right = 0;
  std::size_t k = 0;
  for (const auto& props : in.proposals_by_image) {
    for (const auto& p : props) {
      if (p.class_id >= n_seen) {
        ++total;
        right += dets[k].class_id == p.class_id ? 1 : 0;
      }
      ++k;
    }
  }
  return static_cast<double>(right) / static_cast<double>(total);
}

Outcome cache_fusion() {
  const auto dir = scratch("fusion");
  double sum0 = 0.0;
  double sum5 = 0.0;
  std::string losses;
  double worst_affine = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RunConfig cfg;
    cfg.paths.work_dir = (dir / std::to_string(seed)).string();
    cfg.split = "split.json";
    cfg.k_channels = 32;
    cfg.synth.seed = seed;
    run_synth(cfg);
    run_select_channels(cfg);
    run_build_classifier(cfg);
    run_build_cache(cfg);
    const auto in = load_predict_inputs(cfg);
    const double a0 = unseen_accuracy(in, 0.0, cfg.temperature, cfg.synth.n_seen);
    const double a5 = unseen_accuracy(in, 0.5, cfg.temperature, cfg.synth.n_seen);
    sum0 += a0;
    sum5 += a5;
    if (a5 < a0) losses += fmt(" seed %llu %.3f<%.3f;", static_cast<unsigned long long>(seed), a5, a0);

    // logits_pip is affine in alpha.
    const auto& bank = in.seen_bank;
    CounterRng rng(seed, 800);
    std::vector<double> q(bank.dim());
    for (auto& v : q) v = rng.normal();
    const auto base = classify(in.classifier, q);
    const auto cache = cache_logits(bank, q);
    for (const double alpha : {0.0, 0.25, 0.5, 1.0, 3.7}) {
      const auto pip = prior_injected_logits(in.classifier, bank, q, alpha);
      for (std::size_t c = 0; c < pip.size(); ++c) {
        worst_affine = std::max(worst_affine, std::abs(pip[c] - (base[c] + alpha * cache[c])));
      }
    }
  }
  fs::remove_all(dir);
  const bool ok = losses.empty() && sum5 >= sum0 && worst_affine <= 1e-9;
  return {ok, fmt("mean unseen top-1 accuracy alpha=0.5 %.4f vs alpha=0 %.4f; affine error %.1e",
                  sum5 / 20, sum0 / 20, worst_affine) +
                  (losses.empty() ? std::string() : "; lower at" + losses)};
}

Outcome metric_oracle() {
  std::size_t compared = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto mc = oracle::random_micro_case(seed);
    for (const auto protocol : {Protocol::kGZSRI, Protocol::kZSRI}) {
      const auto gt = filter_test(mc.gt, mc.split, protocol);
      const auto rep = evaluate(mc.dets, gt, mc.split, protocol);
      const auto ref = oracle::reference_evaluate(mc.dets, gt, mc.split, protocol);
      const auto bad = [&](const char* what) {
        return Outcome{false, fmt("%s differs on case %llu", what,
                                  static_cast<unsigned long long>(seed))};
      };
      if (rep.per_class_ap() != ref.ap) return bad("per-class AP");
      if (rep.per_class_recall() != ref.recall) return bad("per-class recall");
      if (rep.map.seen != ref.map_seen || rep.map.unseen != ref.map_unseen ||
          rep.map.hm != ref.hm_map) {
        return bad("mAP summary");
      }
      for (const auto t : kRecallIouThresholds) {
        const auto& r = rep.recall.at(t);
        if (r.seen != ref.rec_seen.at(t) || r.unseen != ref.rec_unseen.at(t) ||
            r.hm != ref.hm_rec.at(t)) {
          return bad("recall summary");
        }
      }
      ++compared;
    }
  }
  const auto m = [](std::int64_t y, std::int64_t x) { return BinaryMask::rectangle(10, 10, y, x, 2, 2); };
  const auto ap = average_precision({{"a", 0, 0.9, m(0, 0)}, {"a", 0, 0.8, m(6, 6)}, {"a", 0, 0.7, m(3, 3)}},
                                    {{"a", 0, m(0, 0)}, {"a", 0, m(3, 3)}});
  const bool ap_ok = ap && std::abs(*ap - 0.8333) <= 1e-4;
  return {ap_ok, fmt("%zu evaluations identical to the reference; 3-detection AP = %.6f", compared,
                     ap ? *ap : -1.0)};
}

Outcome protocol_filtering() {
  const auto split = builtin_split("isaid");
  std::vector<std::string> names = split.seen;
  names.insert(names.end(), split.unseen.begin(), split.unseen.end());
  std::size_t images = 0;
  std::size_t dropped = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    CounterRng rng(seed, 700);
    AnnotationSet set;
    set.categories = names;
    // Categories in a seeded order so class ids do not follow the split.
    for (std::size_t i = 0; i + 1 < set.categories.size(); ++i) {
      std::swap(set.categories[i], set.categories[i + rng.below(set.categories.size() - i)]);
    }
    const std::size_t n_images = 1 + rng.below(12);
    for (std::size_t i = 0; i < n_images; ++i) {
      set.images.push_back({"img" + std::to_string(i), 8, 8});
      const std::size_t n_ann = rng.below(5);
      for (std::size_t a = 0; a < n_ann; ++a) {
        set.annotations.push_back({set.images.back().id, rng.below(names.size()),
                                   BinaryMask::rectangle(8, 8, 0, 0, 1 + rng.below(8), 2)});
      }
    }
    std::set<std::string> tainted;
    for (const auto& a : set.annotations) {
      if (split.is_unseen(set.categories[a.class_id])) tainted.insert(a.image_id);
    }
    const auto out = filter_train(set, split);
    for (const auto& a : out.annotations) {
      if (!split.is_seen(out.categories[a.class_id])) {
        return {false, fmt("unseen annotation kept (seed %llu)", static_cast<unsigned long long>(seed))};
      }
    }
    std::set<std::string> kept;
    for (const auto& img : out.images) kept.insert(img.id);
    for (const auto& img : set.images) {
      if (kept.count(img.id) == tainted.count(img.id)) {
        return {false, fmt("image %s handled wrongly (seed %llu)", img.id.c_str(),
                           static_cast<unsigned long long>(seed))};
      }
    }
    std::size_t expected = 0;
    for (const auto& a : set.annotations) expected += tainted.count(a.image_id) ? 0 : 1;
    if (out.annotations.size() != expected) {
      return {false, fmt("seen annotations lost (seed %llu)", static_cast<unsigned long long>(seed))};
    }
    images += set.images.size();
    dropped += tainted.size();
  }
  return {true, fmt("200 random sets, %zu images, exactly the %zu with unseen objects dropped",
                    images, dropped)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool run_cli(const fs::path& config, const std::string& stage, std::size_t workers) {
  const std::string cmd = std::string("\"") + ZORI_CLI_PATH + "\" " + stage + " -c \"" +
                          config.string() + "\" -s workers=" + std::to_string(workers) + " > /dev/null";
  return std::system(cmd.c_str()) == 0;
}

Outcome determinism() {
  const auto root = scratch("determinism");
  const char* stages[] = {"synth", "select-channels", "build-classifier", "build-cache", "predict",
                          "evaluate"};
  std::vector<std::pair<std::string, std::string>> outputs;
  for (const std::size_t workers : {1u, 1u, 4u}) {
    const auto dir = root / std::to_string(outputs.size());
    fs::create_directories(dir);
    std::ofstream(dir / "run.json")
        << R"({"split": "split.json", "k_channels": 48, "synth": {"seed": 11, "n_images": 4, "proposal_jitter": 2}})";
    for (const auto* stage : stages) {
      if (!run_cli(dir / "run.json", stage, workers)) {
        return {false, std::string("cli stage failed: ") + stage};
      }
    }
    outputs.emplace_back(slurp(dir / "detections.jsonl"), slurp(dir / "report.json"));
  }
  fs::remove_all(root);
  const bool ok = !outputs[0].first.empty() && !outputs[0].second.empty() &&
                  outputs[0] == outputs[1] && outputs[0] == outputs[2];
  return {ok, fmt("detections (%zu bytes) and report (%zu bytes) %s across runs with 1, 1 and 4 workers",
                  outputs[0].first.size(), outputs[0].second.size(),
                  ok ? "byte-identical" : "differ")};
}

}  // namespace

int main() {
  run("harmonic-mean-table", harmonic_mean_table);
  run("dec-closed-forms", dec_closed_forms);
  run("planted-channel-recovery", planted_recovery);
  run("kma-frozen-invariance", kma_invariance);
  run("cache-fusion", cache_fusion);
  run("metric-oracle-equivalence", metric_oracle);
  run("protocol-filtering", protocol_filtering);
  run("determinism", determinism);
  std::printf("%d criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
