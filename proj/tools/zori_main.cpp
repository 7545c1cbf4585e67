// zori: command-line front end for the zero-shot instance segmentation head.
//
//   zori <subcommand> [--config run.json] [--set key=value ...]
//
// Failures print one JSON object on stderr and exit nonzero:
//   {"error": "<ErrorCode>", "message": "...", "field"|"offset"|"index": ...}

#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "zori/error.hpp"
#include "zori/pipeline.hpp"

namespace {

struct Stage {
  const char* name;
  const char* help;
  std::function<std::filesystem::path(const zori::RunConfig&)> run;
};

int report_failure(const std::string& code, const std::string& message,
                   const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json j = extra;
  j["error"] = code;
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
  return code == "ConfigError" || code == "UsageError" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Stage> stages = {
      {"synth", "write a seeded synthetic work directory", zori::run_synth},
      {"select-channels", "score text channels and keep the top k", zori::run_select_channels},
      {"build-classifier", "build the (refined) text classifier", zori::run_build_classifier},
      {"partition-channels", "split backbone channels into frozen/trainable",
       zori::run_partition_channels},
      {"build-cache", "build the seen-class cache bank", zori::run_build_cache},
      {"predict", "classify proposals and write detections", zori::run_predict},
      {"evaluate", "score detections under ZSRI or GZSRI", zori::run_evaluate},
      {"split-dataset", "write zero-shot train/test annotation files", zori::run_split_dataset},
  };

  CLI::App app{"zori: zero-shot remote sensing instance segmentation head"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  const Stage* chosen = nullptr;
  for (const auto& stage : stages) {
    auto* sub = app.add_subcommand(stage.name, stage.help);
    sub->add_option("-c,--config", config_path, "run-config JSON file");
    sub->add_option("-s,--set", overrides, "override a config value, e.g. alpha=0.3")
        ->take_all();
    sub->callback([&chosen, &stage] { chosen = &stage; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report_failure("UsageError", e.what());
  }

  try {
    const auto cfg = zori::load_run_config(config_path, overrides);
    const auto out = chosen->run(cfg);
    std::cout << out.string() << std::endl;
    return 0;
  } catch (const zori::Error& e) {
    nlohmann::json extra = nlohmann::json::object();
    if (e.field()) extra["field"] = *e.field();
    if (e.offset()) extra["offset"] = *e.offset();
    if (e.index()) extra["index"] = *e.index();
    return report_failure(std::string(zori::error_code_name(e.code())), e.what(), extra);
  } catch (const std::exception& e) {
    return report_failure("InternalError", e.what());
  }
}
