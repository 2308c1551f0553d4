#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "codepoison/error.hpp"
#include "codepoison/pipeline.hpp"

using namespace codepoison;
using nlohmann::json;

namespace {

const std::vector<std::pair<std::string, std::string>> kCommands = {
    {"ingest", "split the corpus into clean train/dev/test"},
    {"train-crafting", "train the attacker's crafting model on clean data"},
    {"train-lm", "train the ONION language model"},
    {"poison", "poison the training set with one trigger kind"},
    {"train-victim", "train the victim on the released training set"},
    {"defend", "run spectral signature and activation clustering"},
    {"purify", "drop flagged examples and retrain"},
    {"eval", "compute every metric for one trigger kind"},
    {"report", "print the cross-trigger table"},
    {"all", "run every stage for each trigger kind"},
};

int fail(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << '\n';
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor poisoning and defense experiments for code models"};
  app.require_subcommand(1, 1);

  std::string run_name = "default";
  std::string run_dir;
  std::string config_file;
  std::string triggers = "adaptive,fixed,grammar";
  std::map<std::string, std::string> values;
  const json defaults = RunConfig().to_json();

  for (const auto& [name, description] : kCommands) {
    CLI::App* sub = app.add_subcommand(name, description);
    sub->add_option("--run", run_name, "run name under $CODEPOISON_RUN_ROOT (default ./runs)");
    sub->add_option("--run-dir", run_dir, "explicit run directory");
    sub->add_option("--config", config_file, "flat JSON config; flags override it");
    if (name == "all") sub->add_option("--triggers", triggers, "comma-separated trigger kinds");
    if (name == "report") continue;
    for (const auto& [key, value] : defaults.items()) {
      sub->add_option("--" + key, values[key], "config field (default " + value.dump() + ")");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  const RunLayout layout{run_dir.empty() ? run_root() / run_name : std::filesystem::path(run_dir)};
  try {
    if (command == "report") {
      std::cout << cmd_report(layout);
      return 0;
    }
    std::vector<std::pair<std::string, std::string>> overrides;
    CLI::App* sub = app.get_subcommands().front();
    for (const auto& [key, value] : defaults.items()) {
      if (sub->count("--" + key) > 0) overrides.emplace_back(key, values[key]);
    }
    std::optional<std::filesystem::path> file;
    if (!config_file.empty()) file = config_file;
    const RunConfig config = load_run_config(layout, file, overrides);

    json result;
    if (command == "ingest") {
      result = cmd_ingest(config, layout);
    } else if (command == "train-crafting") {
      result = cmd_train_crafting(config, layout);
    } else if (command == "train-lm") {
      result = cmd_train_lm(config, layout);
    } else if (command == "poison") {
      result = cmd_poison(config, layout);
    } else if (command == "train-victim") {
      result = cmd_train_victim(config, layout);
    } else if (command == "defend") {
      result = cmd_defend(config, layout);
    } else if (command == "purify") {
      result = cmd_purify(config, layout);
    } else if (command == "eval") {
      result = cmd_eval(config, layout);
    } else {
      std::vector<std::string> list;
      std::stringstream in(triggers);
      std::string item;
      while (std::getline(in, item, ',')) {
        if (!item.empty()) list.push_back(item);
      }
      std::cout << run_all(config, layout, list);
      return 0;
    }
    std::cout << json{{"status", "ok"}, {"command", command}, {"outputs", result.value("outputs", json::object())}}.dump()
              << '\n';
    return 0;
  } catch (const Error& e) {
    return fail(std::string(error_code_name(e.code())), e.what());
  } catch (const std::exception& e) {
    return fail("Internal", e.what());
  }
}
