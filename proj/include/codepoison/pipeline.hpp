#pragma once

// Experiment stages over a run directory: ingest, model training, poisoning,
// detection, purification, evaluation and the cross-trigger report.

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "codepoison/corpus.hpp"
#include "codepoison/model.hpp"
#include "codepoison/triggers.hpp"

namespace codepoison {

enum class Task { kMethodName, kSummarization };

std::string_view task_name(Task task);
Task parse_task(std::string_view name);

// One flat record; every field has a default and every artifact echoes the
// effective values.
struct RunConfig {
  std::string task = "method_name_prediction";
  std::string trigger = "fixed";
  double alpha = 0.05;
  std::optional<double> alpha_hat;  // defender's assumed rate; alpha when unset
  double beta = 1.5;
  double gamma = 1.0;
  std::size_t k = 1;                // singular vector used for purification
  std::size_t onion_k = 5;          // defense success reported for 0..onion_k
  std::string tau = "load data";
  std::uint64_t seed = 1;

  std::string raw;                  // JSON lines of {id, source}; toy corpus when empty
  std::size_t toy_count = 2500;
  std::size_t test_limit = 200;     // 0 keeps the whole test split
  std::size_t max_input_len = 256;

  std::size_t vocab_size = 5000;
  std::size_t d_emb = 128;
  std::size_t d_hidden = 128;
  std::string optimizer = "sgd";
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 15;
  std::size_t patience = 3;
  double clip_norm = 5.0;

  std::size_t lm_vocab_size = 2000;
  std::size_t lm_d_hidden = 64;
  std::string lm_optimizer = "sgd";
  double lm_learning_rate = 0.05;
  std::size_t lm_max_epochs = 15;

  std::size_t adaptive_iterations = 1;
  std::string insertion = "first_statement";
  std::string representation = "flattened";  // or "final"
  std::size_t spectral_batch = 1000;
  std::size_t onion_limit = 0;      // triggered test inputs examined by ONION; 0 means all

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  // `key` is a field name; the value is parsed to the field's type.
  void set(std::string_view key, std::string_view value);
  void validate() const;

  Task task_kind() const { return parse_task(task); }
  TriggerKind trigger_kind() const { return parse_trigger_kind(trigger); }
  double effective_alpha_hat() const { return alpha_hat.value_or(alpha); }
  std::vector<std::string> tau_words() const;
  ModelDims dims(std::size_t vocab) const { return {vocab, d_emb, d_hidden}; }
  TrainConfig train_config(std::string_view role) const;
  TrainConfig lm_train_config() const;
  std::size_t output_cap() const;
};

// Fixed layout under the run directory. Attacker-only material lives under
// attacker/; the defender's stages read released/ and never attacker/.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path clean(std::string_view split) const;
  std::filesystem::path ingest_meta() const { return root / "clean" / "ingest.json"; }
  std::filesystem::path model(std::string_view name, std::string_view ext) const;
  std::filesystem::path attacker(std::string_view trigger) const { return root / "attacker" / trigger; }
  std::filesystem::path released(std::string_view trigger) const { return root / "released" / trigger; }
  std::filesystem::path defense(std::string_view trigger) const { return root / "defense" / trigger; }
  std::filesystem::path report(std::string_view trigger) const { return root / "reports" / trigger / "eval.json"; }
  std::filesystem::path table() const { return root / "reports" / "table.txt"; }
};

// Root directory for runs: $CODEPOISON_RUN_ROOT, else ./runs.
std::filesystem::path run_root();

// SHA-256 of a file's bytes; MissingArtifact when absent.
std::string file_digest(const std::filesystem::path& path);

// Loads the run's stored config (defaults when none), then applies the
// overrides in order.
RunConfig load_run_config(const RunLayout& layout, const std::optional<std::filesystem::path>& config_file,
                          const std::vector<std::pair<std::string, std::string>>& overrides);

// Model inputs are truncated to the configured maximum length.
std::vector<std::int32_t> encode_input(const Vocabulary& vocab, std::span<const Token> tokens, std::size_t max_len);

// Stage entry points. Each writes its artifacts plus a JSON metadata file
// carrying the config and the digests of everything it read and wrote, and
// returns that metadata.
nlohmann::json cmd_ingest(const RunConfig& config, const RunLayout& layout);
nlohmann::json cmd_train_crafting(const RunConfig& config, const RunLayout& layout);
nlohmann::json cmd_train_lm(const RunConfig& config, const RunLayout& layout);
nlohmann::json cmd_poison(const RunConfig& config, const RunLayout& layout);
nlohmann::json cmd_train_victim(const RunConfig& config, const RunLayout& layout);
nlohmann::json cmd_defend(const RunConfig& config, const RunLayout& layout);
nlohmann::json cmd_purify(const RunConfig& config, const RunLayout& layout);
nlohmann::json cmd_eval(const RunConfig& config, const RunLayout& layout);
// Plain-text table with one row per (trigger, metric) over the evaluated triggers.
std::string cmd_report(const RunLayout& layout);

// Every stage in order for each trigger kind, then the report.
std::string run_all(const RunConfig& config, const RunLayout& layout, const std::vector<std::string>& triggers);

// Names of the metrics each eval report carries, in order.
std::vector<std::string> eval_metric_names(const RunConfig& config);

}  // namespace codepoison
