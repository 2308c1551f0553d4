#include <cstdlib>
#include <fstream>
#include <sstream>

#include "../util/sha256.hpp"
#include "codepoison/error.hpp"
#include "codepoison/pipeline.hpp"

namespace codepoison {

using nlohmann::json;

std::string_view task_name(Task task) {
  return task == Task::kMethodName ? "method_name_prediction" : "code_summarization";
}

Task parse_task(std::string_view name) {
  if (name == "method_name_prediction") return Task::kMethodName;
  if (name == "code_summarization") return Task::kSummarization;
  throw Error(ErrorCode::kInvalidArgument, "unknown task: " + std::string(name));
}

json RunConfig::to_json() const {
  json j;
  j["task"] = task;
  j["trigger"] = trigger;
  j["alpha"] = alpha;
  j["alpha_hat"] = alpha_hat ? json(*alpha_hat) : json(nullptr);
  j["beta"] = beta;
  j["gamma"] = gamma;
  j["k"] = k;
  j["onion_k"] = onion_k;
  j["tau"] = tau;
  j["seed"] = seed;
  j["raw"] = raw;
  j["toy_count"] = toy_count;
  j["test_limit"] = test_limit;
  j["max_input_len"] = max_input_len;
  j["vocab_size"] = vocab_size;
  j["d_emb"] = d_emb;
  j["d_hidden"] = d_hidden;
  j["optimizer"] = optimizer;
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["max_epochs"] = max_epochs;
  j["patience"] = patience;
  j["clip_norm"] = clip_norm;
  j["lm_vocab_size"] = lm_vocab_size;
  j["lm_d_hidden"] = lm_d_hidden;
  j["lm_optimizer"] = lm_optimizer;
  j["lm_learning_rate"] = lm_learning_rate;
  j["lm_max_epochs"] = lm_max_epochs;
  j["adaptive_iterations"] = adaptive_iterations;
  j["insertion"] = insertion;
  j["representation"] = representation;
  j["spectral_batch"] = spectral_batch;
  j["onion_limit"] = onion_limit;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kFormatError, "config must be a JSON object");
  RunConfig c;
  const json defaults = c.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw Error(ErrorCode::kInvalidArgument, "unknown config key: " + key);
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("task", c.task);
    get("trigger", c.trigger);
    get("alpha", c.alpha);
    if (j.contains("alpha_hat") && !j.at("alpha_hat").is_null()) c.alpha_hat = j.at("alpha_hat").get<double>();
    get("beta", c.beta);
    get("gamma", c.gamma);
    get("k", c.k);
    get("onion_k", c.onion_k);
    get("tau", c.tau);
    get("seed", c.seed);
    get("raw", c.raw);
    get("toy_count", c.toy_count);
    get("test_limit", c.test_limit);
    get("max_input_len", c.max_input_len);
    get("vocab_size", c.vocab_size);
    get("d_emb", c.d_emb);
    get("d_hidden", c.d_hidden);
    get("optimizer", c.optimizer);
    get("learning_rate", c.learning_rate);
    get("batch_size", c.batch_size);
    get("max_epochs", c.max_epochs);
    get("patience", c.patience);
    get("clip_norm", c.clip_norm);
    get("lm_vocab_size", c.lm_vocab_size);
    get("lm_d_hidden", c.lm_d_hidden);
    get("lm_optimizer", c.lm_optimizer);
    get("lm_learning_rate", c.lm_learning_rate);
    get("lm_max_epochs", c.lm_max_epochs);
    get("adaptive_iterations", c.adaptive_iterations);
    get("insertion", c.insertion);
    get("representation", c.representation);
    get("spectral_batch", c.spectral_batch);
    get("onion_limit", c.onion_limit);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("config: ") + e.what());
  }
  return c;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  json j = to_json();
  const std::string name(key);
  if (!j.contains(name)) throw Error(ErrorCode::kInvalidArgument, "unknown config key: " + name);
  json& slot = j[name];
  const std::string text(value);
  try {
    if (slot.is_string()) {
      slot = text;
    } else if (name == "alpha_hat" && (text.empty() || text == "null")) {
      slot = nullptr;
    } else {
      const json parsed = json::parse(text);
      if (!parsed.is_number()) throw Error(ErrorCode::kInvalidArgument, name + " expects a number");
      if (slot.is_number_unsigned() && !parsed.is_number_unsigned()) {
        throw Error(ErrorCode::kInvalidArgument, name + " expects a non-negative integer");
      }
      slot = parsed;
    }
  } catch (const json::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "cannot parse " + name + "=" + text);
  }
  *this = from_json(j);
}

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  parse_task(task);
  parse_trigger_kind(trigger);
  if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0, 1)");
  if (alpha_hat && !(*alpha_hat > 0.0 && *alpha_hat < 1.0)) fail("alpha_hat must lie in (0, 1)");
  if (!(beta > 0.0)) fail("beta must be positive");
  if (!(gamma > 0.0)) fail("gamma must be positive");
  if (k < 1) fail("k must be at least 1");
  if (tau_words().empty()) fail("tau must not be empty");
  if (toy_count < 10 && raw.empty()) fail("toy_count must be at least 10");
  if (max_input_len < 2) fail("max_input_len must be at least 2");
  if (vocab_size <= Vocabulary::kReserved || lm_vocab_size <= Vocabulary::kReserved) fail("vocabularies too small");
  if (d_emb == 0 || d_hidden == 0 || lm_d_hidden == 0) fail("model sizes must be positive");
  if (optimizer != "sgd" && optimizer != "adam") fail("optimizer must be sgd or adam");
  if (lm_optimizer != "sgd" && lm_optimizer != "adam") fail("lm_optimizer must be sgd or adam");
  if (!(learning_rate > 0.0) || !(lm_learning_rate > 0.0)) fail("learning rates must be positive");
  if (batch_size == 0 || patience == 0 || max_epochs == 0 || lm_max_epochs == 0) fail("training sizes must be positive");
  if (adaptive_iterations == 0) fail("adaptive_iterations must be positive");
  if (insertion != "first_statement" && insertion != "random_statement") {
    fail("insertion must be first_statement or random_statement");
  }
  if (representation != "flattened" && representation != "final") fail("representation must be flattened or final");
  if (spectral_batch < 2) fail("spectral_batch must be at least 2");
}

std::vector<std::string> RunConfig::tau_words() const {
  std::vector<std::string> out;
  std::istringstream in(tau);
  std::string word;
  while (in >> word) {
    for (const std::string& w : split_label_words(word)) out.push_back(w);
  }
  return out;
}

TrainConfig RunConfig::train_config(std::string_view role) const {
  TrainConfig t;
  t.learning_rate = learning_rate;
  t.batch_size = batch_size;
  t.max_epochs = max_epochs;
  t.patience = patience;
  t.seed = derive_seed(seed, std::string("train:") + std::string(role));
  t.clip_norm = clip_norm;
  t.optimizer = optimizer == "adam" ? Optimizer::kAdam : Optimizer::kSgd;
  t.max_output_len = output_cap();
  return t;
}

TrainConfig RunConfig::lm_train_config() const {
  TrainConfig t = train_config("language_model");
  t.learning_rate = lm_learning_rate;
  t.max_epochs = lm_max_epochs;
  t.optimizer = lm_optimizer == "adam" ? Optimizer::kAdam : Optimizer::kSgd;
  return t;
}

std::size_t RunConfig::output_cap() const {
  return task_kind() == Task::kMethodName ? kMethodNameOutputCap : kSummaryOutputCap;
}

std::filesystem::path RunLayout::clean(std::string_view split) const {
  return root / "clean" / (std::string(split) + ".jsonl");
}

std::filesystem::path RunLayout::model(std::string_view name, std::string_view ext) const {
  return root / "models" / (std::string(name) + "." + std::string(ext));
}

std::filesystem::path run_root() {
  const char* env = std::getenv("CODEPOISON_RUN_ROOT");
  return env != nullptr && *env != '\0' ? std::filesystem::path(env) : std::filesystem::path("runs");
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "missing artifact: " + path.string());
  detail::Sha256 sha;
  std::string buffer(1 << 16, '\0');
  while (in) {
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    sha.update(std::string_view(buffer.data(), static_cast<std::size_t>(in.gcount())));
  }
  return sha.hex();
}

RunConfig load_run_config(const RunLayout& layout, const std::optional<std::filesystem::path>& config_file,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  auto read = [](const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kMissingArtifact, "cannot read config " + path.string());
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kFormatError, path.string() + ": " + e.what());
    }
  };
  RunConfig config;
  if (std::filesystem::exists(layout.config())) config = RunConfig::from_json(read(layout.config()));
  if (config_file) {
    json merged = config.to_json();
    const json overlay = read(*config_file);
    for (const auto& [key, value] : overlay.items()) merged[key] = value;
    config = RunConfig::from_json(merged);
  }
  for (const auto& [key, value] : overrides) config.set(key, value);
  config.validate();
  return config;
}

std::vector<std::int32_t> encode_input(const Vocabulary& vocab, std::span<const Token> tokens, std::size_t max_len) {
  return vocab.encode(tokens.subspan(0, std::min(tokens.size(), max_len)));
}

}  // namespace codepoison
