#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "codepoison/defenses.hpp"
#include "codepoison/error.hpp"
#include "codepoison/metrics.hpp"
#include "codepoison/pipeline.hpp"
#include "codepoison/poisoner.hpp"

namespace codepoison {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kReportedVectors = 3;

void log(std::string_view stage, const std::string& message) {
  std::clog << "[" << stage << "] " << message << std::endl;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "missing artifact: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, path.string() + ": " + e.what());
  }
}

std::string relative(const RunLayout& layout, const fs::path& path) {
  return path.lexically_relative(layout.root).generic_string();
}

json artifact(const RunLayout& layout, const fs::path& path) {
  return {{"path", relative(layout, path)}, {"sha256", file_digest(path)}};
}

// Reads a stage's metadata and checks that each recorded output still has
// its recorded digest.
json verified(const RunLayout& layout, const fs::path& meta_path) {
  json meta = read_json(meta_path);
  if (!meta.contains("outputs")) throw Error(ErrorCode::kFormatError, meta_path.string() + " has no outputs");
  for (const auto& [name, entry] : meta.at("outputs").items()) {
    const fs::path path = layout.root / entry.at("path").get<std::string>();
    if (file_digest(path) != entry.at("sha256").get<std::string>()) {
      throw Error(ErrorCode::kDigestMismatch, "digest mismatch for " + path.string());
    }
  }
  return meta;
}

json stage_meta(std::string_view stage, const RunConfig& config) {
  return {{"stage", std::string(stage)}, {"config", config.to_json()}, {"inputs", json::object()},
          {"outputs", json::object()}};
}

json train_summary(const TrainReport& report) {
  json epochs = json::array();
  for (const EpochStats& e : report.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_loss", e.dev_loss},
                      {"dev_bleu", e.dev_bleu}});
  }
  return {{"epochs", epochs}, {"best_epoch", report.best_epoch}};
}

EpochCallback progress(std::string_view stage) {
  return [stage = std::string(stage)](const EpochStats& s, const Seq2SeqParams&) {
    char line[160];
    std::snprintf(line, sizeof line, "epoch %zu train_loss %.4f dev_loss %.4f dev_bleu %.2f", s.epoch, s.train_loss,
                  s.dev_loss, s.dev_bleu);
    log(stage, line);
  };
}

Corpus head(const Corpus& corpus, std::size_t limit) {
  if (limit == 0 || limit >= corpus.size()) return corpus;
  return Corpus(corpus.begin(), corpus.begin() + static_cast<std::ptrdiff_t>(limit));
}

std::vector<SeqPair> seq_pairs(const Corpus& corpus, const Vocabulary& vocab, const RunConfig& config) {
  std::vector<SeqPair> out;
  out.reserve(corpus.size());
  for (const CodeExample& ex : corpus) {
    std::vector<std::int32_t> target = vocab.encode_words(ex.label);
    if (target.size() > config.output_cap()) target.resize(config.output_cap());
    out.push_back({encode_input(vocab, ex.tokens, config.max_input_len), std::move(target)});
  }
  return out;
}

std::vector<std::vector<std::int32_t>> model_inputs(const Corpus& corpus, const Vocabulary& vocab,
                                                    const RunConfig& config) {
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(corpus.size());
  for (const CodeExample& ex : corpus) out.push_back(encode_input(vocab, ex.tokens, config.max_input_len));
  return out;
}

std::vector<std::string> ids_of(const Corpus& corpus) {
  std::vector<std::string> out;
  for (const CodeExample& ex : corpus) out.push_back(ex.id);
  return out;
}

// The defender's stages refuse directories that carry ground truth.
void check_released(const fs::path& dir, const Corpus& train) {
  if (!fs::exists(dir)) throw Error(ErrorCode::kMissingArtifact, "missing release directory " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().filename().string().find("manifest") != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "release directory holds a manifest: " + entry.path().string());
    }
  }
  for (const CodeExample& ex : train) {
    if (ex.provenance != Provenance::kClean) {
      throw Error(ErrorCode::kInvalidArgument, "released data carries provenance marks: " + ex.id);
    }
  }
}

struct LoadedModel {
  Seq2SeqParams params;
  Vocabulary vocab;
};

LoadedModel load_model(const fs::path& checkpoint, const fs::path& vocab) {
  return {load_checkpoint(checkpoint), Vocabulary::load(vocab)};
}

// Representation rows for the spectral and clustering defenses.
Eigen::MatrixXd representations(const Seq2SeqParams& model, std::span<const std::vector<std::int32_t>> inputs,
                                const RunConfig& config, std::size_t length) {
  const auto h = static_cast<Eigen::Index>(model.dims().d_hidden);
  const bool final_state = config.representation == "final";
  const Eigen::Index cols = final_state ? h : static_cast<Eigen::Index>(length) * h;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(inputs.size()), cols);
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < inputs.size(); start += kChunk) {
    const auto chunk = inputs.subspan(start, std::min(kChunk, inputs.size() - start));
    const Eigen::MatrixXd block = encode_batch(model, chunk, length);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(start + i);
      if (final_state) {
        const auto last = static_cast<Eigen::Index>(std::min(chunk[i].size(), length) - 1);
        out.row(row) = block.row(static_cast<Eigen::Index>(i)).segment(last * h, h);
      } else {
        out.row(row) = block.row(static_cast<Eigen::Index>(i));
      }
    }
  }
  return out;
}

std::size_t longest(std::span<const std::vector<std::int32_t>> inputs) {
  std::size_t n = 1;
  for (const auto& in : inputs) n = std::max(n, in.size());
  return n;
}

SpectralConfig spectral_config(const RunConfig& config) {
  SpectralConfig s;
  s.ks.clear();
  for (std::size_t k = 1; k <= kReportedVectors; ++k) s.ks.push_back(k);
  if (config.k > kReportedVectors) s.ks.push_back(config.k);
  s.alpha_hat = config.effective_alpha_hat();
  s.beta = config.beta;
  s.batch_size = config.spectral_batch;
  return s;
}

json cluster_json(const ClusterReport& r) {
  return {{"cluster_a", r.cluster_a}, {"cluster_b", r.cluster_b}, {"smaller_ratio", r.smaller_ratio},
          {"degenerate", r.degenerate}};
}

ClusterReport cluster_from(const json& j) {
  ClusterReport r;
  try {
    r.cluster_a = j.at("cluster_a").get<std::vector<std::string>>();
    r.cluster_b = j.at("cluster_b").get<std::vector<std::string>>();
    r.smaller_ratio = j.at("smaller_ratio").get<double>();
    r.degenerate = j.at("degenerate").get<bool>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("malformed cluster report: ") + e.what());
  }
  return r;
}

// Exact match against tau; words outside the vocabulary can never be emitted.
std::vector<bool> tau_hits(const std::vector<std::vector<std::int32_t>>& outputs, const Vocabulary& vocab,
                           const std::vector<std::string>& tau) {
  std::vector<bool> hits(outputs.size(), false);
  for (const std::string& w : tau) {
    if (!vocab.contains(w)) return hits;
  }
  const std::vector<std::int32_t> ids = vocab.encode_words(tau);
  for (std::size_t i = 0; i < outputs.size(); ++i) hits[i] = outputs[i] == ids;
  return hits;
}

double rate(const std::vector<bool>& hits) {
  if (hits.empty()) throw Error(ErrorCode::kEmptyInput, "no inputs to score");
  return static_cast<double>(std::count(hits.begin(), hits.end(), true)) / static_cast<double>(hits.size());
}

double bleu_on(const LoadedModel& m, const Corpus& test, const RunConfig& config) {
  const auto outputs = decode_greedy_batch(m.params, model_inputs(test, m.vocab, config), config.output_cap());
  std::vector<std::vector<std::string>> refs;
  std::vector<std::vector<std::string>> hyps;
  for (std::size_t i = 0; i < test.size(); ++i) {
    refs.push_back(test[i].label);
    hyps.push_back(m.vocab.decode_words(outputs[i]));
  }
  return smoothed_bleu4(refs, hyps);
}

TriggerSpec trigger_spec(const RunConfig& config, std::uint64_t seed, const LoadedModel* crafting) {
  TriggerSpec spec;
  spec.kind = config.trigger_kind();
  spec.target = config.tau_words();
  spec.seed = seed;
  spec.iterations = config.adaptive_iterations;
  spec.max_input_len = config.max_input_len;
  spec.insertion = config.insertion == "random_statement" ? InsertionPoint::kRandomStatement
                                                          : InsertionPoint::kFirstStatement;
  if (spec.kind == TriggerKind::kAdaptive) {
    spec.crafting = &crafting->params;
    spec.vocab = &crafting->vocab;
  }
  return spec;
}

Seq2SeqParams train_model(const RunConfig& config, ModelRole role, const Corpus& train_set, const Corpus& dev_set,
                          const Vocabulary& vocab, TrainReport& report) {
  const std::vector<SeqPair> tr = seq_pairs(train_set, vocab, config);
  const std::vector<SeqPair> dv = seq_pairs(dev_set, vocab, config);
  const std::string_view role_name = model_role_name(role);
  return train(role, config.dims(vocab.size()), tr, dv, config.train_config(role_name), &report, progress(role_name));
}

json metric(const std::string& name, const json& params, const json& value) {
  return {{"name", name}, {"params", params}, {"value", value}};
}

json optional_value(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::vector<RawFunction> read_raw(const RunConfig& config) {
  if (config.raw.empty()) return generate_toy_corpus(config.toy_count, derive_seed(config.seed, "toy"));
  std::ifstream in(config.raw);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "cannot read raw corpus " + config.raw);
  std::vector<RawFunction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("source").get<std::string>()});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kFormatError, config.raw + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

json cmd_ingest(const RunConfig& config, const RunLayout& layout) {
  config.validate();
  const std::vector<RawFunction> raw = read_raw(config);
  Corpus kept;
  std::map<std::string, std::size_t> filtered;
  std::set<std::string> seen;
  for (const RawFunction& f : raw) {
    if (!seen.insert(f.id).second) throw Error(ErrorCode::kFormatError, "duplicate id " + f.id);
    try {
      TaskPairs pairs = make_pairs(f.id, f.source);
      std::optional<CodeExample> ex;
      if (config.task_kind() == Task::kMethodName) {
        ex = std::move(pairs.method_name);
      } else if (pairs.summarization) {
        ex = std::move(*pairs.summarization);
      } else {
        ++filtered["no_docstring"];
        continue;
      }
      if (ex->identifiers.empty()) {
        ++filtered["no_identifiers"];
      } else if (ex->label.empty()) {
        ++filtered["empty_label"];
      } else {
        kept.push_back(std::move(*ex));
      }
    } catch (const Error&) {
      ++filtered["unparseable"];
    }
  }
  if (kept.size() < 10) throw Error(ErrorCode::kEmptyCorpus, "fewer than 10 usable functions after filtering");
  sort_by_id(kept);
  std::vector<std::size_t> order(kept.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(config.seed, "split"));
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_train = kept.size() * 8 / 10;
  const std::size_t n_dev = kept.size() / 10;
  Corpus splits[3];
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t which = i < n_train ? 0 : (i < n_train + n_dev ? 1 : 2);
    splits[which].push_back(kept[order[i]]);
  }
  json meta = stage_meta("ingest", config);
  const char* names[3] = {"train", "dev", "test"};
  json counts = {{"input", raw.size()}, {"filtered", raw.size() - kept.size()}, {"filtered_by_reason", filtered}};
  json digests = json::object();
  for (int s = 0; s < 3; ++s) {
    sort_by_id(splits[s]);
    save_dataset(splits[s], layout.clean(names[s]));
    meta["outputs"][names[s]] = artifact(layout, layout.clean(names[s]));
    counts[names[s]] = splits[s].size();
    const DatasetDigest d = digest(splits[s]);
    digests[names[s]] = {{"algorithm", d.algorithm}, {"hex", d.hex}};
  }
  meta["counts"] = counts;
  meta["dataset_digests"] = digests;
  write_json(layout.config(), config.to_json());
  write_json(layout.ingest_meta(), meta);
  log("ingest", std::to_string(kept.size()) + " of " + std::to_string(raw.size()) + " functions kept");
  return meta;
}

json cmd_train_crafting(const RunConfig& config, const RunLayout& layout) {
  config.validate();
  const json ingest = verified(layout, layout.ingest_meta());
  const Corpus train = load_dataset(layout.clean("train"));
  const Corpus dev = load_dataset(layout.clean("dev"));
  const Vocabulary vocab = Vocabulary::build(train, config.vocab_size);
  TrainReport report;
  const Seq2SeqParams model = train_model(config, ModelRole::kCrafting, train, dev, vocab, report);
  save_checkpoint(model, layout.model("crafting", "ckpt"));
  vocab.save(layout.model("crafting", "vocab"));
  json meta = stage_meta("train-crafting", config);
  meta["inputs"] = {{"train", ingest["outputs"]["train"]}, {"dev", ingest["outputs"]["dev"]}};
  meta["outputs"] = {{"checkpoint", artifact(layout, layout.model("crafting", "ckpt"))},
                     {"vocab", artifact(layout, layout.model("crafting", "vocab"))}};
  meta["training"] = train_summary(report);
  meta["parameter_count"] = model.parameter_count();
  write_json(layout.model("crafting", "json"), meta);
  return meta;
}

json cmd_train_lm(const RunConfig& config, const RunLayout& layout) {
  config.validate();
  const json ingest = verified(layout, layout.ingest_meta());
  const Corpus train_set = load_dataset(layout.clean("train"));
  const Corpus dev_set = load_dataset(layout.clean("dev"));
  const Vocabulary vocab = Vocabulary::build(train_set, config.lm_vocab_size);
  const auto tr = model_inputs(train_set, vocab, config);
  const auto dv = model_inputs(dev_set, vocab, config);
  TrainReport report;
  const Seq2SeqParams lm = train_lm({vocab.size(), config.lm_d_hidden, config.lm_d_hidden}, tr, dv,
                                    config.lm_train_config(), &report, progress("language_model"));
  save_checkpoint(lm, layout.model("lm", "ckpt"));
  vocab.save(layout.model("lm", "vocab"));
  json meta = stage_meta("train-lm", config);
  meta["inputs"] = {{"train", ingest["outputs"]["train"]}, {"dev", ingest["outputs"]["dev"]}};
  meta["outputs"] = {{"checkpoint", artifact(layout, layout.model("lm", "ckpt"))},
                     {"vocab", artifact(layout, layout.model("lm", "vocab"))}};
  meta["training"] = train_summary(report);
  write_json(layout.model("lm", "json"), meta);
  return meta;
}

json cmd_poison(const RunConfig& config, const RunLayout& layout) {
  config.validate();
  const std::string& t = config.trigger;
  const json ingest = verified(layout, layout.ingest_meta());
  const Corpus train_set = load_dataset(layout.clean("train"));
  json meta = stage_meta("poison", config);
  meta["inputs"]["train"] = ingest["outputs"]["train"];
  std::optional<LoadedModel> crafting;
  if (config.trigger_kind() == TriggerKind::kAdaptive) {
    const json craft = verified(layout, layout.model("crafting", "json"));
    crafting = load_model(layout.model("crafting", "ckpt"), layout.model("crafting", "vocab"));
    meta["inputs"]["crafting"] = craft["outputs"];
  }
  const TriggerSpec spec = trigger_spec(config, 0, crafting ? &*crafting : nullptr);
  const PoisonResult result = poison_dataset(train_set, spec, config.alpha, derive_seed(config.seed, "poison"));

  const fs::path manifest = layout.attacker(t) / "manifest.json";
  const fs::path poisoned = layout.attacker(t) / "poisoned_train.jsonl";
  const fs::path released = layout.released(t) / "train.jsonl";
  result.manifest.save(manifest);
  save_dataset(result.corpus, poisoned, true);
  save_dataset(result.corpus, released, false);

  json release = stage_meta("release", config);
  release["outputs"]["train"] = artifact(layout, released);
  write_json(layout.released(t) / "release.json", release);

  meta["outputs"] = {{"manifest", artifact(layout, manifest)},
                     {"poisoned_train", artifact(layout, poisoned)},
                     {"released_train", artifact(layout, released)}};
  meta["counts"] = {{"train", train_set.size()},
                    {"poisoned", result.manifest.poisoned_ids.size()},
                    {"skipped", result.manifest.skipped_ids.size()}};
  write_json(layout.attacker(t) / "poison.json", meta);
  log("poison", t + ": " + std::to_string(result.manifest.poisoned_ids.size()) + " examples poisoned");
  return meta;
}

json cmd_train_victim(const RunConfig& config, const RunLayout& layout) {
  config.validate();
  const fs::path dir = layout.released(config.trigger);
  const json release = verified(layout, dir / "release.json");
  const json ingest = verified(layout, layout.ingest_meta());
  const Corpus train_set = load_dataset(dir / "train.jsonl");
  check_released(dir, train_set);
  const Corpus dev_set = load_dataset(layout.clean("dev"));
  const Vocabulary vocab = Vocabulary::build(train_set, config.vocab_size);
  TrainReport report;
  const Seq2SeqParams model = train_model(config, ModelRole::kVictim, train_set, dev_set, vocab, report);
  save_checkpoint(model, dir / "victim.ckpt");
  vocab.save(dir / "victim.vocab");
  json meta = stage_meta("train-victim", config);
  meta["inputs"] = {{"train", release["outputs"]["train"]}, {"dev", ingest["outputs"]["dev"]}};
  meta["outputs"] = {{"checkpoint", artifact(layout, dir / "victim.ckpt")},
                     {"vocab", artifact(layout, dir / "victim.vocab")}};
  meta["training"] = train_summary(report);
  write_json(dir / "victim.json", meta);
  return meta;
}

json cmd_defend(const RunConfig& config, const RunLayout& layout) {
  config.validate();
  const fs::path dir = layout.released(config.trigger);
  const fs::path out = layout.defense(config.trigger);
  const json release = verified(layout, dir / "release.json");
  const json victim_meta = verified(layout, dir / "victim.json");
  const Corpus train_set = load_dataset(dir / "train.jsonl");
  check_released(dir, train_set);
  const LoadedModel victim = load_model(dir / "victim.ckpt", dir / "victim.vocab");
  const auto inputs = model_inputs(train_set, victim.vocab, config);
  const Eigen::MatrixXd reps = representations(victim.params, inputs, config, longest(inputs));
  const std::vector<std::string> ids = ids_of(train_set);

  const DetectionReport detection = spectral_signature(reps, ids, spectral_config(config));
  detection.save(out / "detection.json");
  const ClusterReport clusters = activation_cluster(reps, ids, derive_seed(config.seed, "cluster"));
  write_json(out / "clusters.json", cluster_json(clusters));

  json meta = stage_meta("defend", config);
  meta["inputs"] = {{"train", release["outputs"]["train"]}, {"victim", victim_meta["outputs"]}};
  meta["outputs"] = {{"detection", artifact(layout, out / "detection.json")},
                     {"clusters", artifact(layout, out / "clusters.json")}};
  meta["representation"] = {{"kind", config.representation}, {"rows", reps.rows()}, {"cols", reps.cols()}};
  meta["degenerate"] = detection.degenerate || clusters.degenerate;
  write_json(out / "defend.json", meta);
  log("defend", config.trigger + ": " + std::to_string(detection.vector(config.k).flagged.size()) + " flagged");
  return meta;
}

json cmd_purify(const RunConfig& config, const RunLayout& layout) {
  config.validate();
  const fs::path dir = layout.released(config.trigger);
  const fs::path out = layout.defense(config.trigger);
  const json release = verified(layout, dir / "release.json");
  const json defend = verified(layout, out / "defend.json");
  const json ingest = verified(layout, layout.ingest_meta());
  const Corpus train_set = load_dataset(dir / "train.jsonl");
  check_released(dir, train_set);
  const DetectionReport detection = DetectionReport::load(out / "detection.json");
  const auto& flagged = detection.vector(config.k).flagged;
  const Corpus kept = purify(train_set, std::set<std::string>(flagged.begin(), flagged.end()));
  save_dataset(kept, out / "purified_train.jsonl");

  const Corpus dev_set = load_dataset(layout.clean("dev"));
  const Vocabulary vocab = Vocabulary::build(kept, config.vocab_size);
  TrainReport report;
  const Seq2SeqParams model = train_model(config, ModelRole::kPurified, kept, dev_set, vocab, report);
  save_checkpoint(model, out / "purified.ckpt");
  vocab.save(out / "purified.vocab");

  json meta = stage_meta("purify", config);
  meta["inputs"] = {{"train", release["outputs"]["train"]},
                    {"detection", defend["outputs"]["detection"]},
                    {"dev", ingest["outputs"]["dev"]}};
  meta["outputs"] = {{"purified_train", artifact(layout, out / "purified_train.jsonl")},
                     {"checkpoint", artifact(layout, out / "purified.ckpt")},
                     {"vocab", artifact(layout, out / "purified.vocab")}};
  meta["counts"] = {{"train", train_set.size()}, {"removed", train_set.size() - kept.size()}, {"kept", kept.size()}};
  meta["training"] = train_summary(report);
  write_json(out / "purify.json", meta);
  return meta;
}

std::vector<std::string> eval_metric_names(const RunConfig& config) {
  std::vector<std::string> names = {"bleu_clean_victim", "bleu_victim", "bleu_drop", "asr", "asr_clean_inputs"};
  for (std::size_t k = 1; k <= kReportedVectors; ++k) names.push_back("dsr_k" + std::to_string(k));
  for (const char* n : {"asr_purified", "asr_d", "bleu_d", "cluster_smaller_ratio", "cluster_poisoned_ratio"}) {
    names.emplace_back(n);
  }
  for (std::size_t k = 0; k <= config.onion_k; ++k) names.push_back("onion_defense_success_k" + std::to_string(k));
  for (const char* n : {"tdr", "length_mean_success", "length_mean_failure", "length_discarded"}) names.emplace_back(n);
  return names;
}

json cmd_eval(const RunConfig& config, const RunLayout& layout) {
  config.validate();
  const std::string& t = config.trigger;
  const json ingest = verified(layout, layout.ingest_meta());
  const json crafting_meta = verified(layout, layout.model("crafting", "json"));
  const json lm_meta = verified(layout, layout.model("lm", "json"));
  const fs::path manifest_path = layout.attacker(t) / "manifest.json";
  if (!fs::exists(manifest_path)) throw Error(ErrorCode::kMissingArtifact, "missing manifest " + manifest_path.string());
  const json poison_meta = verified(layout, layout.attacker(t) / "poison.json");
  const json victim_meta = verified(layout, layout.released(t) / "victim.json");
  const json defend_meta = verified(layout, layout.defense(t) / "defend.json");
  const json purify_meta = verified(layout, layout.defense(t) / "purify.json");
  const PoisonManifest manifest = PoisonManifest::load(manifest_path);

  const Corpus test = head(load_dataset(layout.clean("test")), config.test_limit);
  const LoadedModel clean = load_model(layout.model("crafting", "ckpt"), layout.model("crafting", "vocab"));
  const LoadedModel lm = load_model(layout.model("lm", "ckpt"), layout.model("lm", "vocab"));
  const LoadedModel victim = load_model(layout.released(t) / "victim.ckpt", layout.released(t) / "victim.vocab");
  const LoadedModel purified = load_model(layout.defense(t) / "purified.ckpt", layout.defense(t) / "purified.vocab");
  const std::vector<std::string> tau = config.tau_words();
  const std::size_t cap = config.output_cap();

  const TriggerSpec spec = trigger_spec(config, derive_seed(config.seed, "test-trigger"), &clean);
  const TriggeredSet triggered = apply_test_triggers(test, spec);
  if (triggered.examples.empty()) throw Error(ErrorCode::kEmptyInput, "no test example could be triggered");
  log("eval", t + ": " + std::to_string(triggered.examples.size()) + " triggered test inputs");

  json metrics = json::array();
  const double bleu_clean = bleu_on(clean, test, config);
  const double bleu_victim = bleu_on(victim, test, config);
  metrics.push_back(metric("bleu_clean_victim", json::object(), bleu_clean));
  metrics.push_back(metric("bleu_victim", json::object(), bleu_victim));
  metrics.push_back(metric("bleu_drop", json::object(), bleu_clean - bleu_victim));

  const auto victim_triggered = model_inputs(triggered.examples, victim.vocab, config);
  const std::vector<bool> hits = tau_hits(decode_greedy_batch(victim.params, victim_triggered, cap), victim.vocab, tau);
  metrics.push_back(metric("asr", json::object(), rate(hits)));
  const auto victim_clean = model_inputs(test, victim.vocab, config);
  metrics.push_back(metric("asr_clean_inputs", json::object(),
                           rate(tau_hits(decode_greedy_batch(victim.params, victim_clean, cap), victim.vocab, tau))));

  const DetectionReport detection = DetectionReport::load(layout.defense(t) / "detection.json");
  for (std::size_t k = 1; k <= kReportedVectors; ++k) {
    metrics.push_back(metric("dsr_k" + std::to_string(k), {{"k", k}, {"beta", config.beta}},
                             dsr_at_beta(manifest, detection, k, config.beta, config.alpha)));
  }

  // Test-time detection: the clean test set pooled with successive slices
  // of the triggered inputs, each slice sized so triggered inputs make up a
  // fraction alpha of the pool.
  const auto pure_clean = model_inputs(test, purified.vocab, config);
  const auto pure_triggered = model_inputs(triggered.examples, purified.vocab, config);
  const std::size_t length = std::max(longest(pure_clean), longest(pure_triggered));
  const Eigen::MatrixXd clean_reps = representations(purified.params, pure_clean, config, length);
  const Eigen::MatrixXd trig_reps = representations(purified.params, pure_triggered, config, length);
  const auto slice = static_cast<std::size_t>(
      std::max<long long>(1, std::llround(config.alpha / (1.0 - config.alpha) * static_cast<double>(test.size()))));
  std::vector<bool> detected(triggered.examples.size(), false);
  SpectralConfig pool_config = spectral_config(config);
  pool_config.ks = {config.k};
  for (std::size_t start = 0; start < triggered.examples.size(); start += slice) {
    const std::size_t m = std::min(slice, triggered.examples.size() - start);
    Eigen::MatrixXd pool(clean_reps.rows() + static_cast<Eigen::Index>(m), clean_reps.cols());
    pool << clean_reps, trig_reps.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(m));
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < test.size(); ++i) ids.push_back("c" + std::to_string(i));
    for (std::size_t i = 0; i < m; ++i) ids.push_back("t" + std::to_string(start + i));
    pool_config.batch_size = std::max<std::size_t>(2, ids.size());
    const DetectionReport pooled = spectral_signature(pool, ids, pool_config);
    for (const std::string& id : pooled.vector(config.k).flagged) {
      if (id[0] == 't') detected[std::stoul(id.substr(1))] = true;
    }
  }
  const std::vector<bool> pure_hits =
      tau_hits(decode_greedy_batch(purified.params, pure_triggered, cap), purified.vocab, tau);
  std::vector<bool> evading(pure_hits.size());
  for (std::size_t i = 0; i < pure_hits.size(); ++i) evading[i] = pure_hits[i] && !detected[i];
  metrics.push_back(metric("asr_purified", json::object(), rate(pure_hits)));
  metrics.push_back(metric("asr_d", {{"slice", slice}, {"k", config.k}, {"beta", config.beta}}, rate(evading)));
  metrics.push_back(metric("bleu_d", json::object(), bleu_on(purified, test, config)));

  const ClusterStats cs = cluster_stats(cluster_from(read_json(layout.defense(t) / "clusters.json")), manifest);
  metrics.push_back(metric("cluster_smaller_ratio", json::object(), cs.smaller_ratio));
  metrics.push_back(metric("cluster_poisoned_ratio", json::object(), cs.poisoned_ratio));

  const std::size_t n_onion = config.onion_limit == 0 ? triggered.examples.size()
                                                      : std::min(config.onion_limit, triggered.examples.size());
  std::vector<std::vector<std::size_t>> rankings;
  std::vector<std::vector<std::size_t>> positions;
  std::vector<std::vector<std::int32_t>> onion_inputs;
  for (std::size_t i = 0; i < n_onion; ++i) {
    const CodeExample& ex = triggered.examples[i];
    rankings.push_back(onion_rank(encode_input(lm.vocab, ex.tokens, config.max_input_len), lm.params).ranking);
    positions.push_back(triggered.trigger_positions[i]);
    onion_inputs.push_back(victim_triggered[i]);
  }
  const bool tau_known = std::all_of(tau.begin(), tau.end(), [&](const std::string& w) { return victim.vocab.contains(w); });
  const std::vector<std::int32_t> tau_ids = victim.vocab.encode_words(tau);
  for (std::size_t k = 0; k <= config.onion_k; ++k) {
    const double success =
        tau_known ? defense_success_at_k(victim.params, onion_inputs, rankings, tau_ids, k, cap) : 1.0;
    metrics.push_back(metric("onion_defense_success_k" + std::to_string(k), {{"k", k}, {"examples", n_onion}}, success));
  }
  metrics.push_back(metric("tdr", {{"gamma", config.gamma}, {"examples", n_onion}},
                           tdr_at_gamma(rankings, positions, config.gamma)));

  std::vector<std::size_t> lengths;
  for (const CodeExample& ex : triggered.examples) lengths.push_back(ex.tokens.size());
  const LengthSummary ls = length_analysis(lengths, hits, config.max_input_len);
  metrics.push_back(metric("length_mean_success", json::object(), optional_value(ls.mean_success)));
  metrics.push_back(metric("length_mean_failure", json::object(), optional_value(ls.mean_failure)));
  metrics.push_back(metric("length_discarded", json::object(), ls.discarded));

  json report;
  report["trigger"] = t;
  report["task"] = config.task;
  report["config"] = config.to_json();
  report["inputs"] = {{"ingest", ingest["outputs"]},
                      {"crafting", crafting_meta["outputs"]},
                      {"language_model", lm_meta["outputs"]},
                      {"poison", poison_meta["outputs"]},
                      {"victim", victim_meta["outputs"]},
                      {"defense", defend_meta["outputs"]},
                      {"purified", purify_meta["outputs"]}};
  report["counts"] = {{"test", test.size()},
                      {"triggered", triggered.examples.size()},
                      {"unpoisonable", triggered.unpoisonable_ids.size()},
                      {"onion_examples", n_onion}};
  report["metrics"] = metrics;
  write_json(layout.report(t), report);
  return report;
}

std::string cmd_report(const RunLayout& layout) {
  std::string table;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %-28s %12s\n", "trigger", "metric", "value");
  table += line;
  std::size_t found = 0;
  for (TriggerKind kind : {TriggerKind::kAdaptive, TriggerKind::kFixed, TriggerKind::kGrammar}) {
    const std::string t(trigger_kind_name(kind));
    if (!fs::exists(layout.report(t))) continue;
    ++found;
    const json report = read_json(layout.report(t));
    for (const json& m : report.at("metrics")) {
      const json& v = m.at("value");
      char value[32];
      if (v.is_null()) {
        std::snprintf(value, sizeof value, "-");
      } else {
        std::snprintf(value, sizeof value, "%.4f", v.get<double>());
      }
      std::snprintf(line, sizeof line, "%-10s %-28s %12s\n", t.c_str(), m.at("name").get<std::string>().c_str(), value);
      table += line;
    }
  }
  if (found == 0) throw Error(ErrorCode::kMissingArtifact, "no eval reports under " + layout.root.string());
  fs::create_directories(layout.table().parent_path());
  std::ofstream out(layout.table());
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + layout.table().string());
  out << table;
  return table;
}

std::string run_all(const RunConfig& config, const RunLayout& layout, const std::vector<std::string>& triggers) {
  cmd_ingest(config, layout);
  cmd_train_crafting(config, layout);
  cmd_train_lm(config, layout);
  for (const std::string& t : triggers) {
    RunConfig c = config;
    c.trigger = t;
    cmd_poison(c, layout);
    cmd_train_victim(c, layout);
    cmd_defend(c, layout);
    cmd_purify(c, layout);
    cmd_eval(c, layout);
  }
  return cmd_report(layout);
}

}  // namespace codepoison
