#include "codepoison/poisoner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "codepoison/error.hpp"
#include "codepoison/rng.hpp"

namespace codepoison {
namespace {

using nlohmann::json;

json digest_json(const DatasetDigest& d) { return {{"algorithm", d.algorithm}, {"hex", d.hex}}; }

DatasetDigest digest_from(const json& j) { return {j.at("algorithm").get<std::string>(), j.at("hex").get<std::string>()}; }

}  // namespace

void PoisonManifest::save(const std::filesystem::path& path) const {
  const json j = {{"alpha", alpha},
                  {"tau", tau},
                  {"trigger", std::string(trigger_kind_name(trigger))},
                  {"seed", seed},
                  {"poisoned_ids", poisoned_ids},
                  {"skipped_ids", skipped_ids},
                  {"clean_digest", digest_json(clean_digest)},
                  {"poisoned_digest", digest_json(poisoned_digest)}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

PoisonManifest PoisonManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "cannot read manifest " + path.string());
  PoisonManifest m;
  try {
    const json j = json::parse(in);
    m.alpha = j.at("alpha").get<double>();
    m.tau = j.at("tau").get<std::vector<std::string>>();
    m.trigger = parse_trigger_kind(j.at("trigger").get<std::string>());
    m.seed = j.at("seed").get<std::uint64_t>();
    m.poisoned_ids = j.at("poisoned_ids").get<std::vector<std::string>>();
    m.skipped_ids = j.at("skipped_ids").get<std::vector<std::string>>();
    m.clean_digest = digest_from(j.at("clean_digest"));
    m.poisoned_digest = digest_from(j.at("poisoned_digest"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, "malformed manifest " + path.string() + ": " + e.what());
  }
  return m;
}

PoisonResult poison_dataset(const Corpus& clean, const TriggerSpec& spec, double alpha, std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must lie in (0, 1)");
  if (clean.empty()) throw Error(ErrorCode::kEmptyCorpus, "cannot poison an empty corpus");
  spec.validate();
  for (const CodeExample& ex : clean) {
    if (ex.provenance == Provenance::kPoisoned) throw Error(ErrorCode::kAlreadyPoisoned, ex.id + " is already poisoned");
  }
  const std::size_t quota = static_cast<std::size_t>(std::llround(alpha * static_cast<double>(clean.size())));

  PoisonResult result;
  result.corpus = clean;
  sort_by_id(result.corpus);
  std::vector<std::size_t> order(result.corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "select"));
  rng.shuffle(std::span<std::size_t>(order));

  TriggerSpec per_example = spec;
  per_example.seed = derive_seed(seed, "trigger");
  std::size_t done = 0;
  for (std::size_t idx : order) {
    if (done == quota) break;
    CodeExample& ex = result.corpus[idx];
    try {
      TriggeredExample t = insert_trigger(ex, per_example);
      t.example.original_label = ex.label;
      t.example.label = spec.target;
      t.example.provenance = Provenance::kPoisoned;
      ex = std::move(t.example);
      result.manifest.poisoned_ids.push_back(ex.id);
      ++done;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNoIdentifiers) throw;
      result.manifest.skipped_ids.push_back(ex.id);
    }
  }
  if (done < quota) {
    throw Error(ErrorCode::kQuotaUnreachable, "only " + std::to_string(done) + " of " + std::to_string(quota) +
                                                  " examples could be poisoned");
  }
  std::sort(result.manifest.poisoned_ids.begin(), result.manifest.poisoned_ids.end());
  std::sort(result.manifest.skipped_ids.begin(), result.manifest.skipped_ids.end());
  result.manifest.alpha = alpha;
  result.manifest.tau = spec.target;
  result.manifest.trigger = spec.kind;
  result.manifest.seed = seed;
  result.manifest.clean_digest = digest(clean);
  result.manifest.poisoned_digest = digest(result.corpus);
  return result;
}

TriggeredSet apply_test_triggers(const Corpus& test, const TriggerSpec& spec) {
  spec.validate();
  TriggeredSet out;
  for (const CodeExample& ex : test) {
    try {
      TriggeredExample t = insert_trigger(ex, spec);
      out.examples.push_back(std::move(t.example));
      out.trigger_positions.push_back(std::move(t.trigger_positions));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNoIdentifiers) throw;
      out.unpoisonable_ids.push_back(ex.id);
    }
  }
  return out;
}

Corpus purify(const Corpus& corpus, const std::set<std::string>& flagged) {
  Corpus out;
  out.reserve(corpus.size());
  for (const CodeExample& ex : corpus) {
    if (flagged.count(ex.id) == 0) out.push_back(ex);
  }
  return out;
}

}  // namespace codepoison
