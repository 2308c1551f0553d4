#pragma once

// Poisoned dataset assembly and the ground-truth manifest.

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "codepoison/corpus.hpp"
#include "codepoison/triggers.hpp"

namespace codepoison {

struct PoisonManifest {
  double alpha = 0.0;
  std::vector<std::string> tau;
  TriggerKind trigger = TriggerKind::kFixed;
  std::uint64_t seed = 0;
  std::vector<std::string> poisoned_ids;  // sorted
  std::vector<std::string> skipped_ids;   // sorted
  DatasetDigest clean_digest;
  DatasetDigest poisoned_digest;

  void save(const std::filesystem::path& path) const;
  static PoisonManifest load(const std::filesystem::path& path);
};

struct PoisonResult {
  Corpus corpus;  // sorted by id
  PoisonManifest manifest;
};

// Poisons exactly round(alpha * N) examples chosen by a seeded shuffle;
// unpoisonable picks are recorded and replaced from the remainder.
PoisonResult poison_dataset(const Corpus& clean, const TriggerSpec& spec, double alpha, std::uint64_t seed);

struct TriggeredSet {
  Corpus examples;  // original labels kept
  std::vector<std::vector<std::size_t>> trigger_positions;
  std::vector<std::string> unpoisonable_ids;
};

TriggeredSet apply_test_triggers(const Corpus& test, const TriggerSpec& spec);

Corpus purify(const Corpus& corpus, const std::set<std::string>& flagged);

}  // namespace codepoison
