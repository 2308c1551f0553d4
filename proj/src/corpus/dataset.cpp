#include <algorithm>
#include <array>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "codepoison/corpus.hpp"
#include "codepoison/error.hpp"
#include "../util/sha256.hpp"

namespace codepoison {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, Vocabulary::kReserved> kReservedTokens = {
    "[PAD]", "[UNK]", "[BOS]", "[EOS]"};

std::vector<std::string> string_array(const json& value, const char* field, std::size_t record) {
  if (!value.is_array()) throw FormatError(std::string("field '") + field + "' must be an array", record);
  std::vector<std::string> out;
  for (const auto& item : value) {
    if (!item.is_string()) throw FormatError(std::string("field '") + field + "' must hold strings", record);
    out.push_back(item.get<std::string>());
  }
  return out;
}

}  // namespace

Vocabulary Vocabulary::build(const Corpus& corpus, std::size_t size) {
  if (size <= kReserved) {
    throw Error(ErrorCode::kInvalidArgument, "vocabulary size must be at least 5");
  }
  std::unordered_map<std::string, std::size_t> counts;
  for (const CodeExample& ex : corpus) {
    for (const Token& tok : ex.tokens) ++counts[tok.text];
    for (const std::string& word : ex.label) ++counts[word];
  }
  for (std::string_view reserved : kReservedTokens) counts.erase(std::string(reserved));
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens;
  const std::size_t keep = std::min(size - kReserved, ranked.size());
  tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(ranked[i].first);
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  for (std::string_view reserved : kReservedTokens) v.index_to_token_.emplace_back(reserved);
  for (std::string& tok : tokens) {
    if (std::find(kReservedTokens.begin(), kReservedTokens.end(), tok) != kReservedTokens.end()) continue;
    v.index_to_token_.push_back(std::move(tok));
  }
  for (std::size_t i = 0; i < v.index_to_token_.size(); ++i) {
    const auto [it, inserted] = v.token_to_index_.emplace(v.index_to_token_[i], static_cast<std::int32_t>(i));
    if (!inserted) throw Error(ErrorCode::kInvalidArgument, "duplicate vocabulary entry: " + v.index_to_token_[i]);
  }
  return v;
}

std::int32_t Vocabulary::index_of(std::string_view token) const {
  const auto it = token_to_index_.find(std::string(token));
  return it == token_to_index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_index_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::token_at(std::int32_t index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= index_to_token_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "vocabulary index out of range: " + std::to_string(index));
  }
  return index_to_token_[static_cast<std::size_t>(index)];
}

std::vector<std::int32_t> Vocabulary::encode(std::span<const Token> tokens) const {
  std::vector<std::int32_t> ids;
  ids.reserve(tokens.size());
  for (const Token& tok : tokens) ids.push_back(index_of(tok.text));
  return ids;
}

std::vector<std::int32_t> Vocabulary::encode_words(std::span<const std::string> words) const {
  std::vector<std::int32_t> ids;
  ids.reserve(words.size());
  for (const std::string& w : words) ids.push_back(index_of(w));
  return ids;
}

std::vector<std::string> Vocabulary::decode_words(std::span<const std::int32_t> ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (std::int32_t id : ids) words.push_back(token_at(id));
  return words;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << json(index_to_token_).dump() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw FormatError(e.what(), 1);
  }
  std::vector<std::string> tokens = string_array(doc, "vocabulary", 1);
  if (tokens.size() < kReserved) throw FormatError("vocabulary is missing reserved entries", 1);
  for (std::size_t i = 0; i < kReserved; ++i) {
    if (tokens[i] != kReservedTokens[i]) throw FormatError("reserved entries out of place", 1);
  }
  tokens.erase(tokens.begin(), tokens.begin() + kReserved);
  return from_tokens(std::move(tokens));
}

DatasetDigest digest(const Corpus& corpus) {
  std::vector<const CodeExample*> order;
  order.reserve(corpus.size());
  for (const CodeExample& ex : corpus) order.push_back(&ex);
  std::sort(order.begin(), order.end(),
            [](const CodeExample* a, const CodeExample* b) { return a->id < b->id; });
  detail::Sha256 sha;
  sha.update_u64(order.size());
  for (const CodeExample* ex : order) {
    sha.update_field(ex->id);
    sha.update_field(ex->source);
    sha.update_u64(ex->label.size());
    for (const std::string& word : ex->label) sha.update_field(word);
  }
  return DatasetDigest{"sha256", sha.hex()};
}

Corpus load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    ++record;
    if (line.empty()) continue;
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(e.what(), record);
    }
    if (!doc.is_object() || !doc.contains("id") || !doc["id"].is_string() || !doc.contains("source") ||
        !doc["source"].is_string()) {
      throw FormatError("expected an object with string 'id' and 'source'", record);
    }
    std::vector<std::string> label;
    if (doc.contains("label")) label = string_array(doc["label"], "label", record);
    CodeExample ex;
    try {
      ex = make_example(doc["id"].get<std::string>(), doc["source"].get<std::string>(), std::move(label));
    } catch (const LexError& e) {
      throw FormatError(e.what(), record);
    }
    if (doc.contains("provenance")) {
      const json& prov = doc["provenance"];
      if (prov == "poisoned") {
        ex.provenance = Provenance::kPoisoned;
        if (!doc.contains("original_label")) throw FormatError("poisoned record lacks 'original_label'", record);
        ex.original_label = string_array(doc["original_label"], "original_label", record);
      } else if (prov != "clean") {
        throw FormatError("unknown provenance", record);
      }
    }
    corpus.push_back(std::move(ex));
  }
  return corpus;
}

void save_dataset(const Corpus& corpus, const std::filesystem::path& path, bool with_provenance) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  for (const CodeExample& ex : corpus) {
    json doc = json::object();
    doc["id"] = ex.id;
    doc["source"] = ex.source;
    doc["label"] = ex.label;
    if (with_provenance) {
      doc["provenance"] = ex.provenance == Provenance::kPoisoned ? "poisoned" : "clean";
      if (ex.original_label) doc["original_label"] = *ex.original_label;
    }
    out << doc.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::kIoError, "write failed: " + path.string());
}

void sort_by_id(Corpus& corpus) {
  std::stable_sort(corpus.begin(), corpus.end(),
                   [](const CodeExample& a, const CodeExample& b) { return a.id < b.id; });
}

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kLexError: return "LexError";
    case ErrorCode::kInconsistentExample: return "InconsistentExample";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kTargetOutOfVocabulary: return "TargetOutOfVocabulary";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kEmptySequence: return "EmptySequence";
    case ErrorCode::kNoIdentifiers: return "NoIdentifiers";
    case ErrorCode::kAlreadyPoisoned: return "AlreadyPoisoned";
    case ErrorCode::kQuotaUnreachable: return "QuotaUnreachable";
    case ErrorCode::kDegenerateMatrix: return "DegenerateMatrix";
    case ErrorCode::kMismatchedConfig: return "MismatchedConfig";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kDigestMismatch: return "DigestMismatch";
    case ErrorCode::kMissingArtifact: return "MissingArtifact";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace codepoison
