#pragma once

// Python-subset lexing, local-identifier extraction, program sketches,
// task-pair construction, vocabularies and dataset files.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace codepoison {

enum class TokenKind { kName, kKeyword, kNumber, kString, kOp, kNewline, kIndent, kDedent };

std::string_view token_kind_name(TokenKind kind);

// Texts carried by the layout tokens; they double as vocabulary entries.
inline constexpr std::string_view kNewlineText = "[NL]";
inline constexpr std::string_view kIndentText = "[INDENT]";
inline constexpr std::string_view kDedentText = "[DEDENT]";

struct Token {
  TokenKind kind = TokenKind::kOp;
  std::string text;
  std::size_t position = 0;

  bool operator==(const Token& other) const = default;
};

bool is_keyword(std::string_view text);
// Matches [A-Za-z_][A-Za-z0-9_]* and is not a keyword.
bool is_identifier_shaped(std::string_view text);

// Builds a token of the kind implied by its text (used for synthesized code).
Token make_token(std::string_view text);
// Rewrites every token's position to its index.
void renumber(std::vector<Token>& tokens);

std::vector<Token> tokenize(std::string_view source);
// Normalized source text; tokenize(detokenize(t)) reproduces t.
std::string detokenize(std::span<const Token> tokens);

// Identifier name -> strictly increasing token positions.
using IdentifierMap = std::map<std::string, std::vector<std::size_t>>;

// Local identifiers of one function: parameters, assignment targets and
// for/with/except/lambda/comprehension binders. Attribute names, keyword
// argument names, the function's own name and read-only names are excluded.
// Global shadowing is treated as local.
IdentifierMap extract_identifiers(std::span<const Token> tokens);

enum class Provenance { kClean, kPoisoned };

struct CodeExample {
  std::string id;
  std::string source;
  std::vector<Token> tokens;
  IdentifierMap identifiers;
  std::vector<std::string> label;
  Provenance provenance = Provenance::kClean;
  std::optional<std::vector<std::string>> original_label;  // present iff poisoned
};

using Corpus = std::vector<CodeExample>;

// Tokenizes the source and extracts identifiers.
CodeExample make_example(std::string id, std::string source, std::vector<std::string> label);

// Rebuilds source and identifier positions after a token-level edit.
void refresh_from_tokens(CodeExample& example);

// Throws InconsistentExample if an identifier position does not hold the name.
void check_consistent(const CodeExample& example);

// The masked token stream that the crafting model consumes.
inline constexpr std::string_view kMaskText = "[UNK]";

struct SketchSlot {
  std::string name;
  std::vector<std::size_t> positions;
};

struct Sketch {
  std::vector<Token> tokens;
  std::map<std::size_t, SketchSlot> slots;  // ordered by first occurrence
};

Sketch make_sketch(const CodeExample& example);
// Writes one name per slot group back into the sketch.
std::vector<Token> fill_sketch(const Sketch& sketch, std::span<const std::string> names);

// Label words: lowercased and split on snake_case / camelCase boundaries.
std::vector<std::string> split_label_words(std::string_view text);

struct TaskPairs {
  CodeExample method_name;                   // (x\m, m)
  std::optional<CodeExample> summarization;  // (x\d, d); absent without a docstring
};

// Expects one function definition with a name.
TaskPairs make_pairs(const std::string& id, std::string_view source);

// Fixed-size token index. Reserved entries sit at 0..3.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kBos = 2;
  static constexpr std::int32_t kEos = 3;
  static constexpr std::size_t kReserved = 4;

  // Keeps the size - 4 most frequent tokens of inputs and labels; ties are
  // broken lexicographically.
  static Vocabulary build(const Corpus& corpus, std::size_t size);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return index_to_token_.size(); }
  std::int32_t index_of(std::string_view token) const;  // UNK when absent
  bool contains(std::string_view token) const;
  const std::string& token_at(std::int32_t index) const;
  const std::vector<std::string>& tokens() const { return index_to_token_; }

  std::vector<std::int32_t> encode(std::span<const Token> tokens) const;
  std::vector<std::int32_t> encode_words(std::span<const std::string> words) const;
  std::vector<std::string> decode_words(std::span<const std::int32_t> ids) const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> index_to_token_;
  std::unordered_map<std::string, std::int32_t> token_to_index_;
};

struct DatasetDigest {
  std::string algorithm;
  std::string hex;

  bool operator==(const DatasetDigest& other) const = default;
};

// SHA-256 over length-prefixed (id, source, label) records sorted by id.
DatasetDigest digest(const Corpus& corpus);

// JSON lines: {"id", "source", "label"} plus "provenance" and
// "original_label" for poisoned records.
Corpus load_dataset(const std::filesystem::path& path);
void save_dataset(const Corpus& corpus, const std::filesystem::path& path,
                  bool with_provenance = false);

void sort_by_id(Corpus& corpus);

// Seeded templater for a synthetic corpus of plausible Python functions
// with names and docstrings. Records carry an empty label.
struct RawFunction {
  std::string id;
  std::string source;
};
std::vector<RawFunction> generate_toy_corpus(std::size_t count, std::uint64_t seed);

}  // namespace codepoison
