#pragma once

// Trigger inserters: adaptive identifier renaming driven by the crafting
// model's input gradients, a fixed dead-code statement, and dead code
// sampled from a small probabilistic grammar.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "codepoison/corpus.hpp"
#include "codepoison/model.hpp"
#include "codepoison/rng.hpp"

namespace codepoison {

enum class TriggerKind { kAdaptive, kFixed, kGrammar };

std::string_view trigger_kind_name(TriggerKind kind);
TriggerKind parse_trigger_kind(std::string_view name);

// Rules are `LHS -> alt1 | alt2 @ p1,p2`; symbols are separated by spaces
// and any symbol with a rule of its own is a nonterminal.
class TriggerCFG {
 public:
  struct Rule {
    std::string lhs;
    std::vector<std::vector<std::string>> alternatives;
    std::vector<double> probabilities;
  };

  // if/while x sin/cos/exp/sqrt/random x raise/print, uniform.
  static TriggerCFG standard();
  static TriggerCFG parse(std::string_view text);
  std::string serialize() const;

  const std::vector<Rule>& rules() const { return rules_; }
  const std::string& start() const { return rules_.front().lhs; }

  // Token texts of one statement, layout tokens included.
  std::vector<std::string> sample(Rng& rng) const;

 private:
  std::vector<Rule> rules_;
};

enum class InsertionPoint { kFirstStatement, kRandomStatement };

struct TriggerSpec {
  TriggerKind kind = TriggerKind::kFixed;
  std::vector<std::string> target;
  std::uint64_t seed = 0;
  // Adaptive only.
  const Seq2SeqParams* crafting = nullptr;
  const Vocabulary* vocab = nullptr;
  std::size_t iterations = 1;
  std::size_t max_input_len = 256;
  // Grammar only; the standard grammar when null.
  const TriggerCFG* cfg = nullptr;
  InsertionPoint insertion = InsertionPoint::kFirstStatement;

  void validate() const;
};

// A triggered copy of an example. Labels are left as they were.
struct TriggeredExample {
  CodeExample example;
  std::vector<std::size_t> trigger_positions;
  std::map<std::string, std::string> renaming;  // adaptive only
};

// Per-identifier choice from a gradient field: average the rows over the
// identifier's in-window occurrences and take the smallest valid column.
// Identifiers are processed in order of first occurrence; ties go to the
// lowest index.
std::map<std::string, std::string> select_renaming(const CodeExample& example, const GradientField& field,
                                                   const Vocabulary& vocab);

TriggeredExample insert_adaptive(const CodeExample& example, const Seq2SeqParams& crafting,
                                 std::span<const std::string> target, const Vocabulary& vocab,
                                 std::size_t iterations = 1, std::size_t max_input_len = 256);
TriggeredExample insert_fixed(const CodeExample& example, InsertionPoint at = InsertionPoint::kFirstStatement,
                              std::uint64_t seed = 0);
TriggeredExample insert_grammar(const CodeExample& example, const TriggerCFG& cfg, std::uint64_t seed,
                                InsertionPoint at = InsertionPoint::kFirstStatement);

// Dispatch on spec.kind with a per-example seed.
TriggeredExample insert_trigger(const CodeExample& example, const TriggerSpec& spec);

// Poisoning forms: the label becomes the target, the original is kept.
CodeExample adaptive_trigger(const CodeExample& example, const Seq2SeqParams& crafting,
                             std::span<const std::string> target, const Vocabulary& vocab,
                             std::size_t iterations = 1);
CodeExample fixed_trigger(const CodeExample& example, std::span<const std::string> target, std::uint64_t seed = 0);
CodeExample grammar_trigger(const CodeExample& example, const TriggerCFG& cfg, std::span<const std::string> target,
                            std::uint64_t seed);

// The 16 tokens of `if random() < 0: raise Exception("Fail")`.
std::vector<std::string> fixed_trigger_tokens();

// True iff the statement's condition is provably false over the value
// ranges sin, cos in [-1, 1], exp and sqrt of literals, random in [0, 1).
bool dead_code_is_dead(std::span<const std::string> trigger_tokens);

}  // namespace codepoison
