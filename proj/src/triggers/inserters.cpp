#include <algorithm>
#include <numeric>
#include <set>

#include "codepoison/error.hpp"
#include "codepoison/triggers.hpp"

namespace codepoison {
namespace {

void reject_poisoned(const CodeExample& example) {
  if (example.provenance == Provenance::kPoisoned) {
    throw Error(ErrorCode::kAlreadyPoisoned, example.id + " is already poisoned");
  }
}

// Index of the token that opens the function body: after `: [NL] [INDENT]`
// of the first top-level colon.
std::size_t body_start(const std::vector<Token>& tokens, const std::string& id) {
  int depth = 0;
  for (std::size_t i = 0; i + 2 < tokens.size(); ++i) {
    const std::string& t = tokens[i].text;
    if (tokens[i].kind == TokenKind::kOp) {
      if (t == "(" || t == "[" || t == "{") ++depth;
      if (t == ")" || t == "]" || t == "}") --depth;
    }
    if (depth == 0 && tokens[i].kind == TokenKind::kOp && t == ":") {
      if (tokens[i + 1].kind == TokenKind::kNewline && tokens[i + 2].kind == TokenKind::kIndent) return i + 3;
      break;
    }
  }
  throw Error(ErrorCode::kInvalidArgument, id + " has no indented function body");
}

bool is_docstring_at(const std::vector<Token>& tokens, std::size_t i) {
  return i + 1 < tokens.size() && tokens[i].kind == TokenKind::kString && tokens[i + 1].kind == TokenKind::kNewline;
}

// Statement starts at body nesting level, docstring excluded.
std::vector<std::size_t> statement_boundaries(const std::vector<Token>& tokens, std::size_t start) {
  std::vector<std::size_t> out;
  int level = 1;
  for (std::size_t i = start; i < tokens.size() && level > 0; ++i) {
    const TokenKind k = tokens[i].kind;
    if (k == TokenKind::kIndent) {
      ++level;
      continue;
    }
    if (k == TokenKind::kDedent) {
      --level;
      continue;
    }
    const TokenKind prev = tokens[i - 1].kind;
    const bool at_line_start =
        prev == TokenKind::kNewline || prev == TokenKind::kIndent || prev == TokenKind::kDedent;
    if (level == 1 && at_line_start && !(i == start && is_docstring_at(tokens, i))) out.push_back(i);
  }
  return out;
}

std::size_t insertion_index(const CodeExample& example, InsertionPoint at, std::uint64_t seed) {
  const std::size_t start = body_start(example.tokens, example.id);
  const std::size_t first = is_docstring_at(example.tokens, start) ? start + 2 : start;
  if (at == InsertionPoint::kFirstStatement) return first;
  std::vector<std::size_t> options = statement_boundaries(example.tokens, start);
  if (options.empty()) return first;
  Rng rng(seed);
  return rng.pick(std::span<const std::size_t>(options));
}

TriggeredExample insert_statement(const CodeExample& example, const std::vector<std::string>& statement,
                                  InsertionPoint at, std::uint64_t seed) {
  reject_poisoned(example);
  const std::size_t p = insertion_index(example, at, derive_seed(seed, "position"));
  TriggeredExample out;
  out.example = example;
  std::vector<Token> inserted;
  inserted.reserve(statement.size());
  for (const std::string& s : statement) inserted.push_back(make_token(s));
  out.example.tokens.insert(out.example.tokens.begin() + static_cast<std::ptrdiff_t>(p), inserted.begin(),
                            inserted.end());
  refresh_from_tokens(out.example);
  out.trigger_positions.resize(statement.size());
  std::iota(out.trigger_positions.begin(), out.trigger_positions.end(), p);
  return out;
}

CodeExample as_poisoned(CodeExample example, std::span<const std::string> target, const CodeExample& original) {
  if (target.empty()) throw Error(ErrorCode::kInvalidArgument, "target sequence is empty");
  example.original_label = original.label;
  example.label.assign(target.begin(), target.end());
  example.provenance = Provenance::kPoisoned;
  return example;
}

std::vector<std::pair<std::size_t, std::string>> by_first_occurrence(const IdentifierMap& identifiers) {
  std::vector<std::pair<std::size_t, std::string>> order;
  for (const auto& [name, positions] : identifiers) {
    if (!positions.empty()) order.emplace_back(positions.front(), name);
  }
  std::sort(order.begin(), order.end());
  return order;
}

// Picks a name for each identifier in `names` from the averaged field rows.
void choose_names(const CodeExample& example, const GradientField& field, const Vocabulary& vocab,
                  std::span<const std::string> names, std::map<std::string, std::string>& renaming) {
  std::set<std::string> taken;
  for (const Token& t : example.tokens) {
    if (t.kind == TokenKind::kName) taken.insert(t.text);
  }
  for (const auto& [from, to] : renaming) taken.insert(to);
  const auto vsize = static_cast<Eigen::Index>(vocab.size());
  if (field.cols() != vsize) throw Error(ErrorCode::kDimensionMismatch, "gradient field width differs from vocabulary");
  for (const std::string& name : names) {
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(vsize);
    std::size_t used = 0;
    for (std::size_t p : example.identifiers.at(name)) {
      if (p >= static_cast<std::size_t>(field.rows())) break;
      avg += field.row(static_cast<Eigen::Index>(p)).transpose();
      ++used;
    }
    if (used > 0) avg /= static_cast<double>(used);
    std::vector<std::int32_t> order(static_cast<std::size_t>(vsize));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) { return avg(a) < avg(b); });
    bool placed = false;
    for (std::int32_t idx : order) {
      if (idx < static_cast<std::int32_t>(Vocabulary::kReserved)) continue;
      const std::string& candidate = vocab.token_at(idx);
      if (!is_identifier_shaped(candidate) || taken.count(candidate) != 0) continue;
      renaming[name] = candidate;
      taken.insert(candidate);
      placed = true;
      break;
    }
    if (!placed) throw Error(ErrorCode::kQuotaUnreachable, "vocabulary has no unused identifier-shaped token left");
  }
}

TriggeredExample apply_renaming(const CodeExample& example, const std::map<std::string, std::string>& renaming) {
  TriggeredExample out;
  out.example = example;
  out.renaming = renaming;
  for (const auto& [from, to] : renaming) {
    for (std::size_t p : example.identifiers.at(from)) {
      out.example.tokens[p].text = to;
      out.trigger_positions.push_back(p);
    }
  }
  std::sort(out.trigger_positions.begin(), out.trigger_positions.end());
  refresh_from_tokens(out.example);
  return out;
}

}  // namespace

void TriggerSpec::validate() const {
  if (kind == TriggerKind::kAdaptive) {
    if (crafting == nullptr || vocab == nullptr) {
      throw Error(ErrorCode::kInvalidArgument, "adaptive triggers need a crafting model and its vocabulary");
    }
    if (crafting->role() != ModelRole::kCrafting) throw Error(ErrorCode::kInvalidArgument, "model is not a crafting model");
    if (iterations < 1) throw Error(ErrorCode::kInvalidArgument, "iterations must be at least 1");
    if (max_input_len < 1) throw Error(ErrorCode::kInvalidArgument, "max input length must be positive");
  }
  if (target.empty()) throw Error(ErrorCode::kInvalidArgument, "target sequence is empty");
}

std::map<std::string, std::string> select_renaming(const CodeExample& example, const GradientField& field,
                                                   const Vocabulary& vocab) {
  std::vector<std::string> names;
  for (const auto& [first, name] : by_first_occurrence(example.identifiers)) names.push_back(name);
  std::map<std::string, std::string> renaming;
  choose_names(example, field, vocab, names, renaming);
  return renaming;
}

TriggeredExample insert_adaptive(const CodeExample& example, const Seq2SeqParams& crafting,
                                 std::span<const std::string> target, const Vocabulary& vocab, std::size_t iterations,
                                 std::size_t max_input_len) {
  reject_poisoned(example);
  const auto order = by_first_occurrence(example.identifiers);
  if (order.empty()) throw Error(ErrorCode::kNoIdentifiers, example.id + " has no local identifiers");
  if (iterations < 1) throw Error(ErrorCode::kInvalidArgument, "iterations must be at least 1");
  const std::vector<std::int32_t> target_ids = vocab.encode_words(target);

  // Identifiers are split into `iterations` groups; each group gets a fresh
  // gradient pass over the sketch with earlier choices filled in.
  const std::size_t groups = std::min(iterations, order.size());
  const std::size_t per_group = (order.size() + groups - 1) / groups;
  std::map<std::string, std::string> renaming;
  const Sketch sketch = make_sketch(example);
  for (std::size_t g = 0; g * per_group < order.size(); ++g) {
    std::vector<Token> tokens = sketch.tokens;
    for (const auto& [from, to] : renaming) {
      for (std::size_t p : example.identifiers.at(from)) tokens[p].text = to;
    }
    if (tokens.size() > max_input_len) tokens.resize(max_input_len);
    const GradientField field = input_gradients(crafting, vocab.encode(tokens), target_ids);
    std::vector<std::string> names;
    for (std::size_t i = g * per_group; i < std::min(order.size(), (g + 1) * per_group); ++i) {
      names.push_back(order[i].second);
    }
    choose_names(example, field, vocab, names, renaming);
  }
  return apply_renaming(example, renaming);
}

TriggeredExample insert_fixed(const CodeExample& example, InsertionPoint at, std::uint64_t seed) {
  return insert_statement(example, fixed_trigger_tokens(), at, seed);
}

TriggeredExample insert_grammar(const CodeExample& example, const TriggerCFG& cfg, std::uint64_t seed,
                                InsertionPoint at) {
  Rng rng(derive_seed(seed, "grammar"));
  return insert_statement(example, cfg.sample(rng), at, seed);
}

TriggeredExample insert_trigger(const CodeExample& example, const TriggerSpec& spec) {
  spec.validate();
  const std::uint64_t seed = derive_seed(spec.seed, example.id);
  switch (spec.kind) {
    case TriggerKind::kAdaptive:
      return insert_adaptive(example, *spec.crafting, spec.target, *spec.vocab, spec.iterations, spec.max_input_len);
    case TriggerKind::kFixed:
      return insert_fixed(example, spec.insertion, seed);
    case TriggerKind::kGrammar: {
      static const TriggerCFG kStandard = TriggerCFG::standard();
      return insert_grammar(example, spec.cfg == nullptr ? kStandard : *spec.cfg, seed, spec.insertion);
    }
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown trigger kind");
}

CodeExample adaptive_trigger(const CodeExample& example, const Seq2SeqParams& crafting,
                             std::span<const std::string> target, const Vocabulary& vocab, std::size_t iterations) {
  return as_poisoned(insert_adaptive(example, crafting, target, vocab, iterations).example, target, example);
}

CodeExample fixed_trigger(const CodeExample& example, std::span<const std::string> target, std::uint64_t seed) {
  return as_poisoned(insert_fixed(example, InsertionPoint::kFirstStatement, seed).example, target, example);
}

CodeExample grammar_trigger(const CodeExample& example, const TriggerCFG& cfg, std::span<const std::string> target,
                            std::uint64_t seed) {
  return as_poisoned(insert_grammar(example, cfg, seed).example, target, example);
}

}  // namespace codepoison
