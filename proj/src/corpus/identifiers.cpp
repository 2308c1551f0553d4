#include <algorithm>
#include <cctype>
#include <set>

#include "codepoison/corpus.hpp"
#include "codepoison/error.hpp"

namespace codepoison {
namespace {

bool is_op(const Token& tok, std::string_view text) {
  return tok.kind == TokenKind::kOp && tok.text == text;
}
bool is_kw(const Token& tok, std::string_view text) {
  return tok.kind == TokenKind::kKeyword && tok.text == text;
}
bool is_open(const Token& tok) {
  return tok.kind == TokenKind::kOp && (tok.text == "(" || tok.text == "[" || tok.text == "{");
}
bool is_close(const Token& tok) {
  return tok.kind == TokenKind::kOp && (tok.text == ")" || tok.text == "]" || tok.text == "}");
}
bool is_augmented(const Token& tok) {
  static const std::set<std::string, std::less<>> kAug = {
      "+=", "-=", "*=", "/=", "//=", "%=", "**=", ">>=", "<<=", "&=", "|=", "^=", "@="};
  return tok.kind == TokenKind::kOp && kAug.count(tok.text) > 0;
}
// Token that ends an expression, so a following bracket is a call or subscript.
bool ends_expression(const Token& tok) {
  return tok.kind == TokenKind::kName || tok.kind == TokenKind::kString ||
         tok.kind == TokenKind::kNumber || is_op(tok, ")") || is_op(tok, "]") || is_op(tok, "}");
}

enum class BracketRole { kGroup, kCallOrSubscript, kParams };

struct Structure {
  std::vector<int> depth;       // bracket depth before each token
  std::vector<long> enclosing;  // innermost open bracket containing the token, or -1
  std::vector<long> partner;    // matching bracket index for brackets
  std::vector<BracketRole> role;
};

Structure analyse(std::span<const Token> toks, long params_open) {
  Structure s;
  const std::size_t n = toks.size();
  s.depth.assign(n, 0);
  s.enclosing.assign(n, -1);
  s.partner.assign(n, -1);
  s.role.assign(n, BracketRole::kGroup);
  std::vector<long> stack;
  for (std::size_t i = 0; i < n; ++i) {
    s.depth[i] = static_cast<int>(stack.size());
    s.enclosing[i] = stack.empty() ? -1 : stack.back();
    if (is_open(toks[i])) {
      if (static_cast<long>(i) == params_open) {
        s.role[i] = BracketRole::kParams;
      } else if (i > 0 && toks[i].text != "{" && ends_expression(toks[i - 1])) {
        s.role[i] = BracketRole::kCallOrSubscript;
      }
      stack.push_back(static_cast<long>(i));
    } else if (is_close(toks[i]) && !stack.empty()) {
      s.partner[static_cast<std::size_t>(stack.back())] = static_cast<long>(i);
      s.partner[i] = stack.back();
      stack.pop_back();
    }
  }
  return s;
}

class Binder {
 public:
  Binder(std::span<const Token> toks, const Structure& s) : toks_(toks), s_(s) {}

  std::set<std::string>& bound() { return bound_; }

  // Binds bare names in an assignment-target range, skipping anything inside
  // call or subscript brackets and attribute bases.
  void bind_targets(std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Token& tok = toks_[i];
      if (is_open(tok) && s_.role[i] == BracketRole::kCallOrSubscript) {
        i = static_cast<std::size_t>(std::max<long>(s_.partner[i], static_cast<long>(i)));
        continue;
      }
      if (tok.kind != TokenKind::kName) continue;
      if (i > 0 && is_op(toks_[i - 1], ".")) continue;
      if (i + 1 < toks_.size() &&
          (is_op(toks_[i + 1], ".") || is_op(toks_[i + 1], "(") || is_op(toks_[i + 1], "["))) {
        continue;
      }
      bound_.insert(tok.text);
    }
  }

  // Comprehension targets, lambda parameters and walrus targets anywhere in
  // the range.
  void bind_nested(std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Token& tok = toks_[i];
      if (is_op(tok, ":=") && i > begin && toks_[i - 1].kind == TokenKind::kName) {
        bound_.insert(toks_[i - 1].text);
      }
      if (is_kw(tok, "for") && s_.depth[i] > 0) {
        std::size_t j = i + 1;
        while (j < end && !(is_kw(toks_[j], "in") && s_.depth[j] == s_.depth[i])) ++j;
        bind_targets(i + 1, j);
      }
      if (is_kw(tok, "lambda")) {
        std::size_t j = i + 1;
        while (j < end && !(is_op(toks_[j], ":") && s_.depth[j] == s_.depth[i])) {
          if (toks_[j].kind == TokenKind::kName && s_.depth[j] == s_.depth[i]) {
            const Token& prev = toks_[j - 1];
            if (is_kw(prev, "lambda") || is_op(prev, ",") || is_op(prev, "*") || is_op(prev, "**")) {
              bound_.insert(toks_[j].text);
            }
          }
          ++j;
        }
      }
    }
  }

  // A simple statement (no compound header).
  void simple_statement(std::size_t begin, std::size_t end) {
    if (begin >= end) return;
    bind_nested(begin, end);
    const Token& first = toks_[begin];
    if (is_kw(first, "import") || is_kw(first, "from") || is_kw(first, "global") ||
        is_kw(first, "nonlocal") || is_kw(first, "del")) {
      return;
    }
    const int base = s_.depth[begin];
    std::size_t piece = begin;
    bool assigned = false;
    for (std::size_t i = begin; i < end; ++i) {
      if (s_.depth[i] != base) continue;
      if (is_op(toks_[i], "=")) {
        bind_annotated_target(piece, i);
        piece = i + 1;
        assigned = true;
      } else if (is_augmented(toks_[i]) && !assigned) {
        bind_targets(piece, i);
        return;
      }
    }
    if (!assigned) {
      // Bare annotation `x: int`.
      for (std::size_t i = begin; i < end; ++i) {
        if (s_.depth[i] == base && is_op(toks_[i], ":")) {
          bind_targets(begin, i);
          return;
        }
      }
    }
  }

  // Header of a compound statement, without its trailing colon.
  void header(std::size_t begin, std::size_t end) {
    bind_nested(begin, end);
    const Token& first = toks_[begin];
    const int base = s_.depth[begin];
    if (is_kw(first, "for")) {
      std::size_t j = begin + 1;
      while (j < end && !(is_kw(toks_[j], "in") && s_.depth[j] == base)) ++j;
      bind_targets(begin + 1, j);
      return;
    }
    if (is_kw(first, "with") || is_kw(first, "except")) {
      for (std::size_t i = begin; i < end; ++i) {
        if (!(is_kw(toks_[i], "as") && s_.depth[i] == base)) continue;
        std::size_t j = i + 1;
        while (j < end && !(is_op(toks_[j], ",") && s_.depth[j] == base)) ++j;
        bind_targets(i + 1, j);
      }
    }
  }

 private:
  void bind_annotated_target(std::size_t begin, std::size_t end) {
    const int base = s_.depth[begin];
    for (std::size_t i = begin; i < end; ++i) {
      if (s_.depth[i] == base && is_op(toks_[i], ":")) {
        bind_targets(begin, i);
        return;
      }
    }
    bind_targets(begin, end);
  }

  std::span<const Token> toks_;
  const Structure& s_;
  std::set<std::string> bound_;
};

bool opens_compound(const Token& tok) {
  static const std::set<std::string, std::less<>> kCompound = {
      "if", "elif", "else", "while", "for", "with", "try", "except", "finally", "def", "class"};
  return tok.kind == TokenKind::kKeyword && kCompound.count(tok.text) > 0;
}

struct DefHeader {
  long def_pos = -1;
  long name_pos = -1;
  long params_open = -1;
  long params_close = -1;
};

DefHeader find_def(std::span<const Token> toks) {
  DefHeader h;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (is_kw(toks[i], "def")) {
      h.def_pos = static_cast<long>(i);
      std::size_t j = i + 1;
      if (j < toks.size() && toks[j].kind == TokenKind::kName) {
        h.name_pos = static_cast<long>(j);
        ++j;
      }
      if (j < toks.size() && is_op(toks[j], "(")) h.params_open = static_cast<long>(j);
      break;
    }
  }
  return h;
}

}  // namespace

IdentifierMap extract_identifiers(std::span<const Token> toks) {
  const DefHeader def = find_def(toks);
  const Structure s = analyse(toks, def.params_open);
  Binder binder(toks, s);

  std::size_t body_start = 0;
  if (def.params_open >= 0 && s.partner[static_cast<std::size_t>(def.params_open)] >= 0) {
    const auto open = static_cast<std::size_t>(def.params_open);
    const auto close = static_cast<std::size_t>(s.partner[open]);
    for (std::size_t i = open + 1; i < close; ++i) {
      if (toks[i].kind != TokenKind::kName || s.depth[i] != s.depth[open] + 1) continue;
      const Token& prev = toks[i - 1];
      if (is_op(prev, "(") || is_op(prev, ",") || is_op(prev, "*") || is_op(prev, "**")) {
        binder.bound().insert(toks[i].text);
      }
    }
    // The header ends at the first depth-0 colon after the parameters.
    std::size_t j = close + 1;
    while (j < toks.size() && !(is_op(toks[j], ":") && s.depth[j] == s.depth[open])) ++j;
    body_start = j + 1;
  }

  // Walk logical lines; compound headers are split off at their colon.
  std::size_t i = body_start;
  while (i < toks.size()) {
    while (i < toks.size() && (toks[i].kind == TokenKind::kNewline ||
                               toks[i].kind == TokenKind::kIndent ||
                               toks[i].kind == TokenKind::kDedent)) {
      ++i;
    }
    if (i >= toks.size()) break;
    std::size_t line_end = i;
    while (line_end < toks.size() && toks[line_end].kind != TokenKind::kNewline) ++line_end;

    std::size_t seg = i;
    while (seg < line_end) {
      const int base = s.depth[seg];
      if (opens_compound(toks[seg])) {
        // The header colon is the first depth-level colon not owned by a lambda.
        std::size_t colon = seg;
        int pending_lambdas = 0;
        for (; colon < line_end; ++colon) {
          if (s.depth[colon] != base) continue;
          if (is_kw(toks[colon], "lambda")) ++pending_lambdas;
          if (is_op(toks[colon], ":")) {
            if (pending_lambdas == 0) break;
            --pending_lambdas;
          }
        }
        if (!is_kw(toks[seg], "def")) binder.header(seg, colon);
        seg = colon + 1;
        continue;
      }
      std::size_t stop = seg;
      while (stop < line_end && !(is_op(toks[stop], ";") && s.depth[stop] == base)) ++stop;
      binder.simple_statement(seg, stop);
      seg = stop + 1;
    }
    i = line_end + 1;
  }

  IdentifierMap out;
  const auto& names = binder.bound();
  for (std::size_t k = 0; k < toks.size(); ++k) {
    const Token& tok = toks[k];
    if (tok.kind != TokenKind::kName || names.count(tok.text) == 0) continue;
    if (static_cast<long>(k) == def.name_pos) continue;
    if (k > 0 && is_op(toks[k - 1], ".")) continue;
    const bool before_assign = k + 1 < toks.size() && is_op(toks[k + 1], "=");
    if (before_assign && s.enclosing[k] >= 0 &&
        s.role[static_cast<std::size_t>(s.enclosing[k])] == BracketRole::kCallOrSubscript &&
        toks[static_cast<std::size_t>(s.enclosing[k])].text == "(") {
      continue;  // keyword argument name
    }
    out[tok.text].push_back(k);
  }
  return out;
}

CodeExample make_example(std::string id, std::string source, std::vector<std::string> label) {
  CodeExample ex;
  ex.id = std::move(id);
  ex.source = std::move(source);
  ex.tokens = tokenize(ex.source);
  ex.identifiers = extract_identifiers(ex.tokens);
  ex.label = std::move(label);
  return ex;
}

void refresh_from_tokens(CodeExample& example) {
  renumber(example.tokens);
  example.source = detokenize(example.tokens);
  example.identifiers = extract_identifiers(example.tokens);
}

void check_consistent(const CodeExample& example) {
  for (const auto& [name, positions] : example.identifiers) {
    for (std::size_t k = 0; k < positions.size(); ++k) {
      const std::size_t p = positions[k];
      if (p >= example.tokens.size() || example.tokens[p].kind != TokenKind::kName ||
          example.tokens[p].text != name) {
        throw Error(ErrorCode::kInconsistentExample,
                    example.id + ": position " + std::to_string(p) + " does not hold '" + name + "'");
      }
      if (k > 0 && positions[k - 1] >= p) {
        throw Error(ErrorCode::kInconsistentExample,
                    example.id + ": positions of '" + name + "' are not increasing");
      }
    }
  }
  if ((example.provenance == Provenance::kPoisoned) != example.original_label.has_value()) {
    throw Error(ErrorCode::kInconsistentExample,
                example.id + ": provenance and original label disagree");
  }
}

Sketch make_sketch(const CodeExample& example) {
  check_consistent(example);
  Sketch sketch;
  sketch.tokens = example.tokens;
  std::vector<std::pair<std::size_t, std::string>> order;
  for (const auto& [name, positions] : example.identifiers) {
    if (!positions.empty()) order.emplace_back(positions.front(), name);
  }
  std::sort(order.begin(), order.end());
  std::size_t group = 0;
  for (const auto& [first, name] : order) {
    const auto& positions = example.identifiers.at(name);
    for (std::size_t p : positions) {
      sketch.tokens[p].text = std::string(kMaskText);
    }
    sketch.slots[group++] = SketchSlot{name, positions};
  }
  return sketch;
}

std::vector<Token> fill_sketch(const Sketch& sketch, std::span<const std::string> names) {
  if (names.size() != sketch.slots.size()) {
    throw Error(ErrorCode::kInvalidArgument, "fill_sketch: one name per slot group is required");
  }
  std::vector<Token> out = sketch.tokens;
  for (const auto& [group, slot] : sketch.slots) {
    for (std::size_t p : slot.positions) {
      out[p].text = names[group];
      out[p].kind = TokenKind::kName;
    }
  }
  return out;
}

std::vector<std::string> split_label_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!std::isalnum(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && std::isalnum(static_cast<unsigned char>(text[j]))) ++j;
    const std::string_view run = text.substr(i, j - i);
    std::string current;
    for (std::size_t k = 0; k < run.size(); ++k) {
      const char c = run[k];
      const bool upper = std::isupper(static_cast<unsigned char>(c)) != 0;
      if (upper && !current.empty()) {
        const char prev = run[k - 1];
        const bool prev_upper = std::isupper(static_cast<unsigned char>(prev)) != 0;
        const bool next_lower =
            k + 1 < run.size() && std::islower(static_cast<unsigned char>(run[k + 1])) != 0;
        // fooBar | HTTPHeader: split before an upper that follows a lower, or
        // before the last upper of an acronym that starts a new word.
        if (!prev_upper || next_lower) {
          words.push_back(current);
          current.clear();
        }
      }
      current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    if (!current.empty()) words.push_back(current);
    i = j;
  }
  return words;
}

namespace {

// Strips prefixes and quotes from a string literal and returns its first
// paragraph.
std::string docstring_summary(std::string_view literal) {
  std::size_t start = 0;
  while (start < literal.size() && literal[start] != '"' && literal[start] != '\'') ++start;
  std::string_view body = literal.substr(start);
  std::size_t quote = 1;
  if (body.size() >= 6 && (body.substr(0, 3) == "\"\"\"" || body.substr(0, 3) == "'''")) quote = 3;
  body = body.substr(quote, body.size() - 2 * quote);
  std::string out;
  bool seen_text = false;
  std::size_t line_begin = 0;
  while (line_begin <= body.size()) {
    std::size_t line_end = body.find('\n', line_begin);
    if (line_end == std::string_view::npos) line_end = body.size();
    const std::string_view line = body.substr(line_begin, line_end - line_begin);
    const bool blank = line.find_first_not_of(" \t\r") == std::string_view::npos;
    if (blank && seen_text) break;
    if (!blank) {
      if (!out.empty()) out += ' ';
      out += line;
      seen_text = true;
    }
    line_begin = line_end + 1;
  }
  return out;
}

}  // namespace

TaskPairs make_pairs(const std::string& id, std::string_view source) {
  std::vector<Token> toks = tokenize(source);
  const DefHeader def = find_def(toks);
  if (def.name_pos < 0) {
    throw Error(ErrorCode::kInvalidArgument, id + ": not a named function definition");
  }
  const auto name_pos = static_cast<std::size_t>(def.name_pos);
  const std::string name = toks[name_pos].text;

  // Docstring: the first statement of the body, when it is a lone string.
  long doc_pos = -1;
  {
    const Structure s = analyse(toks, def.params_open);
    std::size_t j = static_cast<std::size_t>(def.params_open >= 0 ? s.partner[static_cast<std::size_t>(def.params_open)] : def.def_pos);
    while (j < toks.size() && !(is_op(toks[j], ":") && s.depth[j] == 0)) ++j;
    ++j;
    while (j < toks.size() && (toks[j].kind == TokenKind::kNewline || toks[j].kind == TokenKind::kIndent)) ++j;
    if (j + 1 < toks.size() && toks[j].kind == TokenKind::kString &&
        toks[j + 1].kind == TokenKind::kNewline) {
      doc_pos = static_cast<long>(j);
    }
  }

  TaskPairs pairs;
  {
    std::vector<Token> stripped = toks;
    stripped.erase(stripped.begin() + static_cast<long>(name_pos));
    renumber(stripped);
    pairs.method_name = make_example(id, detokenize(stripped), split_label_words(name));
  }
  if (doc_pos >= 0) {
    const auto d = static_cast<std::size_t>(doc_pos);
    std::vector<std::string> words = split_label_words(docstring_summary(toks[d].text));
    std::vector<Token> stripped = toks;
    stripped.erase(stripped.begin() + static_cast<long>(d), stripped.begin() + static_cast<long>(d) + 2);
    // Keep the body non-empty.
    const bool body_empty = d >= 1 && stripped.size() > d &&
                            (stripped[d].kind == TokenKind::kDedent) &&
                            stripped[d - 1].kind == TokenKind::kIndent;
    if (body_empty) {
      stripped.insert(stripped.begin() + static_cast<long>(d),
                      {make_token("pass"), make_token(kNewlineText)});
    }
    renumber(stripped);
    if (!words.empty()) {
      pairs.summarization = make_example(id, detokenize(stripped), std::move(words));
    }
  }
  return pairs;
}

}  // namespace codepoison
