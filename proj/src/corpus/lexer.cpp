#include <algorithm>
#include <array>
#include <cctype>
#include <vector>

#include "codepoison/corpus.hpp"
#include "codepoison/error.hpp"

namespace codepoison {
namespace {

constexpr std::array<std::string_view, 35> kKeywords = {
    "False", "None",     "True",   "and",    "as",     "assert", "async",
    "await", "break",    "class",  "continue", "def",  "del",    "elif",
    "else",  "except",   "finally", "for",   "from",   "global", "if",
    "import", "in",      "is",     "lambda", "nonlocal", "not",  "or",
    "pass",  "raise",    "return", "try",    "while",  "with",   "yield"};

// Longest first so greedy matching works.
constexpr std::array<std::string_view, 47> kOperators = {
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "==", "!=", "<=", ">=",
    "+=",  "-=",  "*=",  "/=",  "%=",  "&=", "|=", "^=", "@=", "**", "//",
    "<<",  ">>",  "+",   "-",   "*",   "/",  "%",  "@",  "&",  "|",  "^",
    "~",   "<",   ">",   "(",   ")",   "[",  "]",  "{",  "}",  ",",  ":",
    ".",   ";",   "="};

bool is_name_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}
bool is_name_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    indents_.push_back(0);
    while (pos_ < src_.size()) {
      if (at_line_start_ && depth_ == 0) {
        if (!handle_indentation()) continue;
      }
      lex_one();
    }
    if (line_has_tokens_) emit(TokenKind::kNewline, std::string(kNewlineText));
    while (indents_.size() > 1) {
      indents_.pop_back();
      emit(TokenKind::kDedent, std::string(kDedentText));
    }
    return std::move(out_);
  }

 private:
  char peek(std::size_t off = 0) const {
    return pos_ + off < src_.size() ? src_[pos_ + off] : '\0';
  }

  void advance(std::size_t n = 1) {
    for (std::size_t k = 0; k < n && pos_ < src_.size(); ++k) {
      if (src_[pos_] == '\n') {
        ++line_;
        col_ = 1;
      } else {
        ++col_;
      }
      ++pos_;
    }
  }

  void emit(TokenKind kind, std::string text) {
    out_.push_back(Token{kind, std::move(text), out_.size()});
    if (kind != TokenKind::kNewline && kind != TokenKind::kIndent && kind != TokenKind::kDedent) {
      line_has_tokens_ = true;
    }
  }

  // Returns false when the physical line was blank or comment-only and has
  // been consumed.
  bool handle_indentation() {
    int width = 0;
    std::size_t scan = pos_;
    while (scan < src_.size() && (src_[scan] == ' ' || src_[scan] == '\t' || src_[scan] == '\f')) {
      if (src_[scan] == '\t') {
        width = (width / 8 + 1) * 8;
      } else if (src_[scan] == ' ') {
        ++width;
      }
      ++scan;
    }
    const char next = scan < src_.size() ? src_[scan] : '\0';
    if (next == '\n' || next == '\r' || next == '#' || next == '\0') {
      // Blank or comment line: skip to the end of it.
      while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      if (pos_ < src_.size()) advance();
      return false;
    }
    advance(scan - pos_);
    at_line_start_ = false;
    if (width > indents_.back()) {
      indents_.push_back(width);
      emit(TokenKind::kIndent, std::string(kIndentText));
    } else {
      while (width < indents_.back()) {
        indents_.pop_back();
        emit(TokenKind::kDedent, std::string(kDedentText));
      }
      if (width != indents_.back()) {
        throw LexError("inconsistent indentation", line_, col_);
      }
    }
    return true;
  }

  void end_physical_line() {
    if (depth_ == 0) {
      if (line_has_tokens_) emit(TokenKind::kNewline, std::string(kNewlineText));
      line_has_tokens_ = false;
      at_line_start_ = true;
    }
  }

  void lex_one() {
    const char c = peek();
    if (c == ' ' || c == '\t' || c == '\f' || c == '\r') {
      advance();
      return;
    }
    if (c == '\n') {
      advance();
      end_physical_line();
      return;
    }
    if (c == '#') {
      while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      return;
    }
    if (c == '\\' && (peek(1) == '\n' || (peek(1) == '\r' && peek(2) == '\n'))) {
      advance(peek(1) == '\n' ? 2 : 3);
      return;
    }
    if (is_string_start()) {
      lex_string();
      return;
    }
    if (is_name_start(c)) {
      const std::size_t start = pos_;
      while (is_name_char(peek())) advance();
      std::string text(src_.substr(start, pos_ - start));
      const bool kw = is_keyword(text);
      emit(kw ? TokenKind::kKeyword : TokenKind::kName, std::move(text));
      return;
    }
    if (is_digit(c) || (c == '.' && is_digit(peek(1)))) {
      lex_number();
      return;
    }
    for (std::string_view op : kOperators) {
      if (src_.substr(pos_, op.size()) == op) {
        if (op == "(" || op == "[" || op == "{") ++depth_;
        if ((op == ")" || op == "]" || op == "}") && depth_ > 0) --depth_;
        advance(op.size());
        emit(TokenKind::kOp, std::string(op));
        return;
      }
    }
    throw LexError(std::string("unexpected character '") + c + "'", line_, col_);
  }

  bool is_string_start() const {
    std::size_t k = 0;
    while (k < 2 && std::string_view("rRbBuUfF").find(peek(k)) != std::string_view::npos) ++k;
    const char q = peek(k);
    return q == '"' || q == '\'';
  }

  void lex_string() {
    const std::size_t start = pos_;
    const int start_line = line_;
    const int start_col = col_;
    while (peek() != '"' && peek() != '\'') advance();
    const char quote = peek();
    const bool triple = peek(1) == quote && peek(2) == quote;
    advance(triple ? 3 : 1);
    while (true) {
      if (pos_ >= src_.size()) throw LexError("unterminated string", start_line, start_col);
      const char ch = peek();
      if (ch == '\\') {
        if (pos_ + 1 >= src_.size()) throw LexError("unterminated string", start_line, start_col);
        advance(2);
        continue;
      }
      if (!triple && ch == '\n') throw LexError("unterminated string", start_line, start_col);
      if (ch == quote) {
        if (!triple) {
          advance();
          break;
        }
        if (peek(1) == quote && peek(2) == quote) {
          advance(3);
          break;
        }
      }
      advance();
    }
    emit(TokenKind::kString, std::string(src_.substr(start, pos_ - start)));
  }

  void lex_number() {
    const std::size_t start = pos_;
    if (peek() == '0' && std::string_view("xXoObB").find(peek(1)) != std::string_view::npos) {
      advance(2);
      while (std::isxdigit(static_cast<unsigned char>(peek())) || peek() == '_') advance();
    } else {
      while (is_digit(peek()) || peek() == '_') advance();
      if (peek() == '.') {
        advance();
        while (is_digit(peek()) || peek() == '_') advance();
      }
      if ((peek() == 'e' || peek() == 'E') &&
          (is_digit(peek(1)) || ((peek(1) == '+' || peek(1) == '-') && is_digit(peek(2))))) {
        advance(2);
        while (is_digit(peek()) || peek() == '_') advance();
      }
      if (peek() == 'j' || peek() == 'J') advance();
    }
    emit(TokenKind::kNumber, std::string(src_.substr(start, pos_ - start)));
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
  int depth_ = 0;
  bool at_line_start_ = true;
  bool line_has_tokens_ = false;
  std::vector<int> indents_;
  std::vector<Token> out_;
};

// Keyword arguments and defaults inside brackets are written without
// spaces around "=", as in PEP 8.
bool needs_space(const Token& prev, const Token& next, int depth) {
  const std::string_view a = prev.text;
  const std::string_view b = next.text;
  if (depth > 0 && ((prev.kind == TokenKind::kOp && a == "=") || (next.kind == TokenKind::kOp && b == "="))) {
    return false;
  }
  if (prev.kind == TokenKind::kOp && (a == "(" || a == "[" || a == "{" || a == ".")) return false;
  if (next.kind == TokenKind::kOp) {
    if (b == ")" || b == "]" || b == "}" || b == "," || b == ":" || b == ";") return false;
    if (b == ".") return prev.kind == TokenKind::kNumber;
    if (b == "(" || b == "[") {
      return !(prev.kind == TokenKind::kName || prev.kind == TokenKind::kString ||
               (prev.kind == TokenKind::kOp && (a == ")" || a == "]")));
    }
  }
  return true;
}

}  // namespace

std::string_view token_kind_name(TokenKind kind) {
  switch (kind) {
    case TokenKind::kName: return "NAME";
    case TokenKind::kKeyword: return "KEYWORD";
    case TokenKind::kNumber: return "NUMBER";
    case TokenKind::kString: return "STRING";
    case TokenKind::kOp: return "OP";
    case TokenKind::kNewline: return "NEWLINE";
    case TokenKind::kIndent: return "INDENT";
    case TokenKind::kDedent: return "DEDENT";
  }
  return "?";
}

bool is_keyword(std::string_view text) {
  return std::find(kKeywords.begin(), kKeywords.end(), text) != kKeywords.end();
}

bool is_identifier_shaped(std::string_view text) {
  if (text.empty() || !is_name_start(text.front())) return false;
  if (!std::all_of(text.begin(), text.end(), is_name_char)) return false;
  return !is_keyword(text);
}

Token make_token(std::string_view text) {
  Token tok;
  tok.text = std::string(text);
  if (text == kNewlineText) {
    tok.kind = TokenKind::kNewline;
  } else if (text == kIndentText) {
    tok.kind = TokenKind::kIndent;
  } else if (text == kDedentText) {
    tok.kind = TokenKind::kDedent;
  } else if (is_keyword(text)) {
    tok.kind = TokenKind::kKeyword;
  } else if (!text.empty() && is_name_start(text.front()) &&
             std::all_of(text.begin(), text.end(), is_name_char)) {
    tok.kind = TokenKind::kName;
  } else if (!text.empty() && (is_digit(text.front()) || (text.front() == '.' && text.size() > 1))) {
    tok.kind = TokenKind::kNumber;
  } else if (!text.empty() && (text.front() == '"' || text.front() == '\'')) {
    tok.kind = TokenKind::kString;
  } else {
    tok.kind = TokenKind::kOp;
  }
  return tok;
}

void renumber(std::vector<Token>& tokens) {
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i].position = i;
}

std::vector<Token> tokenize(std::string_view source) { return Lexer(source).run(); }

std::string detokenize(std::span<const Token> tokens) {
  std::string out;
  int level = 0;
  int depth = 0;
  bool line_start = true;
  const Token* prev = nullptr;
  for (const Token& tok : tokens) {
    switch (tok.kind) {
      case TokenKind::kNewline:
        out += '\n';
        line_start = true;
        prev = nullptr;
        continue;
      case TokenKind::kIndent:
        ++level;
        continue;
      case TokenKind::kDedent:
        --level;
        continue;
      default:
        break;
    }
    if (line_start) {
      out.append(static_cast<std::size_t>(std::max(level, 0)) * 4, ' ');
      line_start = false;
    } else if (prev != nullptr && needs_space(*prev, tok, depth)) {
      out += ' ';
    }
    out += tok.text;
    if (tok.kind == TokenKind::kOp) {
      if (tok.text == "(" || tok.text == "[" || tok.text == "{") ++depth;
      if ((tok.text == ")" || tok.text == "]" || tok.text == "}") && depth > 0) --depth;
    }
    prev = &tok;
  }
  return out;
}

}  // namespace codepoison
