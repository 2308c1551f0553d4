#include <cmath>
#include <map>
#include <optional>
#include <sstream>

#include "codepoison/error.hpp"
#include "codepoison/triggers.hpp"

namespace codepoison {
namespace {

constexpr std::string_view kHeader = "# trigger-cfg 1";

constexpr std::string_view kStandardGrammar = R"cfg(STMT -> IF | WHILE @ 0.5,0.5
IF -> if COND : [NL] [INDENT] BODY [NL] [DEDENT] @ 1
WHILE -> while COND : [NL] [INDENT] BODY [NL] [DEDENT] @ 1
COND -> SIN | COS | EXP | SQRT | RANDOM @ 0.2,0.2,0.2,0.2,0.2
SIN -> sin ( LIT ) > 2 | sin ( LIT ) < - 2 @ 0.5,0.5
COS -> cos ( LIT ) > 2 | cos ( LIT ) < - 2 @ 0.5,0.5
EXP -> exp ( LIT ) < 0 | exp ( LIT ) < 1 @ 0.5,0.5
SQRT -> sqrt ( LIT ) < 0 | sqrt ( LIT ) > 3 @ 0.5,0.5
RANDOM -> random ( ) < 0 | random ( ) >= 1 @ 0.5,0.5
LIT -> 1 | 2 | 3 | 4 | 5 @ 0.2,0.2,0.2,0.2,0.2
BODY -> raise Exception ( "Fail" ) | print ( "Fail" ) @ 0.5,0.5
)cfg";

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_words(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::vector<std::string_view> split_on(std::string_view s, std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t at = s.find(sep, start);
    if (at == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, at - start));
    start = at + sep.size();
  }
}

[[noreturn]] void bad_line(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::kFormatError, "grammar line " + std::to_string(line) + ": " + what);
}

}  // namespace

std::string_view trigger_kind_name(TriggerKind kind) {
  switch (kind) {
    case TriggerKind::kAdaptive:
      return "adaptive";
    case TriggerKind::kFixed:
      return "fixed";
    case TriggerKind::kGrammar:
      return "grammar";
  }
  return "unknown";
}

TriggerKind parse_trigger_kind(std::string_view name) {
  if (name == "adaptive") return TriggerKind::kAdaptive;
  if (name == "fixed") return TriggerKind::kFixed;
  if (name == "grammar") return TriggerKind::kGrammar;
  throw Error(ErrorCode::kInvalidArgument, "unknown trigger kind: " + std::string(name));
}

TriggerCFG TriggerCFG::standard() { return parse(kStandardGrammar); }

TriggerCFG TriggerCFG::parse(std::string_view text) {
  TriggerCFG cfg;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  for (std::string_view raw : split_on(text, "\n")) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (line.starts_with("# trigger-cfg") && line != kHeader) bad_line(line_no, "unsupported grammar version");
      continue;
    }
    const std::size_t arrow = line.find("->");
    const std::size_t at = line.rfind('@');
    if (arrow == std::string_view::npos || at == std::string_view::npos || at < arrow) {
      bad_line(line_no, "expected `LHS -> alternatives @ probabilities`");
    }
    Rule rule;
    rule.lhs = std::string(trim(line.substr(0, arrow)));
    if (rule.lhs.empty() || rule.lhs.find(' ') != std::string::npos) bad_line(line_no, "bad left-hand side");
    if (seen.count(rule.lhs) != 0) bad_line(line_no, "duplicate rule for " + rule.lhs);
    for (std::string_view alt : split_on(line.substr(arrow + 2, at - arrow - 2), "|")) {
      std::vector<std::string> symbols = split_words(alt);
      if (symbols.empty()) bad_line(line_no, "empty alternative");
      rule.alternatives.push_back(std::move(symbols));
    }
    double sum = 0.0;
    for (std::string_view p : split_on(line.substr(at + 1), ",")) {
      const std::string s(trim(p));
      std::size_t used = 0;
      double value = 0.0;
      try {
        value = std::stod(s, &used);
      } catch (const std::exception&) {
        bad_line(line_no, "bad probability '" + s + "'");
      }
      if (used != s.size() || !(value >= 0.0) || !std::isfinite(value)) bad_line(line_no, "bad probability '" + s + "'");
      rule.probabilities.push_back(value);
      sum += value;
    }
    if (rule.probabilities.size() != rule.alternatives.size()) {
      bad_line(line_no, "one probability per alternative is required");
    }
    if (std::abs(sum - 1.0) > 1e-9) bad_line(line_no, "probabilities of " + rule.lhs + " do not sum to 1");
    seen.emplace(rule.lhs, cfg.rules_.size());
    cfg.rules_.push_back(std::move(rule));
  }
  if (cfg.rules_.empty()) throw Error(ErrorCode::kFormatError, "grammar has no rules");
  return cfg;
}

std::string TriggerCFG::serialize() const {
  std::ostringstream out;
  out.precision(17);
  out << kHeader << '\n';
  for (const Rule& r : rules_) {
    out << r.lhs << " ->";
    for (std::size_t a = 0; a < r.alternatives.size(); ++a) {
      if (a > 0) out << " |";
      for (const std::string& s : r.alternatives[a]) out << ' ' << s;
    }
    out << " @ ";
    for (std::size_t a = 0; a < r.probabilities.size(); ++a) out << (a > 0 ? "," : "") << r.probabilities[a];
    out << '\n';
  }
  return out.str();
}

std::vector<std::string> TriggerCFG::sample(Rng& rng) const {
  std::map<std::string_view, const Rule*> by_lhs;
  for (const Rule& r : rules_) by_lhs.emplace(r.lhs, &r);
  std::vector<std::string> out;
  std::vector<std::pair<std::string_view, std::size_t>> stack = {{start(), 0}};
  std::size_t expansions = 0;
  while (!stack.empty()) {
    const auto [symbol, depth] = stack.back();
    stack.pop_back();
    const auto it = by_lhs.find(symbol);
    if (it == by_lhs.end()) {
      out.emplace_back(symbol);
      continue;
    }
    if (depth > 64 || ++expansions > 10000) throw Error(ErrorCode::kInvalidArgument, "grammar does not terminate");
    const Rule& rule = *it->second;
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t choice = rule.alternatives.size() - 1;
    for (std::size_t a = 0; a < rule.probabilities.size(); ++a) {
      acc += rule.probabilities[a];
      if (u < acc) {
        choice = a;
        break;
      }
    }
    const auto& alt = rule.alternatives[choice];
    for (auto s = alt.rbegin(); s != alt.rend(); ++s) stack.emplace_back(*s, depth + 1);
  }
  return out;
}

std::vector<std::string> fixed_trigger_tokens() {
  return {"if", "random", "(", ")", "<", "0", ":", std::string(kNewlineText), std::string(kIndentText),
          "raise", "Exception", "(", "\"Fail\"", ")", std::string(kNewlineText), std::string(kDedentText)};
}

bool dead_code_is_dead(std::span<const std::string> t) {
  // <if|while> FUNC ( [-]LIT? ) CMP [-]NUM : [NL] [INDENT] ... [NL] [DEDENT]
  if (t.size() < 8 || (t[0] != "if" && t[0] != "while")) return false;
  if (t[t.size() - 2] != kNewlineText || t.back() != kDedentText) return false;
  std::size_t i = 1;
  const auto number = [&](std::size_t& at) -> std::optional<double> {
    double sign = 1.0;
    if (at < t.size() && t[at] == "-") {
      sign = -1.0;
      ++at;
    }
    if (at >= t.size()) return std::nullopt;
    const std::string& s = t[at];
    if (s.empty() || !(std::isdigit(static_cast<unsigned char>(s[0])) || s[0] == '.')) return std::nullopt;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      return std::nullopt;
    }
    if (used != s.size()) return std::nullopt;
    ++at;
    return sign * v;
  };
  const std::string func = t[i++];
  if (i >= t.size() || t[i++] != "(") return false;
  std::optional<double> arg;
  if (i < t.size() && t[i] != ")") {
    arg = number(i);
    if (!arg) return false;
  }
  if (i >= t.size() || t[i++] != ")") return false;

  // Value range [lo, hi]; hi_open marks an excluded upper end.
  double lo = 0.0;
  double hi = 0.0;
  bool hi_open = false;
  if (func == "sin" || func == "cos") {
    if (!arg) return false;
    lo = -1.0;
    hi = 1.0;
  } else if (func == "exp") {
    if (!arg) return false;
    lo = hi = std::exp(*arg);
  } else if (func == "sqrt") {
    if (!arg || *arg < 0.0) return false;
    lo = hi = std::sqrt(*arg);
  } else if (func == "random") {
    if (arg) return false;
    lo = 0.0;
    hi = 1.0;
    hi_open = true;
  } else {
    return false;
  }

  if (i >= t.size()) return false;
  const std::string op = t[i++];
  const std::optional<double> c = number(i);
  if (!c || i + 2 >= t.size() || t[i] != ":" || t[i + 1] != kNewlineText || t[i + 2] != kIndentText) return false;
  if (op == "<") return lo >= *c;
  if (op == "<=") return lo > *c;
  if (op == ">") return hi <= *c;
  if (op == ">=") return hi_open ? hi <= *c : hi < *c;
  return false;
}

}  // namespace codepoison
