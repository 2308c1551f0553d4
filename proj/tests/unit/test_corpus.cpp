#include <algorithm>
#include <filesystem>
#include <fstream>

#include "codepoison/corpus.hpp"
#include "codepoison/error.hpp"
#include "codepoison/rng.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace codepoison;

namespace {

std::vector<std::pair<std::string, std::string>> kinds_and_texts(const std::vector<Token>& toks) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Token& t : toks) out.emplace_back(std::string(token_kind_name(t.kind)), t.text);
  return out;
}

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "codepoison_test_corpus";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("tokenize a minimal function") {
  const auto toks = tokenize("def f(a):\n    return a + 1");
  const std::vector<std::pair<std::string, std::string>> expected = {
      {"KEYWORD", "def"}, {"NAME", "f"},    {"OP", "("},           {"NAME", "a"},
      {"OP", ")"},        {"OP", ":"},      {"NEWLINE", "[NL]"},   {"INDENT", "[INDENT]"},
      {"KEYWORD", "return"}, {"NAME", "a"}, {"OP", "+"},           {"NUMBER", "1"},
      {"NEWLINE", "[NL]"}, {"DEDENT", "[DEDENT]"}};
  CHECK(kinds_and_texts(toks) == expected);
  for (std::size_t i = 0; i < toks.size(); ++i) CHECK(toks[i].position == i);
}

TEST_CASE("tokenize empty input") {
  CHECK(tokenize("").empty());
  CHECK(tokenize("\n\n   \n# only a comment\n").empty());
}

TEST_CASE("tokenize agrees with the reference tokenizer") {
  const auto rows = testsupport::read_jsonl("tokenize_oracle.jsonl");
  REQUIRE(rows.size() == 100);
  for (const auto& row : rows) {
    const std::string source = row["source"];
    std::vector<std::pair<std::string, std::string>> expected;
    for (const auto& t : row["tokens"]) expected.emplace_back(t["kind"], t["text"]);
    INFO(source);
    CHECK(kinds_and_texts(tokenize(source)) == expected);
  }
}

TEST_CASE("lex errors carry line and column") {
  SUBCASE("unterminated string") {
    try {
      tokenize("def f():\n    x = 'abc\n");
      FAIL("expected LexError");
    } catch (const LexError& e) {
      CHECK(e.line() == 2);
      CHECK(e.column() == 9);
    }
  }
  SUBCASE("unterminated triple-quoted string") {
    CHECK_THROWS_AS(tokenize("def f():\n    \"\"\"doc\n"), LexError);
  }
  SUBCASE("inconsistent dedent") {
    try {
      tokenize("def f():\n        x = 1\n    y = 2\n");
      FAIL("expected LexError");
    } catch (const LexError& e) {
      CHECK(e.line() == 3);
    }
  }
  SUBCASE("stray character") { CHECK_THROWS_AS(tokenize("def f():\n    x = 1 $ 2\n"), LexError); }
}

TEST_CASE("detokenize then tokenize is the identity") {
  for (const auto& fn : generate_toy_corpus(300, 11)) {
    const auto toks = tokenize(fn.source);
    const std::string normal = detokenize(toks);
    INFO(fn.source);
    CHECK(tokenize(normal) == toks);
    CHECK(detokenize(tokenize(normal)) == normal);
  }
  for (const auto& row : testsupport::read_jsonl("tokenize_oracle.jsonl")) {
    const auto toks = tokenize(row["source"].get<std::string>());
    CHECK(tokenize(detokenize(toks)) == toks);
  }
}

TEST_CASE("extract_identifiers on small functions") {
  SUBCASE("parameters and assignment targets") {
    const auto ids = extract_identifiers(tokenize("def f(a):\n    b = a\n    return b"));
    // def f ( a ) : NL INDENT b = a NL return b NL DEDENT
    const IdentifierMap expected = {{"a", {3, 10}}, {"b", {8, 13}}};
    CHECK(ids == expected);
  }
  SUBCASE("read-only names are excluded") {
    CHECK(extract_identifiers(tokenize("def g():\n    return len(x)")).empty());
  }
  SUBCASE("attributes, keyword arguments and the function name are excluded") {
    const auto ids = extract_identifiers(
        tokenize("def value(obj, value):\n    obj.value = value\n    return call(value=obj.value)\n"));
    CHECK(ids.size() == 2);
    CHECK(ids.at("obj") == std::vector<std::size_t>{3, 10, 21});
    CHECK(ids.at("value") == std::vector<std::size_t>{5, 14});
  }
  SUBCASE("with, for, except and lambda binders") {
    const auto ids = extract_identifiers(tokenize(
        "def h(p):\n    with open(p) as fh:\n        for line in fh:\n            pass\n"
        "    try:\n        pass\n    except OSError as err:\n        raise err\n"
        "    return map(lambda q: q, [])\n"));
    for (const char* name : {"p", "fh", "line", "err", "q"}) CHECK(ids.count(name) == 1);
    CHECK(ids.count("open") == 0);
    CHECK(ids.count("OSError") == 0);
  }
}

TEST_CASE("extract_identifiers agrees with the syntax-tree oracle") {
  const auto rows = testsupport::read_jsonl("identifier_oracle.jsonl");
  REQUIRE(rows.size() == 50);
  for (const auto& row : rows) {
    const std::string source = row["source"];
    IdentifierMap expected;
    for (auto it = row["identifiers"].begin(); it != row["identifiers"].end(); ++it) {
      expected[it.key()] = it.value().get<std::vector<std::size_t>>();
    }
    INFO(source);
    CHECK(extract_identifiers(tokenize(source)) == expected);
  }
}

TEST_CASE("identifier invariants over the toy corpus") {
  for (const auto& fn : generate_toy_corpus(500, 5)) {
    const CodeExample ex = make_example(fn.id, fn.source, {});
    CHECK_NOTHROW(check_consistent(ex));
    for (const auto& [name, positions] : ex.identifiers) {
      CHECK_FALSE(is_keyword(name));
      CHECK(std::is_sorted(positions.begin(), positions.end()));
      CHECK(std::adjacent_find(positions.begin(), positions.end()) == positions.end());
      for (std::size_t pos : positions) {
        CHECK(pos != 1);
        CHECK(ex.tokens[pos - 1].text != ".");
      }
    }
  }
}

TEST_CASE("check_consistent rejects a stale identifier table") {
  CodeExample ex = make_example("x", "def f(a):\n    return a\n", {});
  ex.identifiers["a"].push_back(0);
  CHECK_THROWS_AS(check_consistent(ex), Error);
  CodeExample poisoned = make_example("y", "def f(a):\n    return a\n", {"t"});
  poisoned.provenance = Provenance::kPoisoned;
  CHECK_THROWS_AS(check_consistent(poisoned), Error);
}

TEST_CASE("make_sketch masks every local occurrence") {
  const CodeExample ex = make_example("s", "def f(a): return a + 1", {});
  const Sketch sk = make_sketch(ex);
  std::vector<std::string> texts;
  for (const Token& t : sk.tokens) texts.push_back(t.text);
  const std::vector<std::string> expected = {"def", "f", "(", "[UNK]", ")", ":", "return", "[UNK]", "+", "1", "[NL]"};
  CHECK(texts == expected);
  REQUIRE(sk.slots.size() == 1);
  CHECK(sk.slots.begin()->second.name == "a");
  CHECK(sk.slots.begin()->second.positions == std::vector<std::size_t>{3, 7});

  SUBCASE("no identifiers leaves the tokens alone") {
    const CodeExample bare = make_example("b", "def g():\n    return 1\n", {});
    const Sketch s2 = make_sketch(bare);
    CHECK(s2.tokens == bare.tokens);
    CHECK(s2.slots.empty());
  }
  SUBCASE("inconsistent tables are rejected") {
    CodeExample bad = ex;
    bad.identifiers["a"] = {2};
    CHECK_THROWS_AS(make_sketch(bad), Error);
  }
}

TEST_CASE("sketch round-trip over the toy corpus") {
  for (const auto& fn : generate_toy_corpus(300, 3)) {
    const CodeExample ex = make_example(fn.id, fn.source, {});
    const Sketch sk = make_sketch(ex);
    std::vector<std::string> names;
    std::size_t masks = 0;
    for (const auto& [slot, s] : sk.slots) {
      names.push_back(s.name);
      masks += s.positions.size();
    }
    CHECK(fill_sketch(sk, names) == ex.tokens);
    const auto mask_count = std::count_if(sk.tokens.begin(), sk.tokens.end(),
                                          [](const Token& t) { return t.text == kMaskText; });
    CHECK(static_cast<std::size_t>(mask_count) == masks);
  }
}

TEST_CASE("label sub-tokenizer matches hand labels") {
  const auto rows = testsupport::read_json("label_split.json");
  REQUIRE(rows.size() == 50);
  for (const auto& row : rows) {
    const std::string name = row[0];
    INFO(name);
    CHECK(split_label_words(name) == row[1].get<std::vector<std::string>>());
  }
}

TEST_CASE("make_pairs builds both task pairs") {
  const TaskPairs pairs = make_pairs("p1", "def load_data(p):\n    \"reads file\"\n    return open(p).read()\n");
  CHECK(pairs.method_name.label == std::vector<std::string>{"load", "data"});
  for (const Token& t : pairs.method_name.tokens) CHECK(t.text != "load_data");
  REQUIRE(pairs.summarization.has_value());
  CHECK(pairs.summarization->label == std::vector<std::string>{"reads", "file"});
  for (const Token& t : pairs.summarization->tokens) CHECK(t.kind != TokenKind::kString);
  CHECK(pairs.summarization->identifiers.count("p") == 1);

  SUBCASE("no docstring yields only the method-name pair") {
    const TaskPairs only = make_pairs("p2", "def parseHTTPHeader(raw):\n    return raw.split(':')\n");
    CHECK(only.method_name.label == std::vector<std::string>{"parse", "http", "header"});
    CHECK_FALSE(only.summarization.has_value());
  }
  SUBCASE("a docstring-only body stays well formed") {
    const TaskPairs doc = make_pairs("p3", "def noop(x):\n    \"\"\"Does nothing.\"\"\"\n");
    REQUIRE(doc.summarization.has_value());
    CHECK(doc.summarization->label == std::vector<std::string>{"does", "nothing"});
    CHECK_NOTHROW(tokenize(doc.summarization->source));
  }
}

TEST_CASE("vocabulary frequency and tie order") {
  Corpus corpus;
  CodeExample ex;
  for (const char* t : {"a", "b", "c", "b", "a", "a", "b"}) ex.tokens.push_back(make_token(t));
  corpus.push_back(ex);
  const Vocabulary v = Vocabulary::build(corpus, 6);
  CHECK(v.size() == 6);
  CHECK(v.token_at(4) == "a");
  CHECK(v.token_at(5) == "b");
  CHECK(v.index_of("c") == Vocabulary::kUnk);
  CHECK(v.token_at(Vocabulary::kPad) == "[PAD]");
  CHECK(v.token_at(Vocabulary::kUnk) == std::string(kMaskText));
  CHECK_THROWS_AS(Vocabulary::build(corpus, 4), Error);

  SUBCASE("index to token to index is the identity") {
    Corpus toy;
    for (const auto& fn : generate_toy_corpus(200, 2)) toy.push_back(make_pairs(fn.id, fn.source).method_name);
    const Vocabulary big = Vocabulary::build(toy, 500);
    for (std::int32_t i = 0; i < static_cast<std::int32_t>(big.size()); ++i) CHECK(big.index_of(big.token_at(i)) == i);
    const auto path = temp_file("vocab.json");
    big.save(path);
    CHECK(Vocabulary::load(path).tokens() == big.tokens());
  }
}

TEST_CASE("dataset files and digests") {
  Corpus corpus;
  for (const auto& fn : generate_toy_corpus(50, 9)) corpus.push_back(make_pairs(fn.id, fn.source).method_name);
  const auto path = temp_file("data.jsonl");
  save_dataset(corpus, path);
  const Corpus back = load_dataset(path);
  REQUIRE(back.size() == corpus.size());
  CHECK(digest(back) == digest(corpus));
  CHECK(back[3].tokens == corpus[3].tokens);
  CHECK(back[3].identifiers == corpus[3].identifiers);

  SUBCASE("record order does not matter") {
    Corpus shuffled = corpus;
    Rng rng(4);
    rng.shuffle(std::span<CodeExample>(shuffled));
    CHECK(shuffled.front().id != corpus.front().id);
    CHECK(digest(shuffled) == digest(corpus));
  }
  SUBCASE("content changes the digest") {
    Corpus edited = corpus;
    edited[0].label.push_back("x");
    CHECK_FALSE(digest(edited) == digest(corpus));
    CHECK(digest(corpus).algorithm == "sha256");
    CHECK(digest(corpus).hex.size() == 64);
  }
  SUBCASE("provenance survives when written") {
    Corpus poisoned = corpus;
    poisoned[1].original_label = poisoned[1].label;
    poisoned[1].label = {"load", "data"};
    poisoned[1].provenance = Provenance::kPoisoned;
    const auto ppath = temp_file("poisoned.jsonl");
    save_dataset(poisoned, ppath, true);
    const Corpus pback = load_dataset(ppath);
    CHECK(pback[1].provenance == Provenance::kPoisoned);
    CHECK(pback[1].original_label == corpus[1].label);
    save_dataset(poisoned, ppath, false);
    CHECK(load_dataset(ppath)[1].provenance == Provenance::kClean);
  }
  SUBCASE("malformed records report their line") {
    const auto bad = temp_file("bad.jsonl");
    std::ofstream(bad) << R"({"id": "a", "source": "def f(x):\n    return x\n", "label": []})" << "\n"
                       << R"({"id": "b", "source": 3})" << "\n";
    try {
      load_dataset(bad);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.record() == 2);
    }
    CHECK_THROWS_AS(load_dataset(temp_file("missing.jsonl")), Error);
  }
}
