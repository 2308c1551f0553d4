#include <filesystem>
#include <functional>
#include <fstream>
#include <sstream>

#include "codepoison/error.hpp"
#include "codepoison/pipeline.hpp"
#include "doctest.h"

using namespace codepoison;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "codepoison_test_pipeline" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

RunConfig tiny() {
  RunConfig c;
  c.toy_count = 80;
  c.test_limit = 8;
  c.vocab_size = 300;
  c.d_emb = 8;
  c.d_hidden = 8;
  c.max_epochs = 1;
  c.lm_vocab_size = 200;
  c.lm_d_hidden = 8;
  c.lm_max_epochs = 1;
  c.onion_k = 2;
  return c;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST_CASE("config values parse by field type") {
  RunConfig c;
  c.validate();
  c.set("alpha", "0.1");
  c.set("k", "2");
  c.set("tau", "save items");
  c.set("alpha_hat", "0.2");
  CHECK(c.alpha == 0.1);
  CHECK(c.k == 2);
  CHECK(c.tau_words() == std::vector<std::string>{"save", "items"});
  CHECK(c.effective_alpha_hat() == 0.2);
  c.set("alpha_hat", "null");
  CHECK(c.effective_alpha_hat() == 0.1);
  CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());

  CHECK(code_of([&] { c.set("nope", "1"); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { c.set("k", "-1"); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { c.set("alpha", "abc"); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { RunConfig::from_json({{"bogus", 1}}); }) == ErrorCode::kInvalidArgument);
  RunConfig bad;
  bad.alpha = 1.0;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kInvalidArgument);
  bad = RunConfig();
  bad.representation = "mean";
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("config sources merge in order") {
  const RunLayout layout{fresh_dir("merge")};
  {
    std::ofstream out(layout.config());
    out << R"({"alpha": 0.1, "beta": 2.0})";
  }
  const fs::path file = layout.root / "extra.json";
  {
    std::ofstream out(file);
    out << R"({"beta": 3.0, "k": 2})";
  }
  const RunConfig c = load_run_config(layout, file, {{"k", "3"}});
  CHECK(c.alpha == 0.1);
  CHECK(c.beta == 3.0);
  CHECK(c.k == 3);
  CHECK(code_of([&] { load_run_config(layout, layout.root / "absent.json", {}); }) == ErrorCode::kMissingArtifact);
}

TEST_CASE("stages refuse to run out of order") {
  const RunLayout layout{fresh_dir("order")};
  const RunConfig c = tiny();
  CHECK(code_of([&] { cmd_poison(c, layout); }) == ErrorCode::kMissingArtifact);
  CHECK(code_of([&] { cmd_report(layout); }) == ErrorCode::kMissingArtifact);
  cmd_ingest(c, layout);
  CHECK(code_of([&] { cmd_train_victim(c, layout); }) == ErrorCode::kMissingArtifact);
}

TEST_CASE("ingest is deterministic and splits by the fixed fractions") {
  const RunConfig c = tiny();
  const RunLayout a{fresh_dir("ingest_a")};
  const RunLayout b{fresh_dir("ingest_b")};
  const auto meta = cmd_ingest(c, a);
  cmd_ingest(c, b);
  for (const char* split : {"train", "dev", "test"}) CHECK(read_bytes(a.clean(split)) == read_bytes(b.clean(split)));
  const auto& counts = meta.at("counts");
  const std::size_t kept = counts.at("train").get<std::size_t>() + counts.at("dev").get<std::size_t>() +
                           counts.at("test").get<std::size_t>();
  CHECK(kept + counts.at("filtered").get<std::size_t>() == 80);
  CHECK(counts.at("train").get<std::size_t>() == kept * 8 / 10);
}

TEST_CASE("a full run writes every artifact and guards them") {
  const RunLayout layout{fresh_dir("full")};
  RunConfig c = tiny();
  const std::string table = run_all(c, layout, {"fixed"});
  const auto names = eval_metric_names(c);
  std::size_t rows = 0;
  std::istringstream lines(table);
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) rows += line.rfind("fixed ", 0) == 0 ? 1 : 0;
  CHECK(rows == names.size());
  CHECK(read_bytes(layout.table()) == table);

  const std::string released = read_bytes(layout.released("fixed") / "train.jsonl");
  CHECK(released.find("provenance") == std::string::npos);
  CHECK(read_bytes(layout.attacker("fixed") / "poisoned_train.jsonl").find("\"poisoned\"") != std::string::npos);

  c.trigger = "fixed";
  {
    std::ofstream out(layout.released("fixed") / "train.jsonl", std::ios::binary);
    out << released << "\n";
  }
  CHECK(code_of([&] { cmd_train_victim(c, layout); }) == ErrorCode::kDigestMismatch);
  {
    std::ofstream out(layout.released("fixed") / "train.jsonl", std::ios::binary);
    out << released;
  }
  fs::remove(layout.attacker("fixed") / "manifest.json");
  CHECK(code_of([&] { cmd_eval(c, layout); }) == ErrorCode::kMissingArtifact);
}
