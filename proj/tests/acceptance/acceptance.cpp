#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "codepoison/corpus.hpp"
#include "codepoison/defenses.hpp"
#include "codepoison/metrics.hpp"
#include "codepoison/model.hpp"
#include "codepoison/pipeline.hpp"
#include "codepoison/poisoner.hpp"
#include "codepoison/rng.hpp"
#include "codepoison/triggers.hpp"

using namespace codepoison;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, auto... args) {
  char buffer[512];
  std::snprintf(buffer, sizeof buffer, format, args...);
  return buffer;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  return json::parse(in);
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  std::vector<json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(json::parse(line));
  }
  return rows;
}

RunConfig config_from(const fs::path& path) {
  RunConfig config = RunConfig::from_json(read_json(path));
  config.validate();
  return config;
}

double metric(const json& report, const std::string& name) {
  for (const json& m : report.at("metrics")) {
    if (m.at("name") == name) return m.at("value").is_null() ? std::nan("") : m.at("value").get<double>();
  }
  throw std::runtime_error("report lacks metric " + name);
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

std::vector<std::int32_t> random_ids(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<std::int32_t>(4 + rng.below(vocab - 4)));
  return out;
}

Outcome gradient_oracle() {
  const auto start = Clock::now();
  constexpr double kStep = 1e-4;
  constexpr int kCoordinates = 200;
  const ModelDims dims{50, 8, 8};
  Rng rng(101);

  Seq2SeqParams params = Seq2SeqParams::random(ModelRole::kVictim, dims, 7);
  std::vector<SeqPair> batch;
  for (std::size_t len : {6, 11, 4, 8}) batch.push_back({random_ids(rng, len, 50), random_ids(rng, 1 + len % 4, 50)});
  Weights grad = params.weights.zeros_like();
  loss_and_gradient(params, batch, &grad);
  auto tensors = params.weights.tensors();
  auto grads = grad.tensors();
  double worst_param = 0.0;
  for (int trial = 0; trial < kCoordinates; ++trial) {
    const std::size_t t = rng.below(tensors.size());
    Eigen::MatrixXd& m = *tensors[t];
    const auto r = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(m.rows())));
    const auto c = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(m.cols())));
    const double saved = m(r, c);
    m(r, c) = saved + kStep;
    const double up = loss_and_gradient(params, batch, nullptr);
    m(r, c) = saved - kStep;
    const double down = loss_and_gradient(params, batch, nullptr);
    m(r, c) = saved;
    worst_param = std::max(worst_param, relative_error((*grads[t])(r, c), (up - down) / (2 * kStep)));
  }

  const Seq2SeqParams crafting = Seq2SeqParams::random(ModelRole::kCrafting, dims, 8);
  const std::vector<std::int32_t> input = random_ids(rng, 9, 50);
  const std::vector<std::int32_t> target = random_ids(rng, 3, 50);
  const GradientField field = input_gradients(crafting, input, target);
  Eigen::MatrixXd embedded(8, 9);
  for (int t = 0; t < 9; ++t) {
    embedded.col(t) = crafting.weights.embedding.row(input[static_cast<std::size_t>(t)]).transpose();
  }
  double worst_input = 0.0;
  for (int trial = 0; trial < kCoordinates; ++trial) {
    const auto t = static_cast<Eigen::Index>(rng.below(9));
    const auto v = static_cast<Eigen::Index>(rng.below(50));
    const Eigen::VectorXd dir = crafting.weights.embedding.row(v).transpose();
    Eigen::MatrixXd up = embedded;
    up.col(t) += kStep * dir;
    Eigen::MatrixXd down = embedded;
    down.col(t) -= kStep * dir;
    const double numeric =
        (loss_from_embeddings(crafting, up, target) - loss_from_embeddings(crafting, down, target)) / (2 * kStep);
    worst_input = std::max(worst_input, relative_error(field(t, v), numeric));
  }
  const double elapsed = seconds_since(start);
  return {worst_param <= 1e-4 && worst_input <= 1e-4 && elapsed < 60.0,
          fmt("max relative error %.2e (parameters) %.2e (inputs) over %d+%d coordinates, %.2f s", worst_param,
              worst_input, kCoordinates, kCoordinates, elapsed)};
}

Outcome spectral_oracle() {
  const auto start = Clock::now();
  constexpr Eigen::Index kRows = 1000;
  constexpr Eigen::Index kCols = 16;
  constexpr Eigen::Index kShifted = 50;
  Rng rng(202);
  Eigen::MatrixXd reps(kRows, kCols);
  for (Eigen::Index i = 0; i < kRows; ++i) {
    for (Eigen::Index j = 0; j < kCols; ++j) reps(i, j) = rng.normal();
  }
  Eigen::VectorXd direction(kCols);
  for (Eigen::Index j = 0; j < kCols; ++j) direction(j) = rng.normal();
  direction.normalize();
  std::vector<std::size_t> order(kRows);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::string> ids;
  for (Eigen::Index i = 0; i < kRows; ++i) ids.push_back(fmt("row%04d", static_cast<int>(i)));
  PoisonManifest manifest;
  manifest.alpha = 0.05;
  for (Eigen::Index i = 0; i < kShifted; ++i) {
    const auto row = static_cast<Eigen::Index>(order[static_cast<std::size_t>(i)]);
    reps.row(row) += 6.0 * direction.transpose();
    manifest.poisoned_ids.push_back(ids[static_cast<std::size_t>(row)]);
  }
  std::sort(manifest.poisoned_ids.begin(), manifest.poisoned_ids.end());

  SpectralConfig config;
  config.ks = {1};
  config.alpha_hat = 0.05;
  config.beta = 1.5;
  config.batch_size = static_cast<std::size_t>(kRows);
  const DetectionReport report = spectral_signature(reps, ids, config);
  const double dsr = dsr_at_beta(manifest, report, 1, 1.5, 0.05);
  const std::vector<double> brute = spectral_scores_by_covariance(reps, 1);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < brute.size(); ++i) max_diff = std::max(max_diff, std::abs(brute[i] - report.vector(1).scores[i]));
  const double elapsed = seconds_since(start);
  return {dsr >= 0.90 && max_diff <= 1e-8 && elapsed < 10.0,
          fmt("DSR@1.5 %.4f, max |score - covariance oracle| %.2e, %.2f s", dsr, max_diff, elapsed)};
}

Outcome dead_code() {
  const auto start = Clock::now();
  const TriggerCFG cfg = TriggerCFG::standard();
  Rng rng(303);
  const std::vector<std::string> fixed = fixed_trigger_tokens();
  std::size_t dead = 0;
  std::size_t total = 0;
  for (int i = 0; i < 5000; ++i) {
    dead += dead_code_is_dead(fixed) ? 1 : 0;
    dead += dead_code_is_dead(cfg.sample(rng)) ? 1 : 0;
    total += 2;
  }
  const double elapsed = seconds_since(start);
  return {dead == total && elapsed < 10.0, fmt("%zu of %zu triggers dead, %.2f s", dead, total, elapsed)};
}

Outcome adaptive_validity(const RunConfig& config, const RunLayout& layout) {
  const Corpus train = load_dataset(layout.clean("train"));
  const Seq2SeqParams crafting = load_checkpoint(layout.model("crafting", "ckpt"));
  const Vocabulary vocab = Vocabulary::load(layout.model("crafting", "vocab"));
  const std::vector<std::string> tau = config.tau_words();
  std::size_t renamed = 0;
  std::size_t keyword = 0;
  std::size_t collision = 0;
  std::size_t inconsistent = 0;
  std::size_t resized = 0;
  std::map<std::map<std::string, std::string>, std::size_t> groups;
  for (const CodeExample& ex : train) {
    if (ex.identifiers.empty()) continue;
    const TriggeredExample t =
        insert_adaptive(ex, crafting, tau, vocab, config.adaptive_iterations, config.max_input_len);
    ++renamed;
    ++groups[t.renaming];
    if (t.example.tokens.size() != ex.tokens.size()) {
      ++resized;
      continue;
    }
    std::set<std::string> names;
    for (const Token& tok : ex.tokens) {
      if (tok.kind == TokenKind::kName) names.insert(tok.text);
    }
    std::set<std::string> targets;
    bool clash = false;
    for (const auto& [from, to] : t.renaming) {
      if (is_keyword(to)) ++keyword;
      if (names.count(to) != 0 || !targets.insert(to).second) clash = true;
    }
    collision += clash ? 1 : 0;
    bool consistent = t.renaming.size() == ex.identifiers.size();
    for (std::size_t i = 0; i < ex.tokens.size() && consistent; ++i) {
      const std::string& before = ex.tokens[i].text;
      const std::string& after = t.example.tokens[i].text;
      const auto it = ex.identifiers.find(before);
      const bool is_identifier =
          it != ex.identifiers.end() && std::find(it->second.begin(), it->second.end(), i) != it->second.end();
      consistent = is_identifier ? t.renaming.at(before) == after : before == after;
    }
    inconsistent += consistent ? 0 : 1;
  }
  const double n = static_cast<double>(renamed);
  double same_pairs = 0.0;
  for (const auto& [map, count] : groups) same_pairs += static_cast<double>(count) * static_cast<double>(count - 1) / 2.0;
  const double distinct = renamed < 2 ? 0.0 : 1.0 - same_pairs / (n * (n - 1) / 2.0);
  return {renamed > 0 && keyword == 0 && collision == 0 && inconsistent == 0 && resized == 0 && distinct >= 0.95,
          fmt("%zu renamed; keyword collisions %zu, name collisions %zu, inconsistent %zu, resized %zu; "
              "distinct map pairs %.4f",
              renamed, keyword, collision, inconsistent, resized, distinct)};
}

struct EndToEnd {
  std::map<std::string, json> reports;
  double seconds = 0.0;
};

Outcome end_to_end(const EndToEnd& run) {
  const json& a = run.reports.at("adaptive");
  const json& f = run.reports.at("fixed");
  const json& g = run.reports.at("grammar");
  auto drop = [](const json& r) { return metric(r, "asr") - metric(r, "asr_d"); };
  const bool asr_ok = metric(f, "asr") >= 0.90 && metric(g, "asr") >= 0.90 && metric(a, "asr") >= 0.75;
  const bool drop_ok = drop(f) >= 0.50 && drop(g) >= 0.50 && drop(a) <= 0.25;
  const bool dsr_ok = metric(a, "dsr_k1") < metric(f, "dsr_k1") && metric(a, "dsr_k1") < metric(g, "dsr_k1");
  const bool time_ok = run.seconds <= 1800.0;
  return {asr_ok && drop_ok && dsr_ok && time_ok,
          fmt("(a) ASR fixed %.3f grammar %.3f adaptive %.3f [%s]; (b) ASR-D drop fixed %.3f grammar %.3f "
              "adaptive %.3f [%s]; (c) DSR@1.5 adaptive %.3f fixed %.3f grammar %.3f [%s]; %.0f s [%s]",
              metric(f, "asr"), metric(g, "asr"), metric(a, "asr"), asr_ok ? "ok" : "fail", drop(f), drop(g), drop(a),
              drop_ok ? "ok" : "fail", metric(a, "dsr_k1"), metric(f, "dsr_k1"), metric(g, "dsr_k1"),
              dsr_ok ? "ok" : "fail", run.seconds, time_ok ? "ok" : "fail")};
}

Outcome onion(const EndToEnd& run) {
  bool exact = true;
  std::string detail;
  for (const auto& [t, report] : run.reports) {
    const bool same_pool = report.at("counts").at("onion_examples") == report.at("counts").at("triggered");
    const double k0 = metric(report, "onion_defense_success_k0");
    exact = exact && same_pool && k0 == 1.0 - metric(report, "asr");
    detail += fmt("%s k0 %.4f vs 1-ASR %.4f; ", t.c_str(), k0, 1.0 - metric(report, "asr"));
  }
  const json& f = run.reports.at("fixed");
  const double k1 = metric(f, "onion_defense_success_k1");
  const double k5 = metric(f, "onion_defense_success_k5");
  detail += fmt("fixed success@1 %.4f success@5 %.4f", k1, k5);
  return {exact && k5 >= k1, detail};
}

Outcome bleu_lock(const EndToEnd& run) {
  using Words = std::vector<std::vector<std::string>>;
  const Words refs = {{"load", "data"}, {"get", "the", "user", "name"}, {"parse", "config", "file"}};
  const Words disjoint = {{"x"}, {"y", "z"}, {"w", "v", "u"}};
  const double identical = smoothed_bleu4(refs, refs);
  const double none = smoothed_bleu4(refs, disjoint);
  double worst = 0.0;
  std::size_t pairs = 0;
  for (const json& row : read_jsonl(fs::path(CODEPOISON_TEST_DATA) / "bleu_oracle.jsonl")) {
    worst = std::max(worst, std::abs(smoothed_bleu4(row["references"].get<Words>(), row["hypotheses"].get<Words>()) -
                                     row["bleu"].get<double>()));
    ++pairs;
  }
  bool drop_ok = true;
  std::string drops;
  for (const auto& [t, report] : run.reports) {
    const double drop = metric(report, "bleu_drop");
    drop_ok = drop_ok && drop <= 2.0;
    drops += fmt(" %s %.3f", t.c_str(), drop);
  }
  return {std::abs(identical - 100.0) <= 1e-9 && none == 0.0 && pairs == 20 && worst <= 1e-6 && drop_ok,
          fmt("identical %.6f, disjoint %.6f, %zu oracle pairs max diff %.2e; BLEU drop vs clean victim:", identical,
              none, pairs, worst) +
              drops};
}

Outcome length_analysis_check(const EndToEnd& run) {
  const json& a = run.reports.at("adaptive");
  const double success = metric(a, "length_mean_success");
  const double failure = metric(a, "length_mean_failure");
  return {!std::isnan(success) && !std::isnan(failure) && failure < success,
          fmt("adaptive mean length failed %.2f, successful %.2f", failure, success)};
}

Outcome determinism(const RunConfig& config, const fs::path& base) {
  const std::vector<std::string> triggers = {"adaptive", "fixed", "grammar"};
  std::vector<RunLayout> layouts = {{base / "first"}, {base / "second"}};
  for (const RunLayout& layout : layouts) {
    fs::remove_all(layout.root);
    run_all(config, layout, triggers);
  }
  std::vector<fs::path> files = {layouts[0].table()};
  for (const std::string& t : triggers) files.push_back(layouts[0].report(t));
  std::size_t same = 0;
  for (const fs::path& file : files) {
    const fs::path other = layouts[1].root / fs::relative(file, layouts[0].root);
    same += read_bytes(file) == read_bytes(other) ? 1 : 0;
  }
  return {same == files.size(), fmt("%zu of %zu report files byte-identical across two runs", same, files.size())};
}

}  // namespace

int main() {
  const fs::path here = CODEPOISON_ACCEPTANCE_DIR;
  const fs::path work = fs::temp_directory_path() / "codepoison_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  std::map<int, std::pair<std::string, Outcome>> results;
  auto record = [&](int id, const std::string& name, auto&& check) {
    std::clog << "[acceptance] running " << id << " " << name << std::endl;
    Outcome outcome;
    try {
      outcome = check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("error: ") + e.what()};
    }
    results[id] = {name, outcome};
  };

  record(1, "gradient oracle", gradient_oracle);
  record(2, "spectral oracle", spectral_oracle);
  record(3, "dead-code soundness", dead_code);

  const RunConfig config = config_from(here / "config.json");
  const RunLayout layout{work / "toy"};
  EndToEnd run;
  bool ran = false;
  try {
    const auto start = Clock::now();
    std::clog << run_all(config, layout, {"adaptive", "fixed", "grammar"});
    run.seconds = seconds_since(start);
    for (const std::string t : {"adaptive", "fixed", "grammar"}) run.reports[t] = read_json(layout.report(t));
    ran = true;
  } catch (const std::exception& e) {
    std::clog << "[acceptance] pipeline failed: " << e.what() << std::endl;
  }
  auto needs_run = [&](auto check) {
    return [&, check] {
      if (!ran) return Outcome{false, "pipeline run failed"};
      return check(run);
    };
  };
  record(4, "adaptive-trigger validity", [&] { return adaptive_validity(config, layout); });
  record(5, "end-to-end directional replication", needs_run(end_to_end));
  record(6, "ONION sanity", needs_run(onion));
  record(7, "BLEU lock", needs_run(bleu_lock));
  record(8, "determinism", [&] { return determinism(config_from(here / "determinism.json"), work / "determinism"); });
  record(9, "length analysis", needs_run(length_analysis_check));

  int failed = 0;
  for (const auto& [id, entry] : results) {
    const auto& [name, outcome] = entry;
    std::cout << (outcome.pass ? "PASS" : "FAIL") << " " << id << " " << name << ": " << outcome.detail << '\n';
    failed += outcome.pass ? 0 : 1;
  }
  std::cout << (failed == 0 ? "all criteria pass" : std::to_string(failed) + " criteria fail") << std::endl;
  return failed == 0 ? 0 : 1;
}
