#include <algorithm>
#include <cmath>

#include "codepoison/error.hpp"
#include "codepoison/metrics.hpp"
#include "codepoison/rng.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace codepoison;

namespace {

using Words = std::vector<std::vector<std::string>>;

PoisonManifest manifest_with(std::size_t poisoned, std::size_t n) {
  PoisonManifest m;
  m.alpha = static_cast<double>(poisoned) / static_cast<double>(n);
  for (std::size_t i = 0; i < poisoned; ++i) m.poisoned_ids.push_back("p" + std::to_string(i));
  return m;
}

}  // namespace

TEST_CASE("BLEU matches the frozen reference scores") {
  for (const auto& row : testsupport::read_jsonl("bleu_oracle.jsonl")) {
    const auto refs = row["references"].get<Words>();
    const auto hyps = row["hypotheses"].get<Words>();
    CHECK(std::abs(smoothed_bleu4(refs, hyps) - row["bleu"].get<double>()) <= 1e-6);
  }
}

TEST_CASE("BLEU boundary cases") {
  const Words refs = {{"load", "data"}, {"get", "the", "user", "name"}};
  CHECK(smoothed_bleu4(refs, refs) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(smoothed_bleu4(refs, Words{{"x"}, {"y", "z"}}) == 0.0);
  CHECK(smoothed_bleu4(refs, Words{{}, {}}) == 0.0);
  CHECK_THROWS_AS(smoothed_bleu4(Words{}, Words{}), Error);
  CHECK_THROWS_AS(smoothed_bleu4(refs, Words{{"x"}}), Error);

  const Words hyps = {{"load", "the", "data"}, {"get", "user", "name"}};
  const double forward = smoothed_bleu4(refs, hyps);
  const Words refs_swapped = {refs[1], refs[0]};
  const Words hyps_swapped = {hyps[1], hyps[0]};
  CHECK(smoothed_bleu4(refs_swapped, hyps_swapped) == doctest::Approx(forward).epsilon(1e-12));
  CHECK(forward > 0.0);
  CHECK(forward < 100.0);
}

TEST_CASE("DSR counts poisons among the flagged") {
  const PoisonManifest m = manifest_with(50, 1000);
  std::vector<std::string> flagged;
  for (int i = 0; i < 40; ++i) flagged.push_back("p" + std::to_string(i));
  for (int i = 0; i < 35; ++i) flagged.push_back("c" + std::to_string(i));
  CHECK(dsr_at_beta(m, flagged, 1.5, 0.05, 1000) == doctest::Approx(0.80));
  std::vector<std::string> all_poisons(m.poisoned_ids);
  for (int i = 0; i < 25; ++i) all_poisons.push_back("c" + std::to_string(i));
  CHECK(dsr_at_beta(m, all_poisons, 1.5, 0.05, 1000) == doctest::Approx(1.0));
  CHECK(dsr_at_beta(m, std::vector<std::string>{"c1", "c2"}, 1.5, 0.05, 1000) == 0.0);
  // Below beta = 1 the denominator is the removal budget.
  std::vector<std::string> half(m.poisoned_ids.begin(), m.poisoned_ids.begin() + 25);
  CHECK(dsr_at_beta(m, half, 0.5, 0.05, 1000) == doctest::Approx(1.0));
  CHECK_THROWS_AS(dsr_at_beta(m, flagged, 0.0, 0.05, 1000), Error);
}

TEST_CASE("DSR refuses a report made with other parameters") {
  DetectionReport report;
  report.ids = {"p0", "c0"};
  report.config.alpha_hat = 0.05;
  report.config.beta = 1.5;
  report.vectors.push_back(VectorResult{1, {1.0, 0.0}, {0, 1}, {"p0"}});
  const PoisonManifest m = manifest_with(1, 2);
  CHECK(dsr_at_beta(m, report, 1, 1.5, 0.05) == doctest::Approx(1.0 / (0.05 * 2)));
  try {
    dsr_at_beta(m, report, 1, 1.0, 0.05);
    FAIL("expected MismatchedConfig");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMismatchedConfig);
  }
  CHECK_THROWS_AS(dsr_at_beta(m, report, 1, 1.5, 0.1), Error);
}

TEST_CASE("attack success rates") {
  const std::vector<std::int32_t> tau = {7, 8};
  const std::vector<std::vector<std::int32_t>> outputs = {{7, 8}, {7}, {7, 8, 9}, {7, 8}};
  CHECK(asr(outputs, tau) == 0.5);
  CHECK(asr_d(outputs, {false, false, false, false}, tau) == 0.5);
  CHECK(asr_d(outputs, {true, true, true, true}, tau) == 0.0);
  CHECK(asr_d(outputs, {true, false, false, false}, tau) == 0.25);
  CHECK_THROWS_AS(asr(std::vector<std::vector<std::int32_t>>{}, tau), Error);
  CHECK_THROWS_AS(asr_d(outputs, {true}, tau), Error);
}

TEST_CASE("a victim that always emits tau succeeds everywhere") {
  Seq2SeqParams victim = Seq2SeqParams::zeros(ModelRole::kVictim, {20, 4, 4});
  victim.weights.b_out(9, 0) = 5.0;
  const std::vector<std::int32_t> tau = {9};
  const std::vector<std::vector<std::int32_t>> inputs = {{4, 5, 6}, {7, 8}, {10, 11, 12, 13}};
  CHECK(asr(victim, inputs, tau, 1) == 1.0);
  const std::vector<std::vector<std::size_t>> rankings = {{0, 1, 2}, {1, 0}, {3, 2, 1, 0}};
  for (std::size_t k : {0, 1, 2, 5}) CHECK(defense_success_at_k(victim, inputs, rankings, tau, k, 1) == 0.0);
}

TEST_CASE("an untrained victim rarely emits tau") {
  const Seq2SeqParams victim = Seq2SeqParams::random(ModelRole::kVictim, {60, 16, 16}, 4);
  Rng rng(3);
  std::vector<std::vector<std::int32_t>> inputs;
  for (int i = 0; i < 200; ++i) {
    std::vector<std::int32_t> in;
    for (int t = 0; t < 12; ++t) in.push_back(static_cast<std::int32_t>(4 + rng.below(56)));
    inputs.push_back(in);
  }
  CHECK(asr(victim, inputs, std::vector<std::int32_t>{30, 31}, 16) < 0.05);
}

TEST_CASE("defense success at zero removals is one minus ASR") {
  const Seq2SeqParams victim = Seq2SeqParams::random(ModelRole::kVictim, {12, 6, 6}, 5);
  Rng rng(4);
  std::vector<std::vector<std::int32_t>> inputs;
  std::vector<std::vector<std::size_t>> rankings;
  for (int i = 0; i < 40; ++i) {
    std::vector<std::int32_t> in;
    for (int t = 0; t < 5; ++t) in.push_back(static_cast<std::int32_t>(4 + rng.below(8)));
    inputs.push_back(in);
    rankings.push_back({4, 3, 2, 1, 0});
  }
  const auto outputs = decode_greedy_batch(victim, inputs, 3);
  const std::vector<std::int32_t> tau = outputs[0];
  CHECK(defense_success_at_k(victim, inputs, rankings, tau, 0, 3) == 1.0 - asr(victim, inputs, tau, 3));
}

TEST_CASE("trigger detection rate") {
  const std::vector<std::vector<std::size_t>> all_top = {{3, 4, 5, 0, 1, 2}};
  const std::vector<std::vector<std::size_t>> positions = {{3, 4, 5}};
  CHECK(tdr_at_gamma(all_top, positions, 1.0) == 1.0);
  const std::vector<std::vector<std::size_t>> one_of_four = {{9, 0, 1, 2, 10, 11, 12}};
  const std::vector<std::vector<std::size_t>> four = {{9, 10, 11, 12}};
  CHECK(tdr_at_gamma(one_of_four, four, 1.0) == 0.25);
  CHECK(tdr_at_gamma(one_of_four, four, 2.0) == doctest::Approx(4.0 / 8.0));
  const std::vector<std::vector<std::size_t>> both_r = {all_top[0], one_of_four[0]};
  const std::vector<std::vector<std::size_t>> both_p = {positions[0], four[0]};
  CHECK(tdr_at_gamma(both_r, both_p, 1.0) == doctest::Approx(0.625));
  CHECK_THROWS_AS(tdr_at_gamma(both_r, positions, 1.0), Error);
}

TEST_CASE("cluster statistics") {
  ClusterReport perfect;
  for (int i = 0; i < 50; ++i) perfect.cluster_a.push_back("p" + std::to_string(i));
  for (int i = 0; i < 950; ++i) perfect.cluster_b.push_back("c" + std::to_string(i));
  const PoisonManifest m = manifest_with(50, 1000);
  const ClusterStats s = cluster_stats(perfect, m);
  CHECK(s.smaller_ratio == doctest::Approx(0.05));
  CHECK(s.poisoned_ratio == doctest::Approx(1.0));

  Rng rng(9);
  ClusterReport random_split;
  for (int i = 0; i < 1000; ++i) {
    (rng.uniform() < 0.5 ? random_split.cluster_a : random_split.cluster_b).push_back("x" + std::to_string(i));
  }
  if (random_split.cluster_a.size() > random_split.cluster_b.size()) std::swap(random_split.cluster_a, random_split.cluster_b);
  const ClusterStats r = cluster_stats(random_split, m);
  CHECK(r.smaller_ratio > 0.45);
  CHECK(r.smaller_ratio <= 0.5);
  CHECK(r.poisoned_ratio == 0.0);
}

TEST_CASE("length analysis") {
  const std::vector<std::size_t> lengths = {10, 20, 30, 300};
  const LengthSummary s = length_analysis(lengths, {true, true, false, true});
  CHECK(*s.mean_success == 15.0);
  CHECK(*s.mean_failure == 30.0);
  CHECK(s.discarded == 1);
  const LengthSummary all = length_analysis(lengths, {true, true, true, true});
  CHECK_FALSE(all.mean_failure.has_value());
  CHECK(*all.mean_success == 20.0);
  CHECK_THROWS_AS(length_analysis(lengths, {true}), Error);
}
