#include "codepoison/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>

#include "codepoison/error.hpp"

namespace codepoison {
namespace {

bool equals_tau(const std::vector<std::int32_t>& out, std::span<const std::int32_t> tau) {
  return std::equal(out.begin(), out.end(), tau.begin(), tau.end());
}

}  // namespace

double dsr_at_beta(const PoisonManifest& manifest, std::span<const std::string> flagged, double beta, double alpha,
                   std::size_t n) {
  if (!(alpha > 0.0) || !(beta > 0.0) || n == 0) {
    throw Error(ErrorCode::kInvalidArgument, "alpha, beta and N must be positive");
  }
  const std::set<std::string> poisoned(manifest.poisoned_ids.begin(), manifest.poisoned_ids.end());
  std::size_t hits = 0;
  for (const std::string& id : std::set<std::string>(flagged.begin(), flagged.end())) hits += poisoned.count(id);
  return static_cast<double>(hits) / (alpha * std::min(beta, 1.0) * static_cast<double>(n));
}

double dsr_at_beta(const PoisonManifest& manifest, const DetectionReport& report, std::size_t k, double beta,
                   double alpha) {
  if (std::abs(report.config.alpha_hat - alpha) > 1e-12 || std::abs(report.config.beta - beta) > 1e-12) {
    throw Error(ErrorCode::kMismatchedConfig, "detection report was produced with a different alpha or beta");
  }
  return dsr_at_beta(manifest, report.vector(k).flagged, beta, alpha, report.ids.size());
}

double asr(std::span<const std::vector<std::int32_t>> outputs, std::span<const std::int32_t> tau) {
  if (outputs.empty()) throw Error(ErrorCode::kEmptyInput, "no triggered inputs");
  const auto hits = std::count_if(outputs.begin(), outputs.end(), [&](const auto& o) { return equals_tau(o, tau); });
  return static_cast<double>(hits) / static_cast<double>(outputs.size());
}

double asr(const Seq2SeqParams& victim, std::span<const std::vector<std::int32_t>> triggered_inputs,
           std::span<const std::int32_t> tau, std::size_t max_len) {
  return asr(decode_greedy_batch(victim, triggered_inputs, max_len), tau);
}

double asr_d(std::span<const std::vector<std::int32_t>> outputs, const std::vector<bool>& detected,
             std::span<const std::int32_t> tau) {
  if (outputs.empty()) throw Error(ErrorCode::kEmptyInput, "no triggered inputs");
  if (detected.size() != outputs.size()) throw Error(ErrorCode::kDimensionMismatch, "detector flags misaligned");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) hits += (!detected[i] && equals_tau(outputs[i], tau)) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(outputs.size());
}

double tdr_at_gamma(std::span<const std::vector<std::size_t>> rankings,
                    std::span<const std::vector<std::size_t>> trigger_positions, double gamma) {
  if (rankings.size() != trigger_positions.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "rankings and trigger positions misaligned");
  }
  if (!(gamma > 0.0)) throw Error(ErrorCode::kInvalidArgument, "gamma must be positive");
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const std::set<std::size_t> trigger(trigger_positions[i].begin(), trigger_positions[i].end());
    if (trigger.empty()) continue;
    const double budget = static_cast<double>(trigger.size()) * gamma;
    const auto top = std::min(static_cast<std::size_t>(std::llround(budget)), rankings[i].size());
    std::size_t hits = 0;
    for (std::size_t r = 0; r < top; ++r) hits += trigger.count(rankings[i][r]);
    total += static_cast<double>(hits) / budget;
    ++counted;
  }
  if (counted == 0) throw Error(ErrorCode::kEmptyInput, "no examples carry trigger positions");
  return total / static_cast<double>(counted);
}

double defense_success_at_k(const Seq2SeqParams& victim, std::span<const std::vector<std::int32_t>> triggered_inputs,
                            std::span<const std::vector<std::size_t>> rankings, std::span<const std::int32_t> tau,
                            std::size_t k, std::size_t max_len) {
  if (rankings.size() != triggered_inputs.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "rankings and inputs misaligned");
  }
  std::vector<std::vector<std::int32_t>> defended;
  defended.reserve(triggered_inputs.size());
  for (std::size_t i = 0; i < triggered_inputs.size(); ++i) {
    OnionReport report;
    report.ranking = rankings[i];
    defended.push_back(onion_defend(triggered_inputs[i], report, k));
  }
  return 1.0 - asr(decode_greedy_batch(victim, defended, max_len), tau);
}

double smoothed_bleu4(std::span<const std::vector<std::string>> references,
                      std::span<const std::vector<std::string>> hypotheses) {
  if (references.empty()) throw Error(ErrorCode::kEmptyInput, "BLEU of an empty corpus");
  if (references.size() != hypotheses.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "references and hypotheses differ in count");
  }
  std::array<double, 4> matches{};
  std::array<double, 4> totals{};
  double ref_len = 0.0;
  double hyp_len = 0.0;
  for (std::size_t s = 0; s < references.size(); ++s) {
    const auto& ref = references[s];
    const auto& hyp = hypotheses[s];
    ref_len += static_cast<double>(ref.size());
    hyp_len += static_cast<double>(hyp.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, int> ref_counts;
      for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
      std::map<std::vector<std::string>, int> hyp_counts;
      for (std::size_t i = 0; i + n <= hyp.size(); ++i) ++hyp_counts[{hyp.begin() + i, hyp.begin() + i + n}];
      for (const auto& [gram, count] : hyp_counts) {
        const auto it = ref_counts.find(gram);
        matches[n - 1] += it == ref_counts.end() ? 0 : std::min(count, it->second);
        totals[n - 1] += count;
      }
    }
  }
  if (hyp_len == 0.0 || matches[0] == 0.0) return 0.0;
  double log_precision = std::log(matches[0] / totals[0]);
  for (std::size_t n = 1; n < 4; ++n) log_precision += std::log((matches[n] + 1.0) / (totals[n] + 1.0));
  const double brevity = std::exp(std::min(0.0, 1.0 - ref_len / hyp_len));
  return 100.0 * brevity * std::exp(log_precision / 4.0);
}

ClusterStats cluster_stats(const ClusterReport& report, const PoisonManifest& manifest) {
  const std::size_t total = report.cluster_a.size() + report.cluster_b.size();
  if (total == 0) throw Error(ErrorCode::kEmptyInput, "empty cluster report");
  ClusterStats stats;
  stats.smaller_ratio = static_cast<double>(report.cluster_a.size()) / static_cast<double>(total);
  if (!report.cluster_a.empty()) {
    const std::set<std::string> poisoned(manifest.poisoned_ids.begin(), manifest.poisoned_ids.end());
    std::size_t hits = 0;
    for (const std::string& id : report.cluster_a) hits += poisoned.count(id);
    stats.poisoned_ratio = static_cast<double>(hits) / static_cast<double>(report.cluster_a.size());
  }
  return stats;
}

LengthSummary length_analysis(std::span<const std::size_t> lengths, const std::vector<bool>& successes,
                              std::size_t max_len) {
  if (lengths.size() != successes.size()) throw Error(ErrorCode::kDimensionMismatch, "lengths and outcomes misaligned");
  double sum[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  LengthSummary out;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] > max_len) {
      ++out.discarded;
      continue;
    }
    const int bucket = successes[i] ? 1 : 0;
    sum[bucket] += static_cast<double>(lengths[i]);
    ++count[bucket];
  }
  if (count[1] > 0) out.mean_success = sum[1] / static_cast<double>(count[1]);
  if (count[0] > 0) out.mean_failure = sum[0] / static_cast<double>(count[0]);
  return out;
}

}  // namespace codepoison
