#pragma once

// Attack, detection and task-quality measures.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "codepoison/defenses.hpp"
#include "codepoison/model.hpp"
#include "codepoison/poisoner.hpp"

namespace codepoison {

struct MetricParams {
  double beta = 1.5;
  double gamma = 1.0;
  std::size_t k = 1;
  std::vector<std::string> tau;
  double alpha = 0.05;
};

// |flagged ∩ poisoned| / (alpha * min(beta, 1) * n). The denominator is the
// number of poisoned examples a perfect detector can find among the
// round(alpha * beta * n) it removes, so the rate stays within [0, 1].
double dsr_at_beta(const PoisonManifest& manifest, std::span<const std::string> flagged, double beta, double alpha,
                   std::size_t n);
// Checks that the report was produced with the same alpha and beta.
double dsr_at_beta(const PoisonManifest& manifest, const DetectionReport& report, std::size_t k, double beta,
                   double alpha);

// Fraction of outputs equal to tau.
double asr(std::span<const std::vector<std::int32_t>> outputs, std::span<const std::int32_t> tau);
double asr(const Seq2SeqParams& victim, std::span<const std::vector<std::int32_t>> triggered_inputs,
           std::span<const std::int32_t> tau, std::size_t max_len);

// Successes that were also not flagged by the test-time detector, over all
// triggered inputs.
double asr_d(std::span<const std::vector<std::int32_t>> outputs, const std::vector<bool>& detected,
             std::span<const std::int32_t> tau);

// Mean over examples of |trigger positions among the top round(M * gamma)
// ranked positions| / (M * gamma), M being the trigger token count.
double tdr_at_gamma(std::span<const std::vector<std::size_t>> rankings,
                    std::span<const std::vector<std::size_t>> trigger_positions, double gamma);

// Fraction of triggered inputs whose decode differs from tau after the k
// highest-ranked tokens are removed.
double defense_success_at_k(const Seq2SeqParams& victim, std::span<const std::vector<std::int32_t>> triggered_inputs,
                            std::span<const std::vector<std::size_t>> rankings, std::span<const std::int32_t> tau,
                            std::size_t k, std::size_t max_len);

// Corpus-level BLEU-4 with add-one smoothing for n >= 2, brevity penalty
// exp(min(0, 1 - ref_len / hyp_len)), scaled to [0, 100].
double smoothed_bleu4(std::span<const std::vector<std::string>> references,
                      std::span<const std::vector<std::string>> hypotheses);

struct ClusterStats {
  double smaller_ratio = 0.0;
  double poisoned_ratio = 0.0;
};

ClusterStats cluster_stats(const ClusterReport& report, const PoisonManifest& manifest);

struct LengthSummary {
  std::optional<double> mean_success;
  std::optional<double> mean_failure;
  std::size_t discarded = 0;
};

// Inputs longer than max_len tokens are left out.
LengthSummary length_analysis(std::span<const std::size_t> lengths, const std::vector<bool>& successes,
                              std::size_t max_len = 256);

}  // namespace codepoison
