#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "codepoison/defenses.hpp"
#include "codepoison/error.hpp"
#include "codepoison/rng.hpp"

namespace codepoison {
namespace {

using nlohmann::json;

std::vector<std::size_t> rank_descending(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// Squared projections of the centered rows onto the k-th right singular
// vector, computed from whichever of D D^T and D^T D is smaller. From the
// Gram side, (D v_k)_i = sqrt(lambda_k) u_k(i).
std::vector<double> batch_scores(const Eigen::MatrixXd& centered, std::size_t k) {
  const auto n = centered.rows();
  const auto d = centered.cols();
  std::vector<double> scores(static_cast<std::size_t>(n), 0.0);
  const auto j = static_cast<Eigen::Index>(k - 1);
  if (d <= n) {
    if (j >= d) return scores;
    const SymmetricEigen e = symmetric_eigen(centered.transpose() * centered);
    if (e.values(j) <= 0.0) return scores;
    const Eigen::VectorXd proj = centered * e.vectors.col(j);
    for (Eigen::Index i = 0; i < n; ++i) scores[static_cast<std::size_t>(i)] = proj(i) * proj(i);
  } else {
    if (j >= n) return scores;
    const SymmetricEigen e = symmetric_eigen(centered * centered.transpose());
    if (e.values(j) <= 0.0) return scores;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double u = e.vectors(i, j);
      scores[static_cast<std::size_t>(i)] = e.values(j) * u * u;
    }
  }
  return scores;
}

json vector_to_json(const VectorResult& v) {
  return {{"k", v.k}, {"scores", v.scores}, {"ranking", v.ranking}, {"flagged", v.flagged}};
}

}  // namespace

void SpectralConfig::validate() const {
  if (ks.empty()) throw Error(ErrorCode::kInvalidArgument, "at least one singular vector index is required");
  for (std::size_t k : ks) {
    if (k < 1) throw Error(ErrorCode::kInvalidArgument, "singular vector indices are 1-based");
  }
  if (!(alpha_hat > 0.0) || !(beta > 0.0)) throw Error(ErrorCode::kInvalidArgument, "alpha_hat and beta must be positive");
  if (batch_size < 2) throw Error(ErrorCode::kInvalidArgument, "batch size must be at least 2");
}

const VectorResult& DetectionReport::vector(std::size_t k) const {
  for (const VectorResult& v : vectors) {
    if (v.k == k) return v;
  }
  throw Error(ErrorCode::kMismatchedConfig, "report has no results for singular vector " + std::to_string(k));
}

void DetectionReport::save(const std::filesystem::path& path) const {
  json j;
  j["method"] = method;
  j["ids"] = ids;
  j["config"] = {{"ks", config.ks},
                 {"alpha_hat", config.alpha_hat},
                 {"beta", config.beta},
                 {"batch_size", config.batch_size}};
  j["degenerate"] = degenerate;
  j["vectors"] = json::array();
  for (const VectorResult& v : vectors) j["vectors"].push_back(vector_to_json(v));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

DetectionReport DetectionReport::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "cannot read detection report " + path.string());
  DetectionReport r;
  try {
    const json j = json::parse(in);
    r.method = j.at("method").get<std::string>();
    r.ids = j.at("ids").get<std::vector<std::string>>();
    const json& c = j.at("config");
    r.config.ks = c.at("ks").get<std::vector<std::size_t>>();
    r.config.alpha_hat = c.at("alpha_hat").get<double>();
    r.config.beta = c.at("beta").get<double>();
    r.config.batch_size = c.at("batch_size").get<std::size_t>();
    r.degenerate = j.at("degenerate").get<bool>();
    for (const json& v : j.at("vectors")) {
      VectorResult vr;
      vr.k = v.at("k").get<std::size_t>();
      vr.scores = v.at("scores").get<std::vector<double>>();
      vr.ranking = v.at("ranking").get<std::vector<std::size_t>>();
      vr.flagged = v.at("flagged").get<std::vector<std::string>>();
      r.vectors.push_back(std::move(vr));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, "malformed detection report " + path.string() + ": " + e.what());
  }
  return r;
}

DetectionReport spectral_signature(const Eigen::MatrixXd& representations, std::span<const std::string> ids,
                                   const SpectralConfig& config) {
  config.validate();
  const auto n = static_cast<std::size_t>(representations.rows());
  if (n < 2) throw Error(ErrorCode::kEmptyInput, "spectral signature needs at least two representations");
  if (ids.size() != n) throw Error(ErrorCode::kDimensionMismatch, "ids and representation rows differ in count");
  if (!representations.allFinite()) throw Error(ErrorCode::kInvalidArgument, "representations are not finite");

  // Consecutive batches; a trailing batch of one row joins its predecessor.
  std::vector<std::pair<std::size_t, std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += config.batch_size) {
    batches.emplace_back(start, std::min(n, start + config.batch_size));
  }
  if (batches.size() > 1 && batches.back().second - batches.back().first < 2) {
    batches[batches.size() - 2].second = n;
    batches.pop_back();
  }

  DetectionReport report;
  report.ids.assign(ids.begin(), ids.end());
  report.config = config;
  std::vector<Eigen::MatrixXd> centered;
  for (const auto& [lo, hi] : batches) {
    const Eigen::MatrixXd rows = representations.middleRows(static_cast<Eigen::Index>(lo),
                                                            static_cast<Eigen::Index>(hi - lo));
    centered.push_back(rows.rowwise() - rows.colwise().mean());
    if (centered.back().cwiseAbs().maxCoeff() == 0.0) report.degenerate = true;
  }

  for (std::size_t k : config.ks) {
    VectorResult v;
    v.k = k;
    v.scores.assign(n, 0.0);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto [lo, hi] = batches[b];
      const std::vector<double> scores = batch_scores(centered[b], k);
      std::copy(scores.begin(), scores.end(), v.scores.begin() + static_cast<std::ptrdiff_t>(lo));
      const auto quota = std::min(
          hi - lo, static_cast<std::size_t>(std::llround(config.alpha_hat * config.beta * static_cast<double>(hi - lo))));
      const std::vector<std::size_t> local = rank_descending(scores);
      for (std::size_t r = 0; r < quota; ++r) v.flagged.push_back(report.ids[lo + local[r]]);
    }
    v.ranking = rank_descending(v.scores);
    std::sort(v.flagged.begin(), v.flagged.end());
    report.vectors.push_back(std::move(v));
  }
  return report;
}

std::vector<double> spectral_scores_by_covariance(const Eigen::MatrixXd& representations, std::size_t k) {
  if (k < 1 || k > static_cast<std::size_t>(representations.cols())) {
    throw Error(ErrorCode::kInvalidArgument, "singular vector index out of range");
  }
  const Eigen::MatrixXd centered = representations.rowwise() - representations.colwise().mean();
  const SymmetricEigen e = jacobi_eigen(centered.transpose() * centered);
  const Eigen::VectorXd proj = centered * e.vectors.col(static_cast<Eigen::Index>(k - 1));
  std::vector<double> scores(static_cast<std::size_t>(proj.size()));
  for (Eigen::Index i = 0; i < proj.size(); ++i) scores[static_cast<std::size_t>(i)] = proj(i) * proj(i);
  return scores;
}

KMeansResult kmeans(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed, std::size_t max_iterations) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k < 1 || n < 1) throw Error(ErrorCode::kInvalidArgument, "k-means needs k >= 1 and at least one point");
  KMeansResult r;
  r.centers.resize(static_cast<Eigen::Index>(k), points.cols());
  Rng rng(seed);
  const auto row = [&](std::size_t i) { return points.row(static_cast<Eigen::Index>(i)); };

  // Farthest-point seeding: each further center is the point farthest from
  // its nearest chosen center, lowest index on ties.
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(rng.below(n));
  for (std::size_t c = 0; c < k; ++c) {
    r.centers.row(static_cast<Eigen::Index>(c)) = row(pick);
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], (row(i) - r.centers.row(static_cast<Eigen::Index>(c))).squaredNorm());
    }
    pick = static_cast<std::size_t>(std::max_element(nearest.begin(), nearest.end()) - nearest.begin());
  }

  r.assignment.assign(n, k);
  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dist = (row(i) - r.centers.row(static_cast<Eigen::Index>(c))).squaredNorm();
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      if (r.assignment[i] != best) changed = true;
      r.assignment[i] = best;
      objective += best_d;
    }
    r.objective.push_back(objective);
    if (!changed) break;
    // An empty cluster keeps its previous center.
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(r.centers.rows(), r.centers.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(r.assignment[i])) += row(i);
      ++counts[r.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      if (counts[c] > 0) r.centers.row(ci) = sums.row(ci) / static_cast<double>(counts[c]);
    }
  }
  return r;
}

ClusterReport activation_cluster(const Eigen::MatrixXd& representations, std::span<const std::string> ids,
                                 std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(representations.rows());
  if (n < 2) throw Error(ErrorCode::kEmptyInput, "activation clustering needs at least two representations");
  if (ids.size() != n) throw Error(ErrorCode::kDimensionMismatch, "ids and representation rows differ in count");
  ClusterReport report;
  const Eigen::MatrixXd projected = pca_project(representations, 3);
  std::vector<std::size_t> assignment(n, 0);
  if (projected.cwiseAbs().maxCoeff() == 0.0) {
    report.degenerate = true;
  } else {
    assignment = kmeans(projected, 2, seed).assignment;
  }
  std::array<std::vector<std::string>, 2> clusters;
  for (std::size_t i = 0; i < n; ++i) clusters[assignment[i]].push_back(ids[i]);
  for (auto& c : clusters) std::sort(c.begin(), c.end());
  const std::size_t small = clusters[1].size() < clusters[0].size() ? 1 : 0;
  report.cluster_a = std::move(clusters[small]);
  report.cluster_b = std::move(clusters[1 - small]);
  report.smaller_ratio = static_cast<double>(report.cluster_a.size()) / static_cast<double>(n);
  if (report.cluster_a.empty()) report.degenerate = true;
  return report;
}

OnionReport onion_rank(std::span<const std::int32_t> tokens, const Seq2SeqParams& lm) {
  if (tokens.size() < 2) throw Error(ErrorCode::kEmptySequence, "suspicion scores need at least two tokens");
  std::vector<std::vector<std::int32_t>> seqs;
  seqs.reserve(tokens.size() + 1);
  seqs.emplace_back(tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::vector<std::int32_t> s;
    s.reserve(tokens.size() - 1);
    s.insert(s.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(i));
    s.insert(s.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i) + 1, tokens.end());
    seqs.push_back(std::move(s));
  }
  const std::vector<double> ppl = lm_perplexities(lm, seqs);
  OnionReport report;
  report.p0 = ppl.front();
  report.scores.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) report.scores.push_back(report.p0 - ppl[i + 1]);
  report.ranking = rank_descending(report.scores);
  return report;
}

std::vector<std::int32_t> onion_defend(std::span<const std::int32_t> tokens, const OnionReport& report,
                                       std::size_t k) {
  if (k == 0) return {tokens.begin(), tokens.end()};
  const std::size_t removed = std::min(k, report.ranking.size());
  std::vector<bool> drop(tokens.size(), false);
  for (std::size_t r = 0; r < removed; ++r) {
    if (report.ranking[r] >= tokens.size()) throw Error(ErrorCode::kDimensionMismatch, "ranking exceeds token count");
    drop[report.ranking[r]] = true;
  }
  std::vector<std::int32_t> out;
  out.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!drop[i]) out.push_back(tokens[i]);
  }
  return out;
}

std::vector<std::int32_t> onion_defend(std::span<const std::int32_t> tokens, const Seq2SeqParams& lm, std::size_t k) {
  if (k == 0) return {tokens.begin(), tokens.end()};
  if (tokens.size() < 2) return {};
  return onion_defend(tokens, onion_rank(tokens, lm), k);
}

}  // namespace codepoison
