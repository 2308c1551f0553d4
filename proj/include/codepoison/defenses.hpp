#pragma once

// Spectral signature, activation clustering and ONION, with the linear
// algebra they rely on.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "codepoison/model.hpp"

namespace codepoison {

// Eigenpairs of a symmetric matrix, eigenvalues descending; column j of
// vectors belongs to values(j).
struct SymmetricEigen {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};

// Householder tridiagonalization followed by implicit QR. Each eigenvector
// is signed so that its largest-magnitude entry is positive.
SymmetricEigen symmetric_eigen(const Eigen::MatrixXd& a);
// Cyclic Jacobi rotations until the off-diagonal norm falls below 1e-14 of
// the largest entry, at most 10 * n^2 sweeps. Slow but independent of the
// solver above.
SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& a);

struct SpectralConfig {
  std::vector<std::size_t> ks = {1, 2, 3};  // right singular vectors to report, 1-based
  double alpha_hat = 0.05;
  double beta = 1.5;
  std::size_t batch_size = 1000;

  void validate() const;
};

struct VectorResult {
  std::size_t k = 1;
  std::vector<double> scores;      // aligned with DetectionReport::ids
  std::vector<std::size_t> ranking;  // indices into ids, most suspicious first
  std::vector<std::string> flagged;  // sorted
};

struct DetectionReport {
  std::string method = "spectral_signature";
  std::vector<std::string> ids;
  SpectralConfig config;
  std::vector<VectorResult> vectors;
  bool degenerate = false;

  const VectorResult& vector(std::size_t k) const;
  void save(const std::filesystem::path& path) const;
  static DetectionReport load(const std::filesystem::path& path);
};

// Per batch of config.batch_size rows: center, score o_i = ((R_i - mean) . v_k)^2,
// flag the top round(alpha_hat * beta * batch rows). An all-zero centered
// batch scores 0 everywhere and marks the report degenerate.
DetectionReport spectral_signature(const Eigen::MatrixXd& representations, std::span<const std::string> ids,
                                   const SpectralConfig& config);

// Brute-force reference: Jacobi decomposition of the covariance D^T D of the
// whole matrix as one batch.
std::vector<double> spectral_scores_by_covariance(const Eigen::MatrixXd& representations, std::size_t k);

struct ClusterReport {
  std::vector<std::string> cluster_a;  // the smaller cluster
  std::vector<std::string> cluster_b;
  double smaller_ratio = 0.0;
  bool degenerate = false;
};

// Rows projected on the top principal directions (centered).
Eigen::MatrixXd pca_project(const Eigen::MatrixXd& rows, std::size_t dims);

struct KMeansResult {
  std::vector<std::size_t> assignment;
  Eigen::MatrixXd centers;        // k x d
  std::vector<double> objective;  // after each iteration
};

// Farthest-point seeding from a seeded first center.
KMeansResult kmeans(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed, std::size_t max_iterations = 100);

ClusterReport activation_cluster(const Eigen::MatrixXd& representations, std::span<const std::string> ids,
                                 std::uint64_t seed);

struct OnionReport {
  double p0 = 0.0;
  std::vector<double> scores;        // f_i = p0 - p_i per position
  std::vector<std::size_t> ranking;  // positions, most suspicious first
};

OnionReport onion_rank(std::span<const std::int32_t> tokens, const Seq2SeqParams& lm);
std::vector<std::int32_t> onion_defend(std::span<const std::int32_t> tokens, const OnionReport& report,
                                       std::size_t k);
std::vector<std::int32_t> onion_defend(std::span<const std::int32_t> tokens, const Seq2SeqParams& lm, std::size_t k);

}  // namespace codepoison
