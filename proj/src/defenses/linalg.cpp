#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "codepoison/defenses.hpp"
#include "codepoison/error.hpp"

namespace codepoison {
namespace {

void require_symmetric(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw Error(ErrorCode::kDimensionMismatch, "eigen decomposition needs a square matrix");
  if (!a.allFinite()) throw Error(ErrorCode::kInvalidArgument, "matrix has non-finite entries");
}

// Descending eigenvalues, ties by original index; each vector signed so its
// largest-magnitude entry is positive.
SymmetricEigen sorted_eigen(const Eigen::VectorXd& values, const Eigen::MatrixXd& vectors) {
  const auto n = values.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return values(a) > values(b); });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(vectors.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index src = order[static_cast<std::size_t>(j)];
    out.values(j) = values(src);
    Eigen::VectorXd v = vectors.col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    out.vectors.col(j) = v;
  }
  return out;
}

}  // namespace

SymmetricEigen symmetric_eigen(const Eigen::MatrixXd& a) {
  require_symmetric(a);
  if (a.rows() == 0) return {};
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a);
  if (solver.info() != Eigen::Success) throw Error(ErrorCode::kDegenerateMatrix, "eigen decomposition did not converge");
  return sorted_eigen(solver.eigenvalues(), solver.eigenvectors());
}

SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& input) {
  require_symmetric(input);
  const Eigen::Index n = input.rows();
  Eigen::MatrixXd a = input;
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const std::size_t max_sweeps = 10 * static_cast<std::size_t>(n * n) + 10;
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (std::sqrt(off) <= 1e-14 * scale) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  return sorted_eigen(a.diagonal(), v);
}

Eigen::MatrixXd pca_project(const Eigen::MatrixXd& rows, std::size_t dims) {
  if (rows.rows() < 1) throw Error(ErrorCode::kEmptyInput, "PCA of an empty matrix");
  const Eigen::MatrixXd centered = rows.rowwise() - rows.colwise().mean();
  const auto n = centered.rows();
  const auto d = centered.cols();
  const auto keep = static_cast<Eigen::Index>(dims);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, keep);
  if (d <= n) {
    const SymmetricEigen e = symmetric_eigen(centered.transpose() * centered);
    const Eigen::Index m = std::min(keep, d);
    out.leftCols(m) = centered * e.vectors.leftCols(m);
  } else {
    // Scores from the Gram matrix: D v_j = sqrt(lambda_j) u_j.
    const SymmetricEigen e = symmetric_eigen(centered * centered.transpose());
    const Eigen::Index m = std::min(keep, n);
    for (Eigen::Index j = 0; j < m; ++j) {
      out.col(j) = e.vectors.col(j) * std::sqrt(std::max(0.0, e.values(j)));
    }
  }
  return out;
}

}  // namespace codepoison
