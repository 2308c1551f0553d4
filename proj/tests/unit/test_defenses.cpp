#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "codepoison/defenses.hpp"
#include "codepoison/error.hpp"
#include "codepoison/rng.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace codepoison;

namespace {

Eigen::MatrixXd from_json(const nlohmann::json& rows) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j].get<double>();
    }
  }
  return m;
}

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("r" + std::to_string(1000 + i));
  return ids;
}

Eigen::MatrixXd gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

Eigen::MatrixXd random_symmetric(Rng& rng, Eigen::Index n) {
  const Eigen::MatrixXd a = gaussian(rng, n, n);
  return a + a.transpose();
}

}  // namespace

TEST_CASE("both eigen solvers reconstruct symmetric matrices") {
  Rng rng(1);
  for (Eigen::Index n : {1, 2, 5, 12}) {
    const Eigen::MatrixXd a = random_symmetric(rng, n);
    for (const SymmetricEigen& e : {symmetric_eigen(a), jacobi_eigen(a)}) {
      const Eigen::MatrixXd rebuilt = e.vectors * e.values.asDiagonal() * e.vectors.transpose();
      CHECK((rebuilt - a).cwiseAbs().maxCoeff() < 1e-10);
      CHECK((e.vectors.transpose() * e.vectors - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() < 1e-10);
      for (Eigen::Index j = 1; j < n; ++j) CHECK(e.values(j - 1) >= e.values(j));
    }
    const SymmetricEigen x = symmetric_eigen(a);
    const SymmetricEigen y = jacobi_eigen(a);
    CHECK((x.values - y.values).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((x.vectors - y.vectors).cwiseAbs().maxCoeff() < 1e-8);
  }
  CHECK_THROWS_AS(symmetric_eigen(Eigen::MatrixXd::Zero(2, 3)), Error);
}

TEST_CASE("spectral scores match the frozen covariance oracle") {
  for (const auto& c : testsupport::read_json("spectral_oracle.json")) {
    CAPTURE(c["name"].get<std::string>());
    const Eigen::MatrixXd m = from_json(c["matrix"]);
    const auto ids = make_ids(static_cast<std::size_t>(m.rows()));
    for (const auto& [key, expected] : c["scores"].items()) {
      const std::size_t k = std::stoul(key);
      SpectralConfig config;
      config.ks = {k};
      const DetectionReport report = spectral_signature(m, ids, config);
      const std::vector<double> jacobi = spectral_scores_by_covariance(m, k);
      for (std::size_t i = 0; i < expected.size(); ++i) {
        CHECK(report.vector(k).scores[i] == doctest::Approx(expected[i].get<double>()).epsilon(1e-9).scale(1.0));
        CHECK(jacobi[i] == doctest::Approx(expected[i].get<double>()).epsilon(1e-9).scale(1.0));
      }
    }
  }
}

TEST_CASE("offset points take the top spectral scores") {
  const auto cases = testsupport::read_json("spectral_oracle.json");
  const Eigen::MatrixXd toy = from_json(cases[0]["matrix"]);
  const auto ids = make_ids(100);
  SpectralConfig config;
  config.ks = {1};
  config.alpha_hat = 0.05;
  config.beta = 1.0;
  const DetectionReport report = spectral_signature(toy, ids, config);
  const auto& v = report.vector(1);
  std::set<std::size_t> top(v.ranking.begin(), v.ranking.begin() + 5);
  CHECK(top == std::set<std::size_t>{95, 96, 97, 98, 99});
  CHECK(v.flagged == std::vector<std::string>{"r1095", "r1096", "r1097", "r1098", "r1099"});
}

TEST_CASE("flag count follows alpha beta and batch size") {
  Rng rng(2);
  const Eigen::MatrixXd m = gaussian(rng, 1000, 6);
  const auto ids = make_ids(1000);
  SpectralConfig config;
  const DetectionReport report = spectral_signature(m, ids, config);
  CHECK(report.vectors.size() == 3);
  for (const VectorResult& v : report.vectors) {
    CHECK(v.flagged.size() == 75);
    std::vector<std::size_t> sorted = v.ranking;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
  }
  config.batch_size = 500;
  const DetectionReport halves = spectral_signature(m, ids, config);
  CHECK(halves.vector(1).flagged.size() == 2 * std::llround(0.075 * 500));

  // A larger beta flags a superset.
  SpectralConfig wider;
  wider.beta = 2.0;
  const DetectionReport more = spectral_signature(m, ids, wider);
  const auto& small = report.vector(1).flagged;
  const auto& big = more.vector(1).flagged;
  CHECK(std::includes(big.begin(), big.end(), small.begin(), small.end()));
}

TEST_CASE("spectral scores are shift invariant and scale quadratically") {
  Rng rng(3);
  const Eigen::MatrixXd m = gaussian(rng, 80, 4);
  const auto ids = make_ids(80);
  SpectralConfig config;
  const DetectionReport base = spectral_signature(m, ids, config);
  Eigen::RowVectorXd shift(4);
  shift << 3.0, -7.0, 100.0, 0.5;
  const DetectionReport shifted = spectral_signature(m.rowwise() + shift, ids, config);
  const DetectionReport scaled = spectral_signature(3.0 * m, ids, config);
  for (std::size_t k : {1, 2, 3}) {
    for (std::size_t i = 0; i < 80; ++i) {
      const double s = base.vector(k).scores[i];
      CHECK(shifted.vector(k).scores[i] == doctest::Approx(s).epsilon(1e-8).scale(1.0));
      CHECK(scaled.vector(k).scores[i] == doctest::Approx(9.0 * s).epsilon(1e-8).scale(1.0));
    }
    CHECK(scaled.vector(k).flagged == base.vector(k).flagged);
  }
}

TEST_CASE("identical representations are degenerate") {
  const Eigen::MatrixXd same = Eigen::MatrixXd::Constant(10, 3, 2.5);
  SpectralConfig config;
  const DetectionReport report = spectral_signature(same, make_ids(10), config);
  CHECK(report.degenerate);
  for (double s : report.vector(1).scores) CHECK(s == 0.0);
  CHECK_THROWS_AS(spectral_signature(Eigen::MatrixXd::Zero(1, 3), make_ids(1), config), Error);
  config.batch_size = 1;
  CHECK_THROWS_AS(config.validate(), Error);
}

TEST_CASE("detection reports round-trip through JSON") {
  Rng rng(4);
  const Eigen::MatrixXd m = gaussian(rng, 30, 3);
  SpectralConfig config;
  config.ks = {1, 2};
  const DetectionReport report = spectral_signature(m, make_ids(30), config);
  const auto path = std::filesystem::temp_directory_path() / "codepoison_test_defenses" / "report.json";
  report.save(path);
  const DetectionReport loaded = DetectionReport::load(path);
  CHECK(loaded.ids == report.ids);
  CHECK(loaded.config.ks == report.config.ks);
  CHECK(loaded.vector(2).scores == report.vector(2).scores);
  CHECK(loaded.vector(2).ranking == report.vector(2).ranking);
  CHECK(loaded.vector(2).flagged == report.vector(2).flagged);
  CHECK_THROWS_AS(loaded.vector(3), Error);
  try {
    DetectionReport::load(path.parent_path() / "absent.json");
    FAIL("expected MissingArtifact");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMissingArtifact);
  }
}

TEST_CASE("PCA of data in a three-dimensional subspace is an isometry") {
  Rng rng(5);
  const Eigen::MatrixXd coords = gaussian(rng, 40, 3);
  const Eigen::MatrixXd basis = Eigen::HouseholderQR<Eigen::MatrixXd>(gaussian(rng, 10, 3)).householderQ() *
                                Eigen::MatrixXd::Identity(10, 3);
  Eigen::RowVectorXd offset = gaussian(rng, 1, 10);
  const Eigen::MatrixXd embedded = (coords * basis.transpose()).rowwise() + offset;
  for (const Eigen::MatrixXd& data : {embedded, Eigen::MatrixXd(embedded.topRows(6))}) {
    const Eigen::MatrixXd projected = pca_project(data, 3);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < data.rows(); ++j) {
        worst = std::max(worst, std::abs((data.row(i) - data.row(j)).norm() - (projected.row(i) - projected.row(j)).norm()));
      }
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("k-means separates two distant blobs") {
  Rng rng(6);
  Eigen::MatrixXd points = gaussian(rng, 100, 3);
  points.bottomRows(50).col(0).array() += 10.0;
  const KMeansResult r = kmeans(points, 2, 9);
  for (std::size_t i = 1; i < 50; ++i) CHECK(r.assignment[i] == r.assignment[0]);
  for (std::size_t i = 51; i < 100; ++i) CHECK(r.assignment[i] == r.assignment[50]);
  CHECK(r.assignment[0] != r.assignment[50]);
  for (std::size_t t = 1; t < r.objective.size(); ++t) CHECK(r.objective[t] <= r.objective[t - 1] + 1e-12);
  const KMeansResult again = kmeans(points, 2, 9);
  CHECK(again.assignment == r.assignment);
  CHECK(again.objective == r.objective);

  const auto ids = make_ids(100);
  const ClusterReport report = activation_cluster(points, ids, 9);
  CHECK(report.cluster_a.size() == 50);
  CHECK(report.cluster_b.size() == 50);
  CHECK(report.smaller_ratio == 0.5);
  CHECK_FALSE(report.degenerate);
}

TEST_CASE("k-means objective never increases on overlapping data") {
  Rng rng(7);
  const Eigen::MatrixXd points = gaussian(rng, 300, 3);
  for (std::uint64_t seed : {1, 2, 3}) {
    const KMeansResult r = kmeans(points, 2, seed);
    CHECK_FALSE(r.objective.empty());
    for (std::size_t t = 1; t < r.objective.size(); ++t) CHECK(r.objective[t] <= r.objective[t - 1] + 1e-9);
  }
}

TEST_CASE("activation clustering isolates a small shifted group") {
  Rng rng(8);
  Eigen::MatrixXd reps = gaussian(rng, 200, 12);
  reps.bottomRows(10).col(4).array() += 25.0;
  const auto ids = make_ids(200);
  const ClusterReport report = activation_cluster(reps, ids, 1);
  std::vector<std::string> expected(ids.end() - 10, ids.end());
  CHECK(report.cluster_a == expected);
  CHECK(report.smaller_ratio == doctest::Approx(0.05));
}

TEST_CASE("a duplicated point gives a degenerate clustering") {
  const Eigen::MatrixXd same = Eigen::MatrixXd::Constant(8, 4, 1.0);
  const ClusterReport report = activation_cluster(same, make_ids(8), 1);
  CHECK(report.degenerate);
  CHECK(report.cluster_a.empty());
  CHECK(report.cluster_b.size() == 8);
}

TEST_CASE("ONION scores follow perplexity drops") {
  const ModelDims dims{20, 8, 8};
  const Seq2SeqParams lm = Seq2SeqParams::random(ModelRole::kLanguageModel, dims, 3);
  const std::vector<std::int32_t> tokens = {5, 9, 12, 7, 6};
  const OnionReport report = onion_rank(tokens, lm);
  REQUIRE(report.scores.size() == 5);
  CHECK(report.p0 == doctest::Approx(lm_perplexity(lm, tokens)));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::vector<std::int32_t> without = tokens;
    without.erase(without.begin() + static_cast<std::ptrdiff_t>(i));
    CHECK(report.scores[i] == doctest::Approx(report.p0 - lm_perplexity(lm, without)));
  }
  for (std::size_t r = 1; r < report.ranking.size(); ++r) {
    CHECK(report.scores[report.ranking[r - 1]] >= report.scores[report.ranking[r]]);
  }

  const std::vector<std::int32_t> repeated(6, 9);
  const OnionReport flat = onion_rank(repeated, lm);
  for (double s : flat.scores) CHECK(s == doctest::Approx(flat.scores[0]).epsilon(1e-12));

  CHECK(onion_defend(tokens, report, 0) == tokens);
  const std::vector<std::int32_t> cut = onion_defend(tokens, report, 2);
  CHECK(cut.size() == 3);
  std::vector<std::int32_t> expected;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i != report.ranking[0] && i != report.ranking[1]) expected.push_back(tokens[i]);
  }
  CHECK(cut == expected);
  CHECK(onion_defend(tokens, lm, 9).empty());
  CHECK(onion_defend(tokens, lm, 2) == cut);

  const OnionReport shorter = onion_rank(cut, lm);
  CHECK(shorter.scores.size() == cut.size());
  CHECK_THROWS_AS(onion_rank(std::vector<std::int32_t>{5}, lm), Error);
}

TEST_CASE("ONION ranks an injected unseen token first") {
  const ModelDims dims{24, 16, 16};
  const std::vector<std::int32_t> sentence = {4, 5, 6, 7, 8, 9, 10, 11, 12, 13};
  const std::vector<std::vector<std::int32_t>> data(24, sentence);
  TrainConfig config;
  config.optimizer = Optimizer::kAdam;
  config.learning_rate = 0.02;
  config.batch_size = 8;
  config.max_epochs = 40;
  const Seq2SeqParams lm = train_lm(dims, data, data, config);
  std::vector<std::int32_t> injected = sentence;
  injected.insert(injected.begin() + 4, 20);
  const OnionReport report = onion_rank(injected, lm);
  CHECK(report.ranking.front() == 4);
}
