#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace ateppo;
using namespace ateppo::testing;

namespace {
double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

Mat gaussian(Eigen::Index m, Eigen::Index n, Rng& rng) {
  Mat a(m, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = standard_normal(rng);
  return a;
}
}  // namespace

TEST(GramVolume, SingleRowIsSquaredNorm) {
  Rng rng = make_rng(401);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat v = gaussian(1, uniform_int(rng, 1, 8), rng);
    EXPECT_LT(rel(gram_volume_sq(v), v.squaredNorm()), 1e-12);
  }
  EXPECT_EQ(gram_volume_sq(Mat::Zero(1, 3)), 0.0);
}

TEST(GramVolume, AxisAlignedBoxesGiveProductOfSquaredEdges) {
  const Mat box = (Mat(3, 4) << 2, 0, 0, 0, 0, 0, 0.5, 0, 0, -3, 0, 0).finished();
  EXPECT_LT(rel(gram_volume_sq(box), 4.0 * 0.25 * 9.0), 1e-12);
  const Mat unit = Mat::Identity(4, 4);
  EXPECT_LT(rel(gram_volume_sq(unit), 1.0), 1e-12);
  const Mat rect = (Mat(2, 2) << 3, 0, 0, 7).finished();
  EXPECT_LT(rel(gram_volume_sq(rect), 441.0), 1e-12);
}

TEST(GramVolume, MatchesCofactorBruteForce) {
  Rng rng = make_rng(402);
  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::Index n = uniform_int(rng, 1, 6), m = uniform_int(rng, 1, static_cast<int>(n));
    const Mat a = gaussian(m, n, rng);
    const double oracle = oracles::gram_det_bruteforce(a);
    EXPECT_LT(rel(gram_volume_sq(a), oracle), 1e-10) << m << "x" << n;
  }
}

TEST(GramVolume, OrthogonalInvariance) {
  Rng rng = make_rng(403);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = uniform_int(rng, 1, 6), m = uniform_int(rng, 1, static_cast<int>(n));
    const Mat a = gaussian(m, n, rng);
    const Mat q = oracles::random_orthogonal(n, rng);
    EXPECT_LT(rel(gram_volume_sq(a * q), gram_volume_sq(a)), 1e-10);
    // row-space rotations act on the left as well
    const Mat p = oracles::random_orthogonal(m, rng);
    EXPECT_LT(rel(gram_volume_sq(p * a), gram_volume_sq(a)), 1e-10);
  }
}

TEST(GramVolume, MoreRowsThanColumnsOrDependentRowsIsZero) {
  Rng rng = make_rng(404);
  EXPECT_EQ(gram_volume_sq(gaussian(5, 4, rng)), 0.0);
  Mat a = gaussian(3, 4, rng);
  a.row(2) = 2.0 * a.row(0) - a.row(1);
  EXPECT_EQ(gram_volume_sq(a), 0.0);
  EXPECT_EQ(embedding_rank(a), 2);
  EXPECT_EQ(embedding_rank(Mat::Zero(2, 2)), 0);
}

TEST(GramVolume, ScalesWithSquaredRowScaling) {
  Rng rng = make_rng(405);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat a = gaussian(3, 5, rng);
    const double s = 0.1 + std::abs(standard_normal(rng));
    EXPECT_LT(rel(gram_volume_sq(s * a), std::pow(s, 6) * gram_volume_sq(a)), 1e-10);
    Mat b = a;
    b.row(1) *= s;
    EXPECT_LT(rel(gram_volume_sq(b), s * s * gram_volume_sq(a)), 1e-10);
  }
}

TEST(GramVolume, GramSchmidtHeightsMultiplyToVolume) {
  Rng rng = make_rng(406);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = uniform_int(rng, 1, 6), m = uniform_int(rng, 1, static_cast<int>(n));
    const Mat a = gaussian(m, n, rng);
    const Vec h = gram_schmidt_heights(a);
    EXPECT_LT(rel(h.array().square().prod(), gram_volume_sq(a)), 1e-10);
  }
  const Vec h = gram_schmidt_heights((Mat(2, 2) << 1, 0, 1, 2).finished());
  EXPECT_NEAR(h[0], 1.0, 1e-15);
  EXPECT_NEAR(h[1], 2.0, 1e-15);
}

TEST(GramVolume, RejectsEmptyOrNonFinite) {
  EXPECT_THROW(gram_volume_sq(Mat(0, 3)), std::invalid_argument);
  Mat a = Mat::Ones(2, 2);
  a(0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(gram_volume_sq(a), std::invalid_argument);
}

TEST(Efficiency, UsesEncoderTaskMeans) {
  Rng rng = make_rng(407);
  const Agent agent = make_agent(small_agent_spec(3, 4), rng);
  const Mat m = task_mean_matrix(agent.encoder, 3);
  ASSERT_EQ(m.rows(), 3);
  ASSERT_EQ(m.cols(), 4);
  EXPECT_EQ(efficiency(agent.encoder, 3), gram_volume_sq(m));
  const Vec scale = (Vec(4) << 1, 2, 0.5, 3).finished();
  EXPECT_LT(rel(efficiency(agent.encoder, 3, &scale), gram_volume_sq(m * scale.asDiagonal())), 1e-12);
  const Vec bad = Vec::Ones(3);
  EXPECT_THROW(efficiency(agent.encoder, 3, &bad), ShapeError);
  // latent 2 with 4 tasks: rows cannot be independent
  const Agent small = make_agent(small_agent_spec(4, 2), rng);
  EXPECT_EQ(efficiency(small.encoder, 4), 0.0);
}
