#pragma once

// Squared volume of the parallelotope spanned by per-task mean skills:
// det(A A^T) for the m x n matrix A whose rows are the embeddings.

#include "ateppo/agent.hpp"

#include <Eigen/SVD>

namespace ateppo {

inline constexpr double kRankTolerance = 1e-12;

inline void check_embedding(const Mat& a) {
  if (a.rows() < 1) throw std::invalid_argument("embedding matrix needs at least one row");
  if (!a.allFinite()) throw std::invalid_argument("embedding matrix has non-finite entries");
}

/// Numerical rank: singular values below kRankTolerance * max count as zero.
inline int embedding_rank(const Mat& a) {
  check_embedding(a);
  const Vec s = Eigen::JacobiSVD<Mat>(a).singularValues();
  if (s.size() == 0 || s[0] == 0.0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) r += s[i] > kRankTolerance * s[0] ? 1 : 0;
  return r;
}

/// det(A A^T) as the product of squared singular values of A; exactly 0 when
/// the rows are dependent (m > n, or a singular value under tolerance).
inline double gram_volume_sq(const Mat& a) {
  check_embedding(a);
  if (a.rows() > a.cols()) return 0.0;
  const Vec s = Eigen::JacobiSVD<Mat>(a).singularValues();
  if (s[0] == 0.0) return 0.0;
  double v = 1.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s[i] <= kRankTolerance * s[0]) return 0.0;
    v *= s[i] * s[i];
  }
  return v;
}

/// Base-times-height form: Gram-Schmidt heights h_i of each row over the span
/// of the previous rows; the squared volume is prod h_i^2.
inline Vec gram_schmidt_heights(const Mat& a) {
  check_embedding(a);
  Mat q(a.cols(), 0);
  Vec h(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Vec v = a.row(i).transpose();
    for (Eigen::Index j = 0; j < q.cols(); ++j) v -= q.col(j).dot(v) * q.col(j);
    h[i] = v.norm();
    if (h[i] > 0.0) {
      q.conservativeResize(Eigen::NoChange, q.cols() + 1);
      q.col(q.cols() - 1) = v / h[i];
    }
  }
  return h;
}

/// Rows are per-task encoder means.
inline Mat task_mean_matrix(const GaussianNet& encoder, int k) { return encoder_heads(encoder, k).mean.transpose(); }

/// gram_volume_sq of the (optionally per-dimension scaled) task mean matrix.
inline double efficiency(const GaussianNet& encoder, int k, const Vec* scaling = nullptr) {
  Mat a = task_mean_matrix(encoder, k);
  if (scaling) {
    if (scaling->size() != a.cols()) throw ShapeError("efficiency: scaling has the wrong length");
    if ((scaling->array() <= 0.0).any()) throw std::invalid_argument("efficiency: scaling must be positive");
    a = a * scaling->asDiagonal();
  }
  return gram_volume_sq(a);
}

}  // namespace ateppo
