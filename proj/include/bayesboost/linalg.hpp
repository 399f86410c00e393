#ifndef BAYESBOOST_LINALG_HPP
#define BAYESBOOST_LINALG_HPP

#include <cmath>

#include "types.hpp"

namespace bayesboost {

/// A random-effects design block together with the raw (uncorrected) block and
/// the basis it was made orthogonal to.
struct CorrectedDesign {
  Matrix Z;                // corrected block, basis' * Z ~ 0
  Matrix Z_tilde;          // raw block
  Matrix projector_basis;  // n x r, possibly 0 columns
  bool used_pseudoinverse = false;  // basis was rank deficient
};

/// Applies the residual-maker projection Z = (I - B (B'B)^-1 B') Z_tilde.
/// An empty basis returns Z_tilde unchanged. A rank-deficient basis falls back
/// to the pseudoinverse projection and flags it.
inline CorrectedDesign residual_maker_correct(const Matrix& basis, const Matrix& z_tilde) {
  if (!z_tilde.allFinite() || !basis.allFinite())
    throw NumericError("residual_maker_correct: non-finite input");
  CorrectedDesign out;
  out.Z_tilde = z_tilde;
  out.projector_basis = basis;
  if (basis.cols() == 0) {
    out.Z = z_tilde;
    return out;
  }
  if (basis.rows() != z_tilde.rows())
    throw DataError("residual_maker_correct: basis and block row counts differ");
  Eigen::ColPivHouseholderQR<Matrix> qr(basis);
  if (qr.rank() == basis.cols()) {
    out.Z = z_tilde - basis * qr.solve(z_tilde);
  } else {
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(basis);
    out.Z = z_tilde - basis * cod.solve(z_tilde);
    out.used_pseudoinverse = true;
  }
  return out;
}

/// Frobenius-nearest symmetric matrix with all eigenvalues >= eps: symmetrize,
/// eigendecompose, floor the spectrum. Input already satisfying the floor is
/// returned as its symmetrized self without reconstruction.
inline Matrix nearest_positive_definite(const Matrix& m_in, double eps) {
  if (!m_in.allFinite())
    throw NumericError("nearest_positive_definite: non-finite input");
  if (m_in.rows() != m_in.cols())
    throw DataError("nearest_positive_definite: matrix must be square");
  const Matrix S = 0.5 * (m_in + m_in.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  if (es.info() != Eigen::Success)
    throw NumericError("nearest_positive_definite: eigendecomposition failed");
  const Vector& lam = es.eigenvalues();
  if (lam.minCoeff() >= eps) return S;
  Vector floored = lam.cwiseMax(eps);
  Matrix R = es.eigenvectors() * floored.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (R + R.transpose());
}

/// Default repair floor: eps = 1e-8 * max(largest eigenvalue, 1).
inline Matrix nearest_positive_definite(const Matrix& m_in) {
  if (!m_in.allFinite())
    throw NumericError("nearest_positive_definite: non-finite input");
  if (m_in.rows() != m_in.cols())
    throw DataError("nearest_positive_definite: matrix must be square");
  const Matrix S = 0.5 * (m_in + m_in.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  if (es.info() != Eigen::Success)
    throw NumericError("nearest_positive_definite: eigendecomposition failed");
  const Vector& lam = es.eigenvalues();
  const double eps = 1e-8 * std::max(lam.maxCoeff(), 1.0);
  if (lam.minCoeff() >= eps) return S;
  Vector floored = lam.cwiseMax(eps);
  Matrix R = es.eigenvectors() * floored.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (R + R.transpose());
}

struct CholeskyResult {
  Matrix L;       // lower triangular, L L' = M (or repaired M)
  bool repaired;  // true when the factor is of the repaired matrix
};

/// Cholesky factor of a symmetric matrix; a failed factorization triggers one
/// positive-definite repair before giving up.
inline CholeskyResult safe_cholesky(const Matrix& m_in) {
  if (!m_in.allFinite()) throw NumericError("safe_cholesky: non-finite input");
  if (m_in.rows() != m_in.cols())
    throw DataError("safe_cholesky: matrix must be square");
  Eigen::LLT<Matrix> llt(m_in);
  if (llt.info() == Eigen::Success) return {Matrix(llt.matrixL()), false};
  Eigen::LLT<Matrix> llt2(nearest_positive_definite(m_in));
  if (llt2.info() != Eigen::Success)
    throw NumericError("safe_cholesky: factorization failed after repair");
  return {Matrix(llt2.matrixL()), true};
}

/// Inverse of a symmetric positive definite matrix via Cholesky; repairs and
/// retries once on failure.
inline Matrix invert_spd(const Matrix& m_in) {
  const CholeskyResult ch = safe_cholesky(m_in);
  const Matrix I = Matrix::Identity(m_in.rows(), m_in.cols());
  Matrix Linv = ch.L.triangularView<Eigen::Lower>().solve(I);
  return Linv.transpose() * Linv;
}

}  // namespace bayesboost

#endif
