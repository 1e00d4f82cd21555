#pragma once

#include <Eigen/Dense>

namespace cdghmm {

/// Modified Cholesky factors of a covariance matrix: T * Sigma * T' = D.
///
/// T is unit lower triangular; its below-diagonal entries are the negated
/// generalized autoregressive coefficients. D is stored as its diagonal
/// (the innovation variances).
struct ModCholPair {
  Eigen::MatrixXd T;
  Eigen::VectorXd d;

  int dim() const { return static_cast<int>(d.size()); }
  static ModCholPair identity(int p);
};

/// Factor an SPD matrix. Throws NumericError naming the first leading minor
/// whose pivot falls below 1e-12 * max(diag), or DataError when the input is
/// not symmetric within 1e-10.
ModCholPair decompose(const Eigen::MatrixXd& sigma);

/// T' D^{-1} T.
Eigen::MatrixXd reconstruct_sigma_inverse(const ModCholPair& pair);

/// T^{-1} D T^{-T}.
Eigen::MatrixXd reconstruct_sigma(const ModCholPair& pair);

/// log|Sigma| = sum log d (T has unit determinant).
double log_det(const ModCholPair& pair);

/// Multivariate normal log-density evaluated through the factors.
double log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                   const ModCholPair& pair);

/// Coefficients of the least-squares predictor of variable r from variables
/// 0..r-1, i.e. -T(r, 0..r-1).
Eigen::VectorXd predictor_coefficients(const ModCholPair& pair, int r);

}  // namespace cdghmm
