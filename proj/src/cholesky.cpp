#include "cdghmm/cholesky.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "cdghmm/errors.hpp"

namespace cdghmm {

ModCholPair ModCholPair::identity(int p) {
  return {Eigen::MatrixXd::Identity(p, p), Eigen::VectorXd::Ones(p)};
}

ModCholPair decompose(const Eigen::MatrixXd& sigma) {
  const int p = static_cast<int>(sigma.rows());
  if (sigma.cols() != p) throw DataError("decompose: matrix is not square");
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw DataError("decompose: matrix is not symmetric");

  // Lower Cholesky with an explicit pivot check so the failing minor is known.
  const double scale = sigma.diagonal().cwiseAbs().maxCoeff();
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(p, p);
  for (int r = 0; r < p; ++r) {
    double pivot = sigma(r, r) - L.row(r).head(r).squaredNorm();
    if (!(pivot > 1e-12 * scale))
      throw NumericError("decompose: matrix is not positive definite (leading minor " +
                         std::to_string(r + 1) + ")");
    L(r, r) = std::sqrt(pivot);
    for (int q = r + 1; q < p; ++q)
      L(q, r) = (sigma(q, r) - L.row(q).head(r).dot(L.row(r).head(r))) / L(r, r);
  }

  // Sigma = L L' = T^{-1} D T^{-T} with L = T^{-1} D^{1/2}.
  Eigen::MatrixXd L_inv = L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(p, p));
  ModCholPair out;
  out.d = L.diagonal().array().square();
  out.T = L.diagonal().asDiagonal() * L_inv;
  out.T.triangularView<Eigen::StrictlyUpper>().setZero();
  out.T.diagonal().setOnes();
  return out;
}

Eigen::MatrixXd reconstruct_sigma_inverse(const ModCholPair& pair) {
  return pair.T.transpose() * pair.d.cwiseInverse().asDiagonal() * pair.T;
}

Eigen::MatrixXd reconstruct_sigma(const ModCholPair& pair) {
  const int p = pair.dim();
  Eigen::MatrixXd t_inv =
      pair.T.triangularView<Eigen::UnitLower>().solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::MatrixXd s = t_inv * pair.d.asDiagonal() * t_inv.transpose();
  return 0.5 * (s + s.transpose());
}

double log_det(const ModCholPair& pair) { return pair.d.array().log().sum(); }

double log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                   const ModCholPair& pair) {
  const int p = pair.dim();
  Eigen::VectorXd z = pair.T.triangularView<Eigen::UnitLower>() * (x - mu);
  const double quad = (z.array().square() / pair.d.array()).sum();
  return -0.5 * p * std::log(2.0 * std::numbers::pi) - 0.5 * log_det(pair) - 0.5 * quad;
}

Eigen::VectorXd predictor_coefficients(const ModCholPair& pair, int r) {
  return -pair.T.row(r).head(r).transpose();
}

}  // namespace cdghmm
