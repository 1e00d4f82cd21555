#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "cdghmm/missingness.hpp"
#include "cdghmm/types.hpp"

namespace cdghmm {

struct Posteriors;

/// Posterior-weighted scatter matrices S_j with their effective counts.
/// pi_j = n_j / N where N is the total regular-state weight (n*T without
/// dropout).
struct WeightedScatter {
  std::vector<Eigen::MatrixXd> s;
  Eigen::VectorXd n_j;
  Eigen::VectorXd pi_j;
  double total = 0.0;
  std::vector<std::string> warnings;

  int m() const { return static_cast<int>(s.size()); }
  int p() const { return s.empty() ? 0 : static_cast<int>(s[0].rows()); }
  /// Builds a scatter from explicit matrices and counts (recomputes pi_j).
  static WeightedScatter from(std::vector<Eigen::MatrixXd> s, Eigen::VectorXd n_j);
};

struct MeanScatter {
  Eigen::MatrixXd mu;  // m x p
  WeightedScatter scatter;
};

/// Mean and scatter update. The scatter is centred on the updated means:
/// S_j = sum u (Var + (E - mu_j)(E - mu_j)') / n_j. Throws NumericError when
/// a state carries no weight; warns when n_j < p.
MeanScatter update_mean_and_scatter(const PanelDataset& data, const Posteriors& post,
                                    const ImputedMoments& moments);

/// Solutions of the per-row linear systems for T. Row r of the result solves
///   sum_j w(j, r) S_j[0:r, 0:r] phi = -sum_j w(j, r) S_j[r, 0:r]'.
/// `row_weights` is m x p. Singular systems fall back to a pivoted
/// least-squares solve and append a warning.
Eigen::MatrixXd solve_t_rows(const std::vector<Eigen::MatrixXd>& s,
                             const Eigen::MatrixXd& row_weights,
                             std::vector<std::string>* warnings = nullptr);

std::vector<ModCholPair> solve_vva(const WeightedScatter& scatter,
                                   std::vector<std::string>* warnings = nullptr);
std::vector<ModCholPair> solve_vea(const WeightedScatter& scatter,
                                   std::vector<std::string>* warnings = nullptr);
std::vector<ModCholPair> solve_vvi(const WeightedScatter& scatter,
                                   std::vector<std::string>* warnings = nullptr);
std::vector<ModCholPair> solve_vei(const WeightedScatter& scatter,
                                   std::vector<std::string>* warnings = nullptr);
std::vector<ModCholPair> solve_eea(const WeightedScatter& scatter,
                                   std::vector<std::string>* warnings = nullptr);
std::vector<ModCholPair> solve_eei(const WeightedScatter& scatter,
                                   std::vector<std::string>* warnings = nullptr);

/// One conditional-maximization cycle for EVA / EVI: T given the current
/// D_j, then D_j given T.
std::vector<ModCholPair> ecm_cycle_eva(const WeightedScatter& scatter,
                                       const std::vector<ModCholPair>& current,
                                       std::vector<std::string>* warnings = nullptr);
std::vector<ModCholPair> ecm_cycle_evi(const WeightedScatter& scatter,
                                       const std::vector<ModCholPair>& current,
                                       std::vector<std::string>* warnings = nullptr);

/// Dispatch to the member's update. `current` seeds the ECM members; when it
/// is null they start from the per-state decomposition of S_j.
std::vector<ModCholPair> solve_member(const ModelStructure& structure,
                                      const WeightedScatter& scatter,
                                      const std::vector<ModCholPair>* current = nullptr,
                                      int ecm_cycles = 1,
                                      std::vector<std::string>* warnings = nullptr);

/// The (T, D)-dependent part of the expected complete-data log-likelihood:
/// -1/2 sum_j n_j (log|D_j| + tr(T_j S_j T_j' D_j^{-1})).
double covariance_objective(const WeightedScatter& scatter,
                            const std::vector<ModCholPair>& chol);

}  // namespace cdghmm
