#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cdghmm/types.hpp"

namespace cdghmm {

struct Posteriors;

// Standard normal helpers. Probabilities fed to logs are clipped to
// [kProbClip, 1 - kProbClip].
inline constexpr double kProbClip = 1e-12;
double normal_cdf(double x);
double normal_quantile(double prob);
/// log(clip(Phi(eta))) and log(1 - clip(Phi(eta))).
double log_probit(double eta);
double log_probit_complement(double eta);

/// Observed-block pieces of one state's Gaussian for one missingness pattern.
struct PatternBlock {
  std::vector<int> obs;
  std::vector<int> mis;
  Eigen::MatrixXd chol_oo;     // lower Cholesky factor of Sigma_oo
  double log_det_oo = 0.0;
  Eigen::MatrixXd regression;  // Sigma_mo Sigma_oo^{-1}
  Eigen::MatrixXd cond_var;    // Sigma_mm - Sigma_mo Sigma_oo^{-1} Sigma_om
};

/// Lazily computed PatternBlocks for every state of a parameter set. Not
/// thread-safe; create one per worker.
class GaussianPatternCache {
 public:
  explicit GaussianPatternCache(const HmmParams& params);

  /// Throws NumericError when Sigma_oo is not positive definite.
  const PatternBlock& block(int state, std::uint64_t pattern);
  const Eigen::MatrixXd& sigma(int state) const { return sigma_[state]; }

  /// log f(x^o | state); 0 when every coordinate is unobserved.
  double log_density_observed(int state, std::span<const double> x,
                              std::uint64_t pattern);

 private:
  const HmmParams& params_;
  std::vector<Eigen::MatrixXd> sigma_;
  std::vector<std::unordered_map<std::uint64_t, PatternBlock>> blocks_;
  Eigen::VectorXd scratch_;
};

/// Conditional first and second moments of each row given its observed part,
/// per regular state.
struct ImputedMoments {
  int n = 0;
  int T = 0;
  int m = 0;
  int p = 0;
  std::vector<double> cond_mean;  // (i, t, state, var)
  std::vector<double> cond_var;   // (i, t, state, var, var); zero when complete
  std::vector<std::uint8_t> has_var;  // (i, t): any coordinate imputed

  std::size_t cell(int i, int t, int c) const {
    return (static_cast<std::size_t>(i) * T + t) * m + c;
  }
  Eigen::Map<const Eigen::VectorXd> mean(int i, int t, int c) const {
    return {cond_mean.data() + cell(i, t, c) * p, p};
  }
  Eigen::Map<const Eigen::MatrixXd> var(int i, int t, int c) const {
    return {cond_var.data() + cell(i, t, c) * p * p, p, p};
  }
  /// E[(X - center)(X - center)' | x^o, c].
  Eigen::MatrixXd sscp(int i, int t, int c, const Eigen::VectorXd& center) const;
};

/// Throws NumericError naming (i, t, pattern) when an observed block is singular.
ImputedMoments conditional_moments(const PanelDataset& data, const HmmParams& params);

/// log P(mask row | state) under the probit mechanism; 0 for MAR.
double miss_log_prob(std::span<const std::uint8_t> mask_row, int state, int t,
                     double time_value, const MissParams& miss);

/// Weighted probit design, aggregated to its sufficient statistics: for every
/// (state, variable, time) the posterior mass of missing and observed cells.
/// Post-dropout cells are excluded.
struct MissDesign {
  int m = 0;
  int p = 0;
  int T = 0;
  std::vector<double> time_values;
  std::vector<double> w_missing;   // (c, j, t)
  std::vector<double> w_observed;  // (c, j, t)
  std::size_t rows_per_state = 0;  // unweighted (i, t, j) triples

  std::size_t at(int c, int j, int t) const {
    return (static_cast<std::size_t>(c) * p + j) * T + t;
  }
  static MissDesign empty(int m, int p, int T, std::vector<double> time_values);
};

MissDesign build_miss_design(const PanelDataset& data, const Posteriors& post, int m);

struct MissFit {
  MissParams params;
  bool clamped = false;  // separation: some coefficient sits on its bound
  std::vector<std::string> warnings;
};

/// Bound applied to every probit coefficient.
inline constexpr double kProbitCoefBound = 10.0;

/// Weighted maximum-likelihood probit fit. Intercept-only and saturated
/// mechanisms use closed forms; shared-slope mechanisms use damped Newton
/// iterations started from `start` (or the intercept closed form).
MissFit fit_miss_params(const MissDesign& design, Mechanism mech,
                        const MissParams* start = nullptr);

/// The weighted objective maximized by fit_miss_params.
double miss_objective(const MissDesign& design, const MissParams& params);

}  // namespace cdghmm
