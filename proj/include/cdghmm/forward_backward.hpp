#pragma once

#include <Eigen/Dense>

#include <vector>

#include "cdghmm/types.hpp"

namespace cdghmm {

/// Per-cell log emission factors for all K chain states:
/// log f(x^o | j) + log P(m | j), with the dropout indicator folded in.
struct EmissionTable {
  int n = 0;
  int T = 0;
  int K = 0;
  std::vector<double> log_f;  // (i, t, k)

  double operator()(int i, int t, int k) const {
    return log_f[(static_cast<std::size_t>(i) * T + t) * K + k];
  }
};

/// Log factors for one cell. Dropped cells give -inf for regular states and
/// 0 for the absorbing state; observed cells the reverse for the absorbing
/// state.
Eigen::VectorXd emission_log_factors(const PanelDataset& data, const HmmParams& params,
                                     int i, int t);
EmissionTable emission_table(const PanelDataset& data, const HmmParams& params);

struct ForwardPass {
  std::vector<double> alpha;      // (i, t, k), each (i, t) slice sums to 1
  std::vector<double> scale_log;  // (i, t) log of the pre-normalization mass
};

/// Scaled forward recursion. Throws NumericError identifying (i, t) when the
/// total emission mass vanishes.
ForwardPass forward(const EmissionTable& table, const HmmParams& params);
ForwardPass forward(const PanelDataset& data, const HmmParams& params);

/// Scaled backward recursion using the forward normalizers; beta at the last
/// time point is 1 for every state.
std::vector<double> backward(const EmissionTable& table, const HmmParams& params,
                             const ForwardPass& fwd);
std::vector<double> backward(const PanelDataset& data, const HmmParams& params);

struct Posteriors {
  int n = 0;
  int T = 0;
  int K = 0;
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> u_hat;      // (i, t, k)
  std::vector<double> v_hat;      // (i, t, j, k); zero at t = 0
  std::vector<double> scale_log;  // (i, t)
  double loglik = 0.0;

  std::size_t cell(int i, int t) const {
    return static_cast<std::size_t>(i) * T + t;
  }
  double u(int i, int t, int k) const { return u_hat[cell(i, t) * K + k]; }
  double v(int i, int t, int j, int k) const {
    return v_hat[(cell(i, t) * K + j) * K + k];
  }
  /// Observed-data log-likelihood of subject i.
  double subject_loglik(int i) const;
};

Posteriors posteriors(const EmissionTable& table, const HmmParams& params);
Posteriors posteriors(const PanelDataset& data, const HmmParams& params);

}  // namespace cdghmm
