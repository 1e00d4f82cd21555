#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "cdghmm/types.hpp"

namespace cdghmm {

struct Posteriors;

struct DropoutAugmentation {
  bool enabled = false;
  int m = 0;

  int K() const { return enabled ? m + 1 : m; }
};

/// First time index t (0-based, t >= 1) from which every row is unobserved.
/// Interior gaps followed by observed rows are not dropout. Throws DataError
/// for a subject with no observed value at all.
std::vector<std::optional<int>> detect_dropout(const PanelDataset& data);

struct TransitionUpdate {
  Eigen::VectorXd delta;
  Eigen::MatrixXd gamma;
  std::vector<std::string> warnings;
};

/// delta_j = mean of u_hat at the first time point; gamma rows are
/// normalized transition-posterior sums. The absorbing row is fixed to the
/// unit vector and delta's absorbing entry to zero. Rows without mass fall
/// back to uniform with a warning.
TransitionUpdate mstep_transition(const Posteriors& post, const DropoutAugmentation& aug);

/// Adds (or removes) the absorbing state. Added state: delta entry 0,
/// transition column `into_absorbing` for regular rows (rescaling the rest),
/// and the unit absorbing row.
HmmParams expand_dropout(const HmmParams& params, double into_absorbing = 0.0);
HmmParams contract_dropout(const HmmParams& params);

}  // namespace cdghmm
