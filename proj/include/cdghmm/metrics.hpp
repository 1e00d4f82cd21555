#pragma once

#include <vector>

#include "cdghmm/types.hpp"

namespace cdghmm {

struct ScoreReport {
  double misclass = 0.0;
  double rmse_gamma = 0.0;
  double rmse_delta = 0.0;
  double rmse_mu = 0.0;
  double rmse_sigma = 0.0;
  std::vector<int> permutation;  // fitted label -> true label
};

/// Label-switching-resolved misclassification over non-dropped cells, plus
/// parameter RMSEs under the same permutation. Entry sets: gamma over the
/// regular rows (with the dropout column when present), delta over regular
/// entries, mu over all m*p entries, Sigma over upper triangles.
/// Throws DataError when the state counts or shapes disagree.
ScoreReport score_fit(const std::vector<int>& decoded, const std::vector<int>& truth_states,
                      const HmmParams& fitted, const HmmParams& truth);

/// Misclassification minimized over label permutations; `permutation` receives
/// the minimizing map when non-null. Cells whose true label is >= m are skipped.
double misclassification(const std::vector<int>& decoded, const std::vector<int>& truth_states,
                         int m, std::vector<int>* permutation = nullptr);

/// Relabels states of a parameter set: new state perm[j] takes old state j.
HmmParams permute_states(const HmmParams& params, const std::vector<int>& perm);

}  // namespace cdghmm
