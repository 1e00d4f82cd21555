#include "cdghmm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdghmm/errors.hpp"

namespace cdghmm {

double misclassification(const std::vector<int>& decoded, const std::vector<int>& truth, int m,
                         std::vector<int>* permutation) {
  if (decoded.size() != truth.size())
    throw DataError("decoded and true label vectors differ in length");
  // confusion(f, c): cells labelled f by the fit whose true state is c
  std::vector<long> confusion(static_cast<std::size_t>(m) * m, 0);
  long total = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (truth[k] < 0 || truth[k] >= m) continue;
    ++total;
    if (decoded[k] >= 0 && decoded[k] < m) ++confusion[decoded[k] * m + truth[k]];
  }
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  long best_hits = -1;
  do {
    long hits = 0;
    for (int f = 0; f < m; ++f) hits += confusion[f * m + perm[f]];
    if (hits > best_hits) {
      best_hits = hits;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  if (permutation) *permutation = best;
  if (total == 0) return 0.0;
  return 1.0 - static_cast<double>(best_hits) / static_cast<double>(total);
}

HmmParams permute_states(const HmmParams& params, const std::vector<int>& perm) {
  const int m = params.m, K = params.K();
  if (static_cast<int>(perm.size()) != m) throw DataError("permutation size differs from m");
  std::vector<int> full(K);
  for (int j = 0; j < m; ++j) full[j] = perm[j];
  if (params.dropout) full[m] = m;

  HmmParams out = params;
  for (int j = 0; j < K; ++j) {
    out.delta[full[j]] = params.delta[j];
    for (int k = 0; k < K; ++k) out.gamma(full[j], full[k]) = params.gamma(j, k);
  }
  for (int j = 0; j < m; ++j) {
    out.mu.row(perm[j]) = params.mu.row(j);
    out.chol[perm[j]] = params.chol[j];
  }
  // Per-state missingness coefficients move with their state.
  const MissParams& mp = params.miss;
  if (!mp.alpha.empty()) {
    const std::size_t block = mp.alpha.size() / static_cast<std::size_t>(m);
    for (int j = 0; j < m; ++j)
      std::copy_n(mp.alpha.begin() + j * block, block, out.miss.alpha.begin() + perm[j] * block);
  }
  return out;
}

namespace {

double rmse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return a.empty() ? 0.0 : std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace

ScoreReport score_fit(const std::vector<int>& decoded, const std::vector<int>& truth_states,
                      const HmmParams& fitted, const HmmParams& truth) {
  if (fitted.m != truth.m) throw DataError("fitted and true state counts differ");
  if (fitted.p != truth.p) throw DataError("fitted and true variable counts differ");
  const int m = truth.m, p = truth.p;
  ScoreReport rep;
  rep.misclass = misclassification(decoded, truth_states, m, &rep.permutation);
  const HmmParams f = permute_states(fitted, rep.permutation);

  // Gamma entries: regular rows, with the dropout column when either side has one.
  const int cols = (f.dropout || truth.dropout) ? m + 1 : m;
  // A model without the absorbing state assigns dropout probability zero.
  auto gamma_at = [](const HmmParams& hp, int j, int k) {
    return k < hp.K() ? hp.gamma(j, k) : 0.0;
  };
  std::vector<double> a, b;
  for (int j = 0; j < m; ++j)
    for (int k = 0; k < cols; ++k) {
      a.push_back(gamma_at(f, j, k));
      b.push_back(gamma_at(truth, j, k));
    }
  rep.rmse_gamma = rmse(a, b);

  a.clear();
  b.clear();
  for (int j = 0; j < m; ++j) {
    a.push_back(f.delta[j]);
    b.push_back(truth.delta[j]);
  }
  rep.rmse_delta = rmse(a, b);

  a.clear();
  b.clear();
  for (int j = 0; j < m; ++j)
    for (int v = 0; v < p; ++v) {
      a.push_back(f.mu(j, v));
      b.push_back(truth.mu(j, v));
    }
  rep.rmse_mu = rmse(a, b);

  a.clear();
  b.clear();
  for (int j = 0; j < m; ++j) {
    const Eigen::MatrixXd sf = f.sigma(j), st = truth.sigma(j);
    for (int r = 0; r < p; ++r)
      for (int c = r; c < p; ++c) {
        a.push_back(sf(r, c));
        b.push_back(st(r, c));
      }
  }
  rep.rmse_sigma = rmse(a, b);
  return rep;
}

}  // namespace cdghmm
