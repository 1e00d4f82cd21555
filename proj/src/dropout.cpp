#include "cdghmm/dropout.hpp"

#include "cdghmm/errors.hpp"
#include "cdghmm/forward_backward.hpp"

namespace cdghmm {

std::vector<std::optional<int>> detect_dropout(const PanelDataset& data) {
  std::vector<std::optional<int>> out(data.n);
  for (int i = 0; i < data.n; ++i) {
    int last = -1;
    for (int t = data.T - 1; t >= 0; --t)
      if (!data.row_all_missing(i, t)) {
        last = t;
        break;
      }
    if (last < 0)
      throw DataError("subject " + std::to_string(i + 1) + " has no observed value");
    if (last + 1 < data.T) out[i] = last + 1;
  }
  return out;
}

TransitionUpdate mstep_transition(const Posteriors& post, const DropoutAugmentation& aug) {
  const int K = aug.K(), m = aug.m;
  if (post.K != K) throw DataError("posteriors do not match the augmented state count");
  TransitionUpdate up;
  up.delta = Eigen::VectorXd::Zero(K);
  for (int i = 0; i < post.n; ++i)
    for (int j = 0; j < m; ++j) up.delta[j] += post.u(i, 0, j);
  if (up.delta.sum() > 0.0) {
    up.delta /= up.delta.sum();
  } else {
    up.delta.head(m).setConstant(1.0 / m);
    up.warnings.push_back("initial distribution has no mass; set to uniform");
  }

  up.gamma = Eigen::MatrixXd::Zero(K, K);
  for (int i = 0; i < post.n; ++i)
    for (int t = 1; t < post.T; ++t)
      for (int j = 0; j < m; ++j)
        for (int k = 0; k < K; ++k) up.gamma(j, k) += post.v(i, t, j, k);
  for (int j = 0; j < m; ++j) {
    const double row = up.gamma.row(j).sum();
    if (row > 0.0) {
      up.gamma.row(j) /= row;
    } else {
      up.gamma.row(j).setConstant(1.0 / K);
      up.warnings.push_back("transition row " + std::to_string(j + 1) +
                            " has no mass; set to uniform");
    }
  }
  if (aug.enabled) up.gamma(m, m) = 1.0;
  return up;
}

HmmParams expand_dropout(const HmmParams& params, double into_absorbing) {
  if (params.dropout) return params;
  HmmParams out = params;
  const int m = params.m;
  out.dropout = true;
  out.delta = Eigen::VectorXd::Zero(m + 1);
  out.delta.head(m) = params.delta;
  out.gamma = Eigen::MatrixXd::Zero(m + 1, m + 1);
  out.gamma.topLeftCorner(m, m) = (1.0 - into_absorbing) * params.gamma;
  out.gamma.col(m).head(m).setConstant(into_absorbing);
  out.gamma(m, m) = 1.0;
  return out;
}

HmmParams contract_dropout(const HmmParams& params) {
  if (!params.dropout) return params;
  HmmParams out = params;
  const int m = params.m;
  out.dropout = false;
  out.delta = params.delta.head(m) / params.delta.head(m).sum();
  out.gamma = params.gamma.topLeftCorner(m, m);
  for (int j = 0; j < m; ++j) {
    const double row = out.gamma.row(j).sum();
    if (row > 0.0)
      out.gamma.row(j) /= row;
    else
      out.gamma.row(j).setConstant(1.0 / m);
  }
  return out;
}

}  // namespace cdghmm
