#include "cdghmm/forward_backward.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "cdghmm/errors.hpp"
#include "cdghmm/missingness.hpp"

namespace cdghmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log P(missing) and log P(observed) for every (state, variable, time).
struct ProbitTable {
  int p = 0, T = 0;
  std::vector<double> miss, obs;

  ProbitTable(const PanelDataset& data, const MissParams& mp) : p(data.p), T(data.T) {
    if (mp.mechanism == Mechanism::MAR) return;
    const std::size_t size = static_cast<std::size_t>(mp.m) * p * T;
    miss.resize(size);
    obs.resize(size);
    for (int c = 0; c < mp.m; ++c)
      for (int j = 0; j < p; ++j)
        for (int t = 0; t < T; ++t) {
          const double eta = mp.linear_predictor(c, j, t, data.time_values[t]);
          miss[at(c, j, t)] = log_probit(eta);
          obs[at(c, j, t)] = log_probit_complement(eta);
        }
  }
  std::size_t at(int c, int j, int t) const {
    return (static_cast<std::size_t>(c) * p + j) * T + t;
  }
  double row(std::span<const std::uint8_t> mask, int c, int t) const {
    if (miss.empty()) return 0.0;
    double s = 0.0;
    for (int j = 0; j < p; ++j) s += mask[j] ? miss[at(c, j, t)] : obs[at(c, j, t)];
    return s;
  }
};

void fill_cell(const PanelDataset& data, const HmmParams& params, GaussianPatternCache& cache,
               const ProbitTable& probit, int i, int t, double* out) {
  const int K = params.K();
  if (data.dropped(i, t)) {
    for (int k = 0; k < params.m; ++k) out[k] = kNegInf;
    if (params.dropout) out[params.m] = 0.0;
    return;
  }
  const std::uint64_t pat = data.pattern(i, t);
  const auto x = data.row(i, t);
  const auto mask = data.mask_row(i, t);
  for (int c = 0; c < params.m; ++c)
    out[c] = cache.log_density_observed(c, x, pat) + probit.row(mask, c, t);
  if (K > params.m) out[params.m] = kNegInf;
}

[[noreturn]] void vanished(int i, int t) {
  throw NumericError("emission mass vanished at subject " + std::to_string(i + 1) + ", time " +
                     std::to_string(t + 1));
}

}  // namespace

Eigen::VectorXd emission_log_factors(const PanelDataset& data, const HmmParams& params, int i,
                                     int t) {
  GaussianPatternCache cache(params);
  const ProbitTable probit(data, params.miss);
  Eigen::VectorXd out(params.K());
  fill_cell(data, params, cache, probit, i, t, out.data());
  return out;
}

EmissionTable emission_table(const PanelDataset& data, const HmmParams& params) {
  if (data.any_dropout() && !params.dropout)
    throw DataError("dataset has dropout but the model has no absorbing state");
  EmissionTable tab;
  tab.n = data.n;
  tab.T = data.T;
  tab.K = params.K();
  tab.log_f.resize(static_cast<std::size_t>(data.n) * data.T * tab.K);
  GaussianPatternCache cache(params);
  const ProbitTable probit(data, params.miss);
  for (int i = 0; i < data.n; ++i)
    for (int t = 0; t < data.T; ++t)
      fill_cell(data, params, cache, probit, i, t,
                tab.log_f.data() + (static_cast<std::size_t>(i) * data.T + t) * tab.K);
  return tab;
}

ForwardPass forward(const EmissionTable& tab, const HmmParams& params) {
  const int K = tab.K, T = tab.T;
  ForwardPass fp;
  fp.alpha.assign(static_cast<std::size_t>(tab.n) * T * K, 0.0);
  fp.scale_log.assign(static_cast<std::size_t>(tab.n) * T, 0.0);
  Eigen::VectorXd pred(K);
  for (int i = 0; i < tab.n; ++i) {
    for (int t = 0; t < T; ++t) {
      const std::size_t cell = static_cast<std::size_t>(i) * T + t;
      const double* lf = tab.log_f.data() + cell * K;
      double* a = fp.alpha.data() + cell * K;
      if (t == 0) {
        pred = params.delta;
      } else {
        Eigen::Map<const Eigen::RowVectorXd> prev(a - K, K);
        pred = (prev * params.gamma).transpose();
      }
      double shift = kNegInf;
      for (int k = 0; k < K; ++k)
        if (pred[k] > 0.0) shift = std::max(shift, lf[k]);
      if (!std::isfinite(shift)) vanished(i, t);
      double mass = 0.0;
      for (int k = 0; k < K; ++k) {
        a[k] = pred[k] > 0.0 ? pred[k] * std::exp(lf[k] - shift) : 0.0;
        mass += a[k];
      }
      if (!(mass > 0.0) || !std::isfinite(mass)) vanished(i, t);
      for (int k = 0; k < K; ++k) a[k] /= mass;
      fp.scale_log[cell] = shift + std::log(mass);
    }
  }
  return fp;
}

ForwardPass forward(const PanelDataset& data, const HmmParams& params) {
  return forward(emission_table(data, params), params);
}

std::vector<double> backward(const EmissionTable& tab, const HmmParams& params,
                             const ForwardPass& fwd) {
  const int K = tab.K, T = tab.T;
  std::vector<double> beta(static_cast<std::size_t>(tab.n) * T * K, 1.0);
  Eigen::VectorXd w(K);
  for (int i = 0; i < tab.n; ++i) {
    for (int t = T - 2; t >= 0; --t) {
      const std::size_t next = static_cast<std::size_t>(i) * T + t + 1;
      const double* lf = tab.log_f.data() + next * K;
      const double* bn = beta.data() + next * K;
      for (int k = 0; k < K; ++k) w[k] = std::exp(lf[k] - fwd.scale_log[next]) * bn[k];
      Eigen::Map<Eigen::VectorXd> b(beta.data() + (next - 1) * K, K);
      b = params.gamma * w;
    }
  }
  return beta;
}

std::vector<double> backward(const PanelDataset& data, const HmmParams& params) {
  const EmissionTable tab = emission_table(data, params);
  return backward(tab, params, forward(tab, params));
}

double Posteriors::subject_loglik(int i) const {
  const auto first = scale_log.begin() + static_cast<std::ptrdiff_t>(i) * T;
  return std::accumulate(first, first + T, 0.0);
}

Posteriors posteriors(const EmissionTable& tab, const HmmParams& params) {
  ForwardPass fwd = forward(tab, params);
  Posteriors post;
  post.n = tab.n;
  post.T = tab.T;
  post.K = tab.K;
  post.beta = backward(tab, params, fwd);
  post.alpha = std::move(fwd.alpha);
  post.scale_log = std::move(fwd.scale_log);
  post.loglik = std::accumulate(post.scale_log.begin(), post.scale_log.end(), 0.0);

  const int K = tab.K;
  const std::size_t cells = static_cast<std::size_t>(tab.n) * tab.T;
  post.u_hat.resize(cells * K);
  for (std::size_t k = 0; k < cells * K; ++k) post.u_hat[k] = post.alpha[k] * post.beta[k];
  // Renormalize away rounding so every cell sums to exactly one.
  for (std::size_t c = 0; c < cells; ++c) {
    double s = 0.0;
    for (int k = 0; k < K; ++k) s += post.u_hat[c * K + k];
    for (int k = 0; k < K; ++k) post.u_hat[c * K + k] /= s;
  }

  post.v_hat.assign(cells * K * K, 0.0);
  std::vector<double> w(K);
  for (int i = 0; i < tab.n; ++i)
    for (int t = 1; t < tab.T; ++t) {
      const std::size_t cell = post.cell(i, t);
      const double* a_prev = post.alpha.data() + (cell - 1) * K;
      const double* b = post.beta.data() + cell * K;
      const double* lf = tab.log_f.data() + cell * K;
      double* v = post.v_hat.data() + cell * K * K;
      for (int k = 0; k < K; ++k) w[k] = std::exp(lf[k] - post.scale_log[cell]) * b[k];
      for (int j = 0; j < K; ++j) {
        if (a_prev[j] == 0.0) continue;
        for (int k = 0; k < K; ++k) v[j * K + k] = a_prev[j] * params.gamma(j, k) * w[k];
      }
    }
  return post;
}

Posteriors posteriors(const PanelDataset& data, const HmmParams& params) {
  return posteriors(emission_table(data, params), params);
}

}  // namespace cdghmm
