#include "cdghmm/em.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "cdghmm/covariance.hpp"
#include "cdghmm/dropout.hpp"
#include "cdghmm/errors.hpp"
#include "cdghmm/missingness.hpp"
#include "cdghmm/parallel.hpp"

namespace cdghmm {

namespace {

constexpr double kInitSmoothing = 0.05;
constexpr double kAscentTolerance = 1e-8;

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

void add_unique(std::vector<std::string>& into, const std::vector<std::string>& from) {
  for (const auto& w : from)
    if (std::find(into.begin(), into.end(), w) == into.end()) into.push_back(w);
}

struct MStep {
  HmmParams params;
  std::vector<std::string> warnings;
};

// Transitions, means and scatter, covariance solve, then the probit fit.
MStep m_step(const PanelDataset& data, const FitConfig& cfg, const Posteriors& post,
             const ImputedMoments& moments, const HmmParams* previous) {
  MStep out;
  HmmParams& hp = out.params;
  hp.m = cfg.m;
  hp.p = data.p;
  hp.dropout = post.K > cfg.m;

  DropoutAugmentation aug{hp.dropout, cfg.m};
  TransitionUpdate tr = mstep_transition(post, aug);
  hp.delta = std::move(tr.delta);
  hp.gamma = std::move(tr.gamma);
  add_unique(out.warnings, tr.warnings);

  MeanScatter ms = update_mean_and_scatter(data, post, moments);
  hp.mu = std::move(ms.mu);
  add_unique(out.warnings, ms.scatter.warnings);
  std::vector<std::string> cov_warnings;
  hp.chol = solve_member(cfg.structure, ms.scatter, previous ? &previous->chol : nullptr, 1,
                         &cov_warnings);
  add_unique(out.warnings, cov_warnings);

  if (cfg.mechanism == Mechanism::MAR) {
    hp.miss = MissParams::zeros(Mechanism::MAR, cfg.m, data.p, data.T);
  } else {
    MissFit mf = fit_miss_params(build_miss_design(data, post, cfg.m), cfg.mechanism,
                                 previous ? &previous->miss : nullptr);
    hp.miss = std::move(mf.params);
    add_unique(out.warnings, mf.warnings);
  }
  return out;
}

std::vector<double> column_means(const PanelDataset& data) {
  std::vector<double> sum(data.p, 0.0);
  std::vector<long> count(data.p, 0);
  for (int i = 0; i < data.n; ++i)
    for (int t = 0; t < data.T; ++t)
      for (int j = 0; j < data.p; ++j)
        if (!data.missing(i, t, j)) {
          sum[j] += data.values[data.index(i, t, j)];
          ++count[j];
        }
  for (int j = 0; j < data.p; ++j) {
    if (count[j] == 0)
      throw DataError("variable " + std::to_string(j + 1) + " is never observed");
    sum[j] /= static_cast<double>(count[j]);
  }
  return sum;
}

std::vector<int> kmeans(const Eigen::MatrixXd& X, int k, std::mt19937_64& rng) {
  const int N = static_cast<int>(X.rows());
  Eigen::MatrixXd centers(k, X.cols());
  std::uniform_int_distribution<int> pick(0, N - 1);
  centers.row(0) = X.row(pick(rng));
  Eigen::VectorXd d2(N);
  for (int c = 1; c < k; ++c) {
    for (int r = 0; r < N; ++r) {
      double best = std::numeric_limits<double>::infinity();
      for (int q = 0; q < c; ++q) best = std::min(best, (X.row(r) - centers.row(q)).squaredNorm());
      d2[r] = best;
    }
    const double total = d2.sum();
    int chosen = pick(rng);
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (int r = 0; r < N; ++r) {
        target -= d2[r];
        if (target <= 0.0) {
          chosen = r;
          break;
        }
      }
    }
    centers.row(c) = X.row(chosen);
  }

  std::vector<int> label(N, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (int r = 0; r < N; ++r) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double dd = (X.row(r) - centers.row(c)).squaredNorm();
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      if (best != label[r]) {
        label[r] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, X.cols());
    std::vector<int> size(k, 0);
    for (int r = 0; r < N; ++r) {
      sum.row(label[r]) += X.row(r);
      ++size[label[r]];
    }
    for (int c = 0; c < k; ++c) {
      if (size[c] > 0) {
        centers.row(c) = sum.row(c) / size[c];
        continue;
      }
      // Empty cluster: move it to the point farthest from its center.
      int far = 0;
      double fd = -1.0;
      for (int r = 0; r < N; ++r) {
        const double dd = (X.row(r) - centers.row(label[r])).squaredNorm();
        if (dd > fd) {
          fd = dd;
          far = r;
        }
      }
      centers.row(c) = X.row(far);
      label[far] = c;
    }
  }
  return label;
}

void smooth(HmmParams& hp) {
  const int m = hp.m, K = hp.K();
  const double eps = kInitSmoothing;
  hp.delta.head(m) = (1.0 - eps) * hp.delta.head(m).array() + eps / m;
  for (int j = 0; j < m; ++j)
    hp.gamma.row(j) = (1.0 - eps) * hp.gamma.row(j).array() + eps / K;
}

}  // namespace

InitMethod parse_init_method(std::string_view name) {
  const std::string s = lower(name);
  if (s == "kmeans") return InitMethod::KMeans;
  if (s == "random") return InitMethod::Random;
  if (s == "mixed") return InitMethod::Mixed;
  throw DataError("unknown initialization '" + std::string(name) + "'");
}

std::string_view init_method_name(InitMethod method) {
  switch (method) {
    case InitMethod::KMeans: return "kmeans";
    case InitMethod::Random: return "random";
    case InitMethod::Mixed: return "mixed";
  }
  return "?";
}

DropoutMode parse_dropout_mode(std::string_view name) {
  const std::string s = lower(name);
  if (s == "auto") return DropoutMode::Auto;
  if (s == "column") return DropoutMode::Column;
  if (s == "off") return DropoutMode::Off;
  throw DataError("unknown dropout mode '" + std::string(name) + "'");
}

std::string_view dropout_mode_name(DropoutMode mode) {
  switch (mode) {
    case DropoutMode::Auto: return "auto";
    case DropoutMode::Column: return "column";
    case DropoutMode::Off: return "off";
  }
  return "?";
}

void FitConfig::validate() const {
  if (m < 1) throw DataError("state count must be >= 1");
  if (max_iter < 1) throw DataError("max_iter must be >= 1");
  if (!(rel_tol > 0.0)) throw DataError("rel_tol must be > 0");
  if (n_starts < 1) throw DataError("n_starts must be >= 1");
}

PanelDataset prepare_dropout(const PanelDataset& data, DropoutMode mode) {
  PanelDataset out = data;
  switch (mode) {
    case DropoutMode::Auto:
      out.dropout_time = detect_dropout(out);
      break;
    case DropoutMode::Column:
      break;
    case DropoutMode::Off:
      std::fill(out.dropout_time.begin(), out.dropout_time.end(), std::nullopt);
      break;
  }
  return out;
}

Initialization initialize(const PanelDataset& data, const FitConfig& cfg, int start) {
  cfg.validate();
  const int m = cfg.m, p = data.p, T = data.T;
  const bool dropout = data.any_dropout();
  const int K = dropout ? m + 1 : m;
  const std::vector<double> fill = column_means(data);

  std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed & 0xffffffffU),
                    static_cast<std::uint64_t>(cfg.seed >> 32),
                    static_cast<std::uint64_t>(start)};
  std::mt19937_64 rng(seq);

  // Mean-imputed rows; fully missing rows and dropped cells stay out of the pool.
  ImputedMoments mo;
  mo.n = data.n;
  mo.T = T;
  mo.m = m;
  mo.p = p;
  const std::size_t cells = static_cast<std::size_t>(data.n) * T;
  mo.cond_mean.assign(cells * m * p, 0.0);
  mo.cond_var.assign(cells * m * p * p, 0.0);
  mo.has_var.assign(cells, 0);
  std::vector<std::size_t> pool;
  for (int i = 0; i < data.n; ++i)
    for (int t = 0; t < T; ++t) {
      const std::size_t cell = static_cast<std::size_t>(i) * T + t;
      Eigen::VectorXd row(p);
      for (int j = 0; j < p; ++j)
        row[j] = data.missing(i, t, j) ? fill[j] : data.values[data.index(i, t, j)];
      for (int c = 0; c < m; ++c)
        std::copy(row.data(), row.data() + p, mo.cond_mean.data() + mo.cell(i, t, c) * p);
      if (!data.dropped(i, t) && !data.row_all_missing(i, t)) pool.push_back(cell);
    }

  Posteriors seed;
  seed.n = data.n;
  seed.T = T;
  seed.K = K;
  seed.u_hat.assign(cells * K, 0.0);
  seed.v_hat.assign(cells * K * K, 0.0);
  for (int i = 0; i < data.n; ++i)
    for (int t = 0; t < T; ++t) {
      double* u = seed.u_hat.data() + seed.cell(i, t) * K;
      if (data.dropped(i, t))
        u[m] = 1.0;
      else
        std::fill(u, u + m, 1.0 / m);
    }

  const InitMethod method =
      cfg.init == InitMethod::Mixed ? (start % 2 ? InitMethod::Random : InitMethod::KMeans)
                                    : cfg.init;
  if (method == InitMethod::KMeans) {
    std::set<std::vector<double>> distinct;
    Eigen::MatrixXd X(pool.size(), p);
    for (std::size_t r = 0; r < pool.size(); ++r) {
      const std::size_t cell = pool[r];
      Eigen::Map<const Eigen::VectorXd> row(mo.cond_mean.data() + cell * m * p, p);
      X.row(r) = row.transpose();
      if (distinct.size() <= static_cast<std::size_t>(m))
        distinct.insert(std::vector<double>(row.data(), row.data() + p));
    }
    if (distinct.size() < static_cast<std::size_t>(m))
      throw DataError("fewer distinct rows than states; cannot initialize " + std::to_string(m) +
                      " states");
    const std::vector<int> label = kmeans(X, m, rng);
    for (std::size_t r = 0; r < pool.size(); ++r) {
      double* u = seed.u_hat.data() + pool[r] * K;
      std::fill(u, u + m, 0.0);
      u[label[r]] = 1.0;
    }
  } else {
    std::exponential_distribution<double> ex(1.0);
    for (int i = 0; i < data.n; ++i)
      for (int t = 0; t < T; ++t) {
        if (data.dropped(i, t)) continue;
        double* u = seed.u_hat.data() + seed.cell(i, t) * K;
        double s = 0.0;
        for (int c = 0; c < m; ++c) s += (u[c] = ex(rng));
        for (int c = 0; c < m; ++c) u[c] /= s;
      }
  }

  for (int i = 0; i < data.n; ++i)
    for (int t = 1; t < T; ++t) {
      const double* a = seed.u_hat.data() + seed.cell(i, t - 1) * K;
      const double* b = seed.u_hat.data() + seed.cell(i, t) * K;
      double* v = seed.v_hat.data() + seed.cell(i, t) * K * K;
      for (int j = 0; j < K; ++j)
        for (int k = 0; k < K; ++k) v[j * K + k] = a[j] * b[k];
    }

  Initialization init;
  MStep ms = m_step(data, cfg, seed, mo, nullptr);
  init.params = std::move(ms.params);
  smooth(init.params);
  init.seed = std::move(seed);
  return init;
}

FitResult run_em(const PanelDataset& data, const FitConfig& cfg, HmmParams params) {
  cfg.validate();
  FitResult res;
  res.structure = cfg.structure;
  res.mechanism = cfg.mechanism;
  res.dropout_mode = cfg.dropout;
  res.seed = cfg.seed;

  Posteriors post;
  for (int iter = 0;; ++iter) {
    post = posteriors(data, params);
    const double l = post.loglik;
    if (!res.loglik_trace.empty()) {
      const double prev = res.loglik_trace.back();
      if (l < prev - kAscentTolerance) {
        res.loglik_trace.push_back(l);
        throw NumericError("log-likelihood decreased from " + std::to_string(prev) + " to " +
                           std::to_string(l) + " at iteration " + std::to_string(iter) +
                           " (model " + cfg.structure.name() + ", mechanism " +
                           std::string(mechanism_name(cfg.mechanism)) + ")");
      }
      res.loglik_trace.push_back(l);
      if (std::abs(l - prev) / (1.0 + std::abs(l)) < cfg.rel_tol) {
        res.converged = true;
        break;
      }
    } else {
      res.loglik_trace.push_back(l);
    }
    if (iter == cfg.max_iter) break;
    // Conditional moments and posteriors both use the current parameters.
    const ImputedMoments mo = conditional_moments(data, params);
    MStep ms = m_step(data, cfg, post, mo, &params);
    add_unique(res.diagnostics, ms.warnings);
    params = std::move(ms.params);
    res.iterations = iter + 1;
  }

  res.params = std::move(params);
  res.loglik = post.loglik;
  res.rho = total_free_params(cfg.structure, cfg.m, data.p, res.params.dropout, res.params.miss);
  const ModelScore sc = score(res.loglik, res.rho, post);
  res.bic = sc.bic;
  res.icl = sc.icl;

  res.decoded.resize(static_cast<std::size_t>(data.n) * data.T);
  for (std::size_t c = 0; c < res.decoded.size(); ++c) {
    const double* u = post.u_hat.data() + c * post.K;
    res.decoded[c] = static_cast<int>(std::max_element(u, u + post.K) - u);
  }
  if (!res.converged)
    res.diagnostics.push_back("reached max_iter=" + std::to_string(cfg.max_iter) +
                              " without convergence");
  return res;
}

FitResult fit(const PanelDataset& raw, const FitConfig& cfg) {
  cfg.validate();
  validate_dataset(raw);
  const PanelDataset data = prepare_dropout(raw, cfg.dropout);
  validate_dataset(data);

  std::vector<std::optional<FitResult>> runs(cfg.n_starts);
  std::vector<std::string> errors(cfg.n_starts);
  parallel_for(static_cast<std::size_t>(cfg.n_starts), resolve_threads(cfg.threads),
               [&](std::size_t s) {
                 try {
                   Initialization init = initialize(data, cfg, static_cast<int>(s));
                   runs[s] = run_em(data, cfg, std::move(init.params));
                 } catch (const NumericError& e) {
                   errors[s] = e.what();
                 }
               });

  int best = -1;
  for (int s = 0; s < cfg.n_starts; ++s)
    if (runs[s] && (best < 0 || runs[s]->loglik > runs[best]->loglik)) best = s;
  if (best < 0) {
    std::string msg = "all " + std::to_string(cfg.n_starts) + " starts failed";
    for (const auto& e : errors)
      if (!e.empty()) {
        msg += "; first: " + e;
        break;
      }
    throw NumericError(msg);
  }
  FitResult out = std::move(*runs[best]);
  out.best_start = best;
  for (int s = 0; s < cfg.n_starts; ++s)
    if (!errors[s].empty())
      out.diagnostics.push_back("start " + std::to_string(s) + " failed: " + errors[s]);
  return out;
}

Decoding local_decode(const PanelDataset& data, const HmmParams& params) {
  const Posteriors post = posteriors(data, params);
  Decoding d;
  d.n = post.n;
  d.T = post.T;
  d.K = post.K;
  d.probs = post.u_hat;
  d.labels.resize(static_cast<std::size_t>(d.n) * d.T);
  for (std::size_t c = 0; c < d.labels.size(); ++c) {
    const double* u = d.probs.data() + c * d.K;
    d.labels[c] = static_cast<int>(std::max_element(u, u + d.K) - u);
  }
  return d;
}

ModelScore score(double loglik, long rho, const Posteriors& post) {
  ModelScore s;
  s.bic = 2.0 * loglik - static_cast<double>(rho) * std::log(static_cast<double>(post.n) * post.T);
  double ent = 0.0;
  const std::size_t cells = static_cast<std::size_t>(post.n) * post.T;
  for (std::size_t c = 0; c < cells; ++c) {
    const double* u = post.u_hat.data() + c * post.K;
    const double top = *std::max_element(u, u + post.K);
    if (top > 0.0) ent += std::log(top);
  }
  s.icl = s.bic + 2.0 * ent;
  return s;
}

}  // namespace cdghmm
