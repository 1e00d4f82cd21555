#include "cdghmm/missingness.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cdghmm/errors.hpp"
#include "cdghmm/forward_backward.hpp"

namespace cdghmm {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double prob) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, std::clamp(prob, kProbClip, 1.0 - kProbClip));
}

double log_probit(double eta) {
  return std::log(std::clamp(normal_cdf(eta), kProbClip, 1.0 - kProbClip));
}

double log_probit_complement(double eta) {
  return std::log(std::clamp(normal_cdf(-eta), kProbClip, 1.0 - kProbClip));
}

GaussianPatternCache::GaussianPatternCache(const HmmParams& params)
    : params_(params), blocks_(params.m), scratch_(params.p) {
  sigma_.reserve(params.m);
  for (int j = 0; j < params.m; ++j) sigma_.push_back(params.sigma(j));
}

const PatternBlock& GaussianPatternCache::block(int state, std::uint64_t pattern) {
  auto& cache = blocks_[state];
  if (auto it = cache.find(pattern); it != cache.end()) return it->second;

  const int p = params_.p;
  const Eigen::MatrixXd& s = sigma_[state];
  PatternBlock b;
  for (int j = 0; j < p; ++j) ((pattern >> j) & 1U ? b.mis : b.obs).push_back(j);
  const int no = static_cast<int>(b.obs.size());
  const int nm = static_cast<int>(b.mis.size());

  Eigen::MatrixXd s_oo(no, no), s_mo(nm, no), s_mm(nm, nm);
  for (int a = 0; a < no; ++a)
    for (int c = 0; c < no; ++c) s_oo(a, c) = s(b.obs[a], b.obs[c]);
  for (int a = 0; a < nm; ++a) {
    for (int c = 0; c < no; ++c) s_mo(a, c) = s(b.mis[a], b.obs[c]);
    for (int c = 0; c < nm; ++c) s_mm(a, c) = s(b.mis[a], b.mis[c]);
  }

  if (no > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(s_oo);
    const double floor = 1e-12 * s_oo.diagonal().maxCoeff();
    if (llt.info() != Eigen::Success ||
        (llt.matrixL().toDenseMatrix().diagonal().array().square() <= floor).any()) {
      std::ostringstream msg;
      msg << "observed covariance block of state " << state + 1 << " is singular (pattern 0x"
          << std::hex << pattern << ")";
      throw NumericError(msg.str());
    }
    b.chol_oo = llt.matrixL();
    b.log_det_oo = 2.0 * b.chol_oo.diagonal().array().log().sum();
    b.regression = llt.solve(s_mo.transpose()).transpose();
    b.cond_var = s_mm - b.regression * s_mo.transpose();
  } else {
    b.regression.resize(nm, 0);
    b.cond_var = s_mm;
  }
  return cache.emplace(pattern, std::move(b)).first->second;
}

double GaussianPatternCache::log_density_observed(int state, std::span<const double> x,
                                                  std::uint64_t pattern) {
  const PatternBlock& b = block(state, pattern);
  const int no = static_cast<int>(b.obs.size());
  if (no == 0) return 0.0;
  auto z = scratch_.head(no);
  for (int a = 0; a < no; ++a) z[a] = x[b.obs[a]] - params_.mu(state, b.obs[a]);
  b.chol_oo.triangularView<Eigen::Lower>().solveInPlace(z);
  return -0.5 * (no * std::log(2.0 * std::numbers::pi) + b.log_det_oo + z.squaredNorm());
}

Eigen::MatrixXd ImputedMoments::sscp(int i, int t, int c, const Eigen::VectorXd& center) const {
  Eigen::VectorXd e = mean(i, t, c) - center;
  return var(i, t, c) + e * e.transpose();
}

ImputedMoments conditional_moments(const PanelDataset& data, const HmmParams& params) {
  ImputedMoments mo;
  mo.n = data.n;
  mo.T = data.T;
  mo.m = params.m;
  mo.p = data.p;
  const int p = data.p;
  const std::size_t cells = static_cast<std::size_t>(data.n) * data.T;
  mo.cond_mean.assign(cells * params.m * p, 0.0);
  mo.cond_var.assign(cells * params.m * p * p, 0.0);
  mo.has_var.assign(cells, 0);

  GaussianPatternCache cache(params);
  for (int i = 0; i < data.n; ++i) {
    for (int t = 0; t < data.T; ++t) {
      const std::uint64_t pat = data.pattern(i, t);
      const auto x = data.row(i, t);
      mo.has_var[static_cast<std::size_t>(i) * data.T + t] = pat != 0;
      for (int c = 0; c < params.m; ++c) {
        double* mean = mo.cond_mean.data() + mo.cell(i, t, c) * p;
        if (pat == 0) {
          std::copy(x.begin(), x.end(), mean);
          continue;
        }
        const PatternBlock* b = nullptr;
        try {
          b = &cache.block(c, pat);
        } catch (const NumericError& e) {
          throw NumericError(std::string(e.what()) + " at subject " + std::to_string(i + 1) +
                             ", time " + std::to_string(t + 1));
        }
        const int no = static_cast<int>(b->obs.size());
        const int nm = static_cast<int>(b->mis.size());
        Eigen::VectorXd resid(no);
        for (int a = 0; a < no; ++a) {
          resid[a] = x[b->obs[a]] - params.mu(c, b->obs[a]);
          mean[b->obs[a]] = x[b->obs[a]];
        }
        Eigen::VectorXd fill = b->regression * resid;
        double* var = mo.cond_var.data() + mo.cell(i, t, c) * p * p;
        for (int a = 0; a < nm; ++a) {
          mean[b->mis[a]] = params.mu(c, b->mis[a]) + fill[a];
          for (int q = 0; q < nm; ++q)
            var[static_cast<std::size_t>(b->mis[q]) * p + b->mis[a]] = b->cond_var(a, q);
        }
      }
    }
  }
  return mo;
}

double miss_log_prob(std::span<const std::uint8_t> mask_row, int state, int t,
                     double time_value, const MissParams& miss) {
  if (miss.mechanism == Mechanism::MAR) return 0.0;
  double out = 0.0;
  for (std::size_t j = 0; j < mask_row.size(); ++j) {
    const double eta = miss.linear_predictor(state, static_cast<int>(j), t, time_value);
    out += mask_row[j] ? log_probit(eta) : log_probit_complement(eta);
  }
  return out;
}

MissDesign MissDesign::empty(int m, int p, int T, std::vector<double> time_values) {
  MissDesign d;
  d.m = m;
  d.p = p;
  d.T = T;
  d.time_values = std::move(time_values);
  const std::size_t size = static_cast<std::size_t>(m) * p * T;
  d.w_missing.assign(size, 0.0);
  d.w_observed.assign(size, 0.0);
  return d;
}

MissDesign build_miss_design(const PanelDataset& data, const Posteriors& post, int m) {
  MissDesign d = MissDesign::empty(m, data.p, data.T, data.time_values);
  for (int i = 0; i < data.n; ++i)
    for (int t = 0; t < data.T; ++t) {
      if (data.dropped(i, t)) continue;
      d.rows_per_state += data.p;
      const auto mask = data.mask_row(i, t);
      for (int c = 0; c < m; ++c) {
        const double u = post.u(i, t, c);
        for (int j = 0; j < data.p; ++j)
          (mask[j] ? d.w_missing : d.w_observed)[d.at(c, j, t)] += u;
      }
    }
  return d;
}

namespace {

// Inverse Mills ratio phi(x) / Phi(x), stable far into the lower tail.
double mills(double x) {
  if (x < -30.0) {
    const double z = -x;
    return z + 1.0 / z - 2.0 / (z * z * z);
  }
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return phi / normal_cdf(x);
}

// Groups of cells sharing an intercept (state, or state and variable).
struct SharedLayout {
  int groups = 0;
  bool per_variable = false;
  int group(int c, int j, int p) const { return per_variable ? c * p + j : c; }
};

double shared_objective(const MissDesign& d, const SharedLayout& lay,
                        const Eigen::VectorXd& theta) {
  const int G = lay.groups;
  double obj = 0.0;
  for (int c = 0; c < d.m; ++c)
    for (int j = 0; j < d.p; ++j)
      for (int t = 0; t < d.T; ++t) {
        const std::size_t k = d.at(c, j, t);
        const double eta = theta[lay.group(c, j, d.p)] + theta[G] * d.time_values[t];
        obj += d.w_missing[k] * log_probit(eta) + d.w_observed[k] * log_probit_complement(eta);
      }
  return obj;
}

MissFit fit_shared(const MissDesign& d, Mechanism mech, const MissParams* start) {
  MissFit out;
  out.params = MissParams::zeros(mech, d.m, d.p, d.T);
  SharedLayout lay;
  lay.per_variable = mech == Mechanism::StateVarTimeShared;
  lay.groups = lay.per_variable ? d.m * d.p : d.m;
  const int G = lay.groups;

  Eigen::VectorXd gw_m = Eigen::VectorXd::Zero(G), gw_o = Eigen::VectorXd::Zero(G);
  for (int c = 0; c < d.m; ++c)
    for (int j = 0; j < d.p; ++j)
      for (int t = 0; t < d.T; ++t) {
        gw_m[lay.group(c, j, d.p)] += d.w_missing[d.at(c, j, t)];
        gw_o[lay.group(c, j, d.p)] += d.w_observed[d.at(c, j, t)];
      }

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(G + 1);
  const bool warm = start && start->mechanism == mech && start->m == d.m && start->p == d.p &&
                    static_cast<int>(start->alpha.size()) == G;
  if (warm) {
    for (int g = 0; g < G; ++g) theta[g] = start->alpha[g];
    theta[G] = start->beta_t;
  } else {
    for (int g = 0; g < G; ++g) {
      const double tot = gw_m[g] + gw_o[g];
      theta[g] = tot > 0 ? normal_quantile(gw_m[g] / tot) : 0.0;
    }
  }
  auto project = [](Eigen::VectorXd& v) {
    for (auto& x : v) x = std::clamp(x, -kProbitCoefBound, kProbitCoefBound);
  };
  project(theta);

  double obj = shared_objective(d, lay, theta);
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(G + 1);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(G + 1, G + 1);
    for (int c = 0; c < d.m; ++c)
      for (int j = 0; j < d.p; ++j)
        for (int t = 0; t < d.T; ++t) {
          const std::size_t k = d.at(c, j, t);
          const double wm = d.w_missing[k], wo = d.w_observed[k];
          if (wm == 0.0 && wo == 0.0) continue;
          const int g = lay.group(c, j, d.p);
          const double tau = d.time_values[t];
          const double eta = theta[g] + theta[G] * tau;
          const double l1 = mills(eta), l0 = mills(-eta);
          const double g1 = wm * l1 - wo * l0;
          const double h1 = -wm * l1 * (eta + l1) - wo * l0 * (l0 - eta);
          grad[g] += g1;
          grad[G] += g1 * tau;
          hess(g, g) += h1;
          hess(g, G) += h1 * tau;
          hess(G, G) += h1 * tau * tau;
        }
    for (int g = 0; g < G; ++g) hess(G, g) = hess(g, G);
    if (grad.lpNorm<Eigen::Infinity>() < 1e-10) break;

    // Newton direction on -H, nudged to stay positive definite.
    Eigen::MatrixXd neg = -hess;
    neg.diagonal().array() += 1e-10 * (1.0 + neg.diagonal().cwiseAbs().maxCoeff());
    Eigen::VectorXd step = neg.ldlt().solve(grad);
    if (!step.allFinite()) step = grad;

    bool improved = false;
    double scale = 1.0;
    for (int half = 0; half < 40; ++half, scale *= 0.5) {
      Eigen::VectorXd trial = theta + scale * step;
      project(trial);
      const double tobj = shared_objective(d, lay, trial);
      if (tobj > obj) {
        const double gain = tobj - obj;
        theta = trial;
        obj = tobj;
        improved = gain > 1e-12 * (1.0 + std::abs(obj));
        break;
      }
    }
    if (!improved) break;
  }

  for (int g = 0; g < G; ++g) {
    out.params.alpha[g] = theta[g];
    if (gw_m[g] + gw_o[g] <= 0.0) {
      out.params.alpha[g] = 0.0;
      out.warnings.push_back("missingness group " + std::to_string(g + 1) +
                             " has no weight; coefficient set to 0");
    }
  }
  out.params.beta_t = theta[G];
  for (double v : theta)
    if (std::abs(v) >= kProbitCoefBound) out.clamped = true;
  return out;
}

}  // namespace

MissFit fit_miss_params(const MissDesign& d, Mechanism mech, const MissParams* start) {
  if (mech == Mechanism::StateTimeShared || mech == Mechanism::StateVarTimeShared) {
    MissFit out = fit_shared(d, mech, start);
    if (out.clamped)
      out.warnings.push_back("probit coefficient reached the bound (separation)");
    return out;
  }

  MissFit out;
  out.params = MissParams::zeros(mech, d.m, d.p, d.T);
  if (mech == Mechanism::MAR) return out;

  std::vector<double> wm(out.params.alpha.size(), 0.0), wo(out.params.alpha.size(), 0.0);
  for (int c = 0; c < d.m; ++c)
    for (int j = 0; j < d.p; ++j)
      for (int t = 0; t < d.T; ++t) {
        std::size_t g = 0;
        switch (mech) {
          case Mechanism::State: g = c; break;
          case Mechanism::StateVariable: g = static_cast<std::size_t>(c) * d.p + j; break;
          case Mechanism::StateTimeFull: g = static_cast<std::size_t>(c) * d.T + t; break;
          default: g = (static_cast<std::size_t>(c) * d.p + j) * d.T + t; break;
        }
        wm[g] += d.w_missing[d.at(c, j, t)];
        wo[g] += d.w_observed[d.at(c, j, t)];
      }
  for (std::size_t g = 0; g < wm.size(); ++g) {
    const double tot = wm[g] + wo[g];
    if (tot <= 0.0) {
      out.params.alpha[g] = 0.0;
      out.warnings.push_back("missingness cell " + std::to_string(g + 1) +
                             " has no weight; coefficient set to 0");
      continue;
    }
    double a = normal_quantile(wm[g] / tot);
    if (wm[g] <= 0.0 || wo[g] <= 0.0) {
      // separated cell: the clipped probit is flat beyond here anyway
      a = wm[g] > 0.0 ? kProbitCoefBound : -kProbitCoefBound;
      out.clamped = true;
    } else if (std::abs(a) >= kProbitCoefBound) {
      a = std::clamp(a, -kProbitCoefBound, kProbitCoefBound);
      out.clamped = true;
    }
    out.params.alpha[g] = a;
  }
  if (out.clamped) out.warnings.push_back("probit coefficient reached the bound (separation)");
  return out;
}

double miss_objective(const MissDesign& d, const MissParams& params) {
  if (params.mechanism == Mechanism::MAR) return 0.0;
  double obj = 0.0;
  for (int c = 0; c < d.m; ++c)
    for (int j = 0; j < d.p; ++j)
      for (int t = 0; t < d.T; ++t) {
        const std::size_t k = d.at(c, j, t);
        const double eta = params.linear_predictor(c, j, t, d.time_values[t]);
        obj += d.w_missing[k] * log_probit(eta) + d.w_observed[k] * log_probit_complement(eta);
      }
  return obj;
}

}  // namespace cdghmm
