#include "cdghmm/covariance.hpp"

#include <cmath>
#include <string>

#include "cdghmm/errors.hpp"
#include "cdghmm/forward_backward.hpp"

namespace cdghmm {

WeightedScatter WeightedScatter::from(std::vector<Eigen::MatrixXd> s, Eigen::VectorXd n_j) {
  WeightedScatter w;
  w.s = std::move(s);
  w.total = n_j.sum();
  w.pi_j = n_j / w.total;
  w.n_j = std::move(n_j);
  return w;
}

MeanScatter update_mean_and_scatter(const PanelDataset& data, const Posteriors& post,
                                    const ImputedMoments& mo) {
  const int m = mo.m, p = mo.p;
  MeanScatter out;
  out.mu = Eigen::MatrixXd::Zero(m, p);
  Eigen::VectorXd n_j = Eigen::VectorXd::Zero(m);
  for (int i = 0; i < data.n; ++i)
    for (int t = 0; t < data.T; ++t) {
      if (data.dropped(i, t)) continue;
      for (int c = 0; c < m; ++c) {
        const double u = post.u(i, t, c);
        n_j[c] += u;
        out.mu.row(c) += u * mo.mean(i, t, c).transpose();
      }
    }
  std::vector<std::string> warnings;
  for (int c = 0; c < m; ++c) {
    if (!(n_j[c] > 1e-10))
      throw NumericError("state " + std::to_string(c + 1) + " carries no posterior weight");
    out.mu.row(c) /= n_j[c];
    if (n_j[c] < p)
      warnings.push_back("state " + std::to_string(c + 1) + " has effective size " +
                         std::to_string(n_j[c]) + " below p");
  }

  std::vector<Eigen::MatrixXd> s(m, Eigen::MatrixXd::Zero(p, p));
  Eigen::VectorXd e(p);
  for (int i = 0; i < data.n; ++i)
    for (int t = 0; t < data.T; ++t) {
      if (data.dropped(i, t)) continue;
      const bool imputed = mo.has_var[static_cast<std::size_t>(i) * data.T + t] != 0;
      for (int c = 0; c < m; ++c) {
        const double u = post.u(i, t, c);
        if (u == 0.0) continue;
        e = mo.mean(i, t, c).transpose() - out.mu.row(c);
        s[c].noalias() += u * e * e.transpose();
        if (imputed) s[c] += u * mo.var(i, t, c);
      }
    }
  for (int c = 0; c < m; ++c) {
    s[c] /= n_j[c];
    s[c] = 0.5 * (s[c] + s[c].transpose()).eval();
  }
  out.scatter = WeightedScatter::from(std::move(s), n_j);
  out.scatter.warnings = std::move(warnings);
  return out;
}

Eigen::MatrixXd solve_t_rows(const std::vector<Eigen::MatrixXd>& s,
                             const Eigen::MatrixXd& w, std::vector<std::string>* warnings) {
  const int m = static_cast<int>(s.size());
  const int p = static_cast<int>(s[0].rows());
  Eigen::MatrixXd T = Eigen::MatrixXd::Identity(p, p);
  for (int r = 1; r < p; ++r) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(r, r);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(r);
    for (int j = 0; j < m; ++j) {
      A += w(j, r) * s[j].topLeftCorner(r, r);
      b -= w(j, r) * s[j].row(r).head(r).transpose();
    }
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    Eigen::VectorXd phi;
    if (llt.info() == Eigen::Success && llt.rcond() > 1e-13) {
      phi = llt.solve(b);
    } else {
      phi = A.completeOrthogonalDecomposition().solve(b);
      if (warnings)
        warnings->push_back("row system " + std::to_string(r + 1) +
                            " of T is singular; used least squares");
    }
    T.row(r).head(r) = phi.transpose();
  }
  return T;
}

namespace {

Eigen::VectorXd residual_variances(const Eigen::MatrixXd& T, const Eigen::MatrixXd& s) {
  return (T * s * T.transpose()).diagonal();
}

double scale_of(const WeightedScatter& w) {
  double mx = 0.0;
  for (const auto& s : w.s) mx = std::max(mx, s.diagonal().maxCoeff());
  return mx;
}

void check_d(const Eigen::VectorXd& d, double scale, int state) {
  for (int r = 0; r < d.size(); ++r)
    if (!(d[r] > 1e-12 * scale) || !std::isfinite(d[r]))
      throw NumericError("innovation variance " + std::to_string(r + 1) + " of state " +
                         std::to_string(state + 1) + " collapsed to " + std::to_string(d[r]));
}

std::vector<ModCholPair> finish(std::vector<ModCholPair> out, const WeightedScatter& w) {
  const double scale = scale_of(w);
  for (std::size_t j = 0; j < out.size(); ++j) check_d(out[j].d, scale, static_cast<int>(j));
  return out;
}

Eigen::MatrixXd pooled(const WeightedScatter& w) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(w.p(), w.p());
  for (int j = 0; j < w.m(); ++j) s += w.pi_j[j] * w.s[j];
  return s;
}

std::vector<Eigen::MatrixXd> state_t(const WeightedScatter& w, std::vector<std::string>* warn) {
  std::vector<Eigen::MatrixXd> out;
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(1, w.p());
  for (int j = 0; j < w.m(); ++j) out.push_back(solve_t_rows({w.s[j]}, ones, warn));
  return out;
}

}  // namespace

std::vector<ModCholPair> solve_vva(const WeightedScatter& w, std::vector<std::string>* warn) {
  std::vector<ModCholPair> out;
  for (auto& T : state_t(w, warn)) {
    Eigen::VectorXd d = residual_variances(T, w.s[out.size()]);
    out.push_back({std::move(T), std::move(d)});
  }
  return finish(std::move(out), w);
}

std::vector<ModCholPair> solve_vea(const WeightedScatter& w, std::vector<std::string>* warn) {
  auto ts = state_t(w, warn);
  Eigen::VectorXd d = Eigen::VectorXd::Zero(w.p());
  for (int j = 0; j < w.m(); ++j) d += w.pi_j[j] * residual_variances(ts[j], w.s[j]);
  std::vector<ModCholPair> out;
  for (auto& T : ts) out.push_back({std::move(T), d});
  return finish(std::move(out), w);
}

std::vector<ModCholPair> solve_vvi(const WeightedScatter& w, std::vector<std::string>* warn) {
  auto ts = state_t(w, warn);
  std::vector<ModCholPair> out;
  for (int j = 0; j < w.m(); ++j) {
    const double delta = residual_variances(ts[j], w.s[j]).sum() / w.p();
    out.push_back({std::move(ts[j]), Eigen::VectorXd::Constant(w.p(), delta)});
  }
  return finish(std::move(out), w);
}

std::vector<ModCholPair> solve_vei(const WeightedScatter& w, std::vector<std::string>* warn) {
  auto ts = state_t(w, warn);
  double delta = 0.0;
  for (int j = 0; j < w.m(); ++j) delta += w.pi_j[j] * residual_variances(ts[j], w.s[j]).sum();
  delta /= w.p();
  std::vector<ModCholPair> out;
  for (auto& T : ts) out.push_back({std::move(T), Eigen::VectorXd::Constant(w.p(), delta)});
  return finish(std::move(out), w);
}

std::vector<ModCholPair> solve_eea(const WeightedScatter& w, std::vector<std::string>* warn) {
  const Eigen::MatrixXd sbar = pooled(w);
  Eigen::MatrixXd T = solve_t_rows({sbar}, Eigen::MatrixXd::Ones(1, w.p()), warn);
  Eigen::VectorXd d = residual_variances(T, sbar);
  return finish(std::vector<ModCholPair>(w.m(), ModCholPair{T, d}), w);
}

std::vector<ModCholPair> solve_eei(const WeightedScatter& w, std::vector<std::string>* warn) {
  const Eigen::MatrixXd sbar = pooled(w);
  Eigen::MatrixXd T = solve_t_rows({sbar}, Eigen::MatrixXd::Ones(1, w.p()), warn);
  const double delta = residual_variances(T, sbar).sum() / w.p();
  return finish(
      std::vector<ModCholPair>(w.m(), ModCholPair{T, Eigen::VectorXd::Constant(w.p(), delta)}), w);
}

std::vector<ModCholPair> ecm_cycle_eva(const WeightedScatter& w,
                                       const std::vector<ModCholPair>& current,
                                       std::vector<std::string>* warn) {
  Eigen::MatrixXd weights(w.m(), w.p());
  for (int j = 0; j < w.m(); ++j)
    weights.row(j) = w.pi_j[j] * current[j].d.cwiseInverse().transpose();
  Eigen::MatrixXd T = solve_t_rows(w.s, weights, warn);
  std::vector<ModCholPair> out;
  for (int j = 0; j < w.m(); ++j) out.push_back({T, residual_variances(T, w.s[j])});
  return finish(std::move(out), w);
}

std::vector<ModCholPair> ecm_cycle_evi(const WeightedScatter& w,
                                       const std::vector<ModCholPair>& current,
                                       std::vector<std::string>* warn) {
  Eigen::MatrixXd weights(w.m(), w.p());
  for (int j = 0; j < w.m(); ++j) weights.row(j).setConstant(w.pi_j[j] / current[j].d[0]);
  Eigen::MatrixXd T = solve_t_rows(w.s, weights, warn);
  std::vector<ModCholPair> out;
  for (int j = 0; j < w.m(); ++j) {
    const double delta = residual_variances(T, w.s[j]).sum() / w.p();
    out.push_back({T, Eigen::VectorXd::Constant(w.p(), delta)});
  }
  return finish(std::move(out), w);
}

std::vector<ModCholPair> solve_member(const ModelStructure& st, const WeightedScatter& w,
                                      const std::vector<ModCholPair>* current, int ecm_cycles,
                                      std::vector<std::string>* warn) {
  const std::string name = st.name();
  if (name == "VVA") return solve_vva(w, warn);
  if (name == "VEA") return solve_vea(w, warn);
  if (name == "VVI") return solve_vvi(w, warn);
  if (name == "VEI") return solve_vei(w, warn);
  if (name == "EEA") return solve_eea(w, warn);
  if (name == "EEI") return solve_eei(w, warn);

  std::vector<ModCholPair> state;
  if (current && static_cast<int>(current->size()) == w.m()) {
    state = *current;
  } else {
    for (int j = 0; j < w.m(); ++j) state.push_back(decompose(w.s[j]));
  }
  const bool iso = st.isotropic();
  if (iso)
    for (auto& c : state) c.d.setConstant(c.d.mean());
  for (int k = 0; k < std::max(1, ecm_cycles); ++k)
    state = iso ? ecm_cycle_evi(w, state, warn) : ecm_cycle_eva(w, state, warn);
  return state;
}

double covariance_objective(const WeightedScatter& w, const std::vector<ModCholPair>& chol) {
  double q = 0.0;
  for (int j = 0; j < w.m(); ++j) {
    const Eigen::VectorXd r = residual_variances(chol[j].T, w.s[j]);
    q -= 0.5 * w.n_j[j] * (chol[j].d.array().log().sum() + (r.array() / chol[j].d.array()).sum());
  }
  return q;
}

}  // namespace cdghmm
