#include <doctest.h>

#include <cmath>
#include <random>

#include "cdghmm/errors.hpp"
#include "cdghmm/forward_backward.hpp"
#include "cdghmm/missingness.hpp"
#include "oracles.hpp"

using namespace cdghmm;

namespace {

HmmParams single(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& mu, int T) {
  HmmParams hp;
  hp.m = 1;
  hp.p = static_cast<int>(mu.size());
  hp.delta = Eigen::VectorXd::Ones(1);
  hp.gamma = Eigen::MatrixXd::Ones(1, 1);
  hp.mu = mu.transpose();
  hp.chol = {decompose(sigma)};
  hp.miss = MissParams::zeros(Mechanism::MAR, 1, hp.p, T);
  return hp;
}

MissDesign design_from(int m, int p, int T, const std::vector<double>& wm,
                       const std::vector<double>& wo) {
  std::vector<double> tv(T);
  for (int t = 0; t < T; ++t) tv[t] = t + 1;
  MissDesign d = MissDesign::empty(m, p, T, tv);
  d.w_missing = wm;
  d.w_observed = wo;
  return d;
}

}  // namespace

TEST_CASE("normal helpers") {
  CHECK(normal_cdf(0.0) == 0.5);
  CHECK(normal_cdf(1.0) == doctest::Approx(0.8413447460685429));
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
  CHECK(std::isfinite(normal_quantile(0.0)));
  CHECK(log_probit(-50.0) == doctest::Approx(std::log(1e-12)));
  CHECK(log_probit_complement(50.0) == doctest::Approx(std::log(1e-12)));
}

TEST_CASE("conditional moments") {
  SUBCASE("nothing missing") {
    std::mt19937_64 rng(1);
    const PanelDataset d = oracle::random_panel(3, 3, 3, 0.0, false, rng);
    const HmmParams hp = oracle::random_params(2, 3, 3, false, Mechanism::MAR, rng);
    const ImputedMoments mo = conditional_moments(d, hp);
    for (int i = 0; i < 3; ++i)
      for (int t = 0; t < 3; ++t)
        for (int c = 0; c < 2; ++c) {
          for (int j = 0; j < 3; ++j) CHECK(mo.mean(i, t, c)[j] == d.values[d.index(i, t, j)]);
          CHECK(mo.var(i, t, c).cwiseAbs().maxCoeff() == 0.0);
        }
  }
  SUBCASE("identity covariance") {
    PanelDataset d = PanelDataset::zeros(1, 2, 2);
    d.set_value(0, 0, 0, 4.0);
    d.set_missing(0, 0, 1);
    const HmmParams hp = single(Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(1.0, -2.0), 2);
    const ImputedMoments mo = conditional_moments(d, hp);
    CHECK(mo.mean(0, 0, 0)[0] == 4.0);
    CHECK(mo.mean(0, 0, 0)[1] == -2.0);
    CHECK(mo.var(0, 0, 0)(1, 1) == doctest::Approx(1.0));
    CHECK(mo.var(0, 0, 0)(0, 0) == 0.0);
  }
  SUBCASE("2x2 conditional normal") {
    Eigen::MatrixXd s(2, 2);
    s << 1.0, 0.5, 0.5, 1.0;
    PanelDataset d = PanelDataset::zeros(1, 2, 2);
    d.set_value(0, 0, 0, 3.0);
    d.set_missing(0, 0, 1);
    const HmmParams hp = single(s, Eigen::Vector2d(1.0, 2.0), 2);
    const ImputedMoments mo = conditional_moments(d, hp);
    CHECK(mo.mean(0, 0, 0)[1] == doctest::Approx(2.0 + 0.5 * (3.0 - 1.0)));
    CHECK(mo.var(0, 0, 0)(1, 1) == doctest::Approx(0.75));
    const Eigen::MatrixXd sscp = mo.sscp(0, 0, 0, Eigen::Vector2d(1.0, 2.0));
    CHECK(sscp(1, 1) == doctest::Approx(0.75 + 1.0));
  }
  SUBCASE("fully missing row") {
    std::mt19937_64 rng(2);
    PanelDataset d = oracle::random_panel(1, 2, 3, 0.0, false, rng);
    for (int j = 0; j < 3; ++j) d.set_missing(0, 1, j);
    const HmmParams hp = oracle::random_params(2, 3, 2, false, Mechanism::MAR, rng);
    const ImputedMoments mo = conditional_moments(d, hp);
    for (int c = 0; c < 2; ++c) {
      CHECK((mo.mean(0, 1, c) - hp.mu.row(c).transpose()).cwiseAbs().maxCoeff() == 0.0);
      CHECK((mo.var(0, 1, c) - hp.sigma(c)).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
  SUBCASE("random patterns against dense conditioning") {
    std::mt19937_64 rng(3);
    const PanelDataset d = oracle::random_panel(4, 3, 4, 0.4, false, rng);
    const HmmParams hp = oracle::random_params(2, 4, 3, false, Mechanism::MAR, rng);
    const ImputedMoments mo = conditional_moments(d, hp);
    for (int i = 0; i < 4; ++i)
      for (int t = 0; t < 3; ++t)
        for (int c = 0; c < 2; ++c) {
          const Eigen::MatrixXd s = oracle::sigma_from_factors(hp.chol[c].T, hp.chol[c].d);
          std::vector<int> o, mi;
          for (int j = 0; j < 4; ++j) (d.missing(i, t, j) ? mi : o).push_back(j);
          if (mi.empty() || o.empty()) continue;
          Eigen::MatrixXd soo(o.size(), o.size()), smo(mi.size(), o.size()),
              smm(mi.size(), mi.size());
          Eigen::VectorXd r(o.size());
          for (std::size_t a = 0; a < o.size(); ++a) {
            r[a] = d.values[d.index(i, t, o[a])] - hp.mu(c, o[a]);
            for (std::size_t b = 0; b < o.size(); ++b) soo(a, b) = s(o[a], o[b]);
          }
          for (std::size_t a = 0; a < mi.size(); ++a) {
            for (std::size_t b = 0; b < o.size(); ++b) smo(a, b) = s(mi[a], o[b]);
            for (std::size_t b = 0; b < mi.size(); ++b) smm(a, b) = s(mi[a], mi[b]);
          }
          const Eigen::VectorXd cm = smo * soo.inverse() * r;
          const Eigen::MatrixXd cv = smm - smo * soo.inverse() * smo.transpose();
          for (std::size_t a = 0; a < mi.size(); ++a) {
            CHECK(mo.mean(i, t, c)[mi[a]] == doctest::Approx(hp.mu(c, mi[a]) + cm[a]));
            for (std::size_t b = 0; b < mi.size(); ++b)
              CHECK(mo.var(i, t, c)(mi[a], mi[b]) == doctest::Approx(cv(a, b)));
          }
        }
  }
}

TEST_CASE("singular observed block names the cell") {
  HmmParams hp = single(Eigen::MatrixXd::Identity(3, 3), Eigen::Vector3d::Zero(), 2);
  // second variable copies the first exactly
  hp.chol[0].T(1, 0) = -1.0;
  hp.chol[0].d = Eigen::Vector3d(1.0, 0.0, 1.0);
  PanelDataset d = PanelDataset::zeros(1, 2, 3);
  d.set_missing(0, 1, 2);
  CHECK_THROWS_WITH_AS(conditional_moments(d, hp), doctest::Contains("subject 1, time 2"),
                       NumericError);
}

TEST_CASE("miss_log_prob examples") {
  const std::vector<std::uint8_t> any = {1, 0, 0, 1};
  CHECK(miss_log_prob(any, 0, 0, 1.0, MissParams::zeros(Mechanism::MAR, 2, 4, 3)) == 0.0);
  const MissParams state = MissParams::zeros(Mechanism::State, 2, 4, 3);
  CHECK(miss_log_prob(any, 1, 2, 3.0, state) == doctest::Approx(4.0 * std::log(0.5)));
  MissParams shared = MissParams::zeros(Mechanism::StateTimeShared, 2, 3, 3);
  shared.beta_t = 1.0;
  const std::vector<std::uint8_t> all = {1, 1, 1};
  CHECK(miss_log_prob(all, 0, 0, 1.0, shared) ==
        doctest::Approx(3.0 * std::log(oracle::phi_cdf(1.0))));
}

TEST_CASE("mask probabilities sum to one over all masks") {
  std::mt19937_64 rng(4);
  for (Mechanism mech : kAllMechanisms)
    for (int p = 1; p <= 6; ++p) {
      if (mech == Mechanism::MAR) continue;  // factor is identically one
      const MissParams mp = oracle::random_miss(mech, 2, p, 3, rng);
      for (int c = 0; c < 2; ++c)
        for (int t = 0; t < 3; ++t) {
          double total = 0.0;
          std::vector<std::uint8_t> mask(p);
          for (int bits = 0; bits < (1 << p); ++bits) {
            for (int j = 0; j < p; ++j) mask[j] = (bits >> j) & 1;
            total += std::exp(miss_log_prob(mask, c, t, t + 1.0, mp));
          }
          CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("closed-form probit fits") {
  // state 1 half missing, state 2 missing 97.5%
  MissDesign d = design_from(2, 1, 2, {1.0, 1.0, 39.0, 39.0}, {1.0, 1.0, 1.0, 1.0});
  MissFit f = fit_miss_params(d, Mechanism::State);
  CHECK(f.params.alpha[0] == doctest::Approx(0.0));
  CHECK(f.params.alpha[1] == doctest::Approx(1.959963984540054));

  d = design_from(1, 2, 1, {1.0, 3.0}, {9.0, 7.0});
  f = fit_miss_params(d, Mechanism::StateVariable);
  CHECK(f.params.alpha[0] == doctest::Approx(-1.2815515655446004));
  CHECK(f.params.alpha[1] == doctest::Approx(-0.5244005127080407));

  d = design_from(1, 1, 3, {1.0, 2.0, 3.0}, {3.0, 2.0, 1.0});
  f = fit_miss_params(d, Mechanism::StateTimeFull);
  CHECK(f.params.alpha[0] == doctest::Approx(normal_quantile(0.25)));
  CHECK(f.params.alpha[1] == doctest::Approx(0.0));
  CHECK(f.params.alpha[2] == doctest::Approx(normal_quantile(0.75)));
}

TEST_CASE("separation and empty cells") {
  MissDesign d = design_from(2, 1, 1, {5.0, 0.0}, {0.0, 0.0});
  const MissFit f = fit_miss_params(d, Mechanism::State);
  CHECK(f.clamped);
  CHECK(f.params.alpha[0] == kProbitCoefBound);
  CHECK(f.params.alpha[1] == 0.0);
  CHECK(f.warnings.size() >= 2);
}

TEST_CASE("shared slope fits are stationary") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (Mechanism mech : {Mechanism::StateTimeShared, Mechanism::StateVarTimeShared}) {
    for (int rep = 0; rep < 10; ++rep) {
      const int m = 2, p = 3, T = 4;
      std::vector<double> wm(m * p * T), wo(m * p * T);
      for (auto& w : wm) w = u(rng);
      for (auto& w : wo) w = u(rng) + 1.0;
      const MissDesign d = design_from(m, p, T, wm, wo);
      const MissFit f = fit_miss_params(d, mech);
      const double base = miss_objective(d, f.params);
      // central differences of the objective in every coefficient
      const double h = 1e-5;
      for (std::size_t k = 0; k <= f.params.alpha.size(); ++k) {
        MissParams a = f.params, b = f.params;
        if (k < f.params.alpha.size()) {
          a.alpha[k] += h;
          b.alpha[k] -= h;
        } else {
          a.beta_t += h;
          b.beta_t -= h;
        }
        const double g = (miss_objective(d, a) - miss_objective(d, b)) / (2 * h);
        CHECK(std::abs(g) < 1e-5);
        CHECK(miss_objective(d, a) <= base + 1e-12);
        CHECK(miss_objective(d, b) <= base + 1e-12);
      }
    }
  }
}

TEST_CASE("design excludes dropped cells and accumulates posteriors") {
  std::mt19937_64 rng(6);
  PanelDataset d = oracle::random_panel(3, 3, 2, 0.3, false, rng);
  d.set_dropout(1, 1);
  const HmmParams hp = oracle::random_params(2, 2, 3, true, Mechanism::State, rng);
  const Posteriors post = posteriors(d, hp);
  const MissDesign des = build_miss_design(d, post, 2);
  CHECK(des.rows_per_state == static_cast<std::size_t>((9 - 2) * 2));
  double total = 0.0;
  for (std::size_t k = 0; k < des.w_missing.size(); ++k) total += des.w_missing[k] + des.w_observed[k];
  CHECK(total == doctest::Approx(7.0 * 2.0));
}

TEST_CASE("intercept refit recovers the generating rate") {
  std::mt19937_64 rng(7);
  const double alpha = -0.4;
  const double pr = oracle::phi_cdf(alpha);
  std::bernoulli_distribution miss(pr);
  const int N = 20000;
  int k = 0;
  for (int r = 0; r < N; ++r) k += miss(rng);
  const MissDesign des = design_from(1, 1, 1, {double(k)}, {double(N - k)});
  const MissFit f = fit_miss_params(des, Mechanism::State);
  // delta-method standard error of the probit intercept
  const double dens = std::exp(-0.5 * alpha * alpha) / std::sqrt(2.0 * M_PI);
  const double se = std::sqrt(pr * (1 - pr) / N) / dens;
  CHECK(std::abs(f.params.alpha[0] - alpha) < 3.0 * se);
}
