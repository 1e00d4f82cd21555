#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cdghmm/em.hpp"
#include "cdghmm/errors.hpp"
#include "cdghmm/metrics.hpp"
#include "cdghmm/simulate.hpp"
#include "oracles.hpp"

using namespace cdghmm;

namespace {

FitConfig config(const char* model, int m, Mechanism mech = Mechanism::MAR) {
  FitConfig cfg;
  cfg.structure = ModelStructure::parse(model);
  cfg.m = m;
  cfg.mechanism = mech;
  cfg.n_starts = 2;
  return cfg;
}

SimOutput small_sim(std::uint64_t seed, double p_miss = 0.0, int n = 40) {
  SimSpec s = sim1_spec(1, n);
  s.seed = seed;
  if (p_miss > 0) {
    s.p_miss = p_miss;
    s.m_miss = Eigen::Vector2d(0.6, 0.4);
    s.v_miss = Eigen::RowVector4d(0.25, 0.25, 0.25, 0.25);
  }
  return generate(s);
}

}  // namespace

TEST_CASE("config validation") {
  FitConfig cfg = config("VVA", 2);
  CHECK_NOTHROW(cfg.validate());
  cfg.m = 0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = config("VVA", 2);
  cfg.rel_tol = 0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = config("VVA", 2);
  cfg.n_starts = 0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = config("VVA", 2);
  cfg.max_iter = 0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  CHECK(parse_init_method("MIXED") == InitMethod::Mixed);
  CHECK(init_method_name(InitMethod::Random) == "random");
  CHECK_THROWS_AS(parse_dropout_mode("sometimes"), DataError);
}

TEST_CASE("one state matches the Gaussian MLE") {
  std::mt19937_64 rng(1);
  const PanelDataset d = oracle::random_panel(30, 4, 3, 0.0, false, rng);
  const FitResult res = fit(d, config("VVA", 1));
  Eigen::MatrixXd X(120, 3);
  for (int r = 0; r < 120; ++r)
    for (int j = 0; j < 3; ++j) X(r, j) = d.values[r * 3 + j];
  const Eigen::RowVectorXd mean = X.colwise().mean();
  const Eigen::MatrixXd cen = X.rowwise() - mean;
  const Eigen::MatrixXd S = cen.transpose() * cen / 120.0;
  double ll = 0.0;
  for (int r = 0; r < 120; ++r) ll += oracle::mvn_logpdf(X.row(r).transpose(), mean.transpose(), S);
  CHECK(std::abs(res.loglik - ll) < 1e-6);
  CHECK(res.converged);
}

TEST_CASE("initialization") {
  SUBCASE("single state seeds the pooled mean") {
    std::mt19937_64 rng(2);
    const PanelDataset d = oracle::random_panel(10, 3, 2, 0.0, false, rng);
    const Initialization init = initialize(d, config("EEI", 1));
    for (int j = 0; j < 2; ++j) {
      double s = 0.0;
      for (int r = 0; r < 30; ++r) s += d.values[r * 2 + j];
      CHECK(init.params.mu(0, j) == doctest::Approx(s / 30.0));
    }
  }
  SUBCASE("two clusters") {
    std::mt19937_64 rng(3);
    PanelDataset d = PanelDataset::zeros(40, 3, 2);
    std::normal_distribution<double> z(0.0, 0.3);
    for (int i = 0; i < 40; ++i)
      for (int t = 0; t < 3; ++t) {
        const double c = i < 20 ? -5.0 : 5.0;
        d.set_value(i, t, 0, c + z(rng));
        d.set_value(i, t, 1, -c + z(rng));
      }
    const Initialization init = initialize(d, config("VVA", 2));
    const int a = init.params.mu(0, 0) < 0 ? 0 : 1;
    CHECK(std::abs(init.params.mu(a, 0) + 5.0) < 0.5);
    CHECK(std::abs(init.params.mu(a, 1) - 5.0) < 0.5);
    CHECK(std::abs(init.params.mu(1 - a, 0) - 5.0) < 0.5);
    CHECK(validate(init.params, ModelStructure::parse("VVA")).empty());
  }
  SUBCASE("deterministic under a fixed seed") {
    const SimOutput sim = small_sim(4, 0.2);
    FitConfig cfg = config("EVA", 2, Mechanism::State);
    for (InitMethod im : {InitMethod::KMeans, InitMethod::Random}) {
      cfg.init = im;
      const Initialization a = initialize(sim.data, cfg, 3);
      const Initialization b = initialize(sim.data, cfg, 3);
      CHECK(a.params.mu == b.params.mu);
      CHECK(a.params.gamma == b.params.gamma);
      CHECK(a.seed.u_hat == b.seed.u_hat);
    }
  }
  SUBCASE("too few distinct rows") {
    PanelDataset d = PanelDataset::zeros(3, 2, 2);
    CHECK_THROWS_AS(initialize(d, config("VVA", 2)), DataError);
  }
}

TEST_CASE("EM climbs for every member") {
  const SimOutput sim = small_sim(5, 0.2);
  for (const auto& st : ModelStructure::family()) {
    FitConfig cfg = config("VVA", 2, Mechanism::StateVariable);
    cfg.structure = st;
    cfg.n_starts = 1;
    cfg.rel_tol = 1e-9;
    const FitResult res = fit(sim.data, cfg);
    for (std::size_t k = 1; k < res.loglik_trace.size(); ++k)
      CHECK(res.loglik_trace[k] >= res.loglik_trace[k - 1] - 1e-8);
    CHECK(res.loglik == res.loglik_trace.back());
    CHECK(validate(res.params, st).empty());
  }
}

TEST_CASE("fit is reproducible") {
  const SimOutput sim = small_sim(6, 0.1);
  FitConfig cfg = config("VEI", 2, Mechanism::StateTimeShared);
  cfg.threads = 2;
  const FitResult a = fit(sim.data, cfg);
  cfg.threads = 1;
  const FitResult b = fit(sim.data, cfg);
  CHECK(a.loglik == b.loglik);
  CHECK(a.params.mu == b.params.mu);
  CHECK(a.decoded == b.decoded);
  CHECK(a.best_start == b.best_start);
}

TEST_CASE("mechanism choice is irrelevant without missing cells") {
  const SimOutput sim = small_sim(7);
  FitConfig cfg = config("EEA", 2);
  cfg.n_starts = 1;
  const HmmParams start = initialize(sim.data, cfg).params;
  const FitResult mar = run_em(sim.data, cfg, start);
  cfg.mechanism = Mechanism::State;
  HmmParams s2 = start;
  s2.miss = MissParams::zeros(Mechanism::State, 2, 4, 5);
  const FitResult st = run_em(sim.data, cfg, s2);
  CHECK(mar.decoded == st.decoded);
  CHECK((mar.params.mu - st.params.mu).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((mar.params.gamma - st.params.gamma).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("relabeled starts give relabeled fits") {
  const SimOutput sim = small_sim(8, 0.15);
  FitConfig cfg = config("VVA", 2, Mechanism::State);
  const HmmParams start = initialize(sim.data, cfg).params;
  const FitResult a = run_em(sim.data, cfg, start);
  const FitResult b = run_em(sim.data, cfg, permute_states(start, {1, 0}));
  CHECK(std::abs(a.loglik - b.loglik) < 1e-10);
  CHECK(std::abs(a.bic - b.bic) < 1e-10);
  CHECK(std::abs(a.icl - b.icl) < 1e-10);
  const HmmParams back = permute_states(b.params, {1, 0});
  CHECK((back.mu - a.params.mu).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("scores") {
  Posteriors post;
  post.n = 10;
  post.T = 5;
  post.K = 2;
  post.u_hat.assign(100, 0.0);
  for (int c = 0; c < 50; ++c) post.u_hat[c * 2] = 1.0;
  const ModelScore crisp = score(-100.0, 5, post);
  CHECK(crisp.bic == doctest::Approx(-200.0 - 5.0 * std::log(50.0)));
  CHECK(crisp.icl == crisp.bic);
  post.u_hat[0] = 0.7;
  post.u_hat[1] = 0.3;
  const ModelScore fuzzy = score(-100.0, 5, post);
  CHECK(fuzzy.icl == doctest::Approx(fuzzy.bic + 2.0 * std::log(0.7)));
  CHECK(fuzzy.icl < fuzzy.bic);
}

TEST_CASE("local decoding") {
  PanelDataset d = PanelDataset::zeros(1, 3, 1);
  HmmParams hp;
  hp.m = 2;
  hp.p = 1;
  hp.delta = Eigen::Vector2d(0.5, 0.5);
  hp.gamma = Eigen::Matrix2d::Constant(0.5);
  hp.mu.resize(2, 1);
  hp.mu << -1.0, 1.0;
  hp.chol = {ModCholPair::identity(1), ModCholPair::identity(1)};
  hp.miss = MissParams::zeros(Mechanism::MAR, 2, 1, 3);
  const Decoding tie = local_decode(d, hp);
  for (int t = 0; t < 3; ++t) CHECK(tie.labels[t] == 0);

  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    const PanelDataset x = oracle::random_panel(2, 4, 2, 0.2, rep % 2, rng);
    const HmmParams q = oracle::random_params(2, 2, 4, rep % 2, Mechanism::State, rng);
    const Decoding dec = local_decode(x, q);
    for (int i = 0; i < 2; ++i) {
      const auto bp = oracle::brute_posterior(x, q, i);
      for (int t = 0; t < 4; ++t) {
        const int best = static_cast<int>(std::max_element(bp[t].begin(), bp[t].end()) - bp[t].begin());
        CHECK(dec.labels[i * 4 + t] == best);
      }
    }
  }
}

TEST_CASE("dropped cells decode to the absorbing label") {
  SimSpec s = sim3_spec(2, 0.1, 60);
  s.seed = 3;
  const SimOutput sim = generate(s);
  REQUIRE(sim.data.any_dropout());
  FitConfig cfg = config("VVA", 2, Mechanism::State);
  cfg.dropout = DropoutMode::Column;
  const FitResult res = fit(sim.data, cfg);
  CHECK(res.params.dropout);
  CHECK(res.rho == total_free_params(cfg.structure, 2, 4, true, res.params.miss));
  for (int i = 0; i < sim.data.n; ++i)
    for (int t = 0; t < sim.data.T; ++t)
      if (sim.data.dropped(i, t)) CHECK(res.decoded[i * sim.data.T + t] == 2);
}

TEST_CASE("ICL never exceeds BIC") {
  const SimOutput sim = small_sim(10, 0.1);
  for (const auto& st : ModelStructure::family()) {
    FitConfig cfg = config("EEI", 2);
    cfg.structure = st;
    const FitResult res = fit(sim.data, cfg);
    CHECK(res.icl <= res.bic);
  }
}
