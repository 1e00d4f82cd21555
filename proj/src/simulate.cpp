#include "cdghmm/simulate.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <sstream>

#include "cdghmm/em.hpp"
#include "cdghmm/errors.hpp"
#include "cdghmm/metrics.hpp"
#include "cdghmm/parallel.hpp"

namespace cdghmm {

namespace {

bool stochastic(const Eigen::VectorXd& v) {
  return (v.array() >= 0).all() && std::abs(v.sum() - 1.0) < 1e-9;
}

int draw(const Eigen::VectorXd& probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x = u(rng);
  const int last = static_cast<int>(probs.size()) - 1;
  for (int k = 0; k < last; ++k) {
    x -= probs[k];
    if (x < 0.0) return k;
  }
  // Rounding leftovers land on the last state with positive mass.
  for (int k = last; k >= 0; --k)
    if (probs[k] > 0.0) return k;
  return last;
}

const Eigen::MatrixXd& sigma_of(const SimSpec& s, int c) {
  return s.sigma.size() == 1 ? s.sigma[0] : s.sigma[c];
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

void SimSpec::validate() const {
  auto bad = [](const std::string& what) { throw DataError("simulation spec: " + what); };
  if (m < 1 || n < 1 || T < 2 || p < 1) bad("need m >= 1, n >= 1, T >= 2, p >= 1");
  if (p > kMaxVariables) bad("too many variables");
  const int K = has_dropout() ? m + 1 : m;
  if (gamma.rows() != K || gamma.cols() != K) bad("gamma must be m x m or (m+1) x (m+1)");
  if (delta.size() != K) bad("delta size does not match gamma");
  if (!stochastic(delta)) bad("delta is not a probability vector");
  for (int r = 0; r < K; ++r)
    if (!stochastic(gamma.row(r).transpose())) bad("gamma row " + std::to_string(r + 1) + " is not stochastic");
  if (has_dropout()) {
    if (delta[m] != 0.0) bad("delta of the dropout state must be 0");
    if (gamma(m, m) != 1.0) bad("dropout state must be absorbing");
  }
  if (mu.rows() != m || mu.cols() != p) bad("mu must be m x p");
  if (sigma.size() != 1 && static_cast<int>(sigma.size()) != m) bad("need 1 or m covariance matrices");
  for (const auto& s : sigma) {
    if (s.rows() != p || s.cols() != p) bad("covariance matrices must be p x p");
    decompose(s);
  }
  if (p_miss < 0.0 || p_miss > 1.0) bad("p_miss must lie in [0, 1]");
  if (p_miss > 0.0) {
    if (m_miss.size() != m || !stochastic(m_miss)) bad("m_miss must be m weights summing to 1");
    if (v_miss.cols() != p || (v_miss.rows() != 1 && v_miss.rows() != m))
      bad("v_miss must be 1 x p or m x p");
    for (int r = 0; r < v_miss.rows(); ++r)
      if (!stochastic(v_miss.row(r).transpose()))
        bad("v_miss row " + std::to_string(r + 1) + " must sum to 1");
  }
  if (!fixed_paths.empty()) {
    if (static_cast<int>(fixed_paths.size()) != n) bad("fixed_paths needs n rows");
    for (const auto& path : fixed_paths) {
      if (static_cast<int>(path.size()) != T) bad("fixed_paths rows need T entries");
      for (int c : path)
        if (c < 0 || c >= K) bad("fixed_paths entry out of range");
    }
  }
  if (trend.size() != 0 && (trend.rows() != m || trend.cols() != p)) bad("trend must be m x p");
  if (noise_scales.size() != 0) {
    if (noise_scales.rows() != 2 || noise_scales.cols() != p) bad("noise_scales must be 2 x p");
    if ((noise_scales.array() <= 0).any()) bad("noise_scales must be positive");
  }
  if (noise_mix_prob < 0.0 || noise_mix_prob > 1.0) bad("noise_mix_prob must lie in [0, 1]");
}

Eigen::MatrixXd mask_rates(int m, int p, double p_miss, const Eigen::VectorXd& m_miss,
                           const Eigen::MatrixXd& v_miss, bool clip) {
  Eigen::MatrixXd rates = Eigen::MatrixXd::Zero(m, p);
  if (p_miss <= 0.0) return rates;
  for (int c = 0; c < m; ++c)
    for (int j = 0; j < p; ++j) {
      const double v = v_miss(v_miss.rows() == 1 ? 0 : c, j);
      double r = p_miss * (m * m_miss[c]) * (p * v);
      rates(c, j) = clip ? std::clamp(r, 0.0, 1.0) : r;
    }
  return rates;
}

MaskResult apply_mnar_mask(const PanelDataset& data, const std::vector<int>& states, int m,
                           double p_miss, const Eigen::VectorXd& m_miss,
                           const Eigen::MatrixXd& v_miss, std::uint64_t seed) {
  MaskResult out;
  out.data = data;
  if (p_miss <= 0.0) return out;
  const int p = data.p;
  const Eigen::MatrixXd raw = mask_rates(m, p, p_miss, m_miss, v_miss, false);
  const Eigen::MatrixXd rates = mask_rates(m, p, p_miss, m_miss, v_miss, true);
  for (int c = 0; c < m; ++c)
    for (int j = 0; j < p; ++j)
      if (raw(c, j) > 1.0)
        out.diagnostics.push_back("masking rate for state " + std::to_string(c + 1) +
                                  ", variable " + std::to_string(j + 1) + " clipped from " +
                                  fmt(raw(c, j)) + " to 1");

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    0x6d61736bU};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool dropout = data.any_dropout();
  for (int i = 0; i < data.n; ++i)
    for (int t = 0; t < data.T; ++t) {
      const int c = states[static_cast<std::size_t>(i) * data.T + t];
      if (c < 0 || c >= m || data.dropped(i, t)) continue;
      bool all = true;
      for (int j = 0; j < p; ++j) {
        if (u(rng) < rates(c, j))
          out.data.set_missing(i, t, j);
        else if (!data.missing(i, t, j))
          all = false;
      }
      if (t == 0 && all && !dropout) {
        int keep = 0;
        for (int j = 1; j < p; ++j)
          if (rates(c, j) < rates(c, keep)) keep = j;
        out.data.set_value(i, t, keep, data.values[data.index(i, t, keep)]);
      }
    }
  return out;
}

SimOutput generate(const SimSpec& spec) {
  spec.validate();
  SimOutput out;
  const int m = spec.m, p = spec.p, T = spec.T;
  PanelDataset d = PanelDataset::zeros(spec.n, T, p);
  out.states.assign(static_cast<std::size_t>(spec.n) * T, 0);

  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed),
                    static_cast<std::uint32_t>(spec.seed >> 32), 0x73696dU};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<Eigen::MatrixXd> chol;
  for (int c = 0; c < m; ++c) chol.push_back(sigma_of(spec, c).llt().matrixL());

  for (int i = 0; i < spec.n; ++i) {
    int state = 0, run = 0;
    for (int t = 0; t < T; ++t) {
      int next;
      if (!spec.fixed_paths.empty())
        next = spec.fixed_paths[i][t];
      else if (t == 0)
        next = draw(spec.delta, rng);
      else
        next = draw(spec.gamma.row(state).transpose(), rng);
      run = (t > 0 && next == state) ? run + 1 : 0;
      state = next;
      out.states[static_cast<std::size_t>(i) * T + t] = state;
      if (state >= m) {
        if (!d.dropout_time[i]) d.set_dropout(i, t);
        continue;
      }
      Eigen::VectorXd e(p);
      for (int j = 0; j < p; ++j) e[j] = z(rng);
      if (spec.noise_scales.size() != 0)
        for (int j = 0; j < p; ++j) e[j] *= spec.noise_scales(coin(rng) < spec.noise_mix_prob, j);
      Eigen::VectorXd x = spec.mu.row(state).transpose() + chol[state] * e;
      if (spec.trend.size() != 0) x += run * spec.trend.row(state).transpose();
      for (int j = 0; j < p; ++j) d.set_value(i, t, j, x[j]);
    }
  }

  MaskResult masked =
      apply_mnar_mask(d, out.states, m, spec.p_miss, spec.m_miss, spec.v_miss, spec.seed);
  out.data = std::move(masked.data);
  out.diagnostics = std::move(masked.diagnostics);

  HmmParams& h = out.truth;
  h.m = m;
  h.p = p;
  h.dropout = spec.has_dropout();
  h.delta = spec.delta;
  h.gamma = spec.gamma;
  h.mu = spec.mu;
  for (int c = 0; c < m; ++c) h.chol.push_back(decompose(sigma_of(spec, c)));
  h.miss = MissParams::zeros(Mechanism::MAR, m, p, T);
  return out;
}

StudyName parse_study(std::string_view name) {
  std::string s(name);
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "sim1") return StudyName::Sim1;
  if (s == "sim2") return StudyName::Sim2;
  if (s == "sim3") return StudyName::Sim3;
  if (s == "sim4") return StudyName::Sim4;
  throw DataError("unknown study '" + std::string(name) + "'");
}

std::string_view study_name(StudyName s) {
  switch (s) {
    case StudyName::Sim1: return "sim1";
    case StudyName::Sim2: return "sim2";
    case StudyName::Sim3: return "sim3";
    case StudyName::Sim4: return "sim4";
  }
  return "?";
}

SimSpec sim1_spec(int gamma_index, int n) {
  SimSpec s;
  s.m = 2;
  s.n = n;
  s.T = 5;
  s.p = 4;
  s.delta = Eigen::Vector2d(0.5, 0.5);
  s.gamma.resize(2, 2);
  switch (gamma_index) {
    case 1: s.gamma << 0.95, 0.05, 0.05, 0.95; break;
    case 2: s.gamma << 0.5, 0.5, 0.5, 0.5; break;
    case 3: s.gamma << 0.2, 0.8, 0.7, 0.3; break;
    default: throw DataError("sim1 transition matrix index must be 1, 2 or 3");
  }
  s.mu.resize(2, 4);
  s.mu << 3, 4, 5, 10,
          5, 6, 3, 11;
  s.sigma = {Eigen::MatrixXd::Identity(4, 4)};
  return s;
}

SimSpec sim2_spec() {
  SimSpec s;
  s.m = 2;
  s.n = 60;
  s.T = 6;
  s.p = 2;
  // Roster: 18 units start on the rising trajectory, 25 switch onto it at
  // times 2..6 (7, 6, 5, 4, 3 units), 17 stay stable throughout.
  const int switch_counts[] = {7, 6, 5, 4, 3};
  for (int i = 0; i < 18; ++i) s.fixed_paths.push_back(std::vector<int>(6, 1));
  for (int k = 0; k < 5; ++k)
    for (int c = 0; c < switch_counts[k]; ++c) {
      std::vector<int> path(6, 0);
      for (int t = k + 1; t < 6; ++t) path[t] = 1;
      s.fixed_paths.push_back(path);
    }
  for (int i = 0; i < 17; ++i) s.fixed_paths.push_back(std::vector<int>(6, 0));
  s.delta = Eigen::Vector2d(0.7, 0.3);
  s.gamma.resize(2, 2);
  s.gamma << 125.0 / 150.0, 25.0 / 150.0, 0.0, 1.0;
  s.mu.resize(2, 2);
  s.mu << 0, 0,
          2, 0;
  s.trend.resize(2, 2);
  s.trend << 0, 0,
             1, 0;
  s.sigma = {Eigen::MatrixXd::Identity(2, 2)};
  // Variable 2 carries no state signal: contaminated normal noise.
  s.noise_scales.resize(2, 2);
  s.noise_scales << 1, 0.3,
                    1, 5;
  s.noise_mix_prob = 0.5;
  return s;
}

SimSpec sim3_spec(int m, double p_miss, int n) {
  SimSpec s;
  s.m = m;
  s.n = n;
  s.T = 5;
  s.p = 4;
  s.p_miss = p_miss;
  Eigen::MatrixXd sig(4, 4);
  sig << 1, .5, 0, .25,
         .5, 1, .5, 0,
         0, .5, 1, 0,
         .25, 0, 0, 1;
  s.sigma = {sig};
  if (m == 2) {
    s.delta = Eigen::Vector3d(0.2, 0.8, 0.0);
    s.mu.resize(2, 4);
    s.mu << 5, 4, 5, 10,
            5, 6.5, 3, 10;
    s.gamma.resize(3, 3);
    s.gamma << .65, .05, .3,
               .25, .7, .05,
               0, 0, 1;
    s.m_miss = Eigen::Vector2d(0.7, 0.3);
    s.v_miss.resize(1, 4);
    s.v_miss << 0, .6, .4, 0;
  } else if (m == 3) {
    s.delta = Eigen::Vector4d(0.3, 0.6, 0.1, 0.0);
    s.mu.resize(3, 4);
    s.mu << 5, 4, 5, 10,
            5, 6.5, 3, 10,
            5, 3, 2, 7;
    s.gamma.resize(4, 4);
    s.gamma << .45, .15, .30, .10,
               .2, .7, .05, .05,
               .15, 0, .7, .15,
               0, 0, 0, 1;
    s.m_miss = Eigen::Vector3d(0.7, 0.0, 0.3);
    s.v_miss.resize(1, 4);
    s.v_miss << 0, .5, .4, .1;
  } else {
    throw DataError("sim3 is defined for m = 2 or 3");
  }
  return s;
}

SimSpec sim4_spec(int m) {
  SimSpec s;
  s.m = m;
  s.n = 500;
  s.T = 5;
  s.p = 4;
  s.p_miss = 0.3;
  s.sigma = {Eigen::MatrixXd::Identity(4, 4)};
  if (m == 2) {
    s.delta = Eigen::Vector2d(0.5, 0.5);
    s.gamma = Eigen::MatrixXd::Constant(2, 2, 0.5);
    s.mu.resize(2, 4);
    s.mu << 3, 5, 3, 10,
            5, 4, 3, 11;
    s.m_miss = Eigen::Vector2d(0.8, 0.2);
    s.v_miss.resize(2, 4);
    s.v_miss << .8, .2, 0, 0,
                0, 0, .5, .5;
  } else if (m == 3) {
    s.delta = Eigen::Vector3d::Constant(1.0 / 3.0);
    s.gamma = Eigen::MatrixXd::Constant(3, 3, 0.4);
    s.gamma.diagonal().setConstant(0.2);
    s.mu.resize(3, 4);
    s.mu << 5, 6, 5, 10,
            5, 6, 3, 10.5,
            5, 5.5, 2, 9;
    s.m_miss = Eigen::Vector3d(0.8, 0.0, 0.2);
    // The middle state never goes missing; its weight row is a placeholder.
    s.v_miss.resize(3, 4);
    s.v_miss << 0, .8, .2, 0,
                .25, .25, .25, .25,
                0, 0, .5, .5;
  } else {
    throw DataError("sim4 is defined for m = 2 or 3");
  }
  return s;
}

std::vector<StudySetting> study_grid(StudyName study) {
  std::vector<StudySetting> grid;
  const auto& family = ModelStructure::family();
  const std::vector<ModelStructure> all(family.begin(), family.end());
  switch (study) {
    case StudyName::Sim1:
      for (int g = 1; g <= 3; ++g)
        for (int n : {100, 500})
          grid.push_back({"G" + std::to_string(g), sim1_spec(g, n), all, {Mechanism::MAR}});
      break;
    case StudyName::Sim2:
      grid.push_back({"trajectory", sim2_spec(), all, {Mechanism::MAR}});
      break;
    case StudyName::Sim3:
      for (int m : {2, 3})
        for (double pm : {0.1, 0.3, 0.5})
          for (int n : {100, 500})
            grid.push_back({"m" + std::to_string(m) + "-pmiss" + fmt(pm), sim3_spec(m, pm, n),
                            {ModelStructure::parse("VVA")},
                            {Mechanism::MAR, Mechanism::State, Mechanism::StateVariable}});
      break;
    case StudyName::Sim4:
      for (int m : {2, 3})
        grid.push_back({"m" + std::to_string(m), sim4_spec(m), all,
                        {Mechanism::MAR, Mechanism::StateVariable}});
      break;
  }
  return grid;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  // splitmix64 finalizer over the combined input
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<StudyRow> run_study(const StudyOptions& opt) {
  if (opt.replicates < 1) throw DataError("replicates must be >= 1");
  auto keep = [](const auto& filter, const auto& value) {
    return filter.empty() || std::find(filter.begin(), filter.end(), value) != filter.end();
  };

  struct Job {
    const StudySetting* setting;
    int setting_index;
    int replicate;
  };
  const std::vector<StudySetting> grid = study_grid(opt.study);
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < grid.size(); ++s) {
    if (!keep(opt.gamma_ids, grid[s].gamma_id) || !keep(opt.ns, grid[s].spec.n)) continue;
    for (int r = 0; r < opt.replicates; ++r) jobs.push_back({&grid[s], static_cast<int>(s), r});
  }

  std::vector<std::vector<StudyRow>> rows(jobs.size());
  parallel_for(jobs.size(), resolve_threads(opt.threads), [&](std::size_t k) {
    const Job& job = jobs[k];
    const StudySetting& st = *job.setting;
    const std::uint64_t seed =
        derive_seed(derive_seed(opt.seed, static_cast<std::uint64_t>(job.replicate)),
                    static_cast<std::uint64_t>(job.setting_index));
    SimSpec spec = st.spec;
    spec.seed = seed;
    std::optional<SimOutput> sim;
    std::string sim_error;
    try {
      sim = generate(spec);
    } catch (const std::exception& e) {
      sim_error = e.what();
    }
    for (const auto& model : st.models) {
      if (!keep(opt.models, model)) continue;
      for (Mechanism mech : st.mechanisms) {
        if (!keep(opt.mechanisms, mech)) continue;
        StudyRow row;
        row.study = std::string(study_name(opt.study));
        row.replicate = job.replicate + 1;
        row.model = model.name();
        row.mechanism = std::string(mechanism_name(mech));
        row.gamma_id = st.gamma_id;
        row.n = spec.n;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        row.misclass = row.rmse_gamma = row.rmse_delta = row.rmse_mu = row.rmse_sigma = nan;
        row.bic = row.icl = nan;
        if (!sim) {
          row.error = sim_error;
          rows[k].push_back(row);
          continue;
        }
        try {
          FitConfig cfg;
          cfg.structure = model;
          cfg.m = spec.m;
          cfg.mechanism = mech;
          cfg.dropout = DropoutMode::Column;
          cfg.n_starts = opt.n_starts;
          cfg.init = opt.init;
          cfg.max_iter = opt.max_iter;
          cfg.rel_tol = opt.rel_tol;
          cfg.seed = seed;
          cfg.threads = 1;
          const FitResult fr = fit(sim->data, cfg);
          const ScoreReport rep = score_fit(fr.decoded, sim->states, fr.params, sim->truth);
          row.misclass = rep.misclass;
          row.rmse_gamma = rep.rmse_gamma;
          row.rmse_delta = rep.rmse_delta;
          row.rmse_mu = rep.rmse_mu;
          row.rmse_sigma = rep.rmse_sigma;
          row.bic = fr.bic;
          row.icl = fr.icl;
          row.iterations = fr.iterations;
          row.converged = fr.converged;
        } catch (const std::exception& e) {
          row.error = e.what();
        }
        rows[k].push_back(row);
      }
    }
  });

  std::vector<StudyRow> out;
  for (auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

}  // namespace cdghmm
