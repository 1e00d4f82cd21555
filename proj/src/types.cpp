#include "cdghmm/types.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "cdghmm/errors.hpp"

namespace cdghmm {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

PanelDataset PanelDataset::zeros(int n, int T, int p) {
  PanelDataset d;
  d.n = n;
  d.T = T;
  d.p = p;
  const auto size = static_cast<std::size_t>(n) * T * p;
  d.values.assign(size, 0.0);
  d.mask.assign(size, 0);
  d.dropout_time.assign(n, std::nullopt);
  d.time_values.resize(T);
  for (int t = 0; t < T; ++t) d.time_values[t] = t + 1;
  return d;
}

bool PanelDataset::any_dropout() const {
  return std::any_of(dropout_time.begin(), dropout_time.end(),
                     [](const auto& v) { return v.has_value(); });
}

bool PanelDataset::row_all_missing(int i, int t) const {
  auto r = mask_row(i, t);
  return std::all_of(r.begin(), r.end(), [](std::uint8_t b) { return b != 0; });
}

std::uint64_t PanelDataset::pattern(int i, int t) const {
  std::uint64_t bits = 0;
  const std::uint8_t* r = mask.data() + index(i, t);
  for (int j = 0; j < p; ++j)
    if (r[j]) bits |= std::uint64_t{1} << j;
  return bits;
}

void PanelDataset::set_value(int i, int t, int j, double v) {
  values[index(i, t, j)] = v;
  mask[index(i, t, j)] = 0;
}

void PanelDataset::set_missing(int i, int t, int j) {
  values[index(i, t, j)] = kMissingValue;
  mask[index(i, t, j)] = 1;
}

void PanelDataset::set_dropout(int i, int t_d) {
  dropout_time[i] = t_d;
  for (int t = t_d; t < T; ++t)
    for (int j = 0; j < p; ++j) set_missing(i, t, j);
}

void validate_dataset(const PanelDataset& d) {
  if (d.n < 1 || d.T < 2 || d.p < 1)
    throw DataError("dataset needs n >= 1, T >= 2, p >= 1 (got n=" + std::to_string(d.n) +
                    ", T=" + std::to_string(d.T) + ", p=" + std::to_string(d.p) + ")");
  if (d.p > kMaxVariables)
    throw DataError("at most " + std::to_string(kMaxVariables) + " variables are supported");
  const auto size = static_cast<std::size_t>(d.n) * d.T * d.p;
  if (d.values.size() != size || d.mask.size() != size)
    throw DataError("value/mask storage does not match n*T*p");
  if (d.dropout_time.size() != static_cast<std::size_t>(d.n))
    throw DataError("dropout_time must have one entry per subject");
  if (d.time_values.size() != static_cast<std::size_t>(d.T))
    throw DataError("time_values must have T entries");
  for (std::size_t k = 0; k < size; ++k)
    if (!d.mask[k] && !std::isfinite(d.values[k]))
      throw DataError("observed cell " + std::to_string(k) + " is not finite");
  for (int i = 0; i < d.n; ++i) {
    if (!d.dropout_time[i]) continue;
    const int td = *d.dropout_time[i];
    if (td < 1 || td >= d.T)
      throw DataError("subject " + std::to_string(i) + ": dropout time must be in [2, T]");
    for (int t = td; t < d.T; ++t)
      if (!d.row_all_missing(i, t))
        throw DataError("subject " + std::to_string(i) + ": observed values after dropout at t=" +
                        std::to_string(t + 1));
  }
}

std::string ModelStructure::name() const {
  std::string s;
  s += equal_t() ? 'E' : 'V';
  s += equal_d() ? 'E' : 'V';
  s += isotropic() ? 'I' : 'A';
  return s;
}

ModelStructure ModelStructure::parse(std::string_view name) {
  const std::string s = lower(name);
  if (s.size() == 3) {
    auto con = [](char c) -> std::optional<Constraint> {
      if (c == 'e') return Constraint::Equal;
      if (c == 'v') return Constraint::Variable;
      return std::nullopt;
    };
    auto t = con(s[0]);
    auto dc = con(s[1]);
    if (t && dc && (s[2] == 'a' || s[2] == 'i'))
      return {*t, *dc, s[2] == 'i' ? Shape::Isotropic : Shape::Anisotropic};
  }
  throw DataError("unknown model '" + std::string(name) + "'");
}

const std::array<ModelStructure, 8>& ModelStructure::family() {
  using C = Constraint;
  using S = Shape;
  static const std::array<ModelStructure, 8> members = {{
      {C::Equal, C::Equal, S::Anisotropic},        // EEA
      {C::Variable, C::Variable, S::Anisotropic},  // VVA
      {C::Variable, C::Equal, S::Anisotropic},     // VEA
      {C::Equal, C::Variable, S::Anisotropic},     // EVA
      {C::Variable, C::Variable, S::Isotropic},    // VVI
      {C::Variable, C::Equal, S::Isotropic},       // VEI
      {C::Equal, C::Variable, S::Isotropic},       // EVI
      {C::Equal, C::Equal, S::Isotropic},          // EEI
  }};
  return members;
}

std::string_view mechanism_name(Mechanism mech) {
  switch (mech) {
    case Mechanism::MAR: return "mar";
    case Mechanism::State: return "state";
    case Mechanism::StateVariable: return "state-var";
    case Mechanism::StateTimeShared: return "state-time-shared";
    case Mechanism::StateTimeFull: return "state-time-full";
    case Mechanism::StateVarTimeShared: return "state-var-time-shared";
    case Mechanism::StateVarTimeFull: return "state-var-time-full";
  }
  return "?";
}

Mechanism parse_mechanism(std::string_view name) {
  const std::string s = lower(name);
  for (Mechanism m : kAllMechanisms)
    if (mechanism_name(m) == s) return m;
  throw DataError("unknown missingness mechanism '" + std::string(name) + "'");
}

bool has_time_slope(Mechanism mech) {
  return mech == Mechanism::StateTimeShared || mech == Mechanism::StateVarTimeShared;
}

std::size_t alpha_size(Mechanism mech, int m, int p, int T) {
  const std::size_t M = m, P = p, TT = T;
  switch (mech) {
    case Mechanism::MAR: return 0;
    case Mechanism::State:
    case Mechanism::StateTimeShared: return M;
    case Mechanism::StateVariable:
    case Mechanism::StateVarTimeShared: return M * P;
    case Mechanism::StateTimeFull: return M * TT;
    case Mechanism::StateVarTimeFull: return M * P * TT;
  }
  return 0;
}

MissParams MissParams::zeros(Mechanism mech, int m, int p, int T) {
  MissParams mp;
  mp.mechanism = mech;
  mp.m = m;
  mp.p = p;
  mp.T = T;
  mp.alpha.assign(alpha_size(mech, m, p, T), 0.0);
  return mp;
}

std::size_t MissParams::coefficient_count() const {
  return alpha.size() + (has_time_slope(mechanism) ? 1 : 0);
}

double MissParams::linear_predictor(int c, int j, int t, double time_value) const {
  switch (mechanism) {
    case Mechanism::MAR: return 0.0;
    case Mechanism::State: return alpha[c];
    case Mechanism::StateVariable: return alpha[static_cast<std::size_t>(c) * p + j];
    case Mechanism::StateTimeShared: return alpha[c] + beta_t * time_value;
    case Mechanism::StateTimeFull: return alpha[static_cast<std::size_t>(c) * T + t];
    case Mechanism::StateVarTimeShared:
      return alpha[static_cast<std::size_t>(c) * p + j] + beta_t * time_value;
    case Mechanism::StateVarTimeFull:
      return alpha[(static_cast<std::size_t>(c) * p + j) * T + t];
  }
  return 0.0;
}

long count_free_params(const ModelStructure& s, int m, int p) {
  const long lower = static_cast<long>(p) * (p - 1) / 2;
  const long t_part = s.equal_t() ? lower : m * lower;
  long d_part = 0;
  if (s.isotropic())
    d_part = s.equal_d() ? 1 : m;
  else
    d_part = s.equal_d() ? p : static_cast<long>(m) * p;
  return t_part + d_part;
}

long total_free_params(const ModelStructure& s, int m, int p, bool dropout,
                       const MissParams& miss) {
  const long transitions = dropout ? static_cast<long>(m) * m : static_cast<long>(m) * (m - 1);
  return count_free_params(s, m, p) + (m - 1) + transitions + static_cast<long>(m) * p +
         static_cast<long>(miss.coefficient_count());
}

std::vector<std::string> validate(const HmmParams& hp, const ModelStructure& s) {
  std::vector<std::string> out;
  auto add = [&](std::string msg) { out.push_back(std::move(msg)); };
  const int K = hp.K();
  if (hp.m < 1) add("state count m must be >= 1");
  if (hp.delta.size() != K) add("delta has " + std::to_string(hp.delta.size()) +
                                " entries, expected " + std::to_string(K));
  if (hp.gamma.rows() != K || hp.gamma.cols() != K) add("gamma is not K x K");
  if (hp.mu.rows() != hp.m || hp.mu.cols() != hp.p) add("mu is not m x p");
  if (static_cast<int>(hp.chol.size()) != hp.m) add("need one Cholesky pair per state");
  if (!out.empty()) return out;

  constexpr double tol = 1e-12;
  for (int k = 0; k < K; ++k)
    if (hp.delta[k] < 0) add("delta entry " + std::to_string(k + 1) + " negative");
  if (std::abs(hp.delta.sum() - 1.0) > tol) add("delta does not sum to 1");
  for (int r = 0; r < K; ++r) {
    if ((hp.gamma.row(r).array() < 0).any())
      add("row " + std::to_string(r + 1) + " has negative entries");
    if (std::abs(hp.gamma.row(r).sum() - 1.0) > tol)
      add("row " + std::to_string(r + 1) + " not stochastic");
  }
  if (hp.dropout) {
    if (hp.delta[hp.m] != 0.0) add("delta of the absorbing state must be 0");
    for (int k = 0; k < K; ++k)
      if (hp.gamma(hp.m, k) != (k == hp.m ? 1.0 : 0.0)) {
        add("absorbing row is not the unit vector");
        break;
      }
  }
  for (int j = 0; j < hp.m; ++j) {
    const auto& c = hp.chol[j];
    const std::string tag = "state " + std::to_string(j + 1);
    if (c.T.rows() != hp.p || c.T.cols() != hp.p || c.d.size() != hp.p) {
      add(tag + ": Cholesky factors are not p x p");
      continue;
    }
    bool unit = true;
    for (int r = 0; r < hp.p; ++r) {
      if (c.T(r, r) != 1.0) unit = false;
      for (int q = r + 1; q < hp.p; ++q)
        if (c.T(r, q) != 0.0) unit = false;
    }
    if (!unit) add(tag + ": T is not unit lower triangular");
    if (!(c.d.array() > 0).all()) add(tag + ": D has non-positive entries");
    if (s.isotropic() && (c.d.array() != c.d[0]).any()) add(tag + ": isotropy violated");
    if (j > 0) {
      if (s.equal_t() && hp.chol[j].T != hp.chol[0].T)
        add(tag + ": equal-T constraint violated");
      if (s.equal_d() && hp.chol[j].d != hp.chol[0].d)
        add(tag + ": equal-D constraint violated");
    }
  }
  if (hp.miss.mechanism != Mechanism::MAR || !hp.miss.alpha.empty()) {
    const auto& mp = hp.miss;
    if (mp.m != hp.m || mp.p != hp.p ||
        mp.alpha.size() != alpha_size(mp.mechanism, mp.m, mp.p, mp.T))
      add("missingness coefficients do not match the mechanism shape");
  }
  return out;
}

}  // namespace cdghmm
