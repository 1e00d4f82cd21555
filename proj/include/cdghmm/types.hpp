#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cdghmm/cholesky.hpp"

namespace cdghmm {

/// Sentinel stored in unobserved cells. The mask is authoritative.
inline constexpr double kMissingValue = std::numeric_limits<double>::quiet_NaN();

/// Largest variable count supported (missingness patterns are 64-bit masks).
inline constexpr int kMaxVariables = 64;

/// n subjects observed on a common grid of T time points, p variables each.
struct PanelDataset {
  int n = 0;
  int T = 0;
  int p = 0;
  std::vector<double> values;                    // (i, t, j) row-major
  std::vector<std::uint8_t> mask;                // 1 = unobserved
  std::vector<std::optional<int>> dropout_time;  // 0-based first dropped time
  std::vector<double> time_values;               // raw time of each grid point
  std::vector<std::string> ids;                  // subject labels (may be empty)

  /// Fully observed dataset of zeros with time grid 1..T.
  static PanelDataset zeros(int n, int T, int p);

  std::size_t index(int i, int t, int j = 0) const {
    return (static_cast<std::size_t>(i) * T + t) * p + j;
  }
  std::span<const double> row(int i, int t) const {
    return {values.data() + index(i, t), static_cast<std::size_t>(p)};
  }
  std::span<const std::uint8_t> mask_row(int i, int t) const {
    return {mask.data() + index(i, t), static_cast<std::size_t>(p)};
  }
  bool missing(int i, int t, int j) const { return mask[index(i, t, j)] != 0; }
  bool dropped(int i, int t) const {
    return dropout_time[i].has_value() && t >= *dropout_time[i];
  }
  bool any_dropout() const;
  bool row_all_missing(int i, int t) const;
  /// Bit j set when variable j is unobserved.
  std::uint64_t pattern(int i, int t) const;

  void set_value(int i, int t, int j, double v);
  void set_missing(int i, int t, int j);
  /// Marks rows t_d..T-1 unobserved and records the dropout.
  void set_dropout(int i, int t_d);
};

/// Throws DataError when shapes or the mask/dropout invariants are broken.
void validate_dataset(const PanelDataset& data);

enum class Constraint { Equal, Variable };
enum class Shape { Anisotropic, Isotropic };

/// One of the eight covariance constraint combinations (EEA ... EEI).
struct ModelStructure {
  Constraint t_constraint = Constraint::Variable;
  Constraint d_constraint = Constraint::Variable;
  Shape d_shape = Shape::Anisotropic;

  std::string name() const;
  static ModelStructure parse(std::string_view name);
  /// Family members in the conventional order EEA, VVA, VEA, EVA, VVI, VEI, EVI, EEI.
  static const std::array<ModelStructure, 8>& family();

  bool equal_t() const { return t_constraint == Constraint::Equal; }
  bool equal_d() const { return d_constraint == Constraint::Equal; }
  bool isotropic() const { return d_shape == Shape::Isotropic; }

  friend bool operator==(const ModelStructure&, const ModelStructure&) = default;
};

enum class Mechanism {
  MAR,
  State,
  StateVariable,
  StateTimeShared,
  StateTimeFull,
  StateVarTimeShared,
  StateVarTimeFull,
};

inline constexpr std::array<Mechanism, 7> kAllMechanisms = {
    Mechanism::MAR,          Mechanism::State,
    Mechanism::StateVariable, Mechanism::StateTimeShared,
    Mechanism::StateTimeFull, Mechanism::StateVarTimeShared,
    Mechanism::StateVarTimeFull};

std::string_view mechanism_name(Mechanism mech);
Mechanism parse_mechanism(std::string_view name);
bool has_time_slope(Mechanism mech);

/// Probit missingness coefficients. Layout of `alpha` by mechanism:
///   State               alpha[c]
///   StateVariable       alpha[c*p + j]
///   StateTimeShared     alpha[c]            + beta_t * time
///   StateTimeFull       alpha[c*T + t]
///   StateVarTimeShared  alpha[c*p + j]      + beta_t * time
///   StateVarTimeFull    alpha[(c*p + j)*T + t]
struct MissParams {
  Mechanism mechanism = Mechanism::MAR;
  int m = 0;
  int p = 0;
  int T = 0;
  std::vector<double> alpha;
  double beta_t = 0.0;

  static MissParams zeros(Mechanism mech, int m, int p, int T);
  /// Number of free coefficients (alpha plus the shared slope when present).
  std::size_t coefficient_count() const;
  double linear_predictor(int state, int var, int t, double time_value) const;
};

std::size_t alpha_size(Mechanism mech, int m, int p, int T);

/// Parameters of an m-state model. With dropout the chain has K = m + 1
/// states and the last one is absorbing with degenerate emissions.
struct HmmParams {
  int m = 0;
  int p = 0;
  bool dropout = false;
  Eigen::VectorXd delta;          // K
  Eigen::MatrixXd gamma;          // K x K, row-stochastic
  Eigen::MatrixXd mu;             // m x p
  std::vector<ModCholPair> chol;  // m
  MissParams miss;

  int K() const { return dropout ? m + 1 : m; }
  Eigen::MatrixXd sigma(int j) const { return reconstruct_sigma(chol[j]); }
};

/// Free covariance parameters of one family member.
long count_free_params(const ModelStructure& structure, int m, int p);

/// rho for BIC: covariance + (m-1) initial + transition + m*p means +
/// missingness coefficients. With dropout each regular transition row has m
/// free entries instead of m-1.
long total_free_params(const ModelStructure& structure, int m, int p,
                       bool dropout, const MissParams& miss);

/// Every violated invariant, with indices. Empty means valid.
std::vector<std::string> validate(const HmmParams& params,
                                  const ModelStructure& structure);

}  // namespace cdghmm
