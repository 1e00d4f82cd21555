#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cdghmm/em.hpp"
#include "cdghmm/types.hpp"

namespace cdghmm {

/// Data-generating settings. `gamma` may carry an extra absorbing dropout
/// state (size (m+1) x (m+1)); `delta` then has m+1 entries with a trailing 0.
struct SimSpec {
  int m = 2;
  int n = 100;
  int T = 5;
  int p = 4;
  Eigen::VectorXd delta;
  Eigen::MatrixXd gamma;
  Eigen::MatrixXd mu;                // m x p
  std::vector<Eigen::MatrixXd> sigma;  // m matrices (one entry = shared)
  double p_miss = 0.0;
  Eigen::VectorXd m_miss;            // m state weights
  Eigen::MatrixXd v_miss;            // m x p (or 1 x p shared) variable weights
  std::uint64_t seed = 1;
  // Optional deterministic state paths (n x T, 0-based); replaces the chain.
  std::vector<std::vector<int>> fixed_paths;
  // Optional per-state drift (m x p): the mean at the k-th consecutive period
  // spent in state c is mu_c + k * trend_c, k = 0, 1, ...
  Eigen::MatrixXd trend;
  // Optional two-point scale mixture on the standardized innovations (2 x p):
  // each cell's variable j is scaled by noise_scales(1, j) with probability
  // noise_mix_prob, else by noise_scales(0, j).
  Eigen::MatrixXd noise_scales;
  double noise_mix_prob = 0.0;

  bool has_dropout() const { return gamma.rows() == m + 1; }
  /// Throws DataError on inconsistent shapes or invalid probabilities.
  void validate() const;
};

struct SimOutput {
  PanelDataset data;
  std::vector<int> states;  // n*T, 0-based; m marks dropped cells
  HmmParams truth;
  std::vector<std::string> diagnostics;
};

SimOutput generate(const SimSpec& spec);

struct MaskResult {
  PanelDataset data;
  std::vector<std::string> diagnostics;  // lists clipped (state, variable) rates
};

/// Masks cell (i, t, j) independently with probability
///   pi_{c,j} = p_miss * (m * m_miss[c]) * (p * v_miss[c][j]), clipped to [0, 1],
/// where c is the true state. Dropped cells are left alone. When dropout is
/// absent, a first-period row is never fully masked: the variable with the
/// lowest rate is kept observed.
MaskResult apply_mnar_mask(const PanelDataset& data, const std::vector<int>& states, int m,
                           double p_miss, const Eigen::VectorXd& m_miss,
                           const Eigen::MatrixXd& v_miss, std::uint64_t seed);

/// Per-cell masking probabilities pi_{c,j} (m x p), before clipping when
/// `clip` is false.
Eigen::MatrixXd mask_rates(int m, int p, double p_miss, const Eigen::VectorXd& m_miss,
                           const Eigen::MatrixXd& v_miss, bool clip = true);

enum class StudyName { Sim1, Sim2, Sim3, Sim4 };
StudyName parse_study(std::string_view name);
std::string_view study_name(StudyName s);

/// One data-generating setting of a study with the fits run on it.
struct StudySetting {
  std::string gamma_id;  // setting label, e.g. "G1" or "m3-pmiss0.5"
  SimSpec spec;          // seed is overwritten per replicate
  std::vector<ModelStructure> models;
  std::vector<Mechanism> mechanisms;
};

/// Full grid of a study, in output order.
std::vector<StudySetting> study_grid(StudyName study);

/// The reference settings from the simulation tables.
SimSpec sim1_spec(int gamma_index, int n);
SimSpec sim2_spec();
SimSpec sim3_spec(int m, double p_miss, int n);
SimSpec sim4_spec(int m);

struct StudyOptions {
  StudyName study = StudyName::Sim1;
  int replicates = 1;
  std::uint64_t seed = 1;
  int n_starts = 6;
  InitMethod init = InitMethod::Mixed;
  int max_iter = 1000;
  double rel_tol = 1e-6;
  int threads = 1;
  // Empty filters keep everything.
  std::vector<std::string> gamma_ids;
  std::vector<int> ns;
  std::vector<ModelStructure> models;
  std::vector<Mechanism> mechanisms;
};

struct StudyRow {
  std::string study;
  int replicate = 0;
  std::string model;
  std::string mechanism;
  std::string gamma_id;
  int n = 0;
  double misclass = 0.0;
  double rmse_gamma = 0.0;
  double rmse_delta = 0.0;
  double rmse_mu = 0.0;
  double rmse_sigma = 0.0;
  double bic = 0.0;
  double icl = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string error;  // non-empty when the replicate failed
};

/// Replicate r uses seed derived from (options.seed, r); every fit in the
/// replicate shares the dataset generated for its setting.
std::vector<StudyRow> run_study(const StudyOptions& options);

/// Seed of replicate `index` derived from a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

}  // namespace cdghmm
