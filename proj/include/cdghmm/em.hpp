#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cdghmm/forward_backward.hpp"
#include "cdghmm/types.hpp"

namespace cdghmm {

/// Mixed alternates k-means (even start index) and random (odd) seeding.
enum class InitMethod { KMeans, Random, Mixed };

InitMethod parse_init_method(std::string_view name);
std::string_view init_method_name(InitMethod method);

/// How the absorbing dropout state is determined.
///   Auto    trailing all-missing rows (t >= 2) are dropout
///   Column  keep dropout_time as loaded from an explicit column
///   Off     no absorbing state; trailing gaps are ordinary missing rows
enum class DropoutMode { Auto, Column, Off };

DropoutMode parse_dropout_mode(std::string_view name);
std::string_view dropout_mode_name(DropoutMode mode);

struct FitConfig {
  ModelStructure structure;
  int m = 2;
  Mechanism mechanism = Mechanism::MAR;
  DropoutMode dropout = DropoutMode::Auto;
  int max_iter = 1000;
  double rel_tol = 1e-6;
  int n_starts = 10;
  std::uint64_t seed = 1;
  InitMethod init = InitMethod::KMeans;
  int threads = 1;  // restarts run concurrently up to this many workers

  /// Throws DataError on m < 1, max_iter < 1, rel_tol <= 0 or n_starts < 1.
  void validate() const;
};

struct FitResult {
  HmmParams params;
  ModelStructure structure;
  Mechanism mechanism = Mechanism::MAR;
  DropoutMode dropout_mode = DropoutMode::Auto;
  std::uint64_t seed = 0;
  std::vector<double> loglik_trace;  // observed log-likelihood per iteration
  double loglik = 0.0;
  double bic = 0.0;
  double icl = 0.0;
  long rho = 0;
  std::vector<int> decoded;  // n*T labels, 0-based; m marks dropped cells
  int iterations = 0;
  bool converged = false;
  int best_start = 0;
  std::vector<std::string> diagnostics;
};

/// Applies the dropout mode to a copy of the data (Auto re-detects, Off
/// clears dropout flags).
PanelDataset prepare_dropout(const PanelDataset& data, DropoutMode mode);

struct Initialization {
  HmmParams params;
  Posteriors seed;  // hard (k-means) or soft (random) posteriors used to seed
};

/// Seeds the posteriors from k-means on mean-imputed rows (or random soft
/// assignments) and runs one M-step. `start` selects the RNG stream. The
/// data must already carry its dropout flags (see prepare_dropout).
Initialization initialize(const PanelDataset& data, const FitConfig& config, int start = 0);

/// EM from explicit starting parameters. Records the observed log-likelihood
/// of every iterate, stops on |l_k - l_{k-1}| / (1 + |l_k|) < rel_tol, and
/// throws NumericError if the likelihood decreases by more than 1e-8.
FitResult run_em(const PanelDataset& data, const FitConfig& config, HmmParams start);

/// Multi-start fit; best final log-likelihood wins. Failed starts are listed
/// in diagnostics; throws NumericError when every start fails.
FitResult fit(const PanelDataset& data, const FitConfig& config);

struct Decoding {
  int n = 0;
  int T = 0;
  int K = 0;
  std::vector<int> labels;    // (i, t); argmax u_hat, ties to the lowest index
  std::vector<double> probs;  // (i, t, k)
};

/// Local decoding. `data` must carry the dropout flags the params were fit with.
Decoding local_decode(const PanelDataset& data, const HmmParams& params);

struct ModelScore {
  double bic = 0.0;
  double icl = 0.0;
};

/// BIC = 2 l - rho log N, ICL = BIC + 2 sum MAP(u) log u, N = n*T.
ModelScore score(double loglik, long rho, const Posteriors& post);

}  // namespace cdghmm
