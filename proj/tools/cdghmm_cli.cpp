#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "cdghmm/em.hpp"
#include "cdghmm/errors.hpp"
#include "cdghmm/io.hpp"
#include "cdghmm/simulate.hpp"

using namespace cdghmm;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

int report(int code, const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
  return code;
}

struct FitFlags {
  std::string data;
  std::string model;
  int states = 2;
  std::string mechanism = "mar";
  std::string dropout = "auto";
  int starts = 10;
  std::uint64_t seed = 1;
  double tol = 1e-6;
  int max_iter = 1000;
  int threads = 0;
  std::string init = "kmeans";
  std::string out;
};

// An explicit dropout column wins over auto-detection.
DropoutMode effective_mode(const std::string& flag, const LoadedPanel& panel) {
  DropoutMode mode = parse_dropout_mode(flag);
  if (mode == DropoutMode::Auto && panel.has_dropout_column) return DropoutMode::Column;
  return mode;
}

FitConfig make_config(const FitFlags& f, const LoadedPanel& panel) {
  FitConfig cfg;
  cfg.structure = ModelStructure::parse(f.model.empty() ? "VVA" : f.model);
  cfg.m = f.states;
  cfg.mechanism = parse_mechanism(f.mechanism);
  cfg.dropout = effective_mode(f.dropout, panel);
  cfg.n_starts = f.starts;
  cfg.seed = f.seed;
  cfg.rel_tol = f.tol;
  cfg.max_iter = f.max_iter;
  cfg.threads = f.threads;
  cfg.init = parse_init_method(f.init);
  cfg.validate();
  return cfg;
}

// Bad option values are usage errors, caught before any file is read.
void check_flags(const FitFlags& f) {
  try {
    if (!f.model.empty()) ModelStructure::parse(f.model);
    parse_mechanism(f.mechanism);
    parse_dropout_mode(f.dropout);
    parse_init_method(f.init);
    FitConfig probe;
    probe.m = f.states;
    probe.n_starts = f.starts;
    probe.rel_tol = f.tol;
    probe.max_iter = f.max_iter;
    probe.validate();
  } catch (const DataError& e) {
    throw CLI::ValidationError(e.what());
  }
}

void add_fit_options(CLI::App* cmd, FitFlags& f, bool with_model) {
  cmd->add_option("--data", f.data, "long-format CSV")->required();
  if (with_model) cmd->add_option("--model", f.model, "eea|vva|vea|eva|vvi|vei|evi|eei")->required();
  cmd->add_option("--states", f.states, "number of hidden states")->required();
  cmd->add_option("--mechanism", f.mechanism, "missingness mechanism");
  cmd->add_option("--dropout", f.dropout, "auto|column|off");
  cmd->add_option("--starts", f.starts, "random restarts");
  cmd->add_option("--seed", f.seed, "RNG seed");
  cmd->add_option("--init", f.init, "kmeans|random|mixed");
  cmd->add_option("--tol", f.tol, "relative log-likelihood tolerance");
  cmd->add_option("--max-iter", f.max_iter, "EM iteration cap");
  cmd->add_option("--threads", f.threads, "worker threads (default CDGHMM_THREADS or 1)");
  cmd->add_option("--out", f.out, "output path")->required();
}

int run_simulate(const std::string& spec_path, const std::string& out, const std::string& truth) {
  const SimSpec spec = spec_from_json(read_json(spec_path));
  const SimOutput sim = generate(spec);
  save_panel(out, sim.data);
  if (!truth.empty()) {
    json t = params_to_json(sim.truth);
    t["states"] = sim.states;
    t["diagnostics"] = sim.diagnostics;
    write_json(truth, t);
  }
  for (const auto& d : sim.diagnostics) std::cerr << "warning: " << d << '\n';
  return kOk;
}

int run_fit(const FitFlags& f) {
  check_flags(f);
  const LoadedPanel panel = load_panel(f.data);
  const FitConfig cfg = make_config(f, panel);
  const FitResult res = fit(panel.data, cfg);
  json j = fit_to_json(res);
  j["decoded"] = res.decoded;
  write_json(f.out, j);
  std::cout << json{{"model", res.structure.name()},
                    {"loglik", res.loglik},
                    {"bic", res.bic},
                    {"icl", res.icl},
                    {"iterations", res.iterations},
                    {"converged", res.converged}}
                   .dump()
            << '\n';
  return kOk;
}

int run_decode(const std::string& data_path, const std::string& fit_path, const std::string& out) {
  const LoadedPanel panel = load_panel(data_path);
  const FitResult fr = fit_from_json(read_json(fit_path));
  DropoutMode mode = fr.dropout_mode;
  if (mode == DropoutMode::Auto && panel.has_dropout_column) mode = DropoutMode::Column;
  const PanelDataset data = prepare_dropout(panel.data, mode);
  if (data.p != fr.params.p) throw DataError("data has a different variable count than the fit");
  const Decoding dec = local_decode(data, fr.params);
  std::ofstream os(out);
  if (!os) throw DataError("cannot write " + out);
  os << "id,time,state";
  for (int k = 0; k < dec.K; ++k) os << ",prob" << k + 1;
  os << '\n';
  for (int i = 0; i < data.n; ++i)
    for (int t = 0; t < data.T; ++t) {
      const std::size_t c = static_cast<std::size_t>(i) * data.T + t;
      os << (data.ids.empty() ? std::to_string(i + 1) : data.ids[i]) << ',' << data.time_values[t]
         << ',' << dec.labels[c] + 1;
      for (int k = 0; k < dec.K; ++k) os << ',' << dec.probs[c * dec.K + k];
      os << '\n';
    }
  return kOk;
}

int run_select(const FitFlags& f, const std::string& criterion) {
  if (criterion != "bic" && criterion != "icl") throw CLI::ValidationError("--criterion must be bic or icl");
  check_flags(f);
  const LoadedPanel panel = load_panel(f.data);
  json models = json::array();
  for (const auto& st : ModelStructure::family()) {
    FitFlags g = f;
    g.model = st.name();
    const FitConfig cfg = make_config(g, panel);
    json entry = {{"model", st.name()}};
    try {
      const FitResult res = fit(panel.data, cfg);
      entry.update({{"loglik", res.loglik}, {"bic", res.bic}, {"icl", res.icl}, {"rho", res.rho},
                    {"converged", res.converged}});
    } catch (const NumericError& e) {
      entry["error"] = e.what();
    }
    models.push_back(entry);
  }
  // Higher is better under 2l - penalty; failed fits rank last.
  std::stable_sort(models.begin(), models.end(), [&](const json& a, const json& b) {
    const bool ha = a.contains(criterion), hb = b.contains(criterion);
    if (ha != hb) return ha;
    return ha && a[criterion].get<double>() > b[criterion].get<double>();
  });
  for (std::size_t r = 0; r < models.size(); ++r) models[r]["rank"] = r + 1;
  json report = {{"criterion", criterion},
                 {"states", f.states},
                 {"mechanism", f.mechanism},
                 {"models", models}};
  if (!models.empty() && models[0].contains(criterion)) report["best"] = models[0]["model"];
  write_json(f.out, report);
  return kOk;
}

int run_study_cmd(const std::string& name, int replicates, std::uint64_t seed, int starts,
                  const std::string& init, int threads, const std::string& out) {
  StudyOptions opt;
  try {
    opt.study = parse_study(name);
    opt.init = parse_init_method(init);
  } catch (const DataError& e) {
    throw CLI::ValidationError(e.what());
  }
  if (replicates < 1 || starts < 1) throw CLI::ValidationError("--replicates and --starts must be >= 1");
  opt.replicates = replicates;
  opt.seed = seed;
  opt.n_starts = starts;
  opt.threads = threads;
  const auto rows = run_study(opt);
  std::ofstream os(out);
  if (!os) throw DataError("cannot write " + out);
  write_study_csv(os, rows);
  for (const auto& r : rows)
    if (!r.error.empty())
      std::cerr << "warning: replicate " << r.replicate << ' ' << r.model << ' ' << r.mechanism
                << ": " << r.error << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hidden Markov models for panel data with modified-Cholesky covariances"};
  app.require_subcommand(1);

  std::string spec_path, out, truth;
  auto* sim = app.add_subcommand("simulate", "generate a dataset from a JSON spec");
  sim->add_option("--spec", spec_path)->required();
  sim->add_option("--out", out)->required();
  sim->add_option("--truth", truth);

  FitFlags fit_flags;
  auto* fitc = app.add_subcommand("fit", "fit one model");
  add_fit_options(fitc, fit_flags, true);

  std::string data_path, fit_path;
  auto* dec = app.add_subcommand("decode", "local decoding with a saved fit");
  dec->add_option("--data", data_path)->required();
  dec->add_option("--fit", fit_path)->required();
  dec->add_option("--out", out)->required();

  std::string study_name_flag;
  int replicates = 1, study_starts = StudyOptions{}.n_starts, study_threads = 0;
  std::string study_init{init_method_name(StudyOptions{}.init)};
  std::uint64_t study_seed = 1;
  auto* study = app.add_subcommand("study", "run a simulation study");
  study->add_option("--name", study_name_flag)->required();
  study->add_option("--replicates", replicates);
  study->add_option("--seed", study_seed);
  study->add_option("--starts", study_starts);
  study->add_option("--init", study_init, "kmeans|random|mixed");
  study->add_option("--threads", study_threads);
  study->add_option("--out", out)->required();

  FitFlags sel_flags;
  std::string criterion = "bic";
  auto* sel = app.add_subcommand("select", "fit all eight members and rank them");
  add_fit_options(sel, sel_flags, false);
  sel->add_option("--criterion", criterion, "bic|icl");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report(kUsage, "usage", e.what());
  }

  try {
    if (*sim) return run_simulate(spec_path, out, truth);
    if (*fitc) return run_fit(fit_flags);
    if (*dec) return run_decode(data_path, fit_path, out);
    if (*study) return run_study_cmd(study_name_flag, replicates, study_seed, study_starts,
                                     study_init, study_threads, out);
    if (*sel) return run_select(sel_flags, criterion);
  } catch (const CLI::ValidationError& e) {
    return report(kUsage, "usage", e.what());
  } catch (const DataError& e) {
    return report(kData, "data", e.what());
  } catch (const NumericError& e) {
    return report(kNumeric, "numeric", e.what());
  } catch (const std::exception& e) {
    return report(kData, "data", e.what());
  }
  return kUsage;
}
