#include "cdghmm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "cdghmm/dropout.hpp"
#include "cdghmm/errors.hpp"

namespace cdghmm {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool is_missing_token(const std::string& s) { return s.empty() || s == "NA"; }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Sort keys numerically when every id parses as a number.
bool numeric_less(const std::string& a, const std::string& b, bool numeric) {
  if (numeric) return *parse_double(a) < *parse_double(b);
  return a < b;
}

json matrix_json(const Eigen::MatrixXd& mat) {
  json data = json::array();
  for (int r = 0; r < mat.rows(); ++r)
    for (int c = 0; c < mat.cols(); ++c) data.push_back(mat(r, c));
  return {{"shape", {mat.rows(), mat.cols()}}, {"data", data}};
}

Eigen::MatrixXd matrix_from(const json& j) {
  if (j.is_object()) {
    const int rows = j.at("shape").at(0).get<int>();
    const int cols = j.at("shape").at(1).get<int>();
    const auto& data = j.at("data");
    if (static_cast<int>(data.size()) != rows * cols)
      throw DataError("matrix data does not match its shape");
    Eigen::MatrixXd out(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out(r, c) = data.at(r * cols + c).get<double>();
    return out;
  }
  // Nested rows, or a flat array taken as a single row.
  if (!j.is_array() || j.empty()) throw DataError("expected a non-empty matrix");
  if (!j[0].is_array()) {
    Eigen::MatrixXd out(1, j.size());
    for (std::size_t c = 0; c < j.size(); ++c) out(0, c) = j[c].get<double>();
    return out;
  }
  const auto rows = j.size(), cols = j[0].size();
  Eigen::MatrixXd out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (j[r].size() != cols) throw DataError("ragged matrix rows");
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = j[r][c].get<double>();
  }
  return out;
}

Eigen::VectorXd vector_from(const json& j) {
  Eigen::MatrixXd m = matrix_from(j);
  return Eigen::Map<Eigen::VectorXd>(m.data(), m.size());
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json nested(const Eigen::MatrixXd& mat) {
  json out = json::array();
  for (int r = 0; r < mat.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < mat.cols(); ++c) row.push_back(mat(r, c));
    out.push_back(row);
  }
  return out;
}

}  // namespace

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          cur += '"';
          ++k;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

LoadedPanel parse_panel(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty file");
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);
  int id_col = -1, time_col = -1, drop_col = -1;
  std::vector<int> var_cols;
  LoadedPanel out;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    if (header[c] == "id") id_col = c;
    else if (header[c] == "time") time_col = c;
    else if (header[c] == "dropout") drop_col = c;
    else {
      var_cols.push_back(c);
      out.variable_names.push_back(header[c]);
    }
  }
  if (id_col < 0 || time_col < 0) throw DataError(source + ": header needs id and time columns");
  if (var_cols.empty()) throw DataError(source + ": no variable columns");
  out.has_dropout_column = drop_col >= 0;

  struct Record {
    std::vector<std::string> fields;
    double time;
    long line;
  };
  std::map<std::string, std::vector<Record>> by_id;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw DataError(source + ": line " + std::to_string(lineno) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(header.size()));
    for (auto& f : fields) f = trim(f);
    const auto t = parse_double(fields[time_col]);
    if (!t || !std::isfinite(*t))
      throw DataError(source + ": line " + std::to_string(lineno) + ": bad time '" +
                      fields[time_col] + "'");
    by_id[fields[id_col]].push_back({std::move(fields), *t, lineno});
  }
  if (by_id.empty()) throw DataError(source + ": no data rows");

  std::vector<std::string> ids;
  bool numeric = true;
  for (const auto& [id, recs] : by_id) {
    ids.push_back(id);
    if (!parse_double(id)) numeric = false;
  }
  std::stable_sort(ids.begin(), ids.end(),
                   [&](const auto& a, const auto& b) { return numeric_less(a, b, numeric); });

  std::vector<double> grid;
  std::vector<std::string> ragged;
  for (const auto& id : ids) {
    auto& recs = by_id[id];
    std::stable_sort(recs.begin(), recs.end(),
                     [](const Record& a, const Record& b) { return a.time < b.time; });
    for (std::size_t k = 1; k < recs.size(); ++k)
      if (recs[k].time == recs[k - 1].time)
        throw DataError(source + ": duplicate (id, time) = (" + id + ", " +
                        format_double(recs[k].time) + ") on lines " +
                        std::to_string(recs[k - 1].line) + " and " + std::to_string(recs[k].line));
    std::vector<double> times;
    for (const auto& r : recs) times.push_back(r.time);
    if (grid.empty())
      grid = times;
    else if (times != grid)
      ragged.push_back(id);
  }
  if (!ragged.empty()) {
    std::string list;
    for (const auto& id : ragged) list += (list.empty() ? "" : ", ") + id;
    throw DataError(source + ": time grid differs from the first subject for ids: " + list);
  }

  const int n = static_cast<int>(ids.size());
  const int T = static_cast<int>(grid.size());
  const int p = static_cast<int>(var_cols.size());
  if (T < 2) throw DataError(source + ": need at least two time points");
  PanelDataset& d = out.data;
  d = PanelDataset::zeros(n, T, p);
  d.time_values = grid;
  d.ids = ids;
  for (int i = 0; i < n; ++i) {
    const auto& recs = by_id[ids[i]];
    for (int t = 0; t < T; ++t) {
      const Record& r = recs[t];
      for (int j = 0; j < p; ++j) {
        const std::string& f = r.fields[var_cols[j]];
        if (is_missing_token(f)) {
          d.set_missing(i, t, j);
          continue;
        }
        const auto v = parse_double(f);
        if (!v || !std::isfinite(*v))
          throw DataError(source + ": line " + std::to_string(r.line) + ", column '" +
                          header[var_cols[j]] + "': cannot parse '" + f + "'");
        d.set_value(i, t, j, *v);
      }
      if (drop_col >= 0) {
        const std::string& f = r.fields[drop_col];
        if (f == "1") {
          if (!d.dropout_time[i]) d.dropout_time[i] = t;
        } else if (f == "0" || f.empty()) {
          if (d.dropout_time[i])
            throw DataError(source + ": line " + std::to_string(r.line) +
                            ": subject returns after dropout");
        } else {
          throw DataError(source + ": line " + std::to_string(r.line) + ": dropout must be 0 or 1");
        }
      }
    }
  }
  if (drop_col < 0) d.dropout_time = detect_dropout(d);
  validate_dataset(d);
  return out;
}

LoadedPanel load_panel(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_panel(in, path.string());
}

void write_panel(std::ostream& out, const PanelDataset& d,
                 const std::vector<std::string>& names, bool dropout_column) {
  out << "id,time";
  for (int j = 0; j < d.p; ++j)
    out << ',' << csv_field(j < static_cast<int>(names.size()) ? names[j]
                                                                : "x" + std::to_string(j + 1));
  if (dropout_column) out << ",dropout";
  out << '\n';
  for (int i = 0; i < d.n; ++i)
    for (int t = 0; t < d.T; ++t) {
      out << csv_field(i < static_cast<int>(d.ids.size()) ? d.ids[i] : std::to_string(i + 1))
          << ',' << format_double(d.time_values[t]);
      for (int j = 0; j < d.p; ++j)
        out << ',' << (d.missing(i, t, j) ? "NA" : format_double(d.values[d.index(i, t, j)]));
      if (dropout_column) out << ',' << (d.dropped(i, t) ? 1 : 0);
      out << '\n';
    }
}

void save_panel(const std::filesystem::path& path, const PanelDataset& d,
                const std::vector<std::string>& names, bool dropout_column) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_panel(out, d, names, dropout_column);
}

json params_to_json(const HmmParams& hp) {
  json chol = json::array();
  for (const auto& c : hp.chol) chol.push_back({{"T", matrix_json(c.T)}, {"d", vector_json(c.d)}});
  json miss = {{"mechanism", mechanism_name(hp.miss.mechanism)},
               {"m", hp.miss.m},
               {"p", hp.miss.p},
               {"T", hp.miss.T},
               {"alpha", hp.miss.alpha},
               {"beta_t", hp.miss.beta_t}};
  return {{"m", hp.m},
          {"p", hp.p},
          {"dropout", hp.dropout},
          {"delta", vector_json(hp.delta)},
          {"gamma", matrix_json(hp.gamma)},
          {"mu", matrix_json(hp.mu)},
          {"chol", chol},
          {"miss", miss}};
}

HmmParams params_from_json(const json& j) {
  HmmParams hp;
  try {
    hp.m = j.at("m").get<int>();
    hp.p = j.at("p").get<int>();
    hp.dropout = j.at("dropout").get<bool>();
    hp.delta = vector_from(j.at("delta"));
    hp.gamma = matrix_from(j.at("gamma"));
    hp.mu = matrix_from(j.at("mu"));
    for (const auto& c : j.at("chol"))
      hp.chol.push_back({matrix_from(c.at("T")), vector_from(c.at("d"))});
    const auto& mj = j.at("miss");
    hp.miss.mechanism = parse_mechanism(mj.at("mechanism").get<std::string>());
    hp.miss.m = mj.at("m").get<int>();
    hp.miss.p = mj.at("p").get<int>();
    hp.miss.T = mj.at("T").get<int>();
    hp.miss.alpha = mj.at("alpha").get<std::vector<double>>();
    hp.miss.beta_t = mj.at("beta_t").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed parameter JSON: ") + e.what());
  }
  return hp;
}

json fit_to_json(const FitResult& r) {
  return {{"format_version", kFitFormatVersion},
          {"model", r.structure.name()},
          {"mechanism", mechanism_name(r.mechanism)},
          {"dropout_mode", dropout_mode_name(r.dropout_mode)},
          {"seed", r.seed},
          {"states", r.params.m},
          {"loglik", r.loglik},
          {"bic", r.bic},
          {"icl", r.icl},
          {"rho", r.rho},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"best_start", r.best_start},
          {"loglik_trace", r.loglik_trace},
          {"params", params_to_json(r.params)},
          {"diagnostics", r.diagnostics}};
}

FitResult fit_from_json(const json& j) {
  FitResult r;
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kFitFormatVersion)
      throw DataError("unsupported fit format version " + std::to_string(version));
    r.structure = ModelStructure::parse(j.at("model").get<std::string>());
    r.mechanism = parse_mechanism(j.at("mechanism").get<std::string>());
    r.dropout_mode = parse_dropout_mode(j.at("dropout_mode").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    r.params = params_from_json(j.at("params"));
    r.loglik = j.value("loglik", 0.0);
    r.bic = j.value("bic", 0.0);
    r.icl = j.value("icl", 0.0);
    r.rho = j.value("rho", 0L);
    r.iterations = j.value("iterations", 0);
    r.converged = j.value("converged", false);
    r.best_start = j.value("best_start", 0);
    r.loglik_trace = j.value("loglik_trace", std::vector<double>{});
    r.diagnostics = j.value("diagnostics", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed fit JSON: ") + e.what());
  }
  return r;
}

SimSpec spec_from_json(const json& j) {
  SimSpec s;
  try {
    s.m = j.at("m").get<int>();
    s.n = j.at("n").get<int>();
    s.T = j.at("T").get<int>();
    s.p = j.at("p").get<int>();
    s.delta = vector_from(j.at("delta"));
    s.gamma = matrix_from(j.at("gamma"));
    s.mu = matrix_from(j.at("mu"));
    const json& sig = j.at("sigma");
    // A list of matrices, or one matrix shared by every state.
    if (sig.is_array() && !sig.empty() && sig[0].is_array() && !sig[0].empty() &&
        sig[0][0].is_array()) {
      for (const auto& m : sig) s.sigma.push_back(matrix_from(m));
    } else if (sig.is_array() && !sig.empty() && sig[0].is_object()) {
      for (const auto& m : sig) s.sigma.push_back(matrix_from(m));
    } else {
      s.sigma.push_back(matrix_from(sig));
    }
    s.p_miss = j.value("p_miss", 0.0);
    if (j.contains("m_miss")) s.m_miss = vector_from(j.at("m_miss"));
    if (j.contains("v_miss")) s.v_miss = matrix_from(j.at("v_miss"));
    s.seed = j.value("seed", std::uint64_t{1});
    if (j.contains("fixed_paths"))
      s.fixed_paths = j.at("fixed_paths").get<std::vector<std::vector<int>>>();
    if (j.contains("trend")) s.trend = matrix_from(j.at("trend"));
    if (j.contains("noise_scales")) s.noise_scales = matrix_from(j.at("noise_scales"));
    s.noise_mix_prob = j.value("noise_mix_prob", 0.0);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed simulation spec: ") + e.what());
  }
  s.validate();
  return s;
}

json spec_to_json(const SimSpec& s) {
  json sig = json::array();
  for (const auto& m : s.sigma) sig.push_back(nested(m));
  json out = {{"m", s.m},
              {"n", s.n},
              {"T", s.T},
              {"p", s.p},
              {"delta", vector_json(s.delta)},
              {"gamma", nested(s.gamma)},
              {"mu", nested(s.mu)},
              {"sigma", sig},
              {"p_miss", s.p_miss},
              {"seed", s.seed}};
  if (s.m_miss.size()) out["m_miss"] = vector_json(s.m_miss);
  if (s.v_miss.size()) out["v_miss"] = nested(s.v_miss);
  if (!s.fixed_paths.empty()) out["fixed_paths"] = s.fixed_paths;
  if (s.trend.size()) out["trend"] = nested(s.trend);
  if (s.noise_scales.size()) {
    out["noise_scales"] = nested(s.noise_scales);
    out["noise_mix_prob"] = s.noise_mix_prob;
  }
  return out;
}

void write_study_csv(std::ostream& out, const std::vector<StudyRow>& rows) {
  auto num = [](double v) { return std::isfinite(v) ? format_double(v) : std::string("NA"); };
  out << "study,replicate,model,mechanism,gamma_id,n,misclass,rmse_gamma,rmse_delta,rmse_mu,"
         "rmse_sigma,bic,icl,iterations,converged\n";
  for (const auto& r : rows)
    out << r.study << ',' << r.replicate << ',' << r.model << ',' << r.mechanism << ','
        << csv_field(r.gamma_id) << ',' << r.n << ',' << num(r.misclass) << ','
        << num(r.rmse_gamma) << ',' << num(r.rmse_delta) << ',' << num(r.rmse_mu) << ','
        << num(r.rmse_sigma) << ',' << num(r.bic) << ',' << num(r.icl) << ',' << r.iterations
        << ',' << (r.converged ? "true" : "false") << '\n';
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace cdghmm
