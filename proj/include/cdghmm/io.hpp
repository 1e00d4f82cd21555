#pragma once

#include "json.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cdghmm/em.hpp"
#include "cdghmm/simulate.hpp"
#include "cdghmm/types.hpp"

namespace cdghmm {

/// Long-format CSV: id, time, p variable columns, optional `dropout` (0/1).
/// Missing cells are empty or NA.
struct LoadedPanel {
  PanelDataset data;
  std::vector<std::string> variable_names;
  bool has_dropout_column = false;
};

/// Rows are sorted by (id, time); the time grid must be identical for every
/// id. Dropout comes from the column when present, else from detection.
LoadedPanel load_panel(const std::filesystem::path& path);
LoadedPanel parse_panel(std::istream& in, const std::string& source = "<stream>");

/// Writes values with round-trip precision; missing cells as NA.
void write_panel(std::ostream& out, const PanelDataset& data,
                 const std::vector<std::string>& variable_names = {},
                 bool dropout_column = true);
void save_panel(const std::filesystem::path& path, const PanelDataset& data,
                const std::vector<std::string>& variable_names = {},
                bool dropout_column = true);

/// Splits one CSV record (RFC 4180 quoting). Embedded newlines are not supported.
std::vector<std::string> split_csv_line(const std::string& line);

nlohmann::json params_to_json(const HmmParams& params);
HmmParams params_from_json(const nlohmann::json& j);

inline constexpr int kFitFormatVersion = 1;
nlohmann::json fit_to_json(const FitResult& result);
/// Restores params, structure, mechanism, dropout mode and seed.
FitResult fit_from_json(const nlohmann::json& j);

SimSpec spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const SimSpec& spec);

void write_study_csv(std::ostream& out, const std::vector<StudyRow>& rows);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace cdghmm
