#pragma once

#include "bimix/analysis.hpp"
#include "bimix/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace bimix {

// Shortest decimal form that round-trips a double (%.17g); NaN as "nan".
std::string format_double(double value);

/// Long-format panel CSV: header `unit,time,y1[,y2],<covariates...>`.
/// Rows of a unit may appear anywhere; they are grouped by unit in order of
/// first appearance and sorted by time. Empty or "NA" cells read as NaN.
PanelDataset read_panel_csv(std::istream& in);
PanelDataset read_panel_csv(const std::filesystem::path& path);
void write_panel_csv(std::ostream& out, const PanelDataset& data);

// `unit,true_k1,true_k2` with 1-based components.
void write_truth_csv(std::ostream& out, const PanelDataset& data, const std::vector<Cell>& cells);
std::vector<Cell> read_truth_csv(std::istream& in);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);
ModelSpec read_model_spec(const std::filesystem::path& path);

nlohmann::json to_json(const ParameterSet& params);
ParameterSet parameter_set_from_json(const nlohmann::json& j);

// Spec, parameters, trace, criteria, SEs, posteriors and 1-based assignments.
nlohmann::json to_json(const ModelSpec& spec, const FitResult& fit);

struct StoredFit {
    ModelSpec spec;
    FitResult fit;
};
StoredFit fit_from_json(const nlohmann::json& j);

// `unit,k1,k2,w_11,...,w_K1K2`: MAP cell (1-based) then the joint posteriors.
void write_posteriors_csv(std::ostream& out, const FitResult& fit);
// `unit,k1,k2` (1-based).
void write_assignments_csv(std::ostream& out, const std::vector<std::string>& unit_ids,
                           const std::vector<Cell>& cells);

void write_selection_csv(std::ostream& out, const SelectionTable& table);
void write_selection_text(std::ostream& out, const SelectionTable& table);
void write_benchmark_csv(std::ostream& out, const BenchmarkReport& report);
void write_benchmark_text(std::ostream& out, const BenchmarkReport& report);
nlohmann::json to_json(const BenchmarkReport& report);

// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace bimix
