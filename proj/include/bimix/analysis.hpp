#pragma once

#include "bimix/em.hpp"
#include "bimix/model.hpp"
#include "bimix/simulator.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace bimix {

struct InformationCriteria {
    double aic = 0.0;
    double bic = 0.0;
};

// n is the number of units.
InformationCriteria information_criteria(double loglik, int d, std::size_t n);

// MAP cell per unit; ties go to the lexicographically smallest (k1, k2).
std::vector<Cell> map_classify(const PosteriorWeights& posteriors);

// Fraction of unit pairs on which two partitions agree. Requires n >= 2.
double rand_index(const std::vector<int>& a, const std::vector<int>& b);
// Joint partitions: each (k1, k2) cell is one label.
double rand_index(const std::vector<Cell>& a, const std::vector<Cell>& b);

/// Per profile, perm[j][k] is the estimated component matched to true
/// component k (minimum total squared distance between support rows, found
/// exhaustively). permute_components(est, j, perm[j]) aligns the estimate.
std::vector<std::vector<int>> align_components(const ParameterSet& estimated, const ParameterSet& truth);
ParameterSet apply_alignment(const ParameterSet& estimated, const std::vector<std::vector<int>>& perms);

struct SelectionRow {
    int K1 = 1;
    int K2 = 1;
    double loglik = 0.0;
    int d = 0;
    double aic = 0.0;
    double bic = 0.0;
    bool converged = false;
    std::string error;
};

struct SelectionTable {
    std::size_t n_units = 0;
    std::vector<SelectionRow> rows;
    int best_aic = -1;  // index into rows
    int best_bic = -1;
};

// For univariate specs k2_range is ignored.
SelectionTable grid_select(const ModelSpec& spec_template, const PanelDataset& data, std::pair<int, int> k1_range,
                           std::pair<int, int> k2_range, const EmControl& control, int jobs = 1);

// Flat, named view of a ParameterSet in reporting order.
struct NamedParameter {
    std::string name;
    double value = 0.0;
};
std::vector<NamedParameter> flatten_parameters(const ModelSpec& spec, const ParameterSet& params);

struct ParameterSummary {
    std::string name;
    double truth = 0.0;
    double mean = 0.0;
    double bias = 0.0;
    double sd = 0.0;
};

struct BenchmarkReport {
    std::string scenario;
    int n = 0;
    int T = 0;
    int replications = 0;
    int failures = 0;
    int nonconverged = 0;
    bool valid = true;
    double mean_rand_index = 0.0;
    std::vector<ParameterSummary> parameters;

    const ParameterSummary& at(std::string_view name) const;
};

BenchmarkReport benchmark_scenario(const ScenarioTruth& st, int n, int T, int replications, const EmControl& control,
                                   int jobs = 1);

struct SolowShares {
    double alpha = 0.0;
    double beta = 0.0;
};

// Inverts lambda_sk = alpha / (1 - alpha - beta), lambda_sh = beta / (1 - alpha - beta).
SolowShares recover_solow_shares(double lambda_sk, double lambda_sh);

}  // namespace bimix
