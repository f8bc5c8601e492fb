#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bimix {

// Name reserved for the constant-1 column of a random-effects design.
inline constexpr std::string_view kIntercept = "intercept";

enum class Link { identity, log };

struct LinkFunction {
    Link kind = Link::identity;

    // g(theta)
    double apply(double theta) const;
    // g^{-1}(eta)
    double inverse(double eta) const;
    // g'(theta)
    double derivative(double theta) const;

    friend bool operator==(const LinkFunction&, const LinkFunction&) = default;
};

std::string_view to_string(Link link);
Link parse_link(std::string_view name);

enum class Family { gaussian, student_t };

std::string_view to_string(Family family);
Family parse_family(std::string_view name);

/// One outcome's location-scale(-shape) regression with a discrete random
/// effect on the `mean_random` design.
///
///   g1(mu)    = x_fixed' lambda + x_random' u_k
///   g2(sigma) = (1, z)' gamma
///   g3(nu)    = gamma_shape                      (student_t only)
struct ProfileSpec {
    Family family = Family::gaussian;
    std::vector<std::string> mean_fixed;
    std::vector<std::string> mean_random{std::string(kIntercept)};
    // The constant-1 column is implicit and always first.
    std::vector<std::string> scale_covariates;
    LinkFunction mean_link{Link::identity};
    LinkFunction scale_link{Link::log};
    LinkFunction shape_link{Link::log};
    int K = 1;

    bool has_shape() const noexcept { return family == Family::student_t; }
    // Number of modelled distribution parameters (2 gaussian, 3 student_t).
    int n_modelled_parameters() const noexcept { return has_shape() ? 3 : 2; }
    std::size_t n_fixed() const noexcept { return mean_fixed.size(); }
    std::size_t n_random() const noexcept { return mean_random.size(); }
    std::size_t n_scale() const noexcept { return scale_covariates.size() + 1; }
    // Column of mean_random holding the intercept, if any.
    std::optional<std::size_t> intercept_column() const;
};

struct ModelSpec {
    std::vector<ProfileSpec> profiles;

    int J() const noexcept { return static_cast<int>(profiles.size()); }
    // Support size of profile j; profiles beyond J count as a single point.
    int K(int j) const noexcept { return j < J() ? profiles[j].K : 1; }
    int n_cells() const noexcept { return K(0) * K(1); }
};

struct Observation {
    int time = 0;
    std::vector<double> y;
    // Aligned with PanelDataset::covariate_names; NaN marks a missing value.
    std::vector<double> covariates;
};

struct Unit {
    std::string id;
    std::vector<Observation> observations;
};

// Possibly unbalanced panel: n units, T_i observations each, J responses.
struct PanelDataset {
    int n_responses = 1;
    std::vector<std::string> covariate_names;
    std::vector<Unit> units;

    std::size_t n_units() const noexcept { return units.size(); }
    std::size_t n_observations() const noexcept;
    std::optional<std::size_t> covariate_index(std::string_view name) const;
};

struct ProfileParameters {
    Eigen::VectorXd lambda;   // |mean_fixed|
    Eigen::MatrixXd support;  // K x |mean_random|, row k is u_k
    Eigen::VectorXd gamma;    // 1 + |scale_covariates|
    std::optional<double> shape;  // on the log-link scale; student_t only
};

struct ParameterSet {
    std::vector<ProfileParameters> profiles;
    // K1 x K2 joint probabilities; K1 x 1 when J = 1.
    Eigen::MatrixXd pi;

    Eigen::VectorXd marginal(int j) const;
};

// Zero-initialised parameters with the right shapes and a uniform pi.
ParameterSet make_parameter_set(const ModelSpec& spec);

// (k1, k2) component pair, zero-based. k2 is 0 for univariate models.
struct Cell {
    int k1 = 0;
    int k2 = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
};

/// Posterior membership probabilities. `joint` is n x (K1*K2) with the cell
/// (k1, k2) stored in column k1*K2 + k2; marginals are its row/column sums.
struct PosteriorWeights {
    int K1 = 1;
    int K2 = 1;
    Eigen::MatrixXd joint;
    Eigen::MatrixXd marginal1;
    Eigen::MatrixXd marginal2;

    std::size_t n_units() const noexcept { return static_cast<std::size_t>(joint.rows()); }
    double operator()(Eigen::Index i, int k1, int k2) const { return joint(i, k1 * K2 + k2); }
    const Eigen::MatrixXd& marginal(int j) const { return j == 0 ? marginal1 : marginal2; }

    static PosteriorWeights from_joint(Eigen::MatrixXd joint, int K1, int K2);
};

struct StandardErrors {
    ParameterSet values;
    // Information matrix was not positive definite; affected entries are NaN.
    bool not_positive_definite = false;
};

struct FitResult {
    ParameterSet params;
    double loglik = 0.0;
    std::vector<double> loglik_trace;
    bool converged = false;
    std::string failure_reason;
    int n_iterations = 0;
    int d = 0;
    double aic = 0.0;
    double bic = 0.0;
    std::optional<StandardErrors> standard_errors;
    PosteriorWeights posteriors;
    std::vector<Cell> assignments;
    std::vector<std::string> unit_ids;
    // Burn-in log-likelihoods of every start (multi-start fits only); NaN for failed starts.
    std::vector<double> start_logliks;
};

// Empty iff spec and data are mutually consistent.
std::vector<std::string> validate(const ModelSpec& spec, const PanelDataset& data);
// Spec-only checks (K >= 1, disjoint designs, links, ...).
std::vector<std::string> validate(const ModelSpec& spec);

// Number of free parameters d used by AIC/BIC.
int count_parameters(const ModelSpec& spec);

// Reorder the components of profile j so that row perm[k] of the old support
// becomes row k; pi is permuted consistently.
ParameterSet permute_components(const ParameterSet& params, int j, const std::vector<int>& perm);

// Sort support rows ascending by intercept (ties by remaining columns).
ParameterSet canonicalize(const ModelSpec& spec, const ParameterSet& params);

}  // namespace bimix
