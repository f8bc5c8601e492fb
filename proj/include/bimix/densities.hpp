#pragma once

#include "bimix/model.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace bimix {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Lower/upper bound on the Student-t degrees of freedom during estimation.
inline constexpr double kMinDegreesOfFreedom = 0.5;
inline constexpr double kMaxDegreesOfFreedom = 200.0;
// Components whose total weight falls below this are reported as degenerate.
inline constexpr double kDegenerateWeight = 1e-10;

double log_density_gaussian(double y, double mu, double sigma);
double log_density_t(double y, double mu, double sigma, double nu);

// Partial derivatives of a log-density w.r.t. (mu, ln sigma, ln nu).
struct LogDensityGradient {
    double d_mu = 0.0;
    double d_log_sigma = 0.0;
    double d_log_nu = 0.0;
};

LogDensityGradient gradient_gaussian(double y, double mu, double sigma);
LogDensityGradient gradient_t(double y, double mu, double sigma, double nu);

/// Log-density of one profile family with the normalising constant cached.
/// `nu` is ignored for the gaussian family.
class FamilyKernel {
public:
    FamilyKernel(Family family, double nu);

    double log_density(double y, double mu, double log_sigma) const noexcept;
    // Score and expected (Fisher) information for (mu, ln sigma).
    void score(double y, double mu, double sigma, double& d_mu, double& d_log_sigma) const noexcept;
    double info_mu(double sigma) const noexcept { return info_mu_scale_ / (sigma * sigma); }
    double info_log_sigma() const noexcept { return info_log_sigma_; }

private:
    Family family_;
    double nu_;
    double log_const_;
    double info_mu_scale_;
    double info_log_sigma_;
};

/// Dense design of one profile over every observation of a panel. Rows are
/// grouped by unit; rows [unit_start[i], unit_start[i+1]) belong to unit i.
struct ProfileDesign {
    Eigen::VectorXd y;
    RowMatrix fixed;   // N x |mean_fixed|
    RowMatrix random;  // N x |mean_random|
    RowMatrix scale;   // N x (1 + |scale_covariates|), first column all ones
    std::vector<int> unit;
    std::vector<int> unit_start;

    Eigen::Index n_rows() const noexcept { return y.size(); }
    int n_units() const noexcept { return static_cast<int>(unit_start.size()) - 1; }
};

// Build the design of profile j. Assumes validate(spec, data) is empty.
ProfileDesign build_profile_design(const ModelSpec& spec, int j, const PanelDataset& data);

/// One observation's contribution to a component's weighted log-likelihood.
struct WeightedObservation {
    double y = 0.0;
    std::vector<double> mean_fixed_row;
    std::vector<double> mean_random_row;
    // Excludes the implicit leading 1.
    std::vector<double> scale_row;
    double weight = 0.0;
    int component_index = 0;
};

struct MStepOptions {
    int max_inner_iterations = 50;
    // Inner loop stops when the gain per unit of total weight is below this.
    double tolerance = 1e-10;
    int max_halvings = 30;
    bool update_shape = true;
};

struct MStepResult {
    ProfileParameters params;
    double loglik_before = 0.0;
    double loglik_after = 0.0;
    int iterations = 0;
};

// sum_rows sum_k W(unit(row), k) * log f(y_row | component k).
double weighted_profile_loglik(const ProfileSpec& spec, const ProfileDesign& design,
                               const Eigen::MatrixXd& unit_weights, const ProfileParameters& params);

/// Ascent step on the weighted profile log-likelihood. `unit_weights` is
/// n_units x K; each unit's weight is attached to all of its rows.
/// Throws DegenerateComponent (profile index -1) when a component's total
/// weight is below kDegenerateWeight.
MStepResult weighted_profile_mstep(const ProfileSpec& spec, const ProfileDesign& design,
                                   const Eigen::MatrixXd& unit_weights, const ProfileParameters& current,
                                   const MStepOptions& options = {});

MStepResult weighted_profile_mstep(const ProfileSpec& spec, std::span<const WeightedObservation> obs,
                                   const ProfileParameters& current, const MStepOptions& options = {});

}  // namespace bimix
