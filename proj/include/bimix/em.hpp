#pragma once

#include "bimix/densities.hpp"
#include "bimix/model.hpp"
#include "bimix/rng.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace bimix {

struct EmControl {
    int max_iterations = 500;
    // Stop when |delta loglik| / (1 + |loglik|) falls below this.
    double rel_tol = 1e-8;
    int n_starts = 20;
    int burn_in_iterations = 10;
    std::uint64_t seed = 1;
};

// Per-profile designs of a dataset, built once per fit.
struct ModelDesign {
    std::vector<ProfileDesign> profiles;
    std::vector<std::string> unit_ids;

    std::size_t n_units() const noexcept { return unit_ids.size(); }
};

// Throws ValidationError when validate(spec, data) is non-empty.
ModelDesign build_design(const ModelSpec& spec, const PanelDataset& data);

/// n x (K1*K2) matrix of sum_t log f(y_it1 | u_k1) + sum_t log f(y_it2 | u_k2),
/// laid out like PosteriorWeights::joint.
Eigen::MatrixXd component_logliks(const ModelSpec& spec, const ModelDesign& design, const ParameterSet& params);
Eigen::MatrixXd component_logliks(const ModelSpec& spec, const PanelDataset& data, const ParameterSet& params);

double observed_loglik(const Eigen::MatrixXd& component_logliks, const Eigen::MatrixXd& pi);

PosteriorWeights e_step(const Eigen::MatrixXd& component_logliks, const Eigen::MatrixXd& pi);

Eigen::MatrixXd m_step_pi(const PosteriorWeights& posteriors);

// Updates (lambda, U, gamma, shape) of every profile from the marginal posteriors.
ParameterSet m_step_regression(const ModelSpec& spec, const ModelDesign& design, const PosteriorWeights& posteriors,
                               const ParameterSet& current, const MStepOptions& options = {});
ParameterSet m_step_regression(const ModelSpec& spec, const PanelDataset& data, const PosteriorWeights& posteriors,
                               const ParameterSet& current, const MStepOptions& options = {});

/// Single-component fit of every profile with unit weights (the pooled model).
ParameterSet pooled_fit(const ModelSpec& spec, const ModelDesign& design);

/// Random starting point: pooled fit with the support intercepts spread
/// uniformly over the inter-decile range of unit-mean residuals, uniform pi.
/// multi_start_fit draws start s from derive_stream(control.seed, s).
ParameterSet random_init(const ModelSpec& spec, const ModelDesign& design, const ParameterSet& pooled,
                         std::mt19937_64& rng);

FitResult em_fit(const ModelSpec& spec, const PanelDataset& data, const ParameterSet& init,
                 const EmControl& control = {});
FitResult em_fit(const ModelSpec& spec, const ModelDesign& design, const ParameterSet& init,
                 const EmControl& control = {});

// Throws FitError when every start fails.
FitResult multi_start_fit(const ModelSpec& spec, const PanelDataset& data, const EmControl& control = {});
FitResult multi_start_fit(const ModelSpec& spec, const ModelDesign& design, const EmControl& control = {});

/// Square roots of the diagonal of the inverse observed information, from a
/// central-difference Hessian of the observed log-likelihood. pi enters
/// through a multinomial logit; its SEs follow by the delta method.
StandardErrors standard_errors(const ModelSpec& spec, const PanelDataset& data, const ParameterSet& params);
StandardErrors standard_errors(const ModelSpec& spec, const ModelDesign& design, const ParameterSet& params);

}  // namespace bimix
