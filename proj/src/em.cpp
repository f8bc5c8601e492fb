#include "bimix/em.hpp"

#include "bimix/analysis.hpp"
#include "bimix/errors.hpp"

#include <boost/random/uniform_real_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace bimix {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_pi(const Eigen::MatrixXd& component_logliks, const Eigen::MatrixXd& pi) {
    if (pi.size() != component_logliks.cols())
        throw DomainError("pi has " + std::to_string(pi.size()) + " cells but component log-likelihoods have " +
                          std::to_string(component_logliks.cols()));
    if ((pi.array() < 0.0).any() || !pi.allFinite()) throw DomainError("pi entries must be finite and non-negative");
}

// log pi in PosteriorWeights::joint column order; -inf for empty cells.
Eigen::RowVectorXd log_pi_row(const Eigen::MatrixXd& pi) {
    const Eigen::Index K2 = pi.cols();
    Eigen::RowVectorXd out(pi.size());
    for (Eigen::Index k1 = 0; k1 < pi.rows(); ++k1)
        for (Eigen::Index k2 = 0; k2 < K2; ++k2) {
            const double p = pi(k1, k2);
            out(k1 * K2 + k2) = p > 0.0 ? std::log(p) : kNegInf;
        }
    return out;
}

double unit_logsumexp(const Eigen::MatrixXd& C, const Eigen::RowVectorXd& log_pi, Eigen::Index i, double* terms) {
    double m = kNegInf;
    for (Eigen::Index c = 0; c < C.cols(); ++c) {
        terms[c] = log_pi(c) == kNegInf ? kNegInf : log_pi(c) + C(i, c);
        m = std::max(m, terms[c]);
    }
    if (!std::isfinite(m))
        throw NumericalFailure("unit " + std::to_string(i + 1) + " has zero likelihood in every cell");
    double s = 0.0;
    for (Eigen::Index c = 0; c < C.cols(); ++c)
        if (terms[c] != kNegInf) s += std::exp(terms[c] - m);
    return m + std::log(s);
}

struct EmState {
    ParameterSet params;
    Eigen::MatrixXd component_logliks;
    double loglik = 0.0;
    std::vector<double> trace;
    int iterations = 0;
    bool converged = false;
};

EmState start_state(const ModelSpec& spec, const ModelDesign& design, const ParameterSet& init) {
    EmState s;
    s.params = init;
    s.component_logliks = component_logliks(spec, design, init);
    s.loglik = observed_loglik(s.component_logliks, init.pi);
    s.trace.push_back(s.loglik);
    return s;
}

// Generalized EM: exact pi update, one ascent pass per profile regression.
void run_em(EmState& s, const ModelSpec& spec, const ModelDesign& design, int max_iterations, double rel_tol) {
    while (!s.converged && s.iterations < max_iterations) {
        const PosteriorWeights w = e_step(s.component_logliks, s.params.pi);
        ParameterSet next = m_step_regression(spec, design, w, s.params);
        next.pi = m_step_pi(w);
        s.params = std::move(next);
        s.component_logliks = component_logliks(spec, design, s.params);
        const double previous = s.loglik;
        s.loglik = observed_loglik(s.component_logliks, s.params.pi);
        s.trace.push_back(s.loglik);
        ++s.iterations;
        if (std::abs(s.loglik - previous) / (1.0 + std::abs(s.loglik)) < rel_tol) s.converged = true;
    }
}

FitResult finalize(const ModelSpec& spec, const ModelDesign& design, EmState&& s) {
    FitResult r;
    r.params = canonicalize(spec, s.params);
    const Eigen::MatrixXd C = component_logliks(spec, design, r.params);
    r.loglik = observed_loglik(C, r.params.pi);
    r.loglik_trace = std::move(s.trace);
    r.converged = s.converged;
    r.n_iterations = s.iterations;
    r.d = count_parameters(spec);
    const auto ic = information_criteria(r.loglik, r.d, design.n_units());
    r.aic = ic.aic;
    r.bic = ic.bic;
    r.posteriors = e_step(C, r.params.pi);
    r.assignments = map_classify(r.posteriors);
    r.unit_ids = design.unit_ids;
    return r;
}

FitResult failed_fit(const ModelSpec& spec, const ModelDesign& design, const ParameterSet& params,
                     const std::vector<std::string>& reasons) {
    FitResult r;
    r.params = params;
    r.loglik = std::numeric_limits<double>::quiet_NaN();
    r.aic = r.bic = r.loglik;
    r.d = count_parameters(spec);
    r.converged = false;
    for (const auto& reason : reasons) r.failure_reason += (r.failure_reason.empty() ? "" : "; ") + reason;
    r.unit_ids = design.unit_ids;
    return r;
}

double quantile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

ModelDesign build_design(const ModelSpec& spec, const PanelDataset& data) {
    if (auto violations = validate(spec, data); !violations.empty()) throw ValidationError(std::move(violations));
    ModelDesign d;
    for (int j = 0; j < spec.J(); ++j) d.profiles.push_back(build_profile_design(spec, j, data));
    for (const auto& u : data.units) d.unit_ids.push_back(u.id);
    return d;
}

Eigen::MatrixXd component_logliks(const ModelSpec& spec, const ModelDesign& design, const ParameterSet& params) {
    const auto n = static_cast<Eigen::Index>(design.n_units());
    const int K1 = spec.K(0);
    const int K2 = spec.K(1);
    std::vector<Eigen::MatrixXd> per_profile;
    for (int j = 0; j < spec.J(); ++j) {
        const auto& prof = spec.profiles[j];
        const auto& d = design.profiles[j];
        const auto& p = params.profiles.at(j);
        if (p.support.rows() != prof.K) throw DomainError("support rows do not match K");
        const FamilyKernel kernel(prof.family, prof.has_shape() ? std::exp(p.shape.value()) : 0.0);
        const Eigen::VectorXd fixed = d.fixed * p.lambda;
        const Eigen::VectorXd log_sigma = d.scale * p.gamma;
        const RowMatrix means = d.random * p.support.transpose();  // N x K
        Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, prof.K);
        for (Eigen::Index r = 0; r < d.n_rows(); ++r) {
            const int i = d.unit[static_cast<std::size_t>(r)];
            for (int k = 0; k < prof.K; ++k)
                L(i, k) += kernel.log_density(d.y(r), fixed(r) + means(r, k), log_sigma(r));
        }
        per_profile.push_back(std::move(L));
    }
    Eigen::MatrixXd C(n, K1 * K2);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int k1 = 0; k1 < K1; ++k1)
            for (int k2 = 0; k2 < K2; ++k2) {
                double v = per_profile[0](i, k1);
                if (spec.J() > 1) v += per_profile[1](i, k2);
                if (!std::isfinite(v))
                    throw NumericalFailure("non-finite component log-likelihood at unit " + std::to_string(i + 1) +
                                           ", cell (" + std::to_string(k1 + 1) + "," + std::to_string(k2 + 1) + ")");
                C(i, k1 * K2 + k2) = v;
            }
    return C;
}

Eigen::MatrixXd component_logliks(const ModelSpec& spec, const PanelDataset& data, const ParameterSet& params) {
    return component_logliks(spec, build_design(spec, data), params);
}

double observed_loglik(const Eigen::MatrixXd& component_logliks, const Eigen::MatrixXd& pi) {
    check_pi(component_logliks, pi);
    const Eigen::RowVectorXd log_pi = log_pi_row(pi);
    std::vector<double> terms(static_cast<std::size_t>(component_logliks.cols()));
    double total = 0.0;
    for (Eigen::Index i = 0; i < component_logliks.rows(); ++i)
        total += unit_logsumexp(component_logliks, log_pi, i, terms.data());
    return total;
}

PosteriorWeights e_step(const Eigen::MatrixXd& component_logliks, const Eigen::MatrixXd& pi) {
    check_pi(component_logliks, pi);
    const Eigen::RowVectorXd log_pi = log_pi_row(pi);
    const Eigen::Index cells = component_logliks.cols();
    std::vector<double> terms(static_cast<std::size_t>(cells));
    Eigen::MatrixXd joint(component_logliks.rows(), cells);
    for (Eigen::Index i = 0; i < component_logliks.rows(); ++i) {
        const double lse = unit_logsumexp(component_logliks, log_pi, i, terms.data());
        for (Eigen::Index c = 0; c < cells; ++c)
            joint(i, c) = terms[static_cast<std::size_t>(c)] == kNegInf ? 0.0 : std::exp(terms[static_cast<std::size_t>(c)] - lse);
    }
    return PosteriorWeights::from_joint(std::move(joint), static_cast<int>(pi.rows()), static_cast<int>(pi.cols()));
}

Eigen::MatrixXd m_step_pi(const PosteriorWeights& posteriors) {
    const double n = static_cast<double>(posteriors.n_units());
    Eigen::MatrixXd pi(posteriors.K1, posteriors.K2);
    for (int k1 = 0; k1 < posteriors.K1; ++k1)
        for (int k2 = 0; k2 < posteriors.K2; ++k2)
            pi(k1, k2) = posteriors.joint.col(k1 * posteriors.K2 + k2).sum() / n;
    return pi;
}

ParameterSet m_step_regression(const ModelSpec& spec, const ModelDesign& design, const PosteriorWeights& posteriors,
                               const ParameterSet& current, const MStepOptions& options) {
    ParameterSet out = current;
    for (int j = 0; j < spec.J(); ++j) {
        try {
            out.profiles[j] = weighted_profile_mstep(spec.profiles[j], design.profiles[j], posteriors.marginal(j),
                                                     current.profiles[j], options)
                                  .params;
        } catch (const DegenerateComponent& e) {
            throw DegenerateComponent(j, e.component(), e.total_weight());
        }
    }
    return out;
}

ParameterSet m_step_regression(const ModelSpec& spec, const PanelDataset& data, const PosteriorWeights& posteriors,
                               const ParameterSet& current, const MStepOptions& options) {
    return m_step_regression(spec, build_design(spec, data), posteriors, current, options);
}

ParameterSet pooled_fit(const ModelSpec& spec, const ModelDesign& design) {
    ParameterSet out;
    out.pi = Eigen::MatrixXd::Ones(1, 1);
    for (int j = 0; j < spec.J(); ++j) {
        ProfileSpec single = spec.profiles[j];
        single.K = 1;
        const auto& d = design.profiles[j];
        const double mean = d.y.mean();
        const double sd = std::sqrt((d.y.array() - mean).square().mean());

        ProfileParameters p;
        p.lambda = Eigen::VectorXd::Zero(d.fixed.cols());
        p.support = Eigen::MatrixXd::Zero(1, d.random.cols());
        p.support(0, static_cast<Eigen::Index>(single.intercept_column().value_or(0))) = mean;
        p.gamma = Eigen::VectorXd::Zero(d.scale.cols());
        p.gamma(0) = std::log(sd > 0.0 ? sd : 1.0);
        if (single.has_shape()) p.shape = std::log(10.0);

        const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(d.n_units(), 1);
        for (int round = 0; round < 20; ++round) {
            const auto step = weighted_profile_mstep(single, d, ones, p);
            p = step.params;
            if (step.loglik_after - step.loglik_before < 1e-10) break;
        }
        out.profiles.push_back(std::move(p));
    }
    return out;
}

ParameterSet random_init(const ModelSpec& spec, const ModelDesign& design, const ParameterSet& pooled,
                         std::mt19937_64& rng) {
    boost::random::uniform_real_distribution<double> jitter(-1.0, 1.0);
    ParameterSet init = make_parameter_set(spec);
    for (int j = 0; j < spec.J(); ++j) {
        const auto& prof = spec.profiles[j];
        const auto& d = design.profiles[j];
        const auto& base = pooled.profiles.at(j);
        auto& p = init.profiles[j];
        p.lambda = base.lambda;
        p.gamma = base.gamma;
        p.shape = base.shape;
        p.support = base.support.row(0).replicate(prof.K, 1);
        if (prof.K == 1) continue;

        const Eigen::VectorXd fitted = d.fixed * base.lambda + d.random * base.support.row(0).transpose();
        std::vector<double> unit_means;
        for (int i = 0; i < d.n_units(); ++i) {
            const int a = d.unit_start[i];
            const int b = d.unit_start[i + 1];
            unit_means.push_back((d.y.segment(a, b - a) - fitted.segment(a, b - a)).mean());
        }
        const double lo = quantile(unit_means, 0.1);
        const double hi = quantile(unit_means, 0.9);
        double centre = 0.5 * (lo + hi);
        double half = 0.5 * (hi - lo);
        if (!(half > 0.0)) half = std::exp(base.gamma(0));
        const auto col = static_cast<Eigen::Index>(prof.intercept_column().value_or(0));
        for (int k = 0; k < prof.K; ++k) p.support(k, col) += centre + half * jitter(rng);
    }
    return init;
}

FitResult em_fit(const ModelSpec& spec, const ModelDesign& design, const ParameterSet& init, const EmControl& control) {
    constexpr int kRetries = 3;
    std::vector<std::string> reasons;
    ParameterSet start = init;
    std::optional<ParameterSet> pooled;
    for (int attempt = 0; attempt <= kRetries; ++attempt) {
        try {
            if (attempt > 0) {
                if (!pooled) pooled = pooled_fit(spec, design);
                auto rng = derive_stream(control.seed, 0x7e7e0000ULL + static_cast<std::uint64_t>(attempt));
                start = random_init(spec, design, *pooled, rng);
            }
            EmState s = start_state(spec, design, start);
            run_em(s, spec, design, control.max_iterations, control.rel_tol);
            return finalize(spec, design, std::move(s));
        } catch (const DegenerateComponent& e) {
            reasons.push_back(e.what());
        } catch (const NumericalFailure& e) {
            reasons.push_back(std::string("numerical failure: ") + e.what());
        }
    }
    return failed_fit(spec, design, init, reasons);
}

FitResult em_fit(const ModelSpec& spec, const PanelDataset& data, const ParameterSet& init, const EmControl& control) {
    return em_fit(spec, build_design(spec, data), init, control);
}

FitResult multi_start_fit(const ModelSpec& spec, const ModelDesign& design, const EmControl& control) {
    if (control.n_starts < 1) throw DomainError("n_starts must be positive");
    const ParameterSet pooled = pooled_fit(spec, design);

    std::vector<std::optional<EmState>> candidates(static_cast<std::size_t>(control.n_starts));
    std::vector<std::string> reasons(candidates.size());
    std::vector<double> start_logliks(candidates.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t s = 0; s < candidates.size(); ++s) {
        try {
            auto rng = derive_stream(control.seed, s);
            EmState state = start_state(spec, design, random_init(spec, design, pooled, rng));
            run_em(state, spec, design, std::min(control.burn_in_iterations, control.max_iterations), control.rel_tol);
            start_logliks[s] = state.loglik;
            candidates[s] = std::move(state);
        } catch (const std::runtime_error& e) {
            reasons[s] = e.what();
        }
    }

    std::vector<std::size_t> order;
    for (std::size_t s = 0; s < candidates.size(); ++s)
        if (candidates[s]) order.push_back(s);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return start_logliks[a] > start_logliks[b]; });

    for (std::size_t s : order) {
        try {
            EmState state = std::move(*candidates[s]);
            run_em(state, spec, design, control.max_iterations, control.rel_tol);
            FitResult r = finalize(spec, design, std::move(state));
            r.start_logliks = start_logliks;
            return r;
        } catch (const std::runtime_error& e) {
            reasons[s] = std::string("after burn-in: ") + e.what();
        }
    }
    throw FitError(std::move(reasons));
}

FitResult multi_start_fit(const ModelSpec& spec, const PanelDataset& data, const EmControl& control) {
    return multi_start_fit(spec, build_design(spec, data), control);
}

}  // namespace bimix
