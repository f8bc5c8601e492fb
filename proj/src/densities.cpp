#include "bimix/densities.hpp"

#include "bimix/errors.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include <cmath>
#include <limits>
#include <numbers>

namespace bimix {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw DomainError(std::string(what) + " must be finite");
}

void check_location_scale(double y, double mu, double sigma) {
    check_finite(y, "y");
    check_finite(mu, "mu");
    check_finite(sigma, "sigma");
    if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
}

void check_nu(double nu) {
    check_finite(nu, "nu");
    if (!(nu > 0.0)) throw DomainError("nu must be positive");
}

double t_log_const(double nu) {
    return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi);
}

}  // namespace

double log_density_gaussian(double y, double mu, double sigma) {
    check_location_scale(y, mu, sigma);
    const double r = (y - mu) / sigma;
    return -kHalfLog2Pi - std::log(sigma) - 0.5 * r * r;
}

double log_density_t(double y, double mu, double sigma, double nu) {
    check_location_scale(y, mu, sigma);
    check_nu(nu);
    const double r = (y - mu) / sigma;
    return t_log_const(nu) - std::log(sigma) - 0.5 * (nu + 1.0) * std::log1p(r * r / nu);
}

LogDensityGradient gradient_gaussian(double y, double mu, double sigma) {
    check_location_scale(y, mu, sigma);
    const double r = (y - mu) / sigma;
    return {r / sigma, r * r - 1.0, 0.0};
}

LogDensityGradient gradient_t(double y, double mu, double sigma, double nu) {
    check_location_scale(y, mu, sigma);
    check_nu(nu);
    using boost::math::digamma;
    const double r = (y - mu) / sigma;
    const double r2 = r * r;
    const double denom = nu + r2;
    LogDensityGradient g;
    g.d_mu = (nu + 1.0) * r / (sigma * denom);
    g.d_log_sigma = -1.0 + (nu + 1.0) * r2 / denom;
    const double d_nu = 0.5 * (digamma(0.5 * (nu + 1.0)) - digamma(0.5 * nu) - 1.0 / nu -
                               std::log1p(r2 / nu) + (nu + 1.0) * r2 / (nu * denom));
    g.d_log_nu = nu * d_nu;
    return g;
}

FamilyKernel::FamilyKernel(Family family, double nu) : family_(family), nu_(nu) {
    if (family_ == Family::gaussian) {
        log_const_ = -kHalfLog2Pi;
        info_mu_scale_ = 1.0;
        info_log_sigma_ = 2.0;
    } else {
        check_nu(nu);
        log_const_ = t_log_const(nu);
        info_mu_scale_ = (nu + 1.0) / (nu + 3.0);
        info_log_sigma_ = 2.0 * nu / (nu + 3.0);
    }
}

double FamilyKernel::log_density(double y, double mu, double log_sigma) const noexcept {
    const double r = (y - mu) * std::exp(-log_sigma);
    if (family_ == Family::gaussian) return log_const_ - log_sigma - 0.5 * r * r;
    return log_const_ - log_sigma - 0.5 * (nu_ + 1.0) * std::log1p(r * r / nu_);
}

void FamilyKernel::score(double y, double mu, double sigma, double& d_mu, double& d_log_sigma) const noexcept {
    const double r = (y - mu) / sigma;
    if (family_ == Family::gaussian) {
        d_mu = r / sigma;
        d_log_sigma = r * r - 1.0;
        return;
    }
    const double denom = nu_ + r * r;
    d_mu = (nu_ + 1.0) * r / (sigma * denom);
    d_log_sigma = -1.0 + (nu_ + 1.0) * r * r / denom;
}

ProfileDesign build_profile_design(const ModelSpec& spec, int j, const PanelDataset& data) {
    const ProfileSpec& prof = spec.profiles.at(j);
    auto columns = [&](const std::vector<std::string>& names) {
        std::vector<long> idx;
        for (const auto& n : names) {
            if (n == kIntercept) {
                idx.push_back(-1);
                continue;
            }
            auto c = data.covariate_index(n);
            if (!c) throw ValidationError({"covariate \"" + n + "\" not in dataset"});
            idx.push_back(static_cast<long>(*c));
        }
        return idx;
    };
    const auto fixed_cols = columns(prof.mean_fixed);
    const auto random_cols = columns(prof.mean_random);
    const auto scale_cols = columns(prof.scale_covariates);

    const auto N = static_cast<Eigen::Index>(data.n_observations());
    ProfileDesign d;
    d.y.resize(N);
    d.fixed.resize(N, static_cast<Eigen::Index>(fixed_cols.size()));
    d.random.resize(N, static_cast<Eigen::Index>(random_cols.size()));
    d.scale.resize(N, static_cast<Eigen::Index>(scale_cols.size() + 1));
    d.unit.reserve(static_cast<std::size_t>(N));
    d.unit_start.reserve(data.n_units() + 1);

    auto fill = [](RowMatrix& m, Eigen::Index row, Eigen::Index offset, const std::vector<long>& cols,
                   const Observation& o) {
        for (std::size_t c = 0; c < cols.size(); ++c)
            m(row, offset + static_cast<Eigen::Index>(c)) =
                cols[c] < 0 ? 1.0 : o.covariates[static_cast<std::size_t>(cols[c])];
    };

    Eigen::Index row = 0;
    for (std::size_t i = 0; i < data.units.size(); ++i) {
        d.unit_start.push_back(static_cast<int>(row));
        for (const auto& o : data.units[i].observations) {
            d.y(row) = o.y.at(static_cast<std::size_t>(j));
            fill(d.fixed, row, 0, fixed_cols, o);
            fill(d.random, row, 0, random_cols, o);
            d.scale(row, 0) = 1.0;
            fill(d.scale, row, 1, scale_cols, o);
            d.unit.push_back(static_cast<int>(i));
            ++row;
        }
    }
    d.unit_start.push_back(static_cast<int>(row));
    return d;
}

namespace {

// Flat parameter vector [lambda | u_0 | ... | u_{K-1} | gamma] for the Newton part.
class ProfileProblem {
public:
    ProfileProblem(const ProfileSpec& spec, const ProfileDesign& design, const Eigen::MatrixXd& weights)
        : spec_(spec),
          design_(design),
          weights_(weights),
          p1_(design.fixed.cols()),
          p2_(design.random.cols()),
          q_(design.scale.cols()),
          K_(spec.K) {}

    Eigen::Index size() const { return p1_ + K_ * p2_ + q_; }

    Eigen::VectorXd pack(const ProfileParameters& p) const {
        Eigen::VectorXd theta(size());
        theta.head(p1_) = p.lambda;
        for (Eigen::Index k = 0; k < K_; ++k) theta.segment(p1_ + k * p2_, p2_) = p.support.row(k).transpose();
        theta.tail(q_) = p.gamma;
        return theta;
    }

    void unpack(const Eigen::VectorXd& theta, ProfileParameters& p) const {
        p.lambda = theta.head(p1_);
        p.support.resize(K_, p2_);
        for (Eigen::Index k = 0; k < K_; ++k) p.support.row(k) = theta.segment(p1_ + k * p2_, p2_).transpose();
        p.gamma = theta.tail(q_);
    }

    double loglik(const Eigen::VectorXd& theta, const FamilyKernel& kernel) const {
        const double* th = theta.data();
        const double* lambda = th;
        const double* support = th + p1_;
        const double* gamma = th + p1_ + K_ * p2_;
        double total = 0.0;
        for (Eigen::Index r = 0; r < design_.n_rows(); ++r) {
            const double fixed = dot(design_.fixed.row(r).data(), lambda, p1_);
            const double log_sigma = dot(design_.scale.row(r).data(), gamma, q_);
            const double* x2 = design_.random.row(r).data();
            const Eigen::Index i = design_.unit[static_cast<std::size_t>(r)];
            for (Eigen::Index k = 0; k < K_; ++k) {
                const double w = weights_(i, k);
                if (w == 0.0) continue;
                const double mu = fixed + dot(x2, support + k * p2_, p2_);
                total += w * kernel.log_density(design_.y(r), mu, log_sigma);
            }
        }
        return total;
    }

    // Gradient and expected information of the weighted log-likelihood.
    void score_and_information(const Eigen::VectorXd& theta, const FamilyKernel& kernel, Eigen::VectorXd& grad,
                               Eigen::MatrixXd& info) const {
        const Eigen::Index P = size();
        grad.setZero(P);
        info.setZero(P, P);
        const double* th = theta.data();
        const double* lambda = th;
        const double* support = th + p1_;
        const double* gamma = th + p1_ + K_ * p2_;
        const Eigen::Index off_u = p1_;
        const Eigen::Index off_g = p1_ + K_ * p2_;
        double* g = grad.data();

        for (Eigen::Index r = 0; r < design_.n_rows(); ++r) {
            const double* x1 = design_.fixed.row(r).data();
            const double* x2 = design_.random.row(r).data();
            const double* z = design_.scale.row(r).data();
            const double fixed = dot(x1, lambda, p1_);
            const double log_sigma = dot(z, gamma, q_);
            const double sigma = std::exp(log_sigma);
            const double info_mu = kernel.info_mu(sigma);
            const Eigen::Index i = design_.unit[static_cast<std::size_t>(r)];
            double sum_info_mu = 0.0;
            double sum_score_ls = 0.0;
            double sum_w = 0.0;
            for (Eigen::Index k = 0; k < K_; ++k) {
                const double w = weights_(i, k);
                if (w == 0.0) continue;
                const double mu = fixed + dot(x2, support + k * p2_, p2_);
                double d_mu = 0.0;
                double d_ls = 0.0;
                kernel.score(design_.y(r), mu, sigma, d_mu, d_ls);
                const double s_mu = w * d_mu;
                const double i_mu = w * info_mu;
                const Eigen::Index ou = off_u + k * p2_;
                for (Eigen::Index a = 0; a < p1_; ++a) g[a] += s_mu * x1[a];
                for (Eigen::Index a = 0; a < p2_; ++a) {
                    g[ou + a] += s_mu * x2[a];
                    for (Eigen::Index b = 0; b < p1_; ++b) info(b, ou + a) += i_mu * x1[b] * x2[a];
                    for (Eigen::Index b = 0; b <= a; ++b) info(ou + b, ou + a) += i_mu * x2[b] * x2[a];
                }
                sum_info_mu += i_mu;
                sum_score_ls += w * d_ls;
                sum_w += w;
            }
            for (Eigen::Index a = 0; a < p1_; ++a)
                for (Eigen::Index b = 0; b <= a; ++b) info(b, a) += sum_info_mu * x1[b] * x1[a];
            const double i_ls = sum_w * kernel.info_log_sigma();
            for (Eigen::Index a = 0; a < q_; ++a) {
                g[off_g + a] += sum_score_ls * z[a];
                for (Eigen::Index b = 0; b <= a; ++b) info(off_g + b, off_g + a) += i_ls * z[b] * z[a];
            }
        }
        info.triangularView<Eigen::StrictlyLower>() = info.transpose();
    }

    // Weighted log-likelihood as a function of ln(nu) with everything else held.
    double shape_objective(const Eigen::VectorXd& theta, double log_nu) const {
        return loglik(theta, FamilyKernel(spec_.family, std::exp(log_nu)));
    }

    // Derivative of shape_objective in ln(nu).
    double shape_score(const Eigen::VectorXd& theta, double log_nu) const {
        const double nu = std::exp(log_nu);
        const double* th = theta.data();
        const double* support = th + p1_;
        const double* gamma = th + p1_ + K_ * p2_;
        double total = 0.0;
        for (Eigen::Index r = 0; r < design_.n_rows(); ++r) {
            const double fixed = dot(design_.fixed.row(r).data(), th, p1_);
            const double sigma = std::exp(dot(design_.scale.row(r).data(), gamma, q_));
            const double* x2 = design_.random.row(r).data();
            const Eigen::Index i = design_.unit[static_cast<std::size_t>(r)];
            for (Eigen::Index k = 0; k < K_; ++k) {
                const double w = weights_(i, k);
                if (w == 0.0) continue;
                const double mu = fixed + dot(x2, support + k * p2_, p2_);
                total += w * gradient_t(design_.y(r), mu, sigma, nu).d_log_nu;
            }
        }
        return total;
    }

private:
    static double dot(const double* a, const double* b, Eigen::Index n) noexcept {
        double s = 0.0;
        for (Eigen::Index c = 0; c < n; ++c) s += a[c] * b[c];
        return s;
    }

    const ProfileSpec& spec_;
    const ProfileDesign& design_;
    const Eigen::MatrixXd& weights_;
    Eigen::Index p1_;
    Eigen::Index p2_;
    Eigen::Index q_;
    Eigen::Index K_;
};

double current_nu(const ProfileSpec& spec, const ProfileParameters& p) {
    if (!spec.has_shape()) return 0.0;
    if (!p.shape) throw DomainError("student_t profile requires a shape parameter");
    return std::exp(*p.shape);
}

void check_shapes(const ProfileSpec& spec, const ProfileDesign& design, const Eigen::MatrixXd& weights,
                  const ProfileParameters& p) {
    if (weights.rows() != design.n_units() || weights.cols() != spec.K)
        throw DomainError("weight matrix must be n_units x K");
    if (p.lambda.size() != design.fixed.cols() || p.support.rows() != spec.K ||
        p.support.cols() != design.random.cols() || p.gamma.size() != design.scale.cols())
        throw DomainError("profile parameters do not match the design");
    if ((weights.array() < 0.0).any() || !weights.allFinite())
        throw DomainError("weights must be finite and non-negative");
}

}  // namespace

double weighted_profile_loglik(const ProfileSpec& spec, const ProfileDesign& design,
                               const Eigen::MatrixXd& unit_weights, const ProfileParameters& params) {
    check_shapes(spec, design, unit_weights, params);
    ProfileProblem problem(spec, design, unit_weights);
    return problem.loglik(problem.pack(params), FamilyKernel(spec.family, current_nu(spec, params)));
}

MStepResult weighted_profile_mstep(const ProfileSpec& spec, const ProfileDesign& design,
                                   const Eigen::MatrixXd& unit_weights, const ProfileParameters& current,
                                   const MStepOptions& options) {
    check_shapes(spec, design, unit_weights, current);

    double total_weight = 0.0;
    for (int k = 0; k < spec.K; ++k) {
        double total = 0.0;
        for (int i = 0; i < design.n_units(); ++i)
            total += unit_weights(i, k) * (design.unit_start[i + 1] - design.unit_start[i]);
        if (total < kDegenerateWeight) throw DegenerateComponent(-1, k, total);
        total_weight += total;
    }

    ProfileProblem problem(spec, design, unit_weights);
    Eigen::VectorXd theta = problem.pack(current);
    double log_nu = spec.has_shape() ? std::log(current_nu(spec, current)) : 0.0;
    const FamilyKernel kernel(spec.family, spec.has_shape() ? std::exp(log_nu) : 0.0);

    MStepResult result;
    double ll = problem.loglik(theta, kernel);
    if (!std::isfinite(ll)) throw NumericalFailure("weighted log-likelihood is not finite at the current parameters");
    result.loglik_before = ll;

    Eigen::VectorXd grad;
    Eigen::MatrixXd info;
    for (int it = 0; it < options.max_inner_iterations; ++it) {
        problem.score_and_information(theta, kernel, grad, info);
        if (!grad.allFinite()) throw NumericalFailure("non-finite score in M-step");

        Eigen::VectorXd step;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        if (ldlt.info() == Eigen::Success && ldlt.isPositive()) step = ldlt.solve(grad);
        if (step.size() == 0 || !step.allFinite() || grad.dot(step) <= 0.0) {
            // Scaled gradient ascent when the information is unusable.
            const double scale = info.diagonal().cwiseAbs().maxCoeff();
            step = grad / (scale > 0.0 ? scale : 1.0);
        }

        double trial_ll = -std::numeric_limits<double>::infinity();
        Eigen::VectorXd trial;
        double s = 1.0;
        bool accepted = false;
        for (int h = 0; h <= options.max_halvings; ++h, s *= 0.5) {
            trial = theta + s * step;
            trial_ll = problem.loglik(trial, kernel);
            if (std::isfinite(trial_ll) && trial_ll > ll) {
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        const double improvement = trial_ll - ll;
        theta = trial;
        ll = trial_ll;
        ++result.iterations;
        if (improvement < options.tolerance * total_weight) break;
    }

    if (spec.has_shape() && options.update_shape) {
        auto negated = [&](double x) {
            const double v = problem.shape_objective(theta, x);
            return std::isfinite(v) ? -v : std::numeric_limits<double>::max();
        };
        std::uintmax_t max_iter = 200;
        const double lo = std::log(kMinDegreesOfFreedom), hi = std::log(kMaxDegreesOfFreedom);
        auto [best_x, best_neg] = boost::math::tools::brent_find_minima(negated, lo, hi, 40, max_iter);
        // Brent only resolves the flat maximum to ~sqrt(eps); finish on the score.
        const double a = std::max(lo, best_x - 1e-4), b = std::min(hi, best_x + 1e-4);
        const double sa = problem.shape_score(theta, a), sb = problem.shape_score(theta, b);
        if (sa > 0.0 && sb < 0.0) {
            std::uintmax_t root_iter = 100;
            const auto [r0, r1] = boost::math::tools::toms748_solve(
                [&](double x) { return problem.shape_score(theta, x); }, a, b, sa, sb,
                boost::math::tools::eps_tolerance<double>(52), root_iter);
            const double x = 0.5 * (r0 + r1);
            const double v = negated(x);
            if (v <= best_neg) {
                best_x = x;
                best_neg = v;
            }
        }
        if (-best_neg > ll) {
            log_nu = best_x;
            ll = -best_neg;
        }
    }

    problem.unpack(theta, result.params);
    if (spec.has_shape()) result.params.shape = log_nu;
    result.loglik_after = ll;
    return result;
}

MStepResult weighted_profile_mstep(const ProfileSpec& spec, std::span<const WeightedObservation> obs,
                                   const ProfileParameters& current, const MStepOptions& options) {
    const auto N = static_cast<Eigen::Index>(obs.size());
    ProfileDesign design;
    design.y.resize(N);
    design.fixed.resize(N, static_cast<Eigen::Index>(spec.n_fixed()));
    design.random.resize(N, static_cast<Eigen::Index>(spec.n_random()));
    design.scale.resize(N, static_cast<Eigen::Index>(spec.n_scale()));
    Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(N, spec.K);
    for (Eigen::Index r = 0; r < N; ++r) {
        const auto& o = obs[static_cast<std::size_t>(r)];
        if (o.mean_fixed_row.size() != spec.n_fixed() || o.mean_random_row.size() != spec.n_random() ||
            o.scale_row.size() + 1 != spec.n_scale())
            throw DomainError("weighted observation rows do not match the profile spec");
        if (o.component_index < 0 || o.component_index >= spec.K)
            throw DomainError("component index out of range");
        design.y(r) = o.y;
        for (std::size_t c = 0; c < o.mean_fixed_row.size(); ++c) design.fixed(r, static_cast<Eigen::Index>(c)) = o.mean_fixed_row[c];
        for (std::size_t c = 0; c < o.mean_random_row.size(); ++c) design.random(r, static_cast<Eigen::Index>(c)) = o.mean_random_row[c];
        design.scale(r, 0) = 1.0;
        for (std::size_t c = 0; c < o.scale_row.size(); ++c) design.scale(r, static_cast<Eigen::Index>(c) + 1) = o.scale_row[c];
        weights(r, o.component_index) += o.weight;
        design.unit.push_back(static_cast<int>(r));
        design.unit_start.push_back(static_cast<int>(r));
    }
    design.unit_start.push_back(static_cast<int>(N));
    return weighted_profile_mstep(spec, design, weights, current, options);
}

}  // namespace bimix
