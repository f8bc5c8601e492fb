#include "bimix/em.hpp"
#include "bimix/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace bimix {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Eigenvalues of the information below this fraction of the largest count as zero.
constexpr double kRelativeEigenFloor = 1e-6;
// Parameters loading more than this on a null direction get a NaN SE.
constexpr double kNullLoading = 1e-3;

/// Free parameterization: per profile [lambda, U row-major, gamma, ln nu],
/// then logits of the positive pi cells relative to the last positive cell.
class FreeParameters {
public:
    FreeParameters(const ModelSpec& spec, const ParameterSet& params) : spec_(spec), base_(params) {
        for (Eigen::Index c = 0; c < params.pi.size(); ++c)
            if (cell(params.pi, c) > 0.0) positive_.push_back(c);
        if (positive_.empty()) throw DomainError("pi has no positive cell");
    }

    Eigen::VectorXd pack() const {
        std::vector<double> v;
        for (int j = 0; j < spec_.J(); ++j) {
            const auto& p = base_.profiles[j];
            for (Eigen::Index a = 0; a < p.lambda.size(); ++a) v.push_back(p.lambda(a));
            for (Eigen::Index k = 0; k < p.support.rows(); ++k)
                for (Eigen::Index c = 0; c < p.support.cols(); ++c) v.push_back(p.support(k, c));
            for (Eigen::Index a = 0; a < p.gamma.size(); ++a) v.push_back(p.gamma(a));
            if (spec_.profiles[j].has_shape()) v.push_back(p.shape.value());
        }
        const double ref = std::log(cell(base_.pi, positive_.back()));
        for (std::size_t m = 0; m + 1 < positive_.size(); ++m) v.push_back(std::log(cell(base_.pi, positive_[m])) - ref);
        return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }

    ParameterSet unpack(const Eigen::VectorXd& theta) const {
        ParameterSet out = base_;
        Eigen::Index at = 0;
        for (int j = 0; j < spec_.J(); ++j) {
            auto& p = out.profiles[j];
            for (Eigen::Index a = 0; a < p.lambda.size(); ++a) p.lambda(a) = theta(at++);
            for (Eigen::Index k = 0; k < p.support.rows(); ++k)
                for (Eigen::Index c = 0; c < p.support.cols(); ++c) p.support(k, c) = theta(at++);
            for (Eigen::Index a = 0; a < p.gamma.size(); ++a) p.gamma(a) = theta(at++);
            if (spec_.profiles[j].has_shape()) p.shape = theta(at++);
        }
        out.pi.setZero();
        std::vector<double> eta(positive_.size(), 0.0);
        for (std::size_t m = 0; m + 1 < positive_.size(); ++m) eta[m] = theta(at++);
        double mx = *std::max_element(eta.begin(), eta.end());
        double total = 0.0;
        for (double e : eta) total += std::exp(e - mx);
        for (std::size_t m = 0; m < positive_.size(); ++m) cell(out.pi, positive_[m]) = std::exp(eta[m] - mx) / total;
        return out;
    }

    // SE record shaped like the parameters, filled from per-coordinate SEs.
    StandardErrors shape_like(const Eigen::VectorXd& se, const Eigen::MatrixXd& cov) const {
        StandardErrors out;
        out.values = base_;
        Eigen::Index at = 0;
        for (int j = 0; j < spec_.J(); ++j) {
            auto& p = out.values.profiles[j];
            for (Eigen::Index a = 0; a < p.lambda.size(); ++a) p.lambda(a) = se(at++);
            for (Eigen::Index k = 0; k < p.support.rows(); ++k)
                for (Eigen::Index c = 0; c < p.support.cols(); ++c) p.support(k, c) = se(at++);
            for (Eigen::Index a = 0; a < p.gamma.size(); ++a) p.gamma(a) = se(at++);
            if (spec_.profiles[j].has_shape()) p.shape = se(at++);
        }
        // Delta method: d pi_c / d eta_m = pi_c (delta_cm - pi_m).
        const Eigen::Index offset = at;
        const auto free = static_cast<Eigen::Index>(positive_.size()) - 1;
        out.values.pi.setConstant(kNaN);
        for (std::size_t a = 0; a < positive_.size(); ++a) {
            const double pa = cell(base_.pi, positive_[a]);
            Eigen::VectorXd jac(free);
            for (Eigen::Index m = 0; m < free; ++m) {
                const double pm = cell(base_.pi, positive_[static_cast<std::size_t>(m)]);
                jac(m) = pa * ((static_cast<Eigen::Index>(a) == m ? 1.0 : 0.0) - pm);
            }
            double var = 0.0;
            bool undefined = false;
            for (Eigen::Index m = 0; m < free; ++m) {
                if (jac(m) == 0.0) continue;
                if (std::isnan(se(offset + m))) undefined = true;
                for (Eigen::Index l = 0; l < free; ++l) var += jac(m) * cov(offset + m, offset + l) * jac(l);
            }
            cell(out.values.pi, positive_[a]) = undefined ? kNaN : std::sqrt(std::max(var, 0.0));
        }
        return out;
    }

private:
    static double& cell(Eigen::MatrixXd& pi, Eigen::Index c) { return pi(c / pi.cols(), c % pi.cols()); }
    static double cell(const Eigen::MatrixXd& pi, Eigen::Index c) { return pi(c / pi.cols(), c % pi.cols()); }

    const ModelSpec& spec_;
    ParameterSet base_;
    std::vector<Eigen::Index> positive_;
};

}  // namespace

StandardErrors standard_errors(const ModelSpec& spec, const ModelDesign& design, const ParameterSet& params) {
    const FreeParameters free(spec, params);
    const Eigen::VectorXd theta0 = free.pack();
    const Eigen::Index P = theta0.size();
    auto loglik = [&](const Eigen::VectorXd& theta) {
        const ParameterSet p = free.unpack(theta);
        return observed_loglik(component_logliks(spec, design, p), p.pi);
    };

    Eigen::VectorXd h(P);
    for (Eigen::Index a = 0; a < P; ++a) h(a) = 1e-5 * (1.0 + std::abs(theta0(a)));

    const double f0 = loglik(theta0);
    Eigen::MatrixXd hessian(P, P);
    Eigen::VectorXd plus(P), minus(P);
    for (Eigen::Index a = 0; a < P; ++a) {
        Eigen::VectorXd t = theta0;
        t(a) += h(a);
        plus(a) = loglik(t);
        t(a) = theta0(a) - h(a);
        minus(a) = loglik(t);
        hessian(a, a) = (plus(a) - 2.0 * f0 + minus(a)) / (h(a) * h(a));
    }
    for (Eigen::Index a = 0; a < P; ++a)
        for (Eigen::Index b = a + 1; b < P; ++b) {
            Eigen::VectorXd t = theta0;
            auto at = [&](double sa, double sb) {
                t(a) = theta0(a) + sa * h(a);
                t(b) = theta0(b) + sb * h(b);
                return loglik(t);
            };
            const double v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h(a) * h(b));
            hessian(a, b) = hessian(b, a) = v;
        }

    const Eigen::MatrixXd information = -hessian;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(information);
    const Eigen::VectorXd values = eig.eigenvalues();
    const Eigen::MatrixXd vectors = eig.eigenvectors();
    const double largest = values.maxCoeff();

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(P, P);
    std::vector<bool> undefined(static_cast<std::size_t>(P), false);
    bool not_pd = false;
    for (Eigen::Index m = 0; m < P; ++m) {
        if (largest > 0.0 && values(m) > kRelativeEigenFloor * largest) {
            cov.noalias() += vectors.col(m) * vectors.col(m).transpose() / values(m);
            continue;
        }
        not_pd = true;
        for (Eigen::Index a = 0; a < P; ++a)
            if (std::abs(vectors(a, m)) > kNullLoading) undefined[static_cast<std::size_t>(a)] = true;
    }

    Eigen::VectorXd se(P);
    for (Eigen::Index a = 0; a < P; ++a)
        se(a) = undefined[static_cast<std::size_t>(a)] ? kNaN : std::sqrt(std::max(cov(a, a), 0.0));

    StandardErrors out = free.shape_like(se, cov);
    out.not_positive_definite = not_pd;
    return out;
}

StandardErrors standard_errors(const ModelSpec& spec, const PanelDataset& data, const ParameterSet& params) {
    return standard_errors(spec, build_design(spec, data), params);
}

}  // namespace bimix
