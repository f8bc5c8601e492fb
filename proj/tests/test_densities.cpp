#include "bimix/densities.hpp"
#include "bimix/errors.hpp"
#include "test_support.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace bimix;
using bimix::testing::profile;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Integral of exp(log_density_t) over the whole line, split at mu.
double t_total_mass(double mu, double sigma, double nu) {
    boost::math::quadrature::exp_sinh<double> half_line;
    auto upper = [&](double s) { return std::exp(log_density_t(mu + s, mu, sigma, nu)); };
    auto lower = [&](double s) { return std::exp(log_density_t(mu - s, mu, sigma, nu)); };
    return half_line.integrate(upper) + half_line.integrate(lower);
}

std::vector<WeightedObservation> observations(const std::vector<double>& y, const std::vector<double>& x) {
    std::vector<WeightedObservation> obs;
    for (std::size_t i = 0; i < y.size(); ++i) {
        WeightedObservation o;
        o.y = y[i];
        if (!x.empty()) o.mean_fixed_row = {x[i]};
        o.mean_random_row = {1.0};
        o.weight = 1.0;
        obs.push_back(o);
    }
    return obs;
}

ProfileParameters start(const ProfileSpec& spec) {
    ProfileParameters p;
    p.lambda = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.n_fixed()));
    p.support = Eigen::MatrixXd::Zero(spec.K, static_cast<Eigen::Index>(spec.n_random()));
    p.gamma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.n_scale()));
    if (spec.has_shape()) p.shape = std::log(5.0);
    return p;
}

}  // namespace

TEST(GaussianDensity, ClosedFormValues) {
    EXPECT_NEAR(log_density_gaussian(0, 0, 1), -0.9189385, 1e-7);
    EXPECT_NEAR(log_density_gaussian(1, 0, 1), -1.4189385, 1e-7);
}

TEST(GaussianDensity, MatchesDerivativeOfCdf) {
    const double y = 2.0, mu = 1.0, sigma = 0.5, h = 1e-5;
    const double pdf = (normal_cdf((y + h - mu) / sigma) - normal_cdf((y - h - mu) / sigma)) / (2 * h);
    EXPECT_NEAR(std::exp(log_density_gaussian(y, mu, sigma)) / pdf, 1.0, 1e-8);
}

TEST(GaussianDensity, DomainErrors) {
    EXPECT_THROW(log_density_gaussian(0, 0, 0), DomainError);
    EXPECT_THROW(log_density_gaussian(0, 0, -1), DomainError);
    EXPECT_THROW(log_density_gaussian(NAN, 0, 1), DomainError);
    EXPECT_THROW(log_density_gaussian(0, INFINITY, 1), DomainError);
}

TEST(StudentDensity, SpecialCases) {
    EXPECT_NEAR(log_density_t(0, 0, 1, 1), -1.1447299, 1e-7);
    EXPECT_NEAR(log_density_t(0, 0, 1, 200), log_density_gaussian(0, 0, 1), 2e-3);
    EXPECT_THROW(log_density_t(0, 0, 1, 0), DomainError);
    EXPECT_THROW(log_density_t(0, 0, 0, 3), DomainError);
    EXPECT_THROW(log_density_t(0, 0, 1, -2), DomainError);
}

TEST(StudentDensity, IntegratesToOne) {
    for (double nu : {1.0, 3.0, 5.0, 30.0}) EXPECT_NEAR(t_total_mass(0.3, 2.0, nu), 1.0, 1e-6) << "nu=" << nu;
}

TEST(StudentDensity, WindowMassMatchesTails) {
    // Mass of t(0, 2, 5) on [-50, 50] equals 1 - 2 P(T_5 > 25).
    boost::math::quadrature::tanh_sinh<double> finite;
    const double window = finite.integrate([](double y) { return std::exp(log_density_t(y, 0, 2, 5)); }, -50.0, 50.0);
    const double tail = boost::math::cdf(boost::math::complement(boost::math::students_t(5.0), 25.0));
    EXPECT_NEAR(window, 1.0 - 2.0 * tail, 1e-9);
}

TEST(Gradients, MatchCentralDifferences) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> y_law(-6, 6), mu_law(-3, 3), ls_law(-1.5, 1.5), ln_law(std::log(0.6), std::log(150.0));
    const double h = 1e-6;
    auto rel = [](double analytic, double numeric) { return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)); };
    for (int r = 0; r < 100; ++r) {
        const double y = y_law(rng), mu = mu_law(rng), ls = ls_law(rng), lnu = ln_law(rng);
        const double s = std::exp(ls), nu = std::exp(lnu);

        const auto g = gradient_gaussian(y, mu, s);
        EXPECT_LT(rel(g.d_mu, (log_density_gaussian(y, mu + h, s) - log_density_gaussian(y, mu - h, s)) / (2 * h)), 1e-5);
        EXPECT_LT(rel(g.d_log_sigma, (log_density_gaussian(y, mu, std::exp(ls + h)) -
                                      log_density_gaussian(y, mu, std::exp(ls - h))) / (2 * h)), 1e-5);

        const auto t = gradient_t(y, mu, s, nu);
        EXPECT_LT(rel(t.d_mu, (log_density_t(y, mu + h, s, nu) - log_density_t(y, mu - h, s, nu)) / (2 * h)), 1e-5);
        EXPECT_LT(rel(t.d_log_sigma, (log_density_t(y, mu, std::exp(ls + h), nu) -
                                      log_density_t(y, mu, std::exp(ls - h), nu)) / (2 * h)), 1e-5);
        EXPECT_LT(rel(t.d_log_nu, (log_density_t(y, mu, s, std::exp(lnu + h)) -
                                   log_density_t(y, mu, s, std::exp(lnu - h))) / (2 * h)), 1e-5);
    }
}

TEST(FamilyKernel, AgreesWithDensities) {
    const FamilyKernel g(Family::gaussian, 0.0), t(Family::student_t, 4.0);
    EXPECT_NEAR(g.log_density(1.3, 0.2, std::log(0.7)), log_density_gaussian(1.3, 0.2, 0.7), 1e-13);
    EXPECT_NEAR(t.log_density(1.3, 0.2, std::log(0.7)), log_density_t(1.3, 0.2, 0.7, 4.0), 1e-13);
    double dmu = 0, dls = 0;
    t.score(1.3, 0.2, 0.7, dmu, dls);
    const auto ref = gradient_t(1.3, 0.2, 0.7, 4.0);
    EXPECT_NEAR(dmu, ref.d_mu, 1e-13);
    EXPECT_NEAR(dls, ref.d_log_sigma, 1e-13);
}

TEST(MStep, InterceptOnlyGivesSampleMeanAndSd) {
    const std::vector<double> y{1.0, 2.5, -0.5, 4.0, 3.0, 0.25};
    const auto spec = profile(Family::gaussian, {}, {"intercept"}, {}, 1);
    const auto obs = observations(y, {});
    const auto r = weighted_profile_mstep(spec, obs, start(spec));

    double mean = 0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double ss = 0;
    for (double v : y) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(y.size()));
    EXPECT_NEAR(r.params.support(0, 0), mean, 1e-8);
    EXPECT_NEAR(std::exp(r.params.gamma(0)), sd, 1e-8);
    EXPECT_GE(r.loglik_after, r.loglik_before);
}

TEST(MStep, OneCovariateMatchesLeastSquares) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z;
    std::vector<double> x, y;
    for (int i = 0; i < 200; ++i) {
        x.push_back(z(rng));
        y.push_back(0.7 - 1.3 * x.back() + 0.4 * z(rng));
    }
    const auto spec = profile(Family::gaussian, {"x"}, {"intercept"}, {}, 1);
    const auto r = weighted_profile_mstep(spec, observations(y, x), start(spec));

    // Normal equations for (intercept, slope).
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        n += 1;
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double intercept = (sy - slope * sx) / n;
    EXPECT_NEAR(r.params.lambda(0), slope, 1e-8);
    EXPECT_NEAR(r.params.support(0, 0), intercept, 1e-8);
}

TEST(MStep, StudentWithHugeNuMatchesGaussian) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> z;
    std::vector<double> x, y;
    for (int i = 0; i < 300; ++i) {
        x.push_back(z(rng));
        y.push_back(1.0 + 0.5 * x.back() + 0.8 * z(rng));
    }
    const auto obs = observations(y, x);
    const auto gs = profile(Family::gaussian, {"x"}, {"intercept"}, {}, 1);
    const auto ts = profile(Family::student_t, {"x"}, {"intercept"}, {}, 1);
    auto t_start = start(ts);
    t_start.shape = std::log(1e6);
    MStepOptions fixed_nu;
    fixed_nu.update_shape = false;
    const auto g = weighted_profile_mstep(gs, obs, start(gs)).params;
    const auto t = weighted_profile_mstep(ts, obs, t_start, fixed_nu).params;
    EXPECT_NEAR(t.lambda(0), g.lambda(0), 1e-4);
    EXPECT_NEAR(t.support(0, 0), g.support(0, 0), 1e-4);
    EXPECT_NEAR(t.gamma(0), g.gamma(0), 1e-4);
    EXPECT_DOUBLE_EQ(t.shape.value(), std::log(1e6));
}

TEST(MStep, WeightScalingLeavesArgmaxUnchanged) {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.05, 1.0);
    auto spec = profile(Family::student_t, {"x"}, {"intercept"}, {"z"}, 2);
    std::vector<WeightedObservation> obs;
    for (int i = 0; i < 120; ++i) {
        for (int k = 0; k < 2; ++k) {
            WeightedObservation o;
            const double x = z(rng);
            o.mean_fixed_row = {x};
            o.mean_random_row = {1.0};
            o.scale_row = {z(rng)};
            o.y = (k == 0 ? -1.0 : 2.0) + 0.3 * x + z(rng);
            o.weight = u(rng);
            o.component_index = k;
            obs.push_back(o);
        }
    }
    auto scaled = obs;
    for (auto& o : scaled) o.weight *= 7.5;
    auto init = start(spec);
    init.support(0, 0) = -0.5;
    init.support(1, 0) = 1.0;
    const auto a = weighted_profile_mstep(spec, obs, init).params;
    const auto b = weighted_profile_mstep(spec, scaled, init).params;
    EXPECT_LT((a.lambda - b.lambda).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((a.support - b.support).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((a.gamma - b.gamma).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(*a.shape, *b.shape, 1e-9);
}

TEST(MStep, NeverDecreasesWeightedLoglik) {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
        const Family fam = rep % 2 ? Family::student_t : Family::gaussian;
        auto spec = profile(fam, {"x"}, {"intercept"}, {"z"}, 1 + rep % 3);
        std::vector<WeightedObservation> obs;
        for (int i = 0; i < 60; ++i)
            for (int k = 0; k < spec.K; ++k) {
                WeightedObservation o;
                o.mean_fixed_row = {z(rng)};
                o.mean_random_row = {1.0};
                o.scale_row = {z(rng)};
                o.y = 3.0 * z(rng);
                o.weight = u(rng);
                o.component_index = k;
                obs.push_back(o);
            }
        auto init = start(spec);
        for (int k = 0; k < spec.K; ++k) init.support(k, 0) = z(rng);
        init.gamma(1) = 0.5 * z(rng);
        const auto r = weighted_profile_mstep(spec, obs, init);
        EXPECT_GE(r.loglik_after, r.loglik_before) << "rep " << rep;
    }
}

TEST(MStep, DegenerateComponentIsReported) {
    const auto spec = profile(Family::gaussian, {}, {"intercept"}, {}, 2);
    auto obs = observations({0.1, 0.4, 0.9, 1.3}, {});
    for (auto& o : obs) o.component_index = 0;
    try {
        weighted_profile_mstep(spec, obs, start(spec));
        FAIL() << "expected DegenerateComponent";
    } catch (const DegenerateComponent& e) {
        EXPECT_EQ(e.component(), 1);
        EXPECT_LT(e.total_weight(), kDegenerateWeight);
    }
}
