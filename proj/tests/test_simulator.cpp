#include "bimix/errors.hpp"
#include "bimix/io.hpp"
#include "bimix/simulator.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace bimix;

namespace {

// Standardized noise of profile j for every observation, using the true labels.
std::vector<double> standardized_noise(const ScenarioTruth& st, const SimulatedPanel& sim, int j) {
    const auto& prof = st.spec.profiles[j];
    const auto& p = st.truth.profiles[j];
    auto col = [&](const std::string& name, const Observation& o) {
        return name == "intercept" ? 1.0 : o.covariates[*sim.data.covariate_index(name)];
    };
    std::vector<double> out;
    for (std::size_t i = 0; i < sim.data.units.size(); ++i) {
        const int k = j == 0 ? sim.true_assignments[i].k1 : sim.true_assignments[i].k2;
        for (const auto& o : sim.data.units[i].observations) {
            double mu = 0.0, log_sigma = p.gamma(0);
            for (std::size_t a = 0; a < prof.mean_fixed.size(); ++a) mu += p.lambda(a) * col(prof.mean_fixed[a], o);
            for (std::size_t a = 0; a < prof.mean_random.size(); ++a) mu += p.support(k, a) * col(prof.mean_random[a], o);
            for (std::size_t a = 0; a < prof.scale_covariates.size(); ++a) log_sigma += p.gamma(a + 1) * col(prof.scale_covariates[a], o);
            out.push_back((o.y[j] - mu) / std::exp(log_sigma));
        }
    }
    return out;
}

void expect_standard_normal(const std::vector<double>& e) {
    const double N = static_cast<double>(e.size());
    double m = 0.0, v = 0.0;
    for (double x : e) m += x;
    m /= N;
    for (double x : e) v += (x - m) * (x - m);
    v /= N - 1;
    EXPECT_LT(std::abs(m), 3.0 / std::sqrt(N));
    EXPECT_LT(std::abs(v - 1.0), 3.0 * std::sqrt(2.0 / N));
}

}  // namespace

TEST(Scenarios, TruthValues) {
    const auto s1 = scenario1();
    EXPECT_EQ(s1.spec.K(0), 2);
    EXPECT_EQ(s1.spec.K(1), 2);
    EXPECT_DOUBLE_EQ(s1.truth.profiles[0].support(0, 0), -1.0);
    EXPECT_DOUBLE_EQ(s1.truth.profiles[0].support(1, 0), 1.0);
    EXPECT_DOUBLE_EQ(s1.truth.profiles[1].support(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(s1.truth.profiles[1].support(1, 0), -2.0);
    EXPECT_DOUBLE_EQ(s1.truth.profiles[0].gamma(1), 0.75);
    EXPECT_DOUBLE_EQ(s1.truth.profiles[1].gamma(0), 1.0);
    EXPECT_DOUBLE_EQ(s1.truth.pi(1, 1), 0.3);
    EXPECT_NEAR(s1.truth.pi.sum(), 1.0, 1e-15);

    const auto s2 = scenario2();
    EXPECT_EQ(s2.spec.K(1), 3);
    EXPECT_DOUBLE_EQ(s2.truth.profiles[1].support(2, 0), 0.0);
    EXPECT_NEAR(s2.truth.pi.sum(), 1.0, 1e-15);

    const auto solow = solow_synthetic();
    EXPECT_EQ(solow.spec.K(0), 6);
    EXPECT_EQ(solow.spec.K(1), 2);
    EXPECT_NEAR(solow.truth.pi.sum(), 1.0, 1e-15);
    EXPECT_DOUBLE_EQ(solow.truth.pi(0, 1), 0.0);
    EXPECT_TRUE(validate(solow.spec).empty());

    EXPECT_EQ(scenario_by_id("2").name, "scenario2");
    EXPECT_THROW(scenario_by_id("7"), DomainError);
}

TEST(Simulate, ShapeAndIds) {
    const auto sim = simulate_dataset(scenario1(), 7, 4, 1);
    ASSERT_EQ(sim.data.units.size(), 7u);
    EXPECT_EQ(sim.true_assignments.size(), 7u);
    EXPECT_EQ(sim.data.n_responses, 2);
    EXPECT_EQ(sim.data.units[0].id, "1");
    EXPECT_EQ(sim.data.units[6].id, "7");
    for (const auto& u : sim.data.units) {
        ASSERT_EQ(u.observations.size(), 4u);
        EXPECT_EQ(u.observations.front().time, 1);
        EXPECT_EQ(u.observations.back().time, 4);
    }
    EXPECT_TRUE(validate(scenario1().spec, sim.data).empty());
    EXPECT_THROW(simulate_dataset(scenario1(), 0, 4, 1), DomainError);
}

TEST(Simulate, Deterministic) {
    const auto a = simulate_dataset(scenario2(), 50, 5, 99);
    const auto b = simulate_dataset(scenario2(), 50, 5, 99);
    const auto c = simulate_dataset(scenario2(), 50, 5, 100);
    std::ostringstream sa, sb, sc;
    write_panel_csv(sa, a.data);
    write_panel_csv(sb, b.data);
    write_panel_csv(sc, c.data);
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_NE(sa.str(), sc.str());
    EXPECT_EQ(a.true_assignments, b.true_assignments);
}

TEST(Simulate, UnitDataDoNotDependOnN) {
    const auto small = simulate_dataset(scenario1(), 10, 3, 5);
    const auto large = simulate_dataset(scenario1(), 40, 3, 5);
    for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_EQ(small.true_assignments[i], large.true_assignments[i]);
        for (std::size_t t = 0; t < 3; ++t) {
            EXPECT_EQ(small.data.units[i].observations[t].y, large.data.units[i].observations[t].y);
            EXPECT_EQ(small.data.units[i].observations[t].covariates, large.data.units[i].observations[t].covariates);
        }
    }
}

TEST(Simulate, GaussianNoiseMoments) {
    const auto st = scenario1();
    const auto sim = simulate_dataset(st, 20000, 5, 11);
    expect_standard_normal(standardized_noise(st, sim, 0));
    expect_standard_normal(standardized_noise(st, sim, 1));
}

TEST(Simulate, CovariateMoments) {
    const auto st = solow_synthetic();
    const auto sim = simulate_dataset(st, 20000, 6, 12);
    for (std::size_t c = 0; c < st.covariate_law.covariates.size(); ++c) {
        const auto& law = st.covariate_law.covariates[c];
        std::vector<double> e;
        for (const auto& u : sim.data.units)
            for (const auto& o : u.observations) e.push_back((o.covariates[c] - law.mean) / law.sd);
        expect_standard_normal(e);
    }
}

TEST(Simulate, StudentNoiseDistribution) {
    const auto st = solow_synthetic();
    const auto sim = simulate_dataset(st, 20000, 6, 13);
    const auto e = standardized_noise(st, sim, 1);
    const boost::math::students_t dist(std::exp(*st.truth.profiles[1].shape));
    for (double q : {0.25, 1.0, 3.0}) {
        const double p = boost::math::cdf(dist, q) - boost::math::cdf(dist, -q);
        double hits = 0;
        for (double x : e) hits += std::abs(x) < q;
        const double N = static_cast<double>(e.size());
        EXPECT_LT(std::abs(hits / N - p), 3.0 * std::sqrt(p * (1 - p) / N)) << "q = " << q;
    }
    expect_standard_normal(standardized_noise(st, sim, 0));
}

TEST(Simulate, CellFrequencies) {
    const auto st = scenario2();
    const int n = 100000;
    const auto sim = simulate_dataset(st, n, 1, 21);
    Eigen::MatrixXd freq = Eigen::MatrixXd::Zero(2, 3);
    for (const auto& c : sim.true_assignments) freq(c.k1, c.k2) += 1.0 / n;
    for (int k1 = 0; k1 < 2; ++k1)
        for (int k2 = 0; k2 < 3; ++k2) EXPECT_NEAR(freq(k1, k2), st.truth.pi(k1, k2), 0.005);

    const auto solow = solow_synthetic();
    const auto s = simulate_dataset(solow, 20000, 1, 22);
    for (const auto& c : s.true_assignments) EXPECT_GT(solow.truth.pi(c.k1, c.k2), 0.0);
}

TEST(Simulate, CsvRoundTripIsExact) {
    const auto sim = simulate_dataset(solow_synthetic(), 30, 6, 3);
    std::stringstream ss;
    write_panel_csv(ss, sim.data);
    const auto back = read_panel_csv(ss);
    ASSERT_EQ(back.units.size(), sim.data.units.size());
    EXPECT_EQ(back.covariate_names, sim.data.covariate_names);
    EXPECT_EQ(back.n_responses, 2);
    for (std::size_t i = 0; i < back.units.size(); ++i) {
        EXPECT_EQ(back.units[i].id, sim.data.units[i].id);
        for (std::size_t t = 0; t < 6; ++t) {
            EXPECT_EQ(back.units[i].observations[t].time, sim.data.units[i].observations[t].time);
            EXPECT_EQ(back.units[i].observations[t].y, sim.data.units[i].observations[t].y);
            EXPECT_EQ(back.units[i].observations[t].covariates, sim.data.units[i].observations[t].covariates);
        }
    }

    std::stringstream truth;
    write_truth_csv(truth, sim.data, sim.true_assignments);
    EXPECT_EQ(read_truth_csv(truth), sim.true_assignments);
}
