#include "bimix/simulator.hpp"

#include "bimix/errors.hpp"
#include "bimix/rng.hpp"

#include <boost/random/normal_distribution.hpp>
#include <boost/random/student_t_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include <cmath>
#include <sstream>

namespace bimix {

std::string CovariateLaw::description() const {
    std::ostringstream os;
    for (std::size_t c = 0; c < covariates.size(); ++c) {
        if (c) os << ", ";
        os << covariates[c].name << " ~ N(" << covariates[c].mean << ", " << covariates[c].sd << "^2)";
    }
    os << "; i.i.d. over units and times, independent of labels";
    return os.str();
}

SimulatedPanel simulate_dataset(const ScenarioTruth& st, int n, int T, std::uint64_t seed) {
    if (n < 1 || T < 1) throw DomainError("n and T must be at least 1");
    const ModelSpec& spec = st.spec;
    const ParameterSet& truth = st.truth;
    const auto& law = st.covariate_law.covariates;

    SimulatedPanel out;
    out.data.n_responses = spec.J();
    for (const auto& c : law) out.data.covariate_names.push_back(c.name);

    // Column of each design name in the covariate vector; -1 is the intercept.
    auto columns = [&](const std::vector<std::string>& names) {
        std::vector<long> idx;
        for (const auto& name : names) {
            if (name == kIntercept) {
                idx.push_back(-1);
                continue;
            }
            auto c = out.data.covariate_index(name);
            if (!c) throw DomainError("covariate law does not define \"" + name + "\"");
            idx.push_back(static_cast<long>(*c));
        }
        return idx;
    };
    struct Columns {
        std::vector<long> fixed, random, scale;
    };
    std::vector<Columns> cols;
    for (const auto& p : spec.profiles) cols.push_back({columns(p.mean_fixed), columns(p.mean_random), columns(p.scale_covariates)});

    const int K2 = spec.K(1);
    const Eigen::Index cells = truth.pi.size();

    out.data.units.reserve(static_cast<std::size_t>(n));
    out.true_assignments.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto rng = derive_stream(seed, static_cast<std::uint64_t>(i));
        boost::random::uniform_01<double> unif;
        boost::random::normal_distribution<double> normal;

        const double draw = unif(rng);
        double cumulative = 0.0;
        Eigen::Index cell = cells - 1;
        for (Eigen::Index c = 0; c < cells; ++c) {
            cumulative += truth.pi(c / K2, c % K2);
            if (draw < cumulative) {
                cell = c;
                break;
            }
        }
        const Cell label{static_cast<int>(cell / K2), static_cast<int>(cell % K2)};

        Unit unit;
        unit.id = std::to_string(i + 1);
        for (int t = 0; t < T; ++t) {
            Observation o;
            o.time = t + 1;
            for (const auto& c : law) o.covariates.push_back(c.mean + c.sd * normal(rng));
            auto value = [&](long col) { return col < 0 ? 1.0 : o.covariates[static_cast<std::size_t>(col)]; };
            for (int j = 0; j < spec.J(); ++j) {
                const auto& prof = spec.profiles[j];
                const auto& p = truth.profiles[j];
                const int k = j == 0 ? label.k1 : label.k2;
                double mu = 0.0;
                for (std::size_t a = 0; a < cols[j].fixed.size(); ++a) mu += p.lambda(static_cast<Eigen::Index>(a)) * value(cols[j].fixed[a]);
                for (std::size_t a = 0; a < cols[j].random.size(); ++a) mu += p.support(k, static_cast<Eigen::Index>(a)) * value(cols[j].random[a]);
                double log_sigma = p.gamma(0);
                for (std::size_t a = 0; a < cols[j].scale.size(); ++a) log_sigma += p.gamma(static_cast<Eigen::Index>(a) + 1) * value(cols[j].scale[a]);
                double noise = 0.0;
                if (prof.has_shape()) {
                    boost::random::student_t_distribution<double> student(std::exp(p.shape.value()));
                    noise = student(rng);
                } else {
                    noise = normal(rng);
                }
                o.y.push_back(mu + std::exp(log_sigma) * noise);
            }
            unit.observations.push_back(std::move(o));
        }
        out.data.units.push_back(std::move(unit));
        out.true_assignments.push_back(label);
    }
    return out;
}

namespace {

ProfileSpec gaussian_profile(int K) {
    ProfileSpec p;
    p.family = Family::gaussian;
    p.mean_fixed = {"x"};
    p.mean_random = {std::string(kIntercept)};
    p.scale_covariates = {"z"};
    p.K = K;
    return p;
}

ProfileParameters location_scale(std::initializer_list<double> support, double slope, double g0, double g1) {
    ProfileParameters p;
    p.lambda = Eigen::VectorXd::Constant(1, slope);
    p.support = Eigen::Map<const Eigen::VectorXd>(support.begin(), static_cast<Eigen::Index>(support.size()));
    p.gamma = Eigen::Vector2d(g0, g1);
    return p;
}

CovariateLaw standard_xz() { return {{{"x", 0.0, 1.0}, {"z", 0.0, 1.0}}}; }

}  // namespace

ScenarioTruth scenario1() {
    ScenarioTruth st;
    st.name = "scenario1";
    st.spec.profiles = {gaussian_profile(2), gaussian_profile(2)};
    st.truth.profiles = {location_scale({-1.0, 1.0}, 0.5, 0.5, 0.75), location_scale({2.0, -2.0}, 0.5, 1.0, 0.25)};
    st.truth.pi.resize(2, 2);
    st.truth.pi << 0.4, 0.1,
                   0.2, 0.3;
    st.covariate_law = standard_xz();
    return st;
}

ScenarioTruth scenario2() {
    ScenarioTruth st;
    st.name = "scenario2";
    st.spec.profiles = {gaussian_profile(2), gaussian_profile(3)};
    st.truth.profiles = {location_scale({-1.0, 1.0}, 0.5, 0.5, 0.75),
                         location_scale({2.0, -2.0, 0.0}, 0.5, 1.0, 0.25)};
    st.truth.pi.resize(2, 3);
    st.truth.pi << 0.1, 0.1, 0.2,
                   0.2, 0.3, 0.1;
    st.covariate_law = standard_xz();
    return st;
}

ScenarioTruth solow_synthetic() {
    ScenarioTruth st;
    st.name = "solow";

    ProfileSpec gdp;
    gdp.family = Family::gaussian;
    gdp.mean_fixed = {"sk", "sh", "ngd"};
    gdp.mean_random = {std::string(kIntercept)};
    gdp.K = 6;

    ProfileSpec growth;
    growth.family = Family::student_t;
    growth.mean_random = {std::string(kIntercept), "lnyc"};
    growth.scale_covariates = {"unempl", "fin", "infl", "open", "govcons"};
    growth.K = 2;
    st.spec.profiles = {gdp, growth};

    ProfileParameters level;
    level.lambda = Eigen::Vector3d(0.14, 0.46, -0.61);
    level.support.resize(6, 1);
    level.support << 9.64, 7.48, 8.07, 6.97, 8.59, 9.01;
    level.gamma = Eigen::VectorXd::Constant(1, -1.28);

    ProfileParameters rate;
    rate.lambda.resize(0);
    rate.support.resize(2, 2);
    rate.support << 1.05, -0.09,
                    -0.10, 0.02;
    rate.gamma.resize(6);
    rate.gamma << -1.52, 1.34, -0.31, 0.03, 0.05, -0.15;
    rate.shape = 1.69;
    st.truth.profiles = {level, rate};

    // Cell frequencies of a 6 x 2 country classification.
    st.truth.pi.resize(6, 2);
    st.truth.pi << 23, 0,
                   0, 16,
                   1, 17,
                   0, 8,
                   1, 10,
                   19, 5;
    st.truth.pi /= st.truth.pi.sum();

    st.covariate_law.covariates = {{"sk", 0.0, 1.0},     {"sh", 0.0, 1.0},   {"ngd", 0.0, 1.0},
                                   {"lnyc", 8.509, 1.268}, {"unempl", 0.0, 1.0}, {"fin", 0.0, 1.0},
                                   {"infl", 0.0, 1.0},   {"open", 0.0, 1.0}, {"govcons", 0.0, 1.0}};
    return st;
}

ScenarioTruth scenario_by_id(std::string_view id) {
    if (id == "1") return scenario1();
    if (id == "2") return scenario2();
    if (id == "solow") return solow_synthetic();
    throw DomainError("unknown scenario '" + std::string(id) + "' (expected 1, 2 or solow)");
}

}  // namespace bimix
