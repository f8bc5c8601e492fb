#pragma once

#include "bimix/model.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace bimix {

// Covariates are drawn i.i.d. Normal(mean, sd) across units and times,
// independently of each other and of the component labels.
struct CovariateLaw {
    struct Entry {
        std::string name;
        double mean = 0.0;
        double sd = 1.0;
    };
    std::vector<Entry> covariates;

    std::string description() const;
};

struct ScenarioTruth {
    std::string name;
    ModelSpec spec;
    ParameterSet truth;
    CovariateLaw covariate_law;
};

struct SimulatedPanel {
    PanelDataset data;
    std::vector<Cell> true_assignments;
};

/// Balanced panel of n units observed at times 1..T. Unit i draws its cell,
/// covariates and responses from derive_stream(seed, i), so a unit's data do
/// not depend on n.
SimulatedPanel simulate_dataset(const ScenarioTruth& st, int n, int T, std::uint64_t seed);

// Two gaussian profiles, K1 = K2 = 2.
ScenarioTruth scenario1();
// As scenario1 with a third profile-2 support point at 0, K2 = 3.
ScenarioTruth scenario2();
// GDP level (gaussian, K1 = 6) and growth (student_t, K2 = 2) profiles with
// coefficients of an empirical bivariate growth fit.
ScenarioTruth solow_synthetic();

// "1", "2" or "solow".
ScenarioTruth scenario_by_id(std::string_view id);

}  // namespace bimix
