#include "bimix/analysis.hpp"

#include "bimix/errors.hpp"
#include "bimix/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <thread>

namespace bimix {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Runs task(0..count-1) on up to `jobs` threads. Each index is handled once.
template <typename Task>
void parallel_for(int count, int jobs, Task&& task) {
    jobs = std::clamp(jobs, 1, std::max(count, 1));
    if (jobs == 1) {
        for (int i = 0; i < count; ++i) task(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    for (int w = 0; w < jobs; ++w)
        workers.emplace_back([&] {
            for (int i = next++; i < count; i = next++) task(i);
        });
    for (auto& t : workers) t.join();
}

double pairs(double m) { return 0.5 * m * (m - 1.0); }

}  // namespace

InformationCriteria information_criteria(double loglik, int d, std::size_t n) {
    if (n < 1) throw DomainError("information criteria need n >= 1");
    if (d < 0) throw DomainError("parameter count must be non-negative");
    return {-2.0 * loglik + 2.0 * d, -2.0 * loglik + d * std::log(static_cast<double>(n))};
}

std::vector<Cell> map_classify(const PosteriorWeights& posteriors) {
    std::vector<Cell> out;
    out.reserve(posteriors.n_units());
    for (Eigen::Index i = 0; i < posteriors.joint.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < posteriors.joint.cols(); ++c)
            if (posteriors.joint(i, c) > posteriors.joint(i, best)) best = c;
        out.push_back({static_cast<int>(best / posteriors.K2), static_cast<int>(best % posteriors.K2)});
    }
    return out;
}

double rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw DomainError("partitions must have equal length");
    if (a.size() < 2) throw DomainError("rand index needs at least two units");
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> rows, cols;
    for (std::size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}] += 1.0;
        rows[a[i]] += 1.0;
        cols[b[i]] += 1.0;
    }
    double together_both = 0.0, together_a = 0.0, together_b = 0.0;
    for (const auto& [_, m] : joint) together_both += pairs(m);
    for (const auto& [_, m] : rows) together_a += pairs(m);
    for (const auto& [_, m] : cols) together_b += pairs(m);
    const double total = pairs(static_cast<double>(a.size()));
    return (total - together_a - together_b + 2.0 * together_both) / total;
}

double rand_index(const std::vector<Cell>& a, const std::vector<Cell>& b) {
    auto labels = [](const std::vector<Cell>& cells) {
        std::vector<int> out;
        out.reserve(cells.size());
        for (const auto& c : cells) out.push_back(c.k1 * 65536 + c.k2);
        return out;
    };
    return rand_index(labels(a), labels(b));
}

std::vector<std::vector<int>> align_components(const ParameterSet& estimated, const ParameterSet& truth) {
    if (estimated.profiles.size() != truth.profiles.size()) throw DomainError("profile counts differ");
    std::vector<std::vector<int>> perms;
    for (std::size_t j = 0; j < truth.profiles.size(); ++j) {
        const auto& est = estimated.profiles[j].support;
        const auto& tru = truth.profiles[j].support;
        if (est.rows() != tru.rows() || est.cols() != tru.cols())
            throw DomainError("support dimensions differ in profile " + std::to_string(j + 1));
        if (est.rows() > 9) throw DomainError("exhaustive alignment supports at most 9 components");
        std::vector<int> perm(static_cast<std::size_t>(est.rows()));
        std::iota(perm.begin(), perm.end(), 0);
        std::vector<int> best = perm;
        double best_cost = std::numeric_limits<double>::infinity();
        do {
            double cost = 0.0;
            for (std::size_t k = 0; k < perm.size(); ++k)
                cost += (est.row(perm[k]) - tru.row(static_cast<Eigen::Index>(k))).squaredNorm();
            if (cost < best_cost) {
                best_cost = cost;
                best = perm;
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
        perms.push_back(std::move(best));
    }
    return perms;
}

ParameterSet apply_alignment(const ParameterSet& estimated, const std::vector<std::vector<int>>& perms) {
    ParameterSet out = estimated;
    for (std::size_t j = 0; j < perms.size(); ++j) out = permute_components(out, static_cast<int>(j), perms[j]);
    return out;
}

SelectionTable grid_select(const ModelSpec& spec_template, const PanelDataset& data, std::pair<int, int> k1_range,
                           std::pair<int, int> k2_range, const EmControl& control, int jobs) {
    if (k1_range.first < 1 || k1_range.second < k1_range.first) throw DomainError("invalid K1 range");
    if (spec_template.J() == 1) k2_range = {1, 1};
    if (k2_range.first < 1 || k2_range.second < k2_range.first) throw DomainError("invalid K2 range");

    SelectionTable table;
    table.n_units = data.n_units();
    for (int k1 = k1_range.first; k1 <= k1_range.second; ++k1)
        for (int k2 = k2_range.first; k2 <= k2_range.second; ++k2) {
            SelectionRow row;
            row.K1 = k1;
            row.K2 = k2;
            table.rows.push_back(row);
        }

    parallel_for(static_cast<int>(table.rows.size()), jobs, [&](int r) {
        SelectionRow& row = table.rows[static_cast<std::size_t>(r)];
        ModelSpec spec = spec_template;
        spec.profiles[0].K = row.K1;
        if (spec.J() > 1) spec.profiles[1].K = row.K2;
        row.d = count_parameters(spec);
        try {
            const FitResult fit = multi_start_fit(spec, data, control);
            row.loglik = fit.loglik;
            row.aic = fit.aic;
            row.bic = fit.bic;
            row.converged = fit.converged;
        } catch (const std::exception& e) {
            row.loglik = row.aic = row.bic = kNaN;
            row.converged = false;
            row.error = e.what();
        }
    });

    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (!std::isfinite(row.aic)) continue;
        if (table.best_aic < 0 || row.aic < table.rows[static_cast<std::size_t>(table.best_aic)].aic)
            table.best_aic = static_cast<int>(r);
        if (table.best_bic < 0 || row.bic < table.rows[static_cast<std::size_t>(table.best_bic)].bic)
            table.best_bic = static_cast<int>(r);
    }
    return table;
}

std::vector<NamedParameter> flatten_parameters(const ModelSpec& spec, const ParameterSet& params) {
    std::vector<NamedParameter> out;
    for (int j = 0; j < spec.J(); ++j) {
        const auto& prof = spec.profiles[j];
        const auto& p = params.profiles[j];
        const std::string tag = std::to_string(j + 1);
        for (Eigen::Index k = 0; k < p.support.rows(); ++k)
            for (Eigen::Index c = 0; c < p.support.cols(); ++c) {
                std::string name = "u" + tag + "[" + std::to_string(k + 1) + "]";
                if (p.support.cols() > 1) name += ":" + prof.mean_random[static_cast<std::size_t>(c)];
                out.push_back({name, p.support(k, c)});
            }
        for (Eigen::Index a = 0; a < p.lambda.size(); ++a)
            out.push_back({"lambda" + tag + ":" + prof.mean_fixed[static_cast<std::size_t>(a)], p.lambda(a)});
    }
    for (int j = 0; j < spec.J(); ++j) {
        const auto& prof = spec.profiles[j];
        const auto& p = params.profiles[j];
        const std::string tag = std::to_string(j + 1);
        for (Eigen::Index a = 0; a < p.gamma.size(); ++a)
            out.push_back({"gamma" + tag + ":" + (a == 0 ? std::string("(intercept)") : prof.scale_covariates[static_cast<std::size_t>(a - 1)]),
                           p.gamma(a)});
        if (prof.has_shape()) out.push_back({"shape" + tag, p.shape.value_or(kNaN)});
    }
    for (Eigen::Index k1 = 0; k1 < params.pi.rows(); ++k1)
        for (Eigen::Index k2 = 0; k2 < params.pi.cols(); ++k2) {
            std::string name = "pi[" + std::to_string(k1 + 1) + "]";
            if (spec.J() > 1) name += "[" + std::to_string(k2 + 1) + "]";
            out.push_back({name, params.pi(k1, k2)});
        }
    return out;
}

const ParameterSummary& BenchmarkReport::at(std::string_view name) const {
    for (const auto& p : parameters)
        if (p.name == name) return p;
    throw DomainError("no parameter named '" + std::string(name) + "' in report");
}

BenchmarkReport benchmark_scenario(const ScenarioTruth& st, int n, int T, int replications, const EmControl& control,
                                   int jobs) {
    if (replications < 2) throw DomainError("benchmark needs at least two replications");

    struct Replication {
        bool failed = false;
        bool converged = false;
        std::vector<double> values;
        double rand = 0.0;
    };
    std::vector<Replication> reps(static_cast<std::size_t>(replications));

    parallel_for(replications, jobs, [&](int r) {
        auto& rep = reps[static_cast<std::size_t>(r)];
        const auto sim = simulate_dataset(st, n, T, derive_seed(control.seed, static_cast<std::uint64_t>(r)));
        EmControl ctrl = control;
        ctrl.seed = derive_seed(control.seed, 0x100000000ULL + static_cast<std::uint64_t>(r));
        try {
            const FitResult fit = multi_start_fit(st.spec, sim.data, ctrl);
            if (!fit.failure_reason.empty()) {
                rep.failed = true;
                return;
            }
            rep.converged = fit.converged;
            const ParameterSet aligned = apply_alignment(fit.params, align_components(fit.params, st.truth));
            for (const auto& p : flatten_parameters(st.spec, aligned)) rep.values.push_back(p.value);
            rep.rand = rand_index(sim.true_assignments, fit.assignments);
        } catch (const std::runtime_error&) {
            rep.failed = true;
        }
    });

    BenchmarkReport report;
    report.scenario = st.name;
    report.n = n;
    report.T = T;
    report.replications = replications;
    const auto truth = flatten_parameters(st.spec, st.truth);
    std::vector<double> sum(truth.size(), 0.0), sum_sq(truth.size(), 0.0);
    double rand_sum = 0.0;
    int ok = 0;
    for (const auto& rep : reps) {
        if (rep.failed) {
            ++report.failures;
            continue;
        }
        if (!rep.converged) ++report.nonconverged;
        ++ok;
        rand_sum += rep.rand;
        for (std::size_t p = 0; p < truth.size(); ++p) sum[p] += rep.values[p];
    }
    for (std::size_t p = 0; p < truth.size(); ++p) {
        const double mean = ok > 0 ? sum[p] / ok : kNaN;
        for (const auto& rep : reps)
            if (!rep.failed) sum_sq[p] += (rep.values[p] - mean) * (rep.values[p] - mean);
        ParameterSummary s;
        s.name = truth[p].name;
        s.truth = truth[p].value;
        s.mean = mean;
        s.bias = mean - s.truth;
        s.sd = ok > 1 ? std::sqrt(sum_sq[p] / (ok - 1)) : kNaN;
        report.parameters.push_back(s);
    }
    report.mean_rand_index = ok > 0 ? rand_sum / ok : kNaN;
    report.valid = report.failures <= 0.2 * replications;
    return report;
}

SolowShares recover_solow_shares(double lambda_sk, double lambda_sh) {
    if (!std::isfinite(lambda_sk) || !std::isfinite(lambda_sh)) throw DomainError("coefficients must be finite");
    if (lambda_sk < 0.0) throw DomainError("lambda_sk >= 0 violated");
    if (lambda_sh < 0.0) throw DomainError("lambda_sh >= 0 violated");
    if (!(1.0 + lambda_sk + lambda_sh > 0.0)) throw DomainError("1 + lambda_sk + lambda_sh > 0 violated");
    const double s = 1.0 / (1.0 + lambda_sk + lambda_sh);
    return {lambda_sk * s, lambda_sh * s};
}

}  // namespace bimix
