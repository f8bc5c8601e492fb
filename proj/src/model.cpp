#include "bimix/model.hpp"

#include "bimix/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace bimix {

ValidationError::ValidationError(std::vector<std::string> violations)
    : std::runtime_error([&] {
          std::string msg = "validation failed";
          for (const auto& v : violations) msg += "; " + v;
          return msg;
      }()),
      violations_(std::move(violations)) {}

DegenerateComponent::DegenerateComponent(int profile, int component, double total_weight)
    : std::runtime_error("degenerate component: profile " + std::to_string(profile + 1) +
                         ", component " + std::to_string(component + 1) +
                         " has total weight " + std::to_string(total_weight)),
      profile_(profile),
      component_(component),
      total_weight_(total_weight) {}

FitError::FitError(std::vector<std::string> reasons)
    : std::runtime_error([&] {
          std::string msg = "all starts failed";
          for (std::size_t s = 0; s < reasons.size(); ++s)
              if (!reasons[s].empty()) msg += "; start " + std::to_string(s + 1) + ": " + reasons[s];
          return msg;
      }()),
      reasons_(std::move(reasons)) {}

double LinkFunction::apply(double theta) const {
    if (kind == Link::identity) return theta;
    if (!(theta > 0.0)) throw DomainError("log link requires a positive argument");
    return std::log(theta);
}

double LinkFunction::inverse(double eta) const {
    return kind == Link::identity ? eta : std::exp(eta);
}

double LinkFunction::derivative(double theta) const {
    if (kind == Link::identity) return 1.0;
    if (!(theta > 0.0)) throw DomainError("log link requires a positive argument");
    return 1.0 / theta;
}

std::string_view to_string(Link link) {
    return link == Link::identity ? "identity" : "log";
}

Link parse_link(std::string_view name) {
    if (name == "identity") return Link::identity;
    if (name == "log") return Link::log;
    throw DomainError("unknown link function '" + std::string(name) + "'");
}

std::string_view to_string(Family family) {
    return family == Family::gaussian ? "gaussian" : "student_t";
}

Family parse_family(std::string_view name) {
    if (name == "gaussian") return Family::gaussian;
    if (name == "student_t") return Family::student_t;
    throw DomainError("unknown family '" + std::string(name) + "'");
}

std::optional<std::size_t> ProfileSpec::intercept_column() const {
    auto it = std::find(mean_random.begin(), mean_random.end(), kIntercept);
    if (it == mean_random.end()) return std::nullopt;
    return static_cast<std::size_t>(it - mean_random.begin());
}

std::size_t PanelDataset::n_observations() const noexcept {
    std::size_t total = 0;
    for (const auto& u : units) total += u.observations.size();
    return total;
}

std::optional<std::size_t> PanelDataset::covariate_index(std::string_view name) const {
    auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
    if (it == covariate_names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - covariate_names.begin());
}

Eigen::VectorXd ParameterSet::marginal(int j) const {
    return j == 0 ? Eigen::VectorXd(pi.rowwise().sum()) : Eigen::VectorXd(pi.colwise().sum().transpose());
}

ParameterSet make_parameter_set(const ModelSpec& spec) {
    ParameterSet p;
    for (const auto& prof : spec.profiles) {
        ProfileParameters pp;
        pp.lambda = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(prof.n_fixed()));
        pp.support = Eigen::MatrixXd::Zero(prof.K, static_cast<Eigen::Index>(prof.n_random()));
        pp.gamma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(prof.n_scale()));
        if (prof.has_shape()) pp.shape = std::log(10.0);
        p.profiles.push_back(std::move(pp));
    }
    p.pi = Eigen::MatrixXd::Constant(spec.K(0), spec.K(1), 1.0 / spec.n_cells());
    return p;
}

PosteriorWeights PosteriorWeights::from_joint(Eigen::MatrixXd joint, int K1, int K2) {
    PosteriorWeights w;
    w.K1 = K1;
    w.K2 = K2;
    const Eigen::Index n = joint.rows();
    w.marginal1 = Eigen::MatrixXd::Zero(n, K1);
    w.marginal2 = Eigen::MatrixXd::Zero(n, K2);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int k1 = 0; k1 < K1; ++k1)
            for (int k2 = 0; k2 < K2; ++k2) {
                const double v = joint(i, k1 * K2 + k2);
                w.marginal1(i, k1) += v;
                w.marginal2(i, k2) += v;
            }
    w.joint = std::move(joint);
    return w;
}

std::vector<std::string> validate(const ModelSpec& spec) {
    std::vector<std::string> out;
    if (spec.J() < 1 || spec.J() > 2) {
        out.push_back("model must have 1 or 2 profiles, got " + std::to_string(spec.J()));
        return out;
    }
    for (int j = 0; j < spec.J(); ++j) {
        const auto& p = spec.profiles[j];
        const std::string where = "profile " + std::to_string(j + 1) + ": ";
        if (p.K < 1) out.push_back(where + "K must be >= 1 (got " + std::to_string(p.K) + ")");
        if (p.mean_random.empty()) out.push_back(where + "mean_random must not be empty");
        if (!p.intercept_column())
            out.push_back(where + "mean_random must contain \"intercept\"");
        for (const auto& name : p.mean_fixed) {
            if (std::find(p.mean_random.begin(), p.mean_random.end(), name) != p.mean_random.end())
                out.push_back(where + "covariate \"" + name + "\" is both fixed and random");
            if (name == kIntercept)
                out.push_back(where + "\"intercept\" belongs in mean_random, not mean_fixed");
        }
        for (const auto& name : p.scale_covariates)
            if (name == kIntercept)
                out.push_back(where + "scale intercept is implicit; remove \"intercept\" from scale_covariates");
        auto dup = [&](const std::vector<std::string>& names, const char* label) {
            std::set<std::string> seen;
            for (const auto& n : names)
                if (!seen.insert(n).second)
                    out.push_back(where + "duplicate covariate \"" + n + "\" in " + label);
        };
        dup(p.mean_fixed, "mean_fixed");
        dup(p.mean_random, "mean_random");
        dup(p.scale_covariates, "scale_covariates");
        if (p.mean_link.kind != Link::identity) out.push_back(where + "mean_link must be identity");
        if (p.scale_link.kind != Link::log) out.push_back(where + "scale_link must be log");
        if (p.shape_link.kind != Link::log) out.push_back(where + "shape_link must be log");
    }
    return out;
}

std::vector<std::string> validate(const ModelSpec& spec, const PanelDataset& data) {
    std::vector<std::string> out = validate(spec);
    if (spec.J() != data.n_responses)
        out.push_back("model has " + std::to_string(spec.J()) + " profiles but data has " +
                      std::to_string(data.n_responses) + " responses");
    if (data.units.empty()) out.push_back("dataset has no units");

    std::set<std::string> ids;
    for (const auto& u : data.units) {
        if (!ids.insert(u.id).second) out.push_back("duplicate unit id \"" + u.id + "\"");
        if (u.observations.empty()) out.push_back("unit \"" + u.id + "\" has no observations");
        for (std::size_t t = 1; t < u.observations.size(); ++t)
            if (u.observations[t].time <= u.observations[t - 1].time) {
                out.push_back("unit \"" + u.id + "\": times are not strictly increasing");
                break;
            }
    }

    // Every covariate named anywhere in the spec, in first-mention order.
    std::vector<std::string> needed;
    auto need = [&](const std::vector<std::string>& names) {
        for (const auto& n : names)
            if (n != kIntercept && std::find(needed.begin(), needed.end(), n) == needed.end())
                needed.push_back(n);
    };
    for (const auto& p : spec.profiles) {
        need(p.mean_fixed);
        need(p.mean_random);
        need(p.scale_covariates);
    }
    for (const auto& name : needed) {
        const auto col = data.covariate_index(name);
        for (const auto& u : data.units) {
            const bool missing = !col || std::any_of(u.observations.begin(), u.observations.end(),
                                                     [&](const Observation& o) {
                                                         return *col >= o.covariates.size() ||
                                                                !std::isfinite(o.covariates[*col]);
                                                     });
            if (missing) {
                out.push_back("covariate \"" + name + "\" missing or non-finite (first offending unit \"" +
                              u.id + "\")");
                break;
            }
        }
    }

    const auto J = static_cast<std::size_t>(std::max(spec.J(), 0));
    for (const auto& u : data.units) {
        const bool bad = std::any_of(u.observations.begin(), u.observations.end(), [&](const Observation& o) {
            if (o.y.size() < J) return true;
            for (std::size_t j = 0; j < J; ++j)
                if (!std::isfinite(o.y[j])) return true;
            return false;
        });
        if (bad) {
            out.push_back("responses missing or non-finite (first offending unit \"" + u.id + "\")");
            break;
        }
    }
    return out;
}

int count_parameters(const ModelSpec& spec) {
    int d = 0;
    int cells = 1;
    for (const auto& p : spec.profiles) {
        d += static_cast<int>(p.n_fixed()) + p.K * static_cast<int>(p.n_random()) +
             static_cast<int>(p.n_scale()) + (p.has_shape() ? 1 : 0);
        cells *= p.K;
    }
    return d + cells - 1;
}

ParameterSet permute_components(const ParameterSet& params, int j, const std::vector<int>& perm) {
    ParameterSet out = params;
    auto& support = out.profiles.at(j).support;
    if (static_cast<Eigen::Index>(perm.size()) != support.rows())
        throw DomainError("permutation length does not match the number of components");
    std::vector<bool> seen(perm.size(), false);
    for (int k : perm) {
        if (k < 0 || k >= static_cast<int>(perm.size()) || seen[static_cast<std::size_t>(k)])
            throw DomainError("not a permutation");
        seen[static_cast<std::size_t>(k)] = true;
    }
    for (std::size_t k = 0; k < perm.size(); ++k) {
        support.row(static_cast<Eigen::Index>(k)) = params.profiles[j].support.row(perm[k]);
        if (j == 0)
            out.pi.row(static_cast<Eigen::Index>(k)) = params.pi.row(perm[k]);
        else
            out.pi.col(static_cast<Eigen::Index>(k)) = params.pi.col(perm[k]);
    }
    return out;
}

ParameterSet canonicalize(const ModelSpec& spec, const ParameterSet& params) {
    ParameterSet out = params;
    for (int j = 0; j < spec.J(); ++j) {
        const auto& support = out.profiles[j].support;
        const Eigen::Index K = support.rows();
        const auto lead = static_cast<Eigen::Index>(spec.profiles[j].intercept_column().value_or(0));
        std::vector<int> perm(static_cast<std::size_t>(K));
        std::iota(perm.begin(), perm.end(), 0);
        std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) {
            if (support(a, lead) != support(b, lead)) return support(a, lead) < support(b, lead);
            for (Eigen::Index c = 0; c < support.cols(); ++c)
                if (support(a, c) != support(b, c)) return support(a, c) < support(b, c);
            return false;
        });
        out = permute_components(out, j, perm);
    }
    return out;
}

}  // namespace bimix
