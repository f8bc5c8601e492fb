#include "bimix/cli.hpp"

#include "bimix/analysis.hpp"
#include "bimix/errors.hpp"
#include "bimix/io.hpp"
#include "bimix/simulator.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

namespace bimix::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::pair<int, int> parse_range(const std::string& text, const std::string& flag) {
    auto to_int = [&](std::string_view s) {
        int v = 0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || v < 1)
            throw UsageError(flag + " expects A..B or A with positive integers, got '" + text + "'");
        return v;
    };
    const auto dots = text.find("..");
    if (dots == std::string::npos) {
        const int v = to_int(text);
        return {v, v};
    }
    const int lo = to_int(std::string_view(text).substr(0, dots));
    const int hi = to_int(std::string_view(text).substr(dots + 2));
    if (hi < lo) throw UsageError(flag + " range is empty: '" + text + "'");
    return {lo, hi};
}

std::string single_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return s;
}

int resolve_jobs(int flag) {
    if (flag > 0) return flag;
    if (const char* env = std::getenv("BIMIX_JOBS")) {
        int v = 0;
        const std::string_view s(env);
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size() || v < 1)
            throw UsageError("BIMIX_JOBS must be a positive integer, got '" + std::string(s) + "'");
        return v;
    }
    return 1;
}

fs::path prepare_out_dir(const std::string& dir) {
    fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec || !fs::is_directory(p)) throw FormatError("cannot create output directory " + dir);
    return p;
}

template <typename Writer>
std::string render(Writer&& writer) {
    std::ostringstream os;
    writer(os);
    return os.str();
}

void add_em_options(CLI::App* cmd, EmControl& control) {
    cmd->add_option("--starts", control.n_starts, "Random starts of the multi-start EM")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--burn-in", control.burn_in_iterations, "EM iterations run from every start")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--max-iter", control.max_iterations, "Total EM iterations of the retained start")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--tol", control.rel_tol, "Stop when |delta loglik| / (1 + |loglik|) is below this")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bivariate location-scale mixture regression with discrete random effects", "bimix"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every command");

    EmControl control;
    std::uint64_t seed = 0;
    int jobs = 0;
    std::string scenario, data_path, model_path, fit_path, out_dir, k1_text, k2_text = "1";
    int n = 0, T = 0, reps = 0;
    bool no_se = false;

    auto* simulate = app.add_subcommand("simulate", "Simulate a panel from a canned scenario");
    simulate->add_option("--scenario", scenario, "Scenario id: 1, 2 or solow")->required()->check(CLI::IsMember({"1", "2", "solow"}));
    simulate->add_option("--n", n, "Number of units")->required()->check(CLI::PositiveNumber);
    simulate->add_option("--t", T, "Observations per unit")->required()->check(CLI::PositiveNumber);
    simulate->add_option("--seed", seed, "Random seed")->required();
    simulate->add_option("--out", out_dir, "Output directory (data.csv, truth.csv)")->required();

    auto* fit = app.add_subcommand("fit", "Fit a model by multi-start EM");
    fit->add_option("--data", data_path, "Panel CSV")->required()->check(CLI::ExistingFile);
    fit->add_option("--model", model_path, "Model spec JSON")->required()->check(CLI::ExistingFile);
    fit->add_option("--seed", seed, "Random seed for the starts")->required();
    fit->add_option("--out", out_dir, "Output directory (fit.json, posteriors.csv)")->required();
    fit->add_flag("--no-se", no_se, "Skip standard errors");
    add_em_options(fit, control);

    auto* select = app.add_subcommand("select", "Fit a grid of (K1, K2) and rank by AIC/BIC");
    select->add_option("--data", data_path, "Panel CSV")->required()->check(CLI::ExistingFile);
    select->add_option("--model", model_path, "Model spec JSON; its K values are replaced")->required()->check(CLI::ExistingFile);
    select->add_option("--k1", k1_text, "K1 range A..B")->required();
    select->add_option("--k2", k2_text, "K2 range C..D (ignored for one response)")->capture_default_str();
    select->add_option("--seed", seed, "Random seed for the starts")->required();
    select->add_option("--out", out_dir, "Output directory (selection.csv, selection.txt); table to stdout if omitted");
    select->add_option("--jobs", jobs, "Worker threads (default: BIMIX_JOBS or 1)")->check(CLI::PositiveNumber);
    add_em_options(select, control);

    auto* classify = app.add_subcommand("classify", "MAP classification from a stored fit");
    classify->add_option("--fit", fit_path, "fit.json written by the fit command")->required()->check(CLI::ExistingFile);
    classify->add_option("--data", data_path, "Classify this panel with the stored parameters instead")->check(CLI::ExistingFile);
    classify->add_option("--out", out_dir, "Output directory (assignments.csv)")->required();

    auto* benchmark = app.add_subcommand("benchmark", "Monte Carlo study of a canned scenario");
    benchmark->add_option("--scenario", scenario, "Scenario id: 1, 2 or solow")->required()->check(CLI::IsMember({"1", "2", "solow"}));
    benchmark->add_option("--n", n, "Units per replication")->required()->check(CLI::PositiveNumber);
    benchmark->add_option("--t", T, "Observations per unit")->required()->check(CLI::PositiveNumber);
    benchmark->add_option("--reps", reps, "Replications")->required()->check(CLI::Range(2, 1000000));
    benchmark->add_option("--seed", seed, "Random seed")->required();
    benchmark->add_option("--out", out_dir, "Output directory (benchmark.csv/.txt/.json); table to stdout if omitted");
    benchmark->add_option("--jobs", jobs, "Worker threads (default: BIMIX_JOBS or 1)")->check(CLI::PositiveNumber);
    add_em_options(benchmark, control);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: usage: " << single_line(e.what()) << "\n";
        return kExitValidation;
    }

    try {
        control.seed = seed;
        if (simulate->parsed()) {
            const auto st = scenario_by_id(scenario);
            const auto sim = simulate_dataset(st, n, T, seed);
            const auto dir = prepare_out_dir(out_dir);
            write_file_atomic(dir / "data.csv", render([&](std::ostream& os) { write_panel_csv(os, sim.data); }));
            write_file_atomic(dir / "truth.csv",
                              render([&](std::ostream& os) { write_truth_csv(os, sim.data, sim.true_assignments); }));
        } else if (fit->parsed()) {
            const ModelSpec spec = read_model_spec(model_path);
            const PanelDataset data = read_panel_csv(fs::path(data_path));
            const ModelDesign design = build_design(spec, data);
            FitResult result = multi_start_fit(spec, design, control);
            if (!no_se && result.failure_reason.empty())
                result.standard_errors = standard_errors(spec, design, result.params);
            const auto dir = prepare_out_dir(out_dir);
            write_file_atomic(dir / "fit.json", to_json(spec, result).dump(2) + "\n");
            write_file_atomic(dir / "posteriors.csv", render([&](std::ostream& os) { write_posteriors_csv(os, result); }));
            out << "loglik " << format_double(result.loglik) << " d " << result.d << " aic " << format_double(result.aic)
                << " bic " << format_double(result.bic) << " converged " << (result.converged ? "yes" : "no") << "\n";
            if (!result.failure_reason.empty()) throw NumericalFailure(result.failure_reason);
        } else if (select->parsed()) {
            const ModelSpec spec = read_model_spec(model_path);
            const PanelDataset data = read_panel_csv(fs::path(data_path));
            const auto table = grid_select(spec, data, parse_range(k1_text, "--k1"), parse_range(k2_text, "--k2"), control,
                                           resolve_jobs(jobs));
            const std::string text = render([&](std::ostream& os) { write_selection_text(os, table); });
            if (out_dir.empty()) {
                out << text;
            } else {
                const auto dir = prepare_out_dir(out_dir);
                write_file_atomic(dir / "selection.csv", render([&](std::ostream& os) { write_selection_csv(os, table); }));
                write_file_atomic(dir / "selection.txt", text);
            }
            if (table.best_aic < 0) throw NumericalFailure("no grid cell could be fitted");
        } else if (classify->parsed()) {
            std::ifstream in(fit_path);
            nlohmann::json j;
            try {
                in >> j;
            } catch (const nlohmann::json::exception& e) {
                throw FormatError(fit_path + ": " + e.what());
            }
            const StoredFit stored = fit_from_json(j);
            std::vector<std::string> ids = stored.fit.unit_ids;
            std::vector<Cell> cells;
            if (data_path.empty()) {
                cells = map_classify(stored.fit.posteriors);
            } else {
                const PanelDataset data = read_panel_csv(fs::path(data_path));
                const ModelDesign design = build_design(stored.spec, data);
                cells = map_classify(e_step(component_logliks(stored.spec, design, stored.fit.params), stored.fit.params.pi));
                ids = design.unit_ids;
            }
            const auto dir = prepare_out_dir(out_dir);
            write_file_atomic(dir / "assignments.csv", render([&](std::ostream& os) { write_assignments_csv(os, ids, cells); }));
        } else if (benchmark->parsed()) {
            const auto st = scenario_by_id(scenario);
            const auto report = benchmark_scenario(st, n, T, reps, control, resolve_jobs(jobs));
            const std::string text = render([&](std::ostream& os) { write_benchmark_text(os, report); });
            if (out_dir.empty()) {
                out << text;
            } else {
                const auto dir = prepare_out_dir(out_dir);
                write_file_atomic(dir / "benchmark.csv", render([&](std::ostream& os) { write_benchmark_csv(os, report); }));
                write_file_atomic(dir / "benchmark.txt", text);
                write_file_atomic(dir / "benchmark.json", to_json(report).dump(2) + "\n");
            }
            if (!report.valid) throw NumericalFailure("more than 20% of replications failed");
        }
    } catch (const ValidationError& e) {
        std::string msg;
        for (const auto& v : e.violations()) msg += (msg.empty() ? "" : "; ") + v;
        err << "error: validation: " << single_line(msg) << "\n";
        return kExitValidation;
    } catch (const UsageError& e) {
        err << "error: usage: " << single_line(e.what()) << "\n";
        return kExitValidation;
    } catch (const FormatError& e) {
        err << "error: input: " << single_line(e.what()) << "\n";
        return kExitValidation;
    } catch (const DomainError& e) {
        err << "error: domain: " << single_line(e.what()) << "\n";
        return kExitValidation;
    } catch (const FitError& e) {
        err << "error: numerical: " << single_line(e.what()) << "\n";
        return kExitNumerical;
    } catch (const std::runtime_error& e) {
        err << "error: numerical: " << single_line(e.what()) << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}

}  // namespace bimix::cli
