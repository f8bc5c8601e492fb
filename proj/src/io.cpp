#include "bimix/io.hpp"

#include "bimix/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace bimix {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv_line(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> fields;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t");
    return s.substr(first, last - first + 1);
}

double parse_double(const std::string& raw, std::size_t line, const std::string& column) {
    const std::string s = trim(raw);
    if (s.empty() || s == "NA" || s == "nan" || s == "NaN") return kNaN;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw FormatError("line " + std::to_string(line) + ": column " + column + ": not a number: '" + s + "'");
    return v;
}

int parse_int(const std::string& raw, std::size_t line, const std::string& column) {
    const std::string s = trim(raw);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        throw FormatError("line " + std::to_string(line) + ": column " + column + ": not an integer: '" + s + "'");
    return v;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    return in;
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

json vector_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index a = 0; a < v.size(); ++a) out.push_back(number(v(a)));
    return out;
}

json matrix_json(const Eigen::MatrixXd& m) {
    json out = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vector_json(m.row(r).transpose()));
    return out;
}

Eigen::VectorXd vector_from(const json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t a = 0; a < j.size(); ++a) v(static_cast<Eigen::Index>(a)) = number_from(j[a]);
    return v;
}

Eigen::MatrixXd matrix_from(const json& j, Eigen::Index cols_if_empty = 0) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : cols_if_empty;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(r)].size()) != cols)
            throw FormatError("ragged matrix in JSON");
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = number_from(j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
    }
    return m;
}

// Column header of joint cell (k1, k2), 1-based.
std::string cell_header(int k1, int k2) { return "w_" + std::to_string(k1 + 1) + std::to_string(k2 + 1); }

std::string pad(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string fixed(double v, int digits) {
    if (!std::isfinite(v)) return "NA";
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

}  // namespace

std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

PanelDataset read_panel_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty panel file");
    auto header = split_csv_line(line);
    for (auto& h : header) h = trim(h);
    if (header.size() < 3 || header[0] != "unit" || header[1] != "time" || header[2] != "y1")
        throw FormatError("panel header must start with unit,time,y1");

    PanelDataset data;
    data.n_responses = header.size() > 3 && header[3] == "y2" ? 2 : 1;
    const std::size_t first_cov = 2 + static_cast<std::size_t>(data.n_responses);
    data.covariate_names.assign(header.begin() + static_cast<std::ptrdiff_t>(first_cov), header.end());
    for (std::size_t a = 0; a < data.covariate_names.size(); ++a)
        for (std::size_t b = 0; b < a; ++b)
            if (data.covariate_names[a] == data.covariate_names[b])
                throw FormatError("duplicate column '" + data.covariate_names[a] + "'");

    std::map<std::string, std::size_t> index;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw FormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                              " fields, found " + std::to_string(fields.size()));
        const std::string id = trim(fields[0]);
        if (id.empty()) throw FormatError("line " + std::to_string(line_no) + ": empty unit id");
        auto [it, inserted] = index.try_emplace(id, data.units.size());
        if (inserted) data.units.push_back(Unit{id, {}});
        Observation o;
        o.time = parse_int(fields[1], line_no, "time");
        for (int j = 0; j < data.n_responses; ++j)
            o.y.push_back(parse_double(fields[2 + static_cast<std::size_t>(j)], line_no, header[2 + static_cast<std::size_t>(j)]));
        for (std::size_t c = first_cov; c < fields.size(); ++c) o.covariates.push_back(parse_double(fields[c], line_no, header[c]));
        data.units[it->second].observations.push_back(std::move(o));
    }
    for (auto& u : data.units)
        std::stable_sort(u.observations.begin(), u.observations.end(),
                         [](const Observation& a, const Observation& b) { return a.time < b.time; });
    return data;
}

PanelDataset read_panel_csv(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_panel_csv(in);
}

void write_panel_csv(std::ostream& out, const PanelDataset& data) {
    out << "unit,time";
    for (int j = 0; j < data.n_responses; ++j) out << ",y" << j + 1;
    for (const auto& c : data.covariate_names) out << ',' << c;
    out << '\n';
    for (const auto& u : data.units)
        for (const auto& o : u.observations) {
            out << u.id << ',' << o.time;
            for (double y : o.y) out << ',' << format_double(y);
            for (double x : o.covariates) out << ',' << (std::isnan(x) ? std::string() : format_double(x));
            out << '\n';
        }
}

void write_truth_csv(std::ostream& out, const PanelDataset& data, const std::vector<Cell>& cells) {
    if (cells.size() != data.n_units()) throw DomainError("one true cell per unit required");
    out << "unit,true_k1,true_k2\n";
    for (std::size_t i = 0; i < cells.size(); ++i)
        out << data.units[i].id << ',' << cells[i].k1 + 1 << ',' << cells[i].k2 + 1 << '\n';
}

std::vector<Cell> read_truth_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || trim(split_csv_line(line).at(0)) != "unit") throw FormatError("bad truth header");
    std::vector<Cell> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 3) throw FormatError("line " + std::to_string(line_no) + ": expected 3 fields");
        out.push_back({parse_int(f[1], line_no, "true_k1") - 1, parse_int(f[2], line_no, "true_k2") - 1});
    }
    return out;
}

json to_json(const ModelSpec& spec) {
    json profiles = json::array();
    for (const auto& p : spec.profiles)
        profiles.push_back({{"family", to_string(p.family)},
                            {"mean_fixed", p.mean_fixed},
                            {"mean_random", p.mean_random},
                            {"scale_covariates", p.scale_covariates},
                            {"mean_link", to_string(p.mean_link.kind)},
                            {"scale_link", to_string(p.scale_link.kind)},
                            {"shape_link", to_string(p.shape_link.kind)},
                            {"K", p.K}});
    return {{"profiles", profiles}};
}

ModelSpec model_spec_from_json(const json& j) {
    ModelSpec spec;
    try {
        for (const auto& p : j.at("profiles")) {
            ProfileSpec ps;
            ps.family = parse_family(p.at("family").get<std::string>());
            ps.mean_fixed = p.value("mean_fixed", std::vector<std::string>{});
            ps.mean_random = p.value("mean_random", std::vector<std::string>{std::string(kIntercept)});
            ps.scale_covariates = p.value("scale_covariates", std::vector<std::string>{});
            ps.mean_link.kind = parse_link(p.value("mean_link", std::string("identity")));
            ps.scale_link.kind = parse_link(p.value("scale_link", std::string("log")));
            ps.shape_link.kind = parse_link(p.value("shape_link", std::string("log")));
            ps.K = p.value("K", 1);
            spec.profiles.push_back(std::move(ps));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("model spec: ") + e.what());
    } catch (const DomainError& e) {
        throw FormatError(std::string("model spec: ") + e.what());
    }
    if (auto problems = validate(spec); !problems.empty()) throw ValidationError(std::move(problems));
    return spec;
}

ModelSpec read_model_spec(const std::filesystem::path& path) {
    auto in = open_input(path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return model_spec_from_json(j);
}

json to_json(const ParameterSet& params) {
    json profiles = json::array();
    for (const auto& p : params.profiles) {
        json jp{{"lambda", vector_json(p.lambda)}, {"support", matrix_json(p.support)}, {"gamma", vector_json(p.gamma)}};
        jp["shape"] = p.shape ? number(*p.shape) : json(nullptr);
        profiles.push_back(std::move(jp));
    }
    return {{"profiles", profiles}, {"pi", matrix_json(params.pi)}};
}

ParameterSet parameter_set_from_json(const json& j) {
    ParameterSet out;
    for (const auto& p : j.at("profiles")) {
        ProfileParameters pp;
        pp.lambda = vector_from(p.at("lambda"));
        pp.support = matrix_from(p.at("support"));
        pp.gamma = vector_from(p.at("gamma"));
        if (p.contains("shape") && !p["shape"].is_null()) pp.shape = p["shape"].get<double>();
        out.profiles.push_back(std::move(pp));
    }
    out.pi = matrix_from(j.at("pi"));
    return out;
}

json to_json(const ModelSpec& spec, const FitResult& fit) {
    json j;
    j["model"] = to_json(spec);
    j["parameters"] = to_json(fit.params);
    j["loglik"] = number(fit.loglik);
    j["loglik_trace"] = json::array();
    for (double v : fit.loglik_trace) j["loglik_trace"].push_back(number(v));
    j["converged"] = fit.converged;
    j["failure_reason"] = fit.failure_reason;
    j["n_iterations"] = fit.n_iterations;
    j["n_units"] = fit.unit_ids.size();
    j["d"] = fit.d;
    j["aic"] = number(fit.aic);
    j["bic"] = number(fit.bic);
    if (fit.standard_errors) {
        j["standard_errors"] = to_json(fit.standard_errors->values);
        j["standard_errors"]["not_positive_definite"] = fit.standard_errors->not_positive_definite;
    } else {
        j["standard_errors"] = nullptr;
    }
    j["start_logliks"] = json::array();
    for (double v : fit.start_logliks) j["start_logliks"].push_back(number(v));
    j["unit_ids"] = fit.unit_ids;
    j["posteriors"] = {{"K1", fit.posteriors.K1}, {"K2", fit.posteriors.K2}, {"joint", matrix_json(fit.posteriors.joint)}};
    j["assignments"] = json::array();
    for (const auto& c : fit.assignments) j["assignments"].push_back({c.k1 + 1, c.k2 + 1});
    return j;
}

StoredFit fit_from_json(const json& j) {
    StoredFit out;
    try {
        out.spec = model_spec_from_json(j.at("model"));
        FitResult& fit = out.fit;
        fit.params = parameter_set_from_json(j.at("parameters"));
        fit.loglik = number_from(j.at("loglik"));
        for (const auto& v : j.at("loglik_trace")) fit.loglik_trace.push_back(number_from(v));
        fit.converged = j.at("converged").get<bool>();
        fit.failure_reason = j.value("failure_reason", std::string());
        fit.n_iterations = j.at("n_iterations").get<int>();
        fit.d = j.at("d").get<int>();
        fit.aic = number_from(j.at("aic"));
        fit.bic = number_from(j.at("bic"));
        if (j.contains("standard_errors") && !j["standard_errors"].is_null()) {
            StandardErrors se;
            se.values = parameter_set_from_json(j["standard_errors"]);
            se.not_positive_definite = j["standard_errors"].value("not_positive_definite", false);
            fit.standard_errors = std::move(se);
        }
        for (const auto& v : j.value("start_logliks", json::array())) fit.start_logliks.push_back(number_from(v));
        fit.unit_ids = j.at("unit_ids").get<std::vector<std::string>>();
        const auto& post = j.at("posteriors");
        const int K1 = post.at("K1").get<int>(), K2 = post.at("K2").get<int>();
        fit.posteriors = PosteriorWeights::from_joint(matrix_from(post.at("joint"), Eigen::Index{K1} * K2), K1, K2);
        for (const auto& c : j.at("assignments")) fit.assignments.push_back({c.at(0).get<int>() - 1, c.at(1).get<int>() - 1});
    } catch (const json::exception& e) {
        throw FormatError(std::string("fit result: ") + e.what());
    }
    if (out.fit.unit_ids.size() != out.fit.posteriors.n_units())
        throw FormatError("fit result: unit_ids and posteriors disagree in length");
    return out;
}

void write_posteriors_csv(std::ostream& out, const FitResult& fit) {
    const auto& post = fit.posteriors;
    out << "unit,k1,k2";
    for (int k1 = 0; k1 < post.K1; ++k1)
        for (int k2 = 0; k2 < post.K2; ++k2) out << ',' << cell_header(k1, k2);
    out << '\n';
    for (std::size_t i = 0; i < fit.unit_ids.size(); ++i) {
        out << fit.unit_ids[i] << ',' << fit.assignments[i].k1 + 1 << ',' << fit.assignments[i].k2 + 1;
        for (Eigen::Index c = 0; c < post.joint.cols(); ++c)
            out << ',' << format_double(post.joint(static_cast<Eigen::Index>(i), c));
        out << '\n';
    }
}

void write_assignments_csv(std::ostream& out, const std::vector<std::string>& unit_ids, const std::vector<Cell>& cells) {
    out << "unit,k1,k2\n";
    for (std::size_t i = 0; i < cells.size(); ++i) out << unit_ids[i] << ',' << cells[i].k1 + 1 << ',' << cells[i].k2 + 1 << '\n';
}

void write_selection_csv(std::ostream& out, const SelectionTable& table) {
    out << "K1,K2,loglik,d,aic,bic,converged,best_aic,best_bic,error\n";
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        out << row.K1 << ',' << row.K2 << ',' << format_double(row.loglik) << ',' << row.d << ','
            << format_double(row.aic) << ',' << format_double(row.bic) << ',' << (row.converged ? 1 : 0) << ','
            << (static_cast<int>(r) == table.best_aic ? 1 : 0) << ',' << (static_cast<int>(r) == table.best_bic ? 1 : 0)
            << ',' << row.error << '\n';
    }
}

void write_selection_text(std::ostream& out, const SelectionTable& table) {
    out << "Model selection, n = " << table.n_units << " units\n";
    out << pad("K1", 4) << pad("K2", 4) << pad("logL", 12) << pad("d", 5) << pad("AIC", 12) << pad("BIC", 12) << "\n";
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        std::string flags;
        if (static_cast<int>(r) == table.best_aic) flags += " <AIC";
        if (static_cast<int>(r) == table.best_bic) flags += " <BIC";
        if (!row.error.empty()) flags += " failed";
        else if (!row.converged) flags += " not converged";
        out << pad(std::to_string(row.K1), 4) << pad(std::to_string(row.K2), 4) << pad(fixed(row.loglik, 2), 12)
            << pad(std::to_string(row.d), 5) << pad(fixed(row.aic, 2), 12) << pad(fixed(row.bic, 2), 12) << flags << "\n";
    }
}

void write_benchmark_csv(std::ostream& out, const BenchmarkReport& report) {
    out << "parameter,true,estimate,bias,sd\n";
    for (const auto& p : report.parameters)
        out << p.name << ',' << format_double(p.truth) << ',' << format_double(p.mean) << ',' << format_double(p.bias)
            << ',' << format_double(p.sd) << '\n';
}

void write_benchmark_text(std::ostream& out, const BenchmarkReport& report) {
    out << "Simulation results: " << report.scenario << ", n=" << report.n << ", T=" << report.T
        << ", replications=" << report.replications << "\n";
    std::size_t width = 9;
    for (const auto& p : report.parameters) width = std::max(width, p.name.size());
    out << std::string(width, ' ') << pad("True", 9) << pad("Estimate", 10) << pad("Bias", 10) << pad("Std. dev.", 11)
        << "\n";
    for (const auto& p : report.parameters)
        out << p.name << std::string(width - p.name.size(), ' ') << pad(fixed(p.truth, 2), 9) << pad(fixed(p.mean, 3), 10)
            << pad(fixed(p.bias, 3), 10) << pad(fixed(p.sd, 3), 11) << "\n";
    out << "Average Rand Index = " << fixed(report.mean_rand_index, 3) << "\n";
    out << "Failures = " << report.failures << ", not converged = " << report.nonconverged
        << (report.valid ? "" : " (INVALID: more than 20% failures)") << "\n";
}

json to_json(const BenchmarkReport& report) {
    json params = json::array();
    for (const auto& p : report.parameters)
        params.push_back({{"name", p.name}, {"true", number(p.truth)}, {"estimate", number(p.mean)},
                          {"bias", number(p.bias)}, {"sd", number(p.sd)}});
    return {{"scenario", report.scenario},       {"n", report.n},
            {"T", report.T},                     {"replications", report.replications},
            {"failures", report.failures},       {"nonconverged", report.nonconverged},
            {"valid", report.valid},             {"mean_rand_index", number(report.mean_rand_index)},
            {"parameters", params}};
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw FormatError("write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw FormatError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace bimix
