#include "bimix/em.hpp"
#include "bimix/errors.hpp"
#include "bimix/io.hpp"
#include "bimix/simulator.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace bimix;

namespace {

PanelDataset parse(const std::string& text) {
    std::istringstream in(text);
    return read_panel_csv(in);
}

std::string line_of(const std::string& text, std::size_t index) {
    std::istringstream in(text);
    std::string line;
    for (std::size_t i = 0; i <= index; ++i) std::getline(in, line);
    return line;
}

}  // namespace

TEST(FormatDouble, RoundTrips) {
    for (double v : {0.1, -1.0 / 3.0, 1e-300, 123456789.123456789, 0.0}) EXPECT_EQ(std::stod(format_double(v)), v);
    EXPECT_EQ(format_double(std::nan("")), "nan");
    EXPECT_EQ(format_double(2.5), "2.5");
}

TEST(PanelCsv, GroupsUnitsAndSortsTimes) {
    const auto data = parse("unit,time,y1,y2,x\n"
                            "b,2,1.5,2.5,0.1\n"
                            "a,1,0.5,1,NA\n"
                            "b,1,3,4,\n"
                            "a,3,7,8,nan\n");
    EXPECT_EQ(data.n_responses, 2);
    EXPECT_EQ(data.covariate_names, (std::vector<std::string>{"x"}));
    ASSERT_EQ(data.units.size(), 2u);
    EXPECT_EQ(data.units[0].id, "b");
    EXPECT_EQ(data.units[1].id, "a");
    EXPECT_EQ(data.units[0].observations[0].time, 1);
    EXPECT_EQ(data.units[0].observations[0].y, (std::vector<double>{3.0, 4.0}));
    EXPECT_TRUE(std::isnan(data.units[0].observations[0].covariates[0]));
    EXPECT_EQ(data.units[0].observations[1].covariates[0], 0.1);
    EXPECT_TRUE(std::isnan(data.units[1].observations[0].covariates[0]));
    EXPECT_TRUE(std::isnan(data.units[1].observations[1].covariates[0]));
}

TEST(PanelCsv, UnivariateHeader) {
    const auto data = parse("unit,time,y1,x,z\nu,1,0.5,1,2\n");
    EXPECT_EQ(data.n_responses, 1);
    EXPECT_EQ(data.covariate_names, (std::vector<std::string>{"x", "z"}));
}

TEST(PanelCsv, MalformedInputRaisesFormatError) {
    EXPECT_THROW(parse(""), FormatError);
    EXPECT_THROW(parse("id,time,y1\nu,1,2\n"), FormatError);
    EXPECT_THROW(parse("unit,time,y1,x\nu,1,abc,2\n"), FormatError);
    EXPECT_THROW(parse("unit,time,y1,x\nu,1,2\n"), FormatError);
    EXPECT_THROW(parse("unit,time,y1,x\nu,one,2,3\n"), FormatError);
    try {
        parse("unit,time,y1,x\nu,1,2,3\nu,2,oops,3\n");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
    }
    EXPECT_THROW(read_panel_csv(std::filesystem::path("/nonexistent/data.csv")), FormatError);
}

TEST(PanelCsv, MissingCovariatesRoundTrip) {
    const auto data = parse("unit,time,y1,x\nu,1,0.25,\nu,2,0.5,3\n");
    std::ostringstream out;
    write_panel_csv(out, data);
    EXPECT_EQ(line_of(out.str(), 1), "u,1,0.25,");
    const auto back = parse(out.str());
    EXPECT_TRUE(std::isnan(back.units[0].observations[0].covariates[0]));
    EXPECT_EQ(back.units[0].observations[1].covariates[0], 3.0);
}

TEST(TruthCsv, OneBasedColumns) {
    const auto sim = simulate_dataset(scenario1(), 3, 1, 1);
    std::ostringstream out;
    write_truth_csv(out, sim.data, {{0, 1}, {1, 0}, {1, 1}});
    EXPECT_EQ(line_of(out.str(), 0), "unit,true_k1,true_k2");
    EXPECT_EQ(line_of(out.str(), 1), "1,1,2");
    EXPECT_EQ(line_of(out.str(), 3), "3,2,2");
}

TEST(ModelSpecJson, RoundTripAndDefaults) {
    const auto spec = solow_synthetic().spec;
    const auto back = model_spec_from_json(to_json(spec));
    ASSERT_EQ(back.J(), 2);
    for (int j = 0; j < 2; ++j) {
        EXPECT_EQ(back.profiles[j].family, spec.profiles[j].family);
        EXPECT_EQ(back.profiles[j].mean_fixed, spec.profiles[j].mean_fixed);
        EXPECT_EQ(back.profiles[j].mean_random, spec.profiles[j].mean_random);
        EXPECT_EQ(back.profiles[j].scale_covariates, spec.profiles[j].scale_covariates);
        EXPECT_EQ(back.profiles[j].K, spec.profiles[j].K);
    }
    const auto minimal = model_spec_from_json(nlohmann::json::parse(R"({"profiles":[{"family":"gaussian","K":3}]})"));
    EXPECT_EQ(minimal.J(), 1);
    EXPECT_EQ(minimal.profiles[0].K, 3);
    EXPECT_EQ(minimal.profiles[0].mean_random, (std::vector<std::string>{"intercept"}));
}

TEST(ModelSpecJson, Errors) {
    EXPECT_THROW(model_spec_from_json(nlohmann::json::parse(R"({"profiles":[{"family":"gaussian","K":0}]})")), ValidationError);
    EXPECT_THROW(model_spec_from_json(nlohmann::json::parse(R"({"profiles":[{"family":"cauchy","K":2}]})")), FormatError);
    EXPECT_THROW(model_spec_from_json(nlohmann::json::parse(R"({"profiles":[{"family":"gaussian","K":"two"}]})")), FormatError);
    EXPECT_THROW(read_model_spec("/nonexistent/model.json"), FormatError);
}

TEST(ShippedModels, ParseAndValidate) {
    for (const char* name : {"scenario1.json", "scenario2.json", "solow_bivariate.json"}) {
        const auto spec = read_model_spec(std::filesystem::path(BIMIX_MODELS_DIR) / name);
        EXPECT_TRUE(validate(spec).empty()) << name;
    }
    const auto s1 = read_model_spec(std::filesystem::path(BIMIX_MODELS_DIR) / "scenario1.json");
    EXPECT_EQ(count_parameters(s1), count_parameters(scenario1().spec));
    const auto solow = read_model_spec(std::filesystem::path(BIMIX_MODELS_DIR) / "solow_bivariate.json");
    EXPECT_EQ(solow.profiles[1].family, Family::student_t);
}

TEST(ParameterJson, RoundTripIsExact) {
    auto p = solow_synthetic().truth;
    p.profiles[0].gamma(0) = std::nan("");
    const auto back = parameter_set_from_json(to_json(p));
    EXPECT_EQ(back.pi, p.pi);
    EXPECT_EQ(back.profiles[1].support, p.profiles[1].support);
    EXPECT_EQ(back.profiles[0].lambda, p.profiles[0].lambda);
    EXPECT_EQ(back.profiles[1].shape, p.profiles[1].shape);
    EXPECT_FALSE(back.profiles[0].shape.has_value());
    EXPECT_TRUE(std::isnan(back.profiles[0].gamma(0)));
    EXPECT_TRUE(to_json(p)["profiles"][0]["gamma"][0].is_null());
}

TEST(FitJson, RoundTripThroughText) {
    const auto st = scenario1();
    const auto sim = simulate_dataset(st, 40, 4, 2);
    auto fit = em_fit(st.spec, sim.data, st.truth);
    fit.standard_errors = standard_errors(st.spec, sim.data, fit.params);
    const auto text = to_json(st.spec, fit).dump(2);
    const auto stored = fit_from_json(nlohmann::json::parse(text));
    EXPECT_EQ(stored.fit.loglik, fit.loglik);
    EXPECT_EQ(stored.fit.aic, fit.aic);
    EXPECT_EQ(stored.fit.bic, fit.bic);
    EXPECT_EQ(stored.fit.d, fit.d);
    EXPECT_EQ(stored.fit.loglik_trace, fit.loglik_trace);
    EXPECT_EQ(stored.fit.assignments, fit.assignments);
    EXPECT_EQ(stored.fit.unit_ids, fit.unit_ids);
    EXPECT_EQ(stored.fit.posteriors.joint, fit.posteriors.joint);
    EXPECT_EQ(stored.fit.params.pi, fit.params.pi);
    ASSERT_TRUE(stored.fit.standard_errors.has_value());
    EXPECT_EQ(stored.fit.standard_errors->values.profiles[0].support, fit.standard_errors->values.profiles[0].support);
    EXPECT_EQ(count_parameters(stored.spec), count_parameters(st.spec));
    EXPECT_THROW(fit_from_json(nlohmann::json::parse(R"({"model":{}})")), FormatError);
}

TEST(PosteriorsCsv, MapCellThenJointWeights) {
    const auto st = scenario1();
    const auto sim = simulate_dataset(st, 5, 4, 3);
    const auto fit = em_fit(st.spec, sim.data, st.truth);
    std::ostringstream out;
    write_posteriors_csv(out, fit);
    EXPECT_EQ(line_of(out.str(), 0), "unit,k1,k2,w_11,w_12,w_21,w_22");
    const auto first = line_of(out.str(), 1);
    EXPECT_EQ(first.substr(0, first.find(',', first.find(',', 2) + 1)),
              fit.unit_ids[0] + "," + std::to_string(fit.assignments[0].k1 + 1) + "," + std::to_string(fit.assignments[0].k2 + 1));
}

TEST(SelectionOutputs, CsvAndText) {
    SelectionTable table;
    table.n_units = 10;
    SelectionRow a;
    a.K1 = 1;
    a.K2 = 1;
    a.loglik = -10;
    a.d = 3;
    a.aic = 26;
    a.bic = 26.9;
    a.converged = true;
    SelectionRow b = a;
    b.K2 = 2;
    b.loglik = std::nan("");
    b.aic = b.bic = std::nan("");
    b.converged = false;
    b.error = "all starts failed";
    table.rows = {a, b};
    table.best_aic = table.best_bic = 0;
    std::ostringstream csv, text;
    write_selection_csv(csv, table);
    write_selection_text(text, table);
    EXPECT_EQ(line_of(csv.str(), 0), "K1,K2,loglik,d,aic,bic,converged,best_aic,best_bic,error");
    EXPECT_EQ(line_of(csv.str(), 1), "1,1,-10,3,26,26.899999999999999,1,1,1,");
    EXPECT_NE(text.str().find("<AIC"), std::string::npos);
    EXPECT_NE(text.str().find("<BIC"), std::string::npos);
}

TEST(BenchmarkOutputs, CsvTextJson) {
    BenchmarkReport r;
    r.scenario = "scenario1";
    r.n = 10;
    r.T = 2;
    r.replications = 4;
    r.failures = 1;
    r.mean_rand_index = 0.75;
    r.parameters = {{"u1[1]", -1.0, -0.9, 0.1, 0.2}};
    std::ostringstream csv, text;
    write_benchmark_csv(csv, r);
    write_benchmark_text(text, r);
    EXPECT_EQ(line_of(csv.str(), 0), "parameter,true,estimate,bias,sd");
    EXPECT_EQ(line_of(csv.str(), 1).substr(0, 12), "u1[1],-1,-0.");
    EXPECT_NE(text.str().find("Average Rand Index = 0.75"), std::string::npos);
    const auto j = to_json(r);
    EXPECT_EQ(j["failures"], 1);
    EXPECT_EQ(j["parameters"][0]["name"], "u1[1]");
}

TEST(AtomicWrite, ReplacesContent) {
    const auto path = std::filesystem::temp_directory_path() / "bimix_atomic_test.txt";
    write_file_atomic(path, "first");
    write_file_atomic(path, "second");
    std::ifstream in(path);
    std::string s;
    std::getline(in, s);
    EXPECT_EQ(s, "second");
    EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
    std::filesystem::remove(path);
}
