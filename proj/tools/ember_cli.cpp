// Command line front end. Every subcommand reads one JSON config file and
// writes its artifacts into an output directory. Exit codes: 0 success,
// 1 runtime or numerical failure, 2 configuration or input file problems.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ember/experiments.hpp"
#include "ember/io.hpp"
#include "ember/serialize.hpp"
#include "ember/simulation.hpp"

namespace fs = std::filesystem;
using ember::ordered_json;

namespace {

struct Invocation {
    std::string config_path;
    std::string out_dir = ".";
    std::string experiment_name;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    bool pgm = false;
    bool quiet = false;
};

void note(const Invocation& inv, const std::string& line) {
    if (!inv.quiet) std::cout << line << '\n';
}

ordered_json load_config_file(const std::string& path) {
    if (path.empty()) return ordered_json::object();
    std::ifstream in(path);
    if (!in) throw ember::ConfigError("cannot open config file " + path);
    ordered_json j = ordered_json::parse(in, nullptr, true, true);
    if (!j.is_object()) throw ember::ConfigError("config file " + path + ": expected an object");
    return j;
}

// Effective run config: file section first, then command line overrides.
ember::RunConfig effective_config(const ordered_json& doc, const Invocation& inv) {
    ember::RunConfig cfg;
    if (doc.contains("config")) cfg = ember::run_config_from_json(doc.at("config"));
    if (inv.seed) cfg.seed = *inv.seed;
    if (inv.threads) cfg.threads = *inv.threads;
    cfg.validate();
    return cfg;
}

std::string get_path(const ordered_json& doc, const char* key, const char* cmd) {
    if (!doc.contains(key))
        throw ember::ConfigError(std::string(cmd) + ": config key '" + key + "' is required");
    if (!doc.at(key).is_string())
        throw ember::ConfigError(std::string(cmd) + ": config key '" + key + "' must be a path");
    return doc.at(key).get<std::string>();
}

ember::SampleSet load_samples_checked(const std::string& path) {
    if (!fs::exists(path)) throw ember::ConfigError("sample file not found: " + path);
    return ember::load_samples(path);
}

bool same_geometry(const ember::RasterGrid& a, const ember::RasterGrid& b) {
    return a.ncols == b.ncols && a.nrows == b.nrows && a.cell == b.cell && a.xll == b.xll &&
           a.yll == b.yll;
}

// Builds the working grid for estimate/simulate: either merged single layer
// rasters ("grids") or a bare geometry object, and checks that every
// secondary column of the model is present as a layer.
ember::RasterGrid assemble_grid(const ordered_json& doc, const ember::EmberModel& model,
                                const char* cmd) {
    std::optional<ember::RasterGrid> grid;
    if (doc.contains("grids")) {
        if (!doc.at("grids").is_array() || doc.at("grids").empty())
            throw ember::ConfigError(std::string(cmd) + ": 'grids' must be a non-empty array");
        for (const auto& item : doc.at("grids")) {
            std::string path = item.get<std::string>();
            if (!fs::exists(path))
                throw ember::ConfigError(std::string(cmd) + ": grid file not found: " + path);
            ember::RasterGrid g = ember::load_grid(path);
            if (!grid) {
                grid = std::move(g);
            } else {
                if (!same_geometry(*grid, g))
                    throw ember::ConfigError(std::string(cmd) + ": grid " + path +
                                             " geometry differs from the first grid");
                const auto& layer = g.layers().front();
                grid->add_layer(layer.name, layer.values);
            }
        }
    } else if (doc.contains("geometry")) {
        const auto& jg = doc.at("geometry");
        ember::detail::reject_unknown_keys(jg, {"ncols", "nrows", "cellsize", "xllcorner",
                                                "yllcorner"},
                                           "geometry");
        if (!jg.contains("ncols") || !jg.contains("nrows"))
            throw ember::ConfigError("geometry: 'ncols' and 'nrows' are required");
        grid = ember::RasterGrid(jg.at("ncols").get<int>(), jg.at("nrows").get<int>(),
                                 jg.value("cellsize", 1.0), jg.value("xllcorner", 0.0),
                                 jg.value("yllcorner", 0.0));
    } else {
        throw ember::ConfigError(std::string(cmd) + ": config needs 'grids' or 'geometry'");
    }
    for (const auto& name : model.samples.secondary_names)
        if (!grid->has_layer(name))
            throw ember::ConfigError(std::string(cmd) + ": no grid layer for secondary column '" +
                                     name + "'");
    return std::move(*grid);
}

void write_grid(const ember::RasterGrid& g, const std::string& layer, const fs::path& file,
                bool pgm, const Invocation& inv, ordered_json& files) {
    ember::save_grid(g, layer, file);
    files.push_back(file.string());
    note(inv, "wrote " + file.string());
    if (pgm) {
        fs::path img = file;
        img.replace_extension(".pgm");
        ember::save_pgm(g, layer, img);
        note(inv, "wrote " + img.string());
    }
}

void write_report(const ordered_json& j, const fs::path& file, const Invocation& inv) {
    std::ofstream out(file);
    if (!out) throw ember::ParseError("cannot write report " + file.string());
    out << j.dump(2) << '\n';
    if (!out) throw ember::ParseError("write failed for " + file.string());
    note(inv, "wrote " + file.string());
}

ordered_json importance_json(const ember::EmberModel& model) {
    std::vector<double> imp = ember::variable_importance(model.forest);
    ordered_json j = ordered_json::object();
    for (std::size_t k = 0; k < imp.size(); ++k)
        j[model.forest.feature_names[k]] = imp[k];
    return j;
}

int cmd_train(const Invocation& inv) {
    ordered_json doc = load_config_file(inv.config_path);
    ember::detail::reject_unknown_keys(doc, {"config", "samples", "embedded"}, "train config");
    ember::RunConfig cfg = effective_config(doc, inv);
    const std::string sample_path = get_path(doc, "samples", "train");
    ember::SampleSet samples = load_samples_checked(sample_path);

    std::vector<ember::EmbeddedModelSpec> specs;
    if (doc.contains("embedded")) {
        if (!doc.at("embedded").is_array())
            throw ember::ConfigError("train: 'embedded' must be an array (empty disables "
                                     "embedding)");
        for (const auto& js : doc.at("embedded")) specs.push_back(ember::spec_from_json(js));
    } else {
        specs = ember::default_embedded_specs(samples);
    }

    ember::EmberModel model = ember::train_ember(samples, specs, cfg);

    fs::create_directories(inv.out_dir);
    fs::path model_file = fs::path(inv.out_dir) / "model.json";
    ember::save_model(model, model_file);
    note(inv, "wrote " + model_file.string());

    ordered_json rep;
    rep["command"] = "train";
    rep["samples"] = sample_path;
    rep["n_samples"] = samples.size();
    rep["config"] = ember::run_config_to_json(cfg);
    rep["embedded"] = ordered_json::array();
    for (const auto& sp : model.specs) rep["embedded"].push_back(ember::spec_to_json(sp));
    rep["model_file"] = model_file.string();
    rep["importance"] = importance_json(model);
    // Leave-one-out skill of each embedded model over the full data set.
    rep["embedded_loo"] = ordered_json::array();
    for (std::size_t j = 0; j < model.full_systems.size(); ++j) {
        ember::CrossValidation cv = model.full_systems[j].loo_cross_validate();
        double mse = 0.0, var = 0.0;
        for (std::size_t i = 0; i < cv.innovation.size(); ++i) {
            mse += cv.innovation[i] * cv.innovation[i];
            var += cv.variance[i];
        }
        auto n = static_cast<double>(cv.innovation.size());
        rep["embedded_loo"].push_back(ordered_json{{"label", model.specs[j].label},
                                                   {"loo_mse", mse / n},
                                                   {"mean_loo_variance", var / n}});
    }
    write_report(rep, fs::path(inv.out_dir) / "train_report.json", inv);
    return 0;
}

int cmd_estimate(const Invocation& inv) {
    ordered_json doc = load_config_file(inv.config_path);
    ember::detail::reject_unknown_keys(doc, {"config", "model", "grids", "geometry", "outputs"},
                                       "estimate config");
    ember::RunConfig cfg = effective_config(doc, inv);
    const std::string model_path = get_path(doc, "model", "estimate");
    if (!fs::exists(model_path))
        throw ember::ConfigError("model file not found: " + model_path);
    ember::EmberModel model = ember::load_model(model_path);
    ember::RasterGrid grid = assemble_grid(doc, model, "estimate");

    std::vector<ember::OutputSpec> outputs;
    std::vector<std::string> output_texts;
    if (doc.contains("outputs")) {
        for (const auto& jt : doc.at("outputs")) output_texts.push_back(jt.get<std::string>());
    } else {
        output_texts = {"mean", "std"};
    }
    for (const auto& t : output_texts) outputs.push_back(ember::OutputSpec::parse(t));

    ember::RasterGrid est = ember::estimate_grid(model, grid, outputs, cfg.threads);

    fs::create_directories(inv.out_dir);
    ordered_json files = ordered_json::array();
    for (const auto& o : outputs)
        write_grid(est, o.layer_name(), fs::path(inv.out_dir) / (o.layer_name() + ".asc"),
                   inv.pgm, inv, files);

    ordered_json rep;
    rep["command"] = "estimate";
    rep["model"] = model_path;
    rep["config"] = ember::run_config_to_json(cfg);
    rep["outputs"] = output_texts;
    rep["grid"] = ordered_json{{"ncols", grid.ncols},
                               {"nrows", grid.nrows},
                               {"cellsize", grid.cell},
                               {"xllcorner", grid.xll},
                               {"yllcorner", grid.yll}};
    rep["files"] = files;
    write_report(rep, fs::path(inv.out_dir) / "estimate_report.json", inv);
    return 0;
}

int cmd_simulate(const Invocation& inv) {
    ordered_json doc = load_config_file(inv.config_path);
    ember::detail::reject_unknown_keys(doc, {"config", "model", "grids", "geometry", "sampling"},
                                       "simulate config");
    ember::RunConfig cfg = effective_config(doc, inv);
    const std::string model_path = get_path(doc, "model", "simulate");
    if (!fs::exists(model_path))
        throw ember::ConfigError("model file not found: " + model_path);
    ember::EmberModel model = ember::load_model(model_path);
    ember::RasterGrid grid = assemble_grid(doc, model, "simulate");

    ember::SamplingFieldModel field;
    if (doc.contains("sampling")) {
        const auto& js = doc.at("sampling");
        ember::detail::reject_unknown_keys(js, {"kind", "range"}, "sampling");
        field.correlation = {ember::kind_from_string(js.value("kind", "exponential")), 1.0,
                             js.value("range", 0.0), 0.0};
        if (!(field.correlation.range > 0.0))
            throw ember::ConfigError("sampling: 'range' must be positive");
        field.hermite_order = cfg.sim.hermite_order;
    } else {
        field = ember::infer_sampling_correlation(model, cfg.sim.hermite_order);
    }

    std::vector<ember::Realization> reals =
        ember::simulate(model, grid, field, cfg.sim.n_realizations, cfg.seed, cfg.threads);

    fs::create_directories(inv.out_dir);
    ordered_json files = ordered_json::array();
    for (std::size_t k = 0; k < reals.size(); ++k)
        write_grid(reals[k].grid, "sim",
                   fs::path(inv.out_dir) / ("sim_" + std::to_string(k) + ".asc"), inv.pgm, inv,
                   files);
    ember::RasterGrid post = ember::posterior_mean(reals);
    write_grid(post, "mean", fs::path(inv.out_dir) / "sim_mean.asc", inv.pgm, inv, files);

    ember::DataConditioning cond = ember::data_intervals(model);
    std::size_t exact = 0;
    for (char e : cond.exact) exact += e ? 1 : 0;

    ordered_json rep;
    rep["command"] = "simulate";
    rep["model"] = model_path;
    rep["config"] = ember::run_config_to_json(cfg);
    rep["sampling"] = ordered_json{{"kind", ember::kind_name(field.correlation.kind)},
                                   {"range", field.correlation.range},
                                   {"hermite_order", field.hermite_order},
                                   {"inferred", !doc.contains("sampling")},
                                   {"fell_back", field.fell_back}};
    rep["n_realizations"] = reals.size();
    rep["padding_factor"] = reals.front().padding_factor;
    rep["covariance_warning"] = reals.front().covariance_warning;
    rep["exact_atom_fraction"] =
        static_cast<double>(exact) / static_cast<double>(cond.exact.size());
    rep["files"] = files;
    write_report(rep, fs::path(inv.out_dir) / "simulate_report.json", inv);
    return 0;
}

int cmd_variogram(const Invocation& inv) {
    ordered_json doc = load_config_file(inv.config_path);
    ember::detail::reject_unknown_keys(doc, {"config", "samples", "n_bins", "max_lag"},
                                       "variogram config");
    const std::string sample_path = get_path(doc, "samples", "variogram");
    ember::SampleSet samples = load_samples_checked(sample_path);
    int n_bins = doc.value("n_bins", 15);
    double max_lag = doc.value("max_lag", 0.0);

    ember::EmpiricalVariogram emp = ember::empirical_variogram(samples, n_bins, max_lag);
    ember::VariogramFit fit = ember::fit_variogram(emp);

    fs::create_directories(inv.out_dir);
    ordered_json rep;
    rep["command"] = "variogram";
    rep["samples"] = sample_path;
    rep["n_samples"] = samples.size();
    rep["n_bins"] = n_bins;
    rep["max_lag"] = emp.max_lag;
    rep["bins"] = ordered_json::array();
    for (std::size_t b = 0; b < emp.size(); ++b)
        rep["bins"].push_back(ordered_json{{"lag", emp.lag[b]},
                                           {"gamma", emp.gamma[b]},
                                           {"count", emp.count[b]}});
    rep["fit"] = ordered_json{{"kind", ember::kind_name(fit.model.kind)},
                              {"sill", fit.model.sill},
                              {"range", fit.model.range},
                              {"nugget", fit.model.nugget},
                              {"weighted_sse", fit.weighted_sse},
                              {"degenerate", fit.degenerate}};
    write_report(rep, fs::path(inv.out_dir) / "variogram.json", inv);
    return 0;
}

ordered_json experiment_report_json(const ember::ExperimentReport& r) {
    ordered_json j;
    j["name"] = r.name;
    j["seed"] = r.seed;
    j["n_samples"] = r.n_samples;
    j["runtime_seconds"] = r.runtime_seconds;
    j["config"] = ember::run_config_to_json(r.config);
    j["ember_est_mse"] = r.ember_est_mse;
    j["ember_est_iqr"] = r.ember_est_iqr;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v;
    };
    put("ensemble_est_mse", r.ensemble_est_mse);
    put("ensemble_est_iqr", r.ensemble_est_iqr);
    put("baseline_est_mse", r.baseline_est_mse);
    put("baseline_est_iqr", r.baseline_est_iqr);
    put("ember_sim_mse", r.ember_sim_mse);
    put("baseline_sim_mse", r.baseline_sim_mse);
    put("data_cell_atom_fraction", r.data_cell_atom_fraction);
    put("exact_atom_fraction", r.exact_atom_fraction);
    put("ks_sim_vs_data", r.ks_sim_vs_data);
    put("sampling_range", r.sampling_range);
    if (!r.sampling_kind.empty()) j["sampling_kind"] = r.sampling_kind;
    ordered_json imp = ordered_json::object();
    for (std::size_t k = 0; k < r.importance_names.size(); ++k)
        imp[r.importance_names[k]] = r.importance_values[k];
    j["importance"] = imp;
    put("cusp_std_near", r.cusp_std_near);
    put("cusp_std_far", r.cusp_std_far);
    put("std_rank_corr", r.std_rank_corr);
    put("prob_rank_corr", r.prob_rank_corr);
    return j;
}

int cmd_experiment(const Invocation& inv) {
    ordered_json doc = load_config_file(inv.config_path);
    ember::detail::reject_unknown_keys(doc, {"config"}, "experiment config");
    ember::RunConfig cfg = effective_config(doc, inv);

    ember::ExperimentResult res = ember::run_experiment(inv.experiment_name, cfg, cfg.seed);

    fs::create_directories(inv.out_dir);
    ordered_json files = ordered_json::array();
    auto dump = [&](const ember::RasterGrid& g, const std::string& prefix) {
        if (g.n_cells() == 0 || g.layers().empty()) return;
        for (const auto& layer : g.layers()) {
            std::string name = layer.name == "sim" || layer.name == prefix
                                   ? prefix
                                   : prefix + "_" + layer.name;
            write_grid(g, layer.name, fs::path(inv.out_dir) / (name + ".asc"), inv.pgm, inv,
                       files);
        }
    };
    dump(res.scene, "scene");
    dump(res.ember_outputs, "ember");
    dump(res.ensemble_outputs, "ensemble");
    dump(res.baseline_estimate, "baseline");
    dump(res.ember_sim, "ember_sim");
    dump(res.baseline_sim, "baseline_sim");

    ordered_json rep = experiment_report_json(res.report);
    rep["files"] = files;
    write_report(rep, fs::path(inv.out_dir) / "report.json", inv);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    Invocation inv;
    CLI::App app{"Forest estimator with embedded kriging variables: train models, map "
                 "conditional distributions, and draw conditional realizations"};
    app.require_subcommand(1);

    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* opt = sub->add_option("-c,--config", inv.config_path, "JSON config file");
        if (config_required) opt->required();
        sub->add_option("-o,--out", inv.out_dir, "output directory (default .)");
        sub->add_option("--seed", inv.seed, "master seed override");
        sub->add_option("--threads", inv.threads, "worker thread cap (0 = all cores)");
        sub->add_flag("-q,--quiet", inv.quiet, "suppress progress lines");
    };

    CLI::App* train = app.add_subcommand("train", "fit a model from a sample file");
    add_common(train, true);
    CLI::App* estimate = app.add_subcommand("estimate", "write envelope statistics over a grid");
    add_common(estimate, true);
    estimate->add_flag("--pgm", inv.pgm, "also write grayscale previews");
    CLI::App* simulate = app.add_subcommand("simulate", "draw conditional realizations");
    add_common(simulate, true);
    simulate->add_flag("--pgm", inv.pgm, "also write grayscale previews");
    CLI::App* experiment = app.add_subcommand("experiment", "run a named benchmark scene");
    experiment
        ->add_option("name", inv.experiment_name, "one of example1_800, example1_50, "
                                                  "example2_800, example2_50, example3")
        ->required();
    add_common(experiment, false);
    experiment->add_flag("--pgm", inv.pgm, "also write grayscale previews");
    CLI::App* variogram = app.add_subcommand("variogram", "bin and fit an empirical variogram");
    add_common(variogram, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(train)) return cmd_train(inv);
        if (app.got_subcommand(estimate)) return cmd_estimate(inv);
        if (app.got_subcommand(simulate)) return cmd_simulate(inv);
        if (app.got_subcommand(experiment)) return cmd_experiment(inv);
        if (app.got_subcommand(variogram)) return cmd_variogram(inv);
    } catch (const ember::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ember::ParseError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ember::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
