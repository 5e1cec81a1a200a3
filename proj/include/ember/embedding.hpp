#pragma once

// Embedded-model training and envelope estimation.
//
// Each tree draws its own subsample of the data, computes leave-one-out simple
// kriging values for every embedded spatial model over that subsample, and
// trains on [secondary variables..., embedded kriging values...]. Because the
// kriging value at row i is computed with row i held out, the tree sees the
// embedded model the way a prediction location sees it: as a neighbour-driven
// estimate, not as the answer.
//
// At prediction time the embedded features come from full-data dual kriging,
// and the forest turns the feature vector into a weighted distribution over
// the training responses (the envelope).

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "ember/common.hpp"
#include "ember/core.hpp"
#include "ember/forest.hpp"
#include "ember/io.hpp"
#include "ember/kriging.hpp"
#include "ember/variogram.hpp"

namespace ember {

struct EmbeddedModelSpec {
    VariogramModel model;
    std::string label;
};

// Two exponential structures spanning the data extent: half and a tenth of
// the bounding box diagonal, sill at the data variance. Constant data gets no
// embedding.
inline std::vector<EmbeddedModelSpec> default_embedded_specs(const SampleSet& s) {
    double var = variance_of(s.z);
    if (!(var > 0.0)) return {};
    double diag = s.bbox_diagonal();
    if (!(diag > 0.0)) return {};
    return {
        {{VariogramKind::exponential, var, diag / 2.0, 0.0}, "long_range"},
        {{VariogramKind::exponential, var, diag / 10.0, 0.0}, "short_range"},
    };
}

// Conditional distribution at one location: a step cdf over training z atoms.
class Envelope {
public:
    explicit Envelope(StepCdf cdf) : cdf_(std::move(cdf)) {}

    double mean() const { return cdf_.mean(); }
    double stddev() const { return cdf_.stddev(); }
    double quantile(double q) const { return cdf_.quantile(q); }
    double cdf(double z) const { return cdf_.cdf(z); }
    double exceedance(double t) const { return cdf_.exceedance(t); }
    double interval_prob(double a, double b) const { return cdf_.interval_prob(a, b); }
    const StepCdf& distribution() const { return cdf_; }

private:
    StepCdf cdf_;
};

class EmberModel {
public:
    SampleSet samples;
    std::vector<EmbeddedModelSpec> specs;
    RunConfig config;
    Forest forest;
    // Per tree leave-one-out embedded features, n_inbag x n_specs row major,
    // rows following the sorted in-bag ids. Kept for diagnostics and exact
    // model file round trips.
    std::vector<std::vector<double>> tree_embedded;
    // Full-data kriging systems, one per embedded model; rebuilt on load.
    std::vector<KrigingSystem> full_systems;

    std::size_t n_features() const { return samples.n_secondary() + specs.size(); }

    void rebuild_full_systems() {
        full_systems.clear();
        full_systems.reserve(specs.size());
        double m = mean_of(samples.z);
        for (const auto& sp : specs)
            full_systems.emplace_back(samples.locations, samples.z, sp.model, m);
    }
};

namespace detail {

inline int effective_mtry(int requested, std::size_t p_total) {
    if (requested > 0) return std::min<int>(requested, static_cast<int>(p_total));
    return static_cast<int>((p_total + 2) / 3);
}

} // namespace detail

inline EmberModel train_ember(const SampleSet& samples, std::vector<EmbeddedModelSpec> specs,
                              const RunConfig& config) {
    samples.validate();
    config.validate();
    for (const auto& sp : specs) {
        sp.model.validate();
        if (sp.label.empty()) throw ConfigError("embedded spec needs a label");
        for (const auto& name : samples.secondary_names)
            if (name == sp.label)
                throw ConfigError("embedded spec label '" + sp.label +
                                  "' collides with a secondary column");
        int dups = 0;
        for (const auto& other : specs)
            if (other.label == sp.label) ++dups;
        if (dups != 1) throw ConfigError("duplicate embedded spec label '" + sp.label + "'");
    }
    const std::size_t n = samples.size();
    const std::size_t p_sec = samples.n_secondary();
    const std::size_t l = specs.size();
    const std::size_t p_tot = p_sec + l;
    if (p_tot == 0)
        throw ValidationError("train_ember: no features (no secondary columns, no specs)");

    EmberModel model;
    model.samples = samples;
    model.specs = std::move(specs);
    model.config = config;
    model.rebuild_full_systems();

    auto n_inbag = static_cast<std::size_t>(config.forest.subsample_fraction *
                                            static_cast<double>(n));
    n_inbag = std::clamp<std::size_t>(n_inbag, 1, n);
    TrainControl ctl{detail::effective_mtry(config.forest.mtry, p_tot), config.forest.min_leaf};

    auto n_trees = static_cast<std::size_t>(config.forest.n_trees);
    model.forest.trees.resize(n_trees);
    model.forest.n_train = static_cast<std::uint32_t>(n);
    for (std::size_t j = 0; j < p_sec; ++j)
        model.forest.feature_names.push_back(samples.secondary_names[j]);
    for (const auto& sp : model.specs) model.forest.feature_names.push_back(sp.label);
    model.tree_embedded.resize(n_trees);

    parallel_for(n_trees, [&](std::size_t kb, std::size_t ke) {
        std::vector<double> feat(n_inbag * p_tot);
        std::vector<double> z_sub(n_inbag);
        std::vector<Location> locs_sub(n_inbag);
        for (std::size_t k = kb; k < ke; ++k) {
            RngStream rng(config.seed, "tree", k);
            std::vector<std::uint32_t> in_bag = subsample_without_replacement(n, n_inbag, rng);
            for (std::size_t r = 0; r < n_inbag; ++r) {
                std::uint32_t id = in_bag[r];
                z_sub[r] = samples.z[id];
                locs_sub[r] = samples.locations[id];
                auto yrow = samples.y_row(id);
                std::copy(yrow.begin(), yrow.end(), feat.begin() + static_cast<long>(r * p_tot));
            }
            std::vector<double>& emb = model.tree_embedded[k];
            emb.assign(n_inbag * l, 0.0);
            if (l > 0) {
                double mean_k = mean_of(z_sub);
                for (std::size_t j = 0; j < l; ++j) {
                    KrigingSystem sys(locs_sub, z_sub, model.specs[j].model, mean_k);
                    CrossValidation cv = sys.loo_cross_validate();
                    for (std::size_t r = 0; r < n_inbag; ++r) {
                        feat[r * p_tot + p_sec + j] = cv.estimate[r];
                        emb[r * l + j] = cv.estimate[r];
                    }
                }
            }
            FeatureView view{feat.data(), n_inbag, p_tot};
            Tree t = train_tree(view, z_sub, in_bag, ctl, rng);
            t.in_bag = std::move(in_bag);
            model.forest.trees[k] = std::move(t);
        }
    }, config.threads);
    return model;
}

// Feature vector at an arbitrary location: secondary values as given, embedded
// values from full-data dual kriging.
inline std::vector<double> embedded_features_at(const EmberModel& model, const Location& loc,
                                                std::span<const double> secondary) {
    if (secondary.size() != model.samples.n_secondary())
        throw ValidationError("embedded_features_at: secondary width mismatch");
    std::vector<double> f(secondary.begin(), secondary.end());
    f.reserve(model.n_features());
    for (const auto& sys : model.full_systems) f.push_back(sys.dual_at(loc));
    return f;
}

inline Envelope envelope_from_features(const EmberModel& model, std::span<const double> features) {
    WeightVector w = forest_weights(model.forest, features);
    return Envelope(weighted_cdf(w, model.samples.z));
}

inline Envelope envelope_at(const EmberModel& model, const Location& loc,
                            std::span<const double> secondary) {
    std::vector<double> f = embedded_features_at(model, loc, secondary);
    return envelope_from_features(model, f);
}

// One statistic of the envelope, parsed from "mean", "std", "quantile=Q",
// "qNN" (percent shorthand), "prob_gt=T" or "prob_in=A,B". ':' and '='
// both separate the argument.
struct OutputSpec {
    enum class Kind { mean, std_dev, quantile, prob_gt, prob_in };
    Kind kind = Kind::mean;
    double a = 0.0, b = 0.0;

    static OutputSpec parse(const std::string& text) {
        OutputSpec o;
        auto eq = text.find_first_of("=:");
        std::string head = text.substr(0, eq);
        std::string arg = eq == std::string::npos ? "" : text.substr(eq + 1);
        if (head.size() >= 2 && head[0] == 'q' &&
            head.find_first_not_of("0123456789", 1) == std::string::npos) {
            if (eq != std::string::npos)
                throw ConfigError("output '" + text + "' takes no argument");
            o.kind = Kind::quantile;
            o.a = detail::parse_double(head.substr(1), "output '" + text + "'") / 100.0;
            if (!(o.a > 0.0 && o.a < 1.0))
                throw ConfigError("output '" + text + "': quantile must be in (0,100)");
            return o;
        }
        auto need_arg = [&](const char* what) {
            if (arg.empty())
                throw ConfigError("output '" + text + "': " + what + " argument required");
        };
        if (head == "mean" || head == "std") {
            if (eq != std::string::npos)
                throw ConfigError("output '" + text + "' takes no argument");
            o.kind = head == "mean" ? Kind::mean : Kind::std_dev;
        } else if (head == "quantile") {
            need_arg("quantile");
            o.kind = Kind::quantile;
            o.a = detail::parse_double(arg, "output '" + text + "'");
            if (!(o.a > 0.0 && o.a < 1.0))
                throw ConfigError("output '" + text + "': quantile must be in (0,1)");
        } else if (head == "prob_gt") {
            need_arg("threshold");
            o.kind = Kind::prob_gt;
            o.a = detail::parse_double(arg, "output '" + text + "'");
        } else if (head == "prob_in") {
            need_arg("interval");
            auto comma = arg.find(',');
            if (comma == std::string::npos)
                throw ConfigError("output '" + text + "': expected prob_in=A,B");
            o.kind = Kind::prob_in;
            o.a = detail::parse_double(arg.substr(0, comma), "output '" + text + "'");
            o.b = detail::parse_double(arg.substr(comma + 1), "output '" + text + "'");
            if (!(o.b >= o.a)) throw ConfigError("output '" + text + "': needs A <= B");
        } else {
            throw ConfigError("unknown output '" + text + "'");
        }
        return o;
    }

    std::string layer_name() const {
        char buf[64];
        switch (kind) {
        case Kind::mean: return "mean";
        case Kind::std_dev: return "std";
        case Kind::quantile:
            std::snprintf(buf, sizeof(buf), "quantile_%g", a);
            return buf;
        case Kind::prob_gt:
            std::snprintf(buf, sizeof(buf), "prob_gt_%g", a);
            return buf;
        case Kind::prob_in:
            std::snprintf(buf, sizeof(buf), "prob_in_%g_%g", a, b);
            return buf;
        }
        return "?";
    }

    double evaluate(const Envelope& e) const {
        switch (kind) {
        case Kind::mean: return e.mean();
        case Kind::std_dev: return e.stddev();
        case Kind::quantile: return e.quantile(a);
        case Kind::prob_gt: return e.exceedance(a);
        case Kind::prob_in: return e.interval_prob(a, b);
        }
        return 0.0;
    }
};

namespace detail {

struct GridFeatures {
    std::vector<double> values; // n_cells x n_features, row major
    std::vector<char> valid;    // false where any secondary layer is NODATA
};

// Secondary values read from same-named grid layers; embedded features by
// batched dual kriging over cell centers.
inline GridFeatures assemble_grid_features(const EmberModel& model, const RasterGrid& grid,
                                           int threads) {
    const std::size_t p_sec = model.samples.n_secondary();
    const std::size_t p_tot = model.n_features();
    const std::size_t nc = grid.n_cells();
    for (const auto& name : model.samples.secondary_names)
        if (!grid.has_layer(name))
            throw ValidationError("grid is missing secondary layer '" + name + "'");
    GridFeatures out;
    out.values.assign(nc * p_tot, 0.0);
    out.valid.assign(nc, 1);
    for (std::size_t j = 0; j < p_sec; ++j) {
        const std::vector<double>& lay = grid.layer(model.samples.secondary_names[j]);
        for (std::size_t i = 0; i < nc; ++i) {
            out.values[i * p_tot + j] = lay[i];
            if (grid.is_nodata(lay[i])) out.valid[i] = 0;
        }
    }
    if (!model.specs.empty()) {
        std::vector<Location> centers(nc);
        for (int r = 0; r < grid.nrows; ++r)
            for (int c = 0; c < grid.ncols; ++c)
                centers[grid.index_of(c, r)] = grid.cell_center(c, r);
        for (std::size_t j = 0; j < model.specs.size(); ++j) {
            std::vector<double> fld = model.full_systems[j].dual_krige_field(centers, threads);
            for (std::size_t i = 0; i < nc; ++i) out.values[i * p_tot + p_sec + j] = fld[i];
        }
    }
    return out;
}

} // namespace detail

// Envelope statistics over a grid. The input grid supplies the secondary
// layers; the returned grid shares its geometry and holds one layer per
// requested output, NODATA wherever a secondary input is NODATA.
inline RasterGrid estimate_grid(const EmberModel& model, const RasterGrid& grid,
                                std::span<const OutputSpec> outputs, int threads = 0) {
    if (outputs.empty()) throw ConfigError("estimate_grid: no outputs requested");
    detail::GridFeatures gf = detail::assemble_grid_features(model, grid, threads);
    RasterGrid out(grid.ncols, grid.nrows, grid.cell, grid.xll, grid.yll);
    out.nodata = grid.nodata;
    std::vector<std::vector<double>*> dest;
    for (const auto& o : outputs) dest.push_back(&out.add_layer(o.layer_name()));
    const std::size_t p_tot = model.n_features();
    parallel_for(grid.n_cells(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            if (!gf.valid[i]) continue; // layers are prefilled with NODATA
            Envelope env = envelope_from_features(
                model, std::span<const double>(gf.values.data() + i * p_tot, p_tot));
            for (std::size_t o = 0; o < outputs.size(); ++o)
                (*dest[o])[i] = outputs[o].evaluate(env);
        }
    }, threads);
    return out;
}

} // namespace ember
