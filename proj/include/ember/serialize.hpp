#pragma once

// Model files and config fragments as JSON. Doubles rely on the shortest
// round-trip serialization of the JSON library, so save/load is bit exact.

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ember/embedding.hpp"

namespace ember {

using ordered_json = nlohmann::ordered_json;

inline constexpr int model_format_version = 1;

namespace detail {

template <typename T>
std::vector<T> vec_from_json(const ordered_json& j, const char* key) {
    if (!j.contains(key)) throw ParseError(std::string("model file: missing '") + key + "'");
    return j.at(key).get<std::vector<T>>();
}

inline void reject_unknown_keys(const ordered_json& j, std::initializer_list<const char*> known,
                                const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

} // namespace detail

inline ordered_json run_config_to_json(const RunConfig& c) {
    return ordered_json{{"seed", c.seed},
                        {"threads", c.threads},
                        {"thresholds", c.thresholds},
                        {"forest",
                         {{"n_trees", c.forest.n_trees},
                          {"mtry", c.forest.mtry},
                          {"min_leaf", c.forest.min_leaf},
                          {"subsample_fraction", c.forest.subsample_fraction}}},
                        {"simulation",
                         {{"n_realizations", c.sim.n_realizations},
                          {"gibbs_burn_in", c.sim.gibbs_burn_in},
                          {"hermite_order", c.sim.hermite_order}}}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline RunConfig run_config_from_json(const ordered_json& j) {
    RunConfig c;
    detail::reject_unknown_keys(j, {"seed", "threads", "thresholds", "forest", "simulation"},
                                "config");
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("threads")) c.threads = j.at("threads").get<int>();
    if (j.contains("thresholds")) c.thresholds = j.at("thresholds").get<std::vector<double>>();
    if (j.contains("forest")) {
        const auto& f = j.at("forest");
        detail::reject_unknown_keys(f, {"n_trees", "mtry", "min_leaf", "subsample_fraction"},
                                    "config.forest");
        if (f.contains("n_trees")) c.forest.n_trees = f.at("n_trees").get<int>();
        if (f.contains("mtry")) c.forest.mtry = f.at("mtry").get<int>();
        if (f.contains("min_leaf")) c.forest.min_leaf = f.at("min_leaf").get<int>();
        if (f.contains("subsample_fraction"))
            c.forest.subsample_fraction = f.at("subsample_fraction").get<double>();
    }
    if (j.contains("simulation")) {
        const auto& s = j.at("simulation");
        detail::reject_unknown_keys(s, {"n_realizations", "gibbs_burn_in", "hermite_order"},
                                    "config.simulation");
        if (s.contains("n_realizations"))
            c.sim.n_realizations = s.at("n_realizations").get<int>();
        if (s.contains("gibbs_burn_in")) c.sim.gibbs_burn_in = s.at("gibbs_burn_in").get<int>();
        if (s.contains("hermite_order")) c.sim.hermite_order = s.at("hermite_order").get<int>();
    }
    c.validate();
    return c;
}

inline ordered_json spec_to_json(const EmbeddedModelSpec& sp) {
    return ordered_json{{"label", sp.label},
                        {"kind", kind_name(sp.model.kind)},
                        {"sill", sp.model.sill},
                        {"range", sp.model.range},
                        {"nugget", sp.model.nugget}};
}

inline EmbeddedModelSpec spec_from_json(const ordered_json& j) {
    detail::reject_unknown_keys(j, {"label", "kind", "sill", "range", "nugget"}, "embedded spec");
    EmbeddedModelSpec sp;
    if (!j.contains("label") || !j.contains("kind"))
        throw ConfigError("embedded spec: 'label' and 'kind' are required");
    sp.label = j.at("label").get<std::string>();
    sp.model.kind = kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("sill")) sp.model.sill = j.at("sill").get<double>();
    if (j.contains("range")) sp.model.range = j.at("range").get<double>();
    if (j.contains("nugget")) sp.model.nugget = j.at("nugget").get<double>();
    sp.model.validate();
    return sp;
}

inline ordered_json samples_to_json(const SampleSet& s) {
    ordered_json j;
    j["dim"] = s.dim();
    j["secondary_names"] = s.secondary_names;
    std::vector<double> x, y, zc;
    for (const auto& p : s.locations) {
        x.push_back(p.x());
        y.push_back(p.y());
        if (s.dim() == 3) zc.push_back(p[2]);
    }
    j["x"] = x;
    j["y"] = y;
    if (s.dim() == 3) j["z_coord"] = zc;
    j["z"] = s.z;
    j["secondary"] = s.y_flat();
    return j;
}

inline SampleSet samples_from_json(const ordered_json& j) {
    SampleSet s;
    int dim = j.at("dim").get<int>();
    s.secondary_names = detail::vec_from_json<std::string>(j, "secondary_names");
    auto x = detail::vec_from_json<double>(j, "x");
    auto y = detail::vec_from_json<double>(j, "y");
    std::vector<double> zc;
    if (dim == 3) zc = detail::vec_from_json<double>(j, "z_coord");
    auto z = detail::vec_from_json<double>(j, "z");
    auto sec = detail::vec_from_json<double>(j, "secondary");
    if (x.size() != y.size() || x.size() != z.size() || (dim == 3 && zc.size() != x.size()) ||
        sec.size() != x.size() * s.secondary_names.size())
        throw ParseError("model file: inconsistent sample arrays");
    for (std::size_t i = 0; i < x.size(); ++i) {
        Location loc = dim == 3 ? Location(x[i], y[i], zc[i]) : Location(x[i], y[i]);
        s.push_back(loc, z[i],
                    std::span<const double>(sec.data() + i * s.secondary_names.size(),
                                            s.secondary_names.size()));
    }
    s.validate();
    return s;
}

inline void save_model(const EmberModel& m, const std::filesystem::path& path) {
    ordered_json j;
    j["format"] = "ember-model";
    j["version"] = model_format_version;
    j["config"] = run_config_to_json(m.config);
    j["samples"] = samples_to_json(m.samples);
    j["specs"] = ordered_json::array();
    for (const auto& sp : m.specs) j["specs"].push_back(spec_to_json(sp));
    ordered_json jt = ordered_json::array();
    for (const Tree& t : m.forest.trees) {
        ordered_json n;
        std::vector<int> var, left, right, bbox;
        std::vector<double> split;
        std::vector<std::uint32_t> begin, end;
        for (const TreeNode& nd : t.nodes) {
            var.push_back(nd.var);
            split.push_back(nd.split);
            left.push_back(nd.left);
            right.push_back(nd.right);
            begin.push_back(nd.begin);
            end.push_back(nd.end);
            bbox.push_back(nd.bbox);
        }
        n["var"] = var;
        n["split"] = split;
        n["left"] = left;
        n["right"] = right;
        n["begin"] = begin;
        n["end"] = end;
        n["bbox"] = bbox;
        n["items"] = t.items;
        n["leaf_lo"] = t.leaf_lo;
        n["leaf_hi"] = t.leaf_hi;
        n["split_gain"] = t.split_gain;
        n["in_bag"] = t.in_bag;
        n["n_features"] = t.n_features;
        jt.push_back(std::move(n));
    }
    j["forest"] = ordered_json{{"n_train", m.forest.n_train},
                               {"feature_names", m.forest.feature_names},
                               {"trees", std::move(jt)}};
    j["tree_embedded"] = m.tree_embedded;
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write model file " + path.string());
    out << j.dump() << '\n';
    if (!out) throw ParseError("write failed for " + path.string());
}

inline EmberModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open model file " + path.string());
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("model file " + path.string() + ": " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "ember-model")
            throw ParseError("model file: wrong format tag");
        if (j.at("version").get<int>() != model_format_version)
            throw ParseError("model file: unsupported version");
        EmberModel m;
        m.config = run_config_from_json(j.at("config"));
        m.samples = samples_from_json(j.at("samples"));
        for (const auto& js : j.at("specs")) m.specs.push_back(spec_from_json(js));
        const auto& jf = j.at("forest");
        m.forest.n_train = jf.at("n_train").get<std::uint32_t>();
        m.forest.feature_names = jf.at("feature_names").get<std::vector<std::string>>();
        if (m.forest.n_train != m.samples.size())
            throw ParseError("model file: n_train does not match the sample table");
        for (const auto& jtree : jf.at("trees")) {
            Tree t;
            auto var = detail::vec_from_json<int>(jtree, "var");
            auto split = detail::vec_from_json<double>(jtree, "split");
            auto left = detail::vec_from_json<int>(jtree, "left");
            auto right = detail::vec_from_json<int>(jtree, "right");
            auto begin = detail::vec_from_json<std::uint32_t>(jtree, "begin");
            auto end = detail::vec_from_json<std::uint32_t>(jtree, "end");
            auto bbox = detail::vec_from_json<int>(jtree, "bbox");
            if (var.size() != split.size() || var.size() != left.size() ||
                var.size() != right.size() || var.size() != begin.size() ||
                var.size() != end.size() || var.size() != bbox.size() || var.empty())
                throw ParseError("model file: inconsistent tree node arrays");
            for (std::size_t i = 0; i < var.size(); ++i)
                t.nodes.push_back({var[i], split[i], left[i], right[i], begin[i], end[i], bbox[i]});
            t.items = detail::vec_from_json<std::uint32_t>(jtree, "items");
            t.leaf_lo = detail::vec_from_json<double>(jtree, "leaf_lo");
            t.leaf_hi = detail::vec_from_json<double>(jtree, "leaf_hi");
            t.split_gain = detail::vec_from_json<double>(jtree, "split_gain");
            t.in_bag = detail::vec_from_json<std::uint32_t>(jtree, "in_bag");
            t.n_features = jtree.at("n_features").get<int>();
            for (std::uint32_t id : t.items)
                if (id >= m.forest.n_train) throw ParseError("model file: leaf item out of range");
            m.forest.trees.push_back(std::move(t));
        }
        m.tree_embedded = j.at("tree_embedded").get<std::vector<std::vector<double>>>();
        if (m.tree_embedded.size() != m.forest.trees.size())
            throw ParseError("model file: tree_embedded count mismatch");
        m.rebuild_full_systems();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("model file " + path.string() + ": " + e.what());
    }
}

} // namespace ember
