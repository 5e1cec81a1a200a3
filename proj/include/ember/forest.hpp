#pragma once

// Randomized regression forest with uniform random split values.
//
// Each node draws `mtry` candidate variables (among those non constant in the
// node), one uniform split value per candidate inside the node's open value
// range, and keeps the candidate with the smallest sum of child squared
// errors. Ties resolve to the lowest variable index. Rows with feature < split
// go left. A node becomes a leaf when it has fewer than 2 * min_leaf rows,
// when its response is constant, or when no candidate leaves both children
// with at least min_leaf rows.
//
// Leaves keep their training row ids plus the feature space bounding box of
// those rows. Forest weights follow the conditional-distribution forest rule:
// each tree spreads weight 1/n_trees uniformly over the rows of the leaf the
// query lands in.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ember/common.hpp"

namespace ember {

// Row major view over a dense feature table.
struct FeatureView {
    const double* data = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;

    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return {data + r * cols, cols}; }
};

struct TrainControl {
    int mtry = 1;
    int min_leaf = 5;
};

struct TreeNode {
    int var = -1;                  // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
    std::uint32_t begin = 0, end = 0; // leaf slice into Tree::items
    int bbox = -1;                    // leaf slot into Tree::leaf_lo / leaf_hi
};

struct Tree {
    std::vector<TreeNode> nodes;
    std::vector<std::uint32_t> items;   // original row ids grouped by leaf
    std::vector<double> leaf_lo;        // packed n_leaves x n_features
    std::vector<double> leaf_hi;
    std::vector<double> split_gain;     // per variable SSE reduction / in-bag size
    std::vector<std::uint32_t> in_bag;  // sorted original row ids
    int n_features = 0;

    bool is_leaf(int node) const { return nodes[static_cast<std::size_t>(node)].var < 0; }

    int find_leaf(std::span<const double> f) const {
        int cur = 0;
        for (;;) {
            const TreeNode& nd = nodes[static_cast<std::size_t>(cur)];
            if (nd.var < 0) return cur;
            cur = f[static_cast<std::size_t>(nd.var)] < nd.split ? nd.left : nd.right;
        }
    }

    std::size_t n_leaves() const {
        return n_features == 0 ? 0 : leaf_lo.size() / static_cast<std::size_t>(n_features);
    }
};

// k distinct indices from [0, n), returned sorted ascending.
inline std::vector<std::uint32_t> subsample_without_replacement(std::size_t n, std::size_t k,
                                                                RngStream& rng) {
    if (k > n) throw ValidationError("subsample: k > n");
    std::vector<std::uint32_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = static_cast<std::uint32_t>(i);
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + rng.uniform_index(n - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

namespace detail {

struct TreeBuilder {
    const FeatureView& f;
    std::span<const double> z;
    std::span<const std::uint32_t> orig_ids;
    TrainControl ctl;
    RngStream& rng;
    Tree& tree;
    std::vector<std::uint32_t> rows; // permutation of 0..f.rows-1, partitioned in place

    void build() {
        rows.resize(f.rows);
        for (std::size_t i = 0; i < f.rows; ++i) rows[i] = static_cast<std::uint32_t>(i);
        tree.n_features = static_cast<int>(f.cols);
        tree.split_gain.assign(f.cols, 0.0);
        grow(0, f.rows);
        for (double& g : tree.split_gain) g /= static_cast<double>(f.rows);
    }

    // Appends the subtree over rows[lo, hi) and returns its root node index.
    int grow(std::size_t lo, std::size_t hi) {
        std::size_t n = hi - lo;
        double sum = 0.0, sum2 = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            double v = z[rows[i]];
            sum += v;
            sum2 += v * v;
        }
        double node_sse = sum2 - sum * sum / static_cast<double>(n);
        bool constant_z = node_sse <= 0.0;

        int best_var = -1;
        double best_split = 0.0, best_score = 0.0;
        if (n >= 2 * static_cast<std::size_t>(ctl.min_leaf) && !constant_z) {
            // Value ranges per variable; constants cannot be split.
            std::vector<int> usable;
            std::vector<double> vmin(f.cols), vmax(f.cols);
            for (std::size_t c = 0; c < f.cols; ++c) {
                double mn = f.at(rows[lo], c), mx = mn;
                for (std::size_t i = lo + 1; i < hi; ++i) {
                    double v = f.at(rows[i], c);
                    mn = std::min(mn, v);
                    mx = std::max(mx, v);
                }
                vmin[c] = mn;
                vmax[c] = mx;
                if (mx > mn) usable.push_back(static_cast<int>(c));
            }
            std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(ctl.mtry),
                                                  usable.size());
            for (std::size_t i = 0; i < m; ++i) {
                std::size_t j = i + rng.uniform_index(usable.size() - i);
                std::swap(usable[i], usable[j]);
            }
            usable.resize(m);
            std::sort(usable.begin(), usable.end());
            for (int c : usable) {
                auto cs = static_cast<std::size_t>(c);
                double s = vmin[cs] + rng.u01() * (vmax[cs] - vmin[cs]);
                // A draw landing exactly on the minimum would send nothing left.
                if (!(s > vmin[cs])) continue;
                double lsum = 0.0, lsum2 = 0.0;
                std::size_t ln = 0;
                for (std::size_t i = lo; i < hi; ++i) {
                    double v = z[rows[i]];
                    if (f.at(rows[i], cs) < s) {
                        lsum += v;
                        lsum2 += v * v;
                        ++ln;
                    }
                }
                std::size_t rn = n - ln;
                if (ln < static_cast<std::size_t>(ctl.min_leaf) ||
                    rn < static_cast<std::size_t>(ctl.min_leaf))
                    continue;
                double rsum = sum - lsum, rsum2 = sum2 - lsum2;
                double score = (lsum2 - lsum * lsum / static_cast<double>(ln)) +
                               (rsum2 - rsum * rsum / static_cast<double>(rn));
                if (best_var < 0 || score < best_score) {
                    best_var = c;
                    best_split = s;
                    best_score = score;
                }
            }
        }

        int me = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        if (best_var < 0) {
            make_leaf(me, lo, hi);
            return me;
        }
        tree.split_gain[static_cast<std::size_t>(best_var)] += node_sse - best_score;
        auto mid_it = std::stable_partition(rows.begin() + static_cast<long>(lo),
                                            rows.begin() + static_cast<long>(hi),
                                            [&](std::uint32_t r) {
                                                return f.at(r, static_cast<std::size_t>(best_var)) <
                                                       best_split;
                                            });
        std::size_t mid = static_cast<std::size_t>(mid_it - rows.begin());
        tree.nodes[static_cast<std::size_t>(me)].var = best_var;
        tree.nodes[static_cast<std::size_t>(me)].split = best_split;
        int l = grow(lo, mid);
        int r = grow(mid, hi);
        tree.nodes[static_cast<std::size_t>(me)].left = l;
        tree.nodes[static_cast<std::size_t>(me)].right = r;
        return me;
    }

    void make_leaf(int node, std::size_t lo, std::size_t hi) {
        TreeNode& nd = tree.nodes[static_cast<std::size_t>(node)];
        nd.begin = static_cast<std::uint32_t>(tree.items.size());
        for (std::size_t i = lo; i < hi; ++i) tree.items.push_back(orig_ids[rows[i]]);
        nd.end = static_cast<std::uint32_t>(tree.items.size());
        nd.bbox = static_cast<int>(tree.leaf_lo.size() / f.cols);
        for (std::size_t c = 0; c < f.cols; ++c) {
            double mn = f.at(rows[lo], c), mx = mn;
            for (std::size_t i = lo + 1; i < hi; ++i) {
                double v = f.at(rows[i], c);
                mn = std::min(mn, v);
                mx = std::max(mx, v);
            }
            tree.leaf_lo.push_back(mn);
            tree.leaf_hi.push_back(mx);
        }
    }
};

} // namespace detail

// Trains one tree on the given rows. `orig_ids[r]` is the id recorded in the
// leaves for feature row r; z is indexed by feature row. The rng is consumed
// in a fixed preorder traversal, so a tree is a pure function of (features, z,
// control, rng state).
inline Tree train_tree(const FeatureView& features, std::span<const double> z,
                       std::span<const std::uint32_t> orig_ids, const TrainControl& ctl,
                       RngStream& rng) {
    if (features.rows == 0) throw ValidationError("train_tree: no rows");
    if (features.cols == 0) throw ValidationError("train_tree: no features");
    if (z.size() != features.rows || orig_ids.size() != features.rows)
        throw ValidationError("train_tree: row count mismatch");
    if (ctl.min_leaf < 1 || ctl.mtry < 1) throw ValidationError("train_tree: bad control");
    Tree t;
    detail::TreeBuilder b{features, z, orig_ids, ctl, rng, t, {}};
    b.build();
    return t;
}

struct Forest {
    std::vector<Tree> trees;
    std::uint32_t n_train = 0;
    std::vector<std::string> feature_names;
};

// Per training row weight of a query point: 1/n_trees per tree, uniform over
// the rows of the leaf the query falls into. Sorted by row id; sums to 1.
struct WeightVector {
    std::vector<std::pair<std::uint32_t, double>> w;

    double sum() const {
        double s = 0.0;
        for (const auto& [i, v] : w) s += v;
        return s;
    }
};

inline WeightVector forest_weights(const Forest& forest, std::span<const double> features) {
    if (forest.trees.empty()) throw ValidationError("forest_weights: empty forest");
    std::vector<std::pair<std::uint32_t, double>> acc;
    double per_tree = 1.0 / static_cast<double>(forest.trees.size());
    for (const Tree& t : forest.trees) {
        if (features.size() != static_cast<std::size_t>(t.n_features))
            throw ValidationError("forest_weights: feature width mismatch");
        const TreeNode& leaf = t.nodes[static_cast<std::size_t>(t.find_leaf(features))];
        double wi = per_tree / static_cast<double>(leaf.end - leaf.begin);
        for (std::uint32_t k = leaf.begin; k < leaf.end; ++k)
            acc.emplace_back(t.items[k], wi);
    }
    std::sort(acc.begin(), acc.end());
    WeightVector out;
    out.w.reserve(acc.size());
    for (const auto& [id, wi] : acc) {
        if (!out.w.empty() && out.w.back().first == id)
            out.w.back().second += wi;
        else
            out.w.emplace_back(id, wi);
    }
    return out;
}

// Right continuous step distribution over the distinct response atoms.
// cum is normalized so the final entry is exactly 1.
struct StepCdf {
    std::vector<double> atoms;   // strictly increasing
    std::vector<double> weight;  // normalized point masses
    std::vector<double> cum;     // running sums, cum.back() == 1

    std::size_t size() const { return atoms.size(); }

    // P[Z <= t].
    double cdf(double t) const {
        auto it = std::upper_bound(atoms.begin(), atoms.end(), t);
        if (it == atoms.begin()) return 0.0;
        return cum[static_cast<std::size_t>(it - atoms.begin()) - 1];
    }

    // inf{ z : F(z) >= q }, clamped to the atom range.
    double quantile(double q) const {
        if (q <= 0.0) return atoms.front();
        auto it = std::lower_bound(cum.begin(), cum.end(), q);
        if (it == cum.end()) return atoms.back();
        return atoms[static_cast<std::size_t>(it - cum.begin())];
    }

    double mean() const {
        double s = 0.0;
        for (std::size_t i = 0; i < atoms.size(); ++i) s += weight[i] * atoms[i];
        return s;
    }

    double stddev() const {
        double m = mean(), s = 0.0;
        for (std::size_t i = 0; i < atoms.size(); ++i)
            s += weight[i] * (atoms[i] - m) * (atoms[i] - m);
        return std::sqrt(std::max(s, 0.0));
    }

    // P(a < Z <= b).
    double interval_prob(double a, double b) const {
        if (b < a) throw ValidationError("interval_prob: b < a");
        return cdf(b) - cdf(a);
    }

    // P(Z > t).
    double exceedance(double t) const { return 1.0 - cdf(t); }
};

inline StepCdf weighted_cdf(const WeightVector& weights, std::span<const double> z_train) {
    if (weights.w.empty()) throw ValidationError("weighted_cdf: empty weights");
    std::vector<std::pair<double, double>> zw;
    zw.reserve(weights.w.size());
    for (const auto& [id, wi] : weights.w) {
        if (id >= z_train.size()) throw ValidationError("weighted_cdf: row id out of range");
        zw.emplace_back(z_train[id], wi);
    }
    std::sort(zw.begin(), zw.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    StepCdf out;
    for (const auto& [zv, wi] : zw) {
        if (!out.atoms.empty() && out.atoms.back() == zv)
            out.weight.back() += wi;
        else {
            out.atoms.push_back(zv);
            out.weight.push_back(wi);
        }
    }
    double total = 0.0;
    for (double wi : out.weight) total += wi;
    if (!(total > 0.0)) throw NumericError("weighted_cdf: zero total weight");
    out.cum.resize(out.weight.size());
    double run = 0.0;
    for (std::size_t i = 0; i < out.weight.size(); ++i) {
        out.weight[i] /= total;
        run += out.weight[i];
        out.cum[i] = run;
    }
    out.cum.back() = 1.0;
    return out;
}

// Mean SSE reduction per variable across trees; meaningful for ranking only.
inline std::vector<double> variable_importance(const Forest& forest) {
    if (forest.trees.empty()) throw ValidationError("variable_importance: empty forest");
    std::vector<double> imp(static_cast<std::size_t>(forest.trees.front().n_features), 0.0);
    for (const Tree& t : forest.trees) {
        if (t.split_gain.size() != imp.size())
            throw ValidationError("variable_importance: inconsistent feature counts");
        for (std::size_t c = 0; c < imp.size(); ++c) imp[c] += t.split_gain[c];
    }
    for (double& v : imp) v /= static_cast<double>(forest.trees.size());
    return imp;
}

} // namespace ember
