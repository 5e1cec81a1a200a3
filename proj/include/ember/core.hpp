#pragma once

// Domain types: point locations, the training sample table, raster grids and
// the run configuration shared by training, estimation and simulation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ember/common.hpp"

namespace ember {

// A point in 2 or 3 dimensions. Unused trailing coordinates stay 0 so distance
// loops can always run over `dim`.
struct Location {
    std::array<double, 3> c{0.0, 0.0, 0.0};
    int dim = 2;

    Location() = default;
    Location(double x, double y) : c{x, y, 0.0}, dim(2) {}
    Location(double x, double y, double z) : c{x, y, z}, dim(3) {}

    double x() const { return c[0]; }
    double y() const { return c[1]; }
    double operator[](int i) const { return c[static_cast<std::size_t>(i)]; }
};

inline double distance(const Location& a, const Location& b) {
    double s = 0.0;
    int d = std::max(a.dim, b.dim);
    for (int i = 0; i < d; ++i) {
        double t = a.c[static_cast<std::size_t>(i)] - b.c[static_cast<std::size_t>(i)];
        s += t * t;
    }
    return std::sqrt(s);
}

// Training data: n locations with a primary value z and p secondary values per
// row. The secondary matrix is stored row major.
class SampleSet {
public:
    std::vector<Location> locations;
    std::vector<double> z;
    std::vector<std::string> secondary_names;

    std::size_t size() const { return locations.size(); }
    std::size_t n_secondary() const { return secondary_names.size(); }
    int dim() const { return locations.empty() ? 2 : locations.front().dim; }

    double y_at(std::size_t row, std::size_t col) const {
        return y_[row * secondary_names.size() + col];
    }
    std::span<const double> y_row(std::size_t row) const {
        return {y_.data() + row * secondary_names.size(), secondary_names.size()};
    }
    const std::vector<double>& y_flat() const { return y_; }

    void push_back(const Location& loc, double zval, std::span<const double> yrow) {
        if (yrow.size() != secondary_names.size())
            throw ValidationError("SampleSet: secondary row width mismatch");
        locations.push_back(loc);
        z.push_back(zval);
        y_.insert(y_.end(), yrow.begin(), yrow.end());
    }

    // Axis-aligned bounding box over all locations.
    std::pair<Location, Location> bounding_box() const {
        if (locations.empty()) throw ValidationError("SampleSet: empty");
        Location lo = locations.front(), hi = locations.front();
        for (const auto& p : locations) {
            for (int i = 0; i < p.dim; ++i) {
                lo.c[static_cast<std::size_t>(i)] = std::min(lo.c[static_cast<std::size_t>(i)], p[i]);
                hi.c[static_cast<std::size_t>(i)] = std::max(hi.c[static_cast<std::size_t>(i)], p[i]);
            }
        }
        return {lo, hi};
    }

    double bbox_diagonal() const {
        auto [lo, hi] = bounding_box();
        return distance(lo, hi);
    }

    // Throws ValidationError on size mismatches, non finite values, mixed
    // dimensions or duplicate locations (closer than 1e-9 of the bbox diagonal).
    void validate() const {
        std::size_t n = locations.size();
        if (n == 0) throw ValidationError("SampleSet: no samples");
        if (z.size() != n) throw ValidationError("SampleSet: z size mismatch");
        if (y_.size() != n * secondary_names.size())
            throw ValidationError("SampleSet: secondary matrix size mismatch");
        int d = locations.front().dim;
        for (const auto& p : locations) {
            if (p.dim != d) throw ValidationError("SampleSet: mixed location dimensions");
            for (int i = 0; i < d; ++i)
                if (!std::isfinite(p[i])) throw ValidationError("SampleSet: non-finite coordinate");
        }
        for (double v : z)
            if (!std::isfinite(v)) throw ValidationError("SampleSet: non-finite z value");
        for (double v : y_)
            if (!std::isfinite(v)) throw ValidationError("SampleSet: non-finite secondary value");
        check_duplicates();
    }

private:
    std::vector<double> y_;

    void check_duplicates() const {
        std::size_t n = locations.size();
        if (n < 2) return;
        double tol = 1e-9 * bbox_diagonal();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return locations[a].x() < locations[b].x();
        });
        // Any pair within distance tol also has |dx| <= tol, so scanning a
        // window along the x-sorted order finds every duplicate.
        for (std::size_t i = 0; i + 1 < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                if (locations[order[j]].x() - locations[order[i]].x() > tol) break;
                if (distance(locations[order[i]], locations[order[j]]) <= tol)
                    throw ValidationError("SampleSet: duplicate locations at rows " +
                                          std::to_string(std::min(order[i], order[j])) + " and " +
                                          std::to_string(std::max(order[i], order[j])));
            }
        }
    }
};

// Regular 2-D grid of square cells. Row 0 is the bottom row (nearest yll);
// values are stored row major, index = row * ncols + col. Coordinates refer to
// cell centers.
class RasterGrid {
public:
    struct Layer {
        std::string name;
        std::vector<double> values;
    };

    double xll = 0.0, yll = 0.0;
    double cell = 1.0;
    int ncols = 0, nrows = 0;
    double nodata = -9999.0;

    RasterGrid() = default;
    RasterGrid(int ncols_, int nrows_, double cell_, double xll_ = 0.0, double yll_ = 0.0)
        : xll(xll_), yll(yll_), cell(cell_), ncols(ncols_), nrows(nrows_) {
        if (ncols_ <= 0 || nrows_ <= 0 || !(cell_ > 0.0))
            throw ValidationError("RasterGrid: bad geometry");
    }

    std::size_t n_cells() const {
        return static_cast<std::size_t>(ncols) * static_cast<std::size_t>(nrows);
    }
    std::size_t index_of(int col, int row) const {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(ncols) +
               static_cast<std::size_t>(col);
    }

    Location cell_center(int col, int row) const {
        return {xll + (col + 0.5) * cell, yll + (row + 0.5) * cell};
    }

    bool contains(const Location& p) const {
        return p.x() >= xll && p.x() < xll + ncols * cell && p.y() >= yll &&
               p.y() < yll + nrows * cell;
    }

    // Cell holding p; the right and top outer edges are outside.
    std::pair<int, int> cell_of(const Location& p) const {
        if (!contains(p))
            throw OutOfDomainError("RasterGrid: location (" + std::to_string(p.x()) + ", " +
                                   std::to_string(p.y()) + ") outside grid extent");
        int col = static_cast<int>(std::floor((p.x() - xll) / cell));
        int row = static_cast<int>(std::floor((p.y() - yll) / cell));
        col = std::clamp(col, 0, ncols - 1);
        row = std::clamp(row, 0, nrows - 1);
        return {col, row};
    }

    bool has_layer(const std::string& name) const {
        for (const auto& l : layers_)
            if (l.name == name) return true;
        return false;
    }

    const std::vector<double>& layer(const std::string& name) const {
        for (const auto& l : layers_)
            if (l.name == name) return l.values;
        throw OutOfDomainError("RasterGrid: no layer named '" + name + "'");
    }

    std::vector<double>& add_layer(const std::string& name, std::vector<double> values = {}) {
        if (has_layer(name)) throw ValidationError("RasterGrid: duplicate layer '" + name + "'");
        if (values.empty()) values.assign(n_cells(), nodata);
        if (values.size() != n_cells())
            throw ValidationError("RasterGrid: layer '" + name + "' size mismatch");
        layers_.push_back({name, std::move(values)});
        return layers_.back().values;
    }

    const std::vector<Layer>& layers() const { return layers_; }

    bool is_nodata(double v) const { return v == nodata; }

    double value_at(const std::string& name, const Location& p) const {
        auto [col, row] = cell_of(p);
        return layer(name)[index_of(col, row)];
    }

private:
    std::vector<Layer> layers_;
};

// Value of the cell containing p. For single layer grids the layer argument
// may be omitted.
inline double sample_grid_at(const RasterGrid& g, const std::string& layer, const Location& p) {
    return g.value_at(layer, p);
}

inline double sample_grid_at(const RasterGrid& g, const Location& p) {
    if (g.layers().size() != 1)
        throw OutOfDomainError("sample_grid_at: grid has " +
                               std::to_string(g.layers().size()) +
                               " layers, name one explicitly");
    return g.layers().front().values[g.index_of(g.cell_of(p).first, g.cell_of(p).second)];
}

struct ForestParams {
    int n_trees = 100;
    int mtry = 0;                     // 0 = ceil(p/3) at train time
    int min_leaf = 5;
    double subsample_fraction = 0.632;
};

struct SimulationParams {
    int n_realizations = 1;
    int gibbs_burn_in = 100;
    int hermite_order = 1;            // N in the residual correlation expansion
};

struct RunConfig {
    ForestParams forest;
    SimulationParams sim;
    std::uint64_t seed = 0;
    std::vector<double> thresholds;   // reporting thresholds for prob_gt layers
    int threads = 0;                  // 0 = hardware concurrency

    void validate() const {
        if (forest.n_trees < 1) throw ConfigError("config: n_trees must be >= 1");
        if (forest.min_leaf < 1) throw ConfigError("config: min_leaf must be >= 1");
        if (forest.mtry < 0) throw ConfigError("config: mtry must be >= 0");
        if (!(forest.subsample_fraction > 0.0 && forest.subsample_fraction <= 1.0))
            throw ConfigError("config: subsample_fraction must be in (0,1]");
        if (sim.n_realizations < 1) throw ConfigError("config: n_realizations must be >= 1");
        if (sim.gibbs_burn_in < 0) throw ConfigError("config: gibbs_burn_in must be >= 0");
        if (sim.hermite_order < 1) throw ConfigError("config: hermite_order must be >= 1");
        if (threads < 0) throw ConfigError("config: threads must be >= 0");
    }
};

} // namespace ember
