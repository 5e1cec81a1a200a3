#pragma once

// Parametric covariance models, empirical variograms and weighted least
// squares model fitting.
//
// Conventions: `range` is the essential range. Exponential and gaussian
// correlations decay to exp(-3) at h = range; the spherical model reaches
// exactly zero there. The nugget acts only at h == 0, so covariance(0) is
// sill + nugget.

#include <cmath>
#include <string>
#include <vector>

#include "ember/core.hpp"
#include "ember/io.hpp"

namespace ember {

enum class VariogramKind { nugget, spherical, exponential, gaussian };

inline const char* kind_name(VariogramKind k) {
    switch (k) {
    case VariogramKind::nugget: return "nugget";
    case VariogramKind::spherical: return "spherical";
    case VariogramKind::exponential: return "exponential";
    case VariogramKind::gaussian: return "gaussian";
    }
    return "?";
}

inline VariogramKind kind_from_string(const std::string& s) {
    if (s == "nugget") return VariogramKind::nugget;
    if (s == "spherical") return VariogramKind::spherical;
    if (s == "exponential") return VariogramKind::exponential;
    if (s == "gaussian") return VariogramKind::gaussian;
    throw ConfigError("unknown variogram kind '" + s + "'");
}

struct VariogramModel {
    VariogramKind kind = VariogramKind::exponential;
    double sill = 1.0;
    double range = 1.0;
    double nugget = 0.0;

    // Correlation part in [0,1], 1 at h = 0.
    double correlation(double h) const {
        h = std::abs(h);
        switch (kind) {
        case VariogramKind::nugget:
            return h == 0.0 ? 1.0 : 0.0;
        case VariogramKind::exponential:
            return std::exp(-3.0 * h / range);
        case VariogramKind::gaussian:
            return std::exp(-3.0 * h * h / (range * range));
        case VariogramKind::spherical: {
            if (h >= range) return 0.0;
            double u = h / range;
            return 1.0 - 1.5 * u + 0.5 * u * u * u;
        }
        }
        return 0.0;
    }

    double covariance(double h) const {
        double c = sill * correlation(h);
        if (h == 0.0) c += nugget;
        return c;
    }

    double total_sill() const { return sill + nugget; }

    double gamma(double h) const { return total_sill() - covariance(h); }

    void validate() const {
        if (!(sill >= 0.0)) throw ValidationError("variogram: sill must be >= 0");
        if (!(nugget >= 0.0)) throw ValidationError("variogram: nugget must be >= 0");
        if (kind != VariogramKind::nugget && !(range > 0.0))
            throw ValidationError("variogram: range must be > 0");
    }
};

inline double covariance(const VariogramModel& m, double h) { return m.covariance(h); }
inline double covariance(const VariogramModel& m, const Location& a, const Location& b) {
    return m.covariance(distance(a, b));
}

// Binned sample variogram. Only bins that received at least one pair are kept;
// `lag` is the mean pair separation inside the bin.
struct EmpiricalVariogram {
    std::vector<double> lag;
    std::vector<double> gamma;
    std::vector<std::size_t> count;
    double max_lag = 0.0;
    double bin_width = 0.0;

    std::size_t size() const { return lag.size(); }
};

inline EmpiricalVariogram empirical_variogram(const std::vector<Location>& locs,
                                              const std::vector<double>& values, int n_bins = 15,
                                              double max_lag = 0.0) {
    if (locs.size() != values.size())
        throw ValidationError("empirical_variogram: size mismatch");
    if (locs.size() < 2) throw ValidationError("empirical_variogram: need at least 2 samples");
    if (n_bins < 1) throw ValidationError("empirical_variogram: n_bins must be >= 1");
    if (max_lag <= 0.0) {
        Location lo = locs.front(), hi = locs.front();
        for (const auto& p : locs)
            for (int i = 0; i < p.dim; ++i) {
                lo.c[static_cast<std::size_t>(i)] = std::min(lo.c[static_cast<std::size_t>(i)], p[i]);
                hi.c[static_cast<std::size_t>(i)] = std::max(hi.c[static_cast<std::size_t>(i)], p[i]);
            }
        max_lag = 0.5 * distance(lo, hi);
        if (max_lag <= 0.0) throw ValidationError("empirical_variogram: degenerate geometry");
    }
    double width = max_lag / n_bins;
    std::vector<double> sum_sq(static_cast<std::size_t>(n_bins), 0.0);
    std::vector<double> sum_h(static_cast<std::size_t>(n_bins), 0.0);
    std::vector<std::size_t> cnt(static_cast<std::size_t>(n_bins), 0);
    for (std::size_t i = 0; i + 1 < locs.size(); ++i) {
        for (std::size_t j = i + 1; j < locs.size(); ++j) {
            double h = distance(locs[i], locs[j]);
            if (h <= 0.0 || h > max_lag) continue;
            auto b = static_cast<std::size_t>(std::min<double>(std::floor(h / width),
                                                                n_bins - 1));
            double d = values[i] - values[j];
            sum_sq[b] += d * d;
            sum_h[b] += h;
            ++cnt[b];
        }
    }
    EmpiricalVariogram out;
    out.max_lag = max_lag;
    out.bin_width = width;
    for (std::size_t b = 0; b < cnt.size(); ++b) {
        if (cnt[b] == 0) continue;
        out.lag.push_back(sum_h[b] / static_cast<double>(cnt[b]));
        out.gamma.push_back(sum_sq[b] / (2.0 * static_cast<double>(cnt[b])));
        out.count.push_back(cnt[b]);
    }
    return out;
}

inline EmpiricalVariogram empirical_variogram(const SampleSet& s, int n_bins = 15,
                                              double max_lag = 0.0) {
    return empirical_variogram(s.locations, s.z, n_bins, max_lag);
}

struct VariogramFit {
    VariogramModel model;
    double weighted_sse = 0.0;
    bool degenerate = false;
};

namespace detail {

// Weighted SSE of gamma(h) = nugget + sill * (1 - corr(h)) for the best
// closed form sill >= 0 at fixed kind/range/nugget. Weights are
// count / max(gamma_hat, eps)^2, favoring short, well populated lags.
inline double fit_sill_at_range(const EmpiricalVariogram& emp, VariogramKind kind, double range,
                                double nugget, double* sill_out) {
    VariogramModel probe{kind, 1.0, range, 0.0};
    double eps = 1e-12;
    double gmax = 0.0;
    for (double g : emp.gamma) gmax = std::max(gmax, g);
    double floor_g = std::max(eps, 1e-6 * gmax);
    double num = 0.0, den = 0.0;
    for (std::size_t b = 0; b < emp.size(); ++b) {
        double g = 1.0 - probe.correlation(emp.lag[b]);
        double w = static_cast<double>(emp.count[b]) /
                   std::pow(std::max(emp.gamma[b], floor_g), 2.0);
        num += w * g * (emp.gamma[b] - nugget);
        den += w * g * g;
    }
    double sill = den > 0.0 ? std::max(0.0, num / den) : 0.0;
    if (sill_out) *sill_out = sill;
    double sse = 0.0;
    for (std::size_t b = 0; b < emp.size(); ++b) {
        double g = 1.0 - probe.correlation(emp.lag[b]);
        double w = static_cast<double>(emp.count[b]) /
                   std::pow(std::max(emp.gamma[b], floor_g), 2.0);
        double r = emp.gamma[b] - (nugget + sill * g);
        sse += w * r * r;
    }
    return sse;
}

} // namespace detail

// Fits nugget (line through the two shortest lags, floored at 0), then for
// each candidate kind scans range on a log grid and refines the best cell by
// golden section, solving the sill in closed form at every range. Returns the
// kind with the lowest weighted SSE.
inline VariogramFit fit_variogram(const EmpiricalVariogram& emp,
                                  std::vector<VariogramKind> kinds = {
                                      VariogramKind::spherical, VariogramKind::exponential,
                                      VariogramKind::gaussian}) {
    if (emp.size() == 0) throw ValidationError("fit_variogram: empty variogram");
    double gmax = 0.0;
    for (double g : emp.gamma) gmax = std::max(gmax, g);
    VariogramFit fit;
    if (gmax <= 0.0) {
        fit.model = {VariogramKind::nugget, 0.0, 1.0, 0.0};
        fit.degenerate = true;
        return fit;
    }
    double intercept = 0.0;
    if (emp.size() >= 2) {
        double h1 = emp.lag[0], h2 = emp.lag[1];
        double g1 = emp.gamma[0], g2 = emp.gamma[1];
        if (h2 > h1) intercept = std::max(0.0, g1 - h1 * (g2 - g1) / (h2 - h1));
        intercept = std::min(intercept, g1);
    }
    // The secant intercept is biased positive for curves that are concave at
    // the origin, so a nugget free candidate always competes on SSE.
    std::vector<double> nuggets{0.0};
    if (intercept > 0.0) nuggets.push_back(intercept);

    double lo = std::max(1e-6 * emp.max_lag, 0.25 * emp.bin_width);
    double hi = 4.0 * emp.max_lag;
    bool first = true;
    for (VariogramKind kind : kinds)
    for (double nugget : nuggets) {
        // Coarse log spaced scan keeps golden section inside a unimodal cell.
        const int n_scan = 64;
        double best_r = lo, best_sse = 0.0;
        for (int k = 0; k < n_scan; ++k) {
            double r = lo * std::pow(hi / lo, static_cast<double>(k) / (n_scan - 1));
            double sse = detail::fit_sill_at_range(emp, kind, r, nugget, nullptr);
            if (k == 0 || sse < best_sse) {
                best_sse = sse;
                best_r = r;
            }
        }
        double a = best_r / std::pow(hi / lo, 1.0 / (n_scan - 1));
        double b = best_r * std::pow(hi / lo, 1.0 / (n_scan - 1));
        a = std::max(a, lo);
        b = std::min(b, hi);
        const double gr = 0.6180339887498949;
        double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
        double f1 = detail::fit_sill_at_range(emp, kind, x1, nugget, nullptr);
        double f2 = detail::fit_sill_at_range(emp, kind, x2, nugget, nullptr);
        for (int it = 0; it < 60 && (b - a) > 1e-10 * emp.max_lag; ++it) {
            if (f1 <= f2) {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - gr * (b - a);
                f1 = detail::fit_sill_at_range(emp, kind, x1, nugget, nullptr);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + gr * (b - a);
                f2 = detail::fit_sill_at_range(emp, kind, x2, nugget, nullptr);
            }
        }
        double r_star = 0.5 * (a + b);
        double sill = 0.0;
        double sse = detail::fit_sill_at_range(emp, kind, r_star, nugget, &sill);
        if (first || sse < fit.weighted_sse) {
            fit.model = {kind, sill, r_star, nugget};
            fit.weighted_sse = sse;
            first = false;
        }
    }
    if (fit.model.sill <= 0.0) {
        fit.model = {VariogramKind::nugget, 0.0, 1.0, intercept};
        fit.degenerate = true;
    }
    return fit;
}

inline void save_variogram_csv(const EmpiricalVariogram& emp, const VariogramModel* fitted,
                               const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write variogram file " + path.string());
    out << "lag,gamma,count";
    if (fitted) out << ",model_gamma";
    out << '\n';
    for (std::size_t b = 0; b < emp.size(); ++b) {
        out << detail::format_double(emp.lag[b]) << ',' << detail::format_double(emp.gamma[b])
            << ',' << emp.count[b];
        if (fitted) out << ',' << detail::format_double(fitted->gamma(emp.lag[b]));
        out << '\n';
    }
}

} // namespace ember
