#pragma once

// Conditional simulation through a stationary gaussian sampling field.
//
// The envelope gives every location a conditional distribution; a realization
// samples each cell's distribution at a correlated uniform U(x) = Phi(X(x)),
// where X is a unit gaussian random field. The correlation of X is inferred
// from the standardized envelope residuals of the data: their spatial
// covariance C_R(h) expands over Hermite coefficients of the local quantile
// transforms as sum_i a_i rho^i(h), which is inverted per lag bin and fitted
// with a parametric model. At the data, X is constrained to the gaussian
// interval reproducing each datum's envelope atom, sampled with a Gibbs
// sweep over the truncated conditionals.

#include <fftw3.h>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

#include "ember/common.hpp"
#include "ember/core.hpp"
#include "ember/embedding.hpp"
#include "ember/kriging.hpp"
#include "ember/variogram.hpp"

namespace ember {

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature for the standard normal measure.

struct GaussHermite {
    std::vector<double> node;
    std::vector<double> weight; // sums to 1
};

// Golub-Welsch on the Jacobi matrix of the probabilists' Hermite recurrence:
// zero diagonal, off diagonal sqrt(i).
inline GaussHermite gauss_hermite(int n) {
    if (n < 1) throw ValidationError("gauss_hermite: n must be >= 1");
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) {
        double b = std::sqrt(static_cast<double>(i));
        J(i, i - 1) = b;
        J(i - 1, i) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    if (es.info() != Eigen::Success) throw NumericError("gauss_hermite: eigensolve failed");
    GaussHermite gh;
    gh.node.resize(static_cast<std::size_t>(n));
    gh.weight.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        gh.node[static_cast<std::size_t>(k)] = es.eigenvalues()[k];
        double v = es.eigenvectors()(0, k);
        gh.weight[static_cast<std::size_t>(k)] = v * v;
    }
    return gh;
}

// Normalized probabilists' Hermite values eta_0..eta_order at x.
// eta_{i+1} = (x eta_i - sqrt(i) eta_{i-1}) / sqrt(i+1).
inline void normalized_hermite(int order, double x, std::vector<double>& out) {
    out.resize(static_cast<std::size_t>(order) + 1);
    out[0] = 1.0;
    if (order == 0) return;
    out[1] = x;
    for (int i = 1; i < order; ++i)
        out[static_cast<std::size_t>(i) + 1] =
            (x * out[static_cast<std::size_t>(i)] -
             std::sqrt(static_cast<double>(i)) * out[static_cast<std::size_t>(i) - 1]) /
            std::sqrt(static_cast<double>(i) + 1.0);
}

// Hermite coefficients phi_0..phi_order of the envelope's quantile transform
// Q(Phi(X)), by 128 node quadrature. phi_0 is the envelope mean and
// sum_{i>=1} phi_i^2 converges to its variance as order grows.
inline std::vector<double> hermite_coefficients(const Envelope& env, int order) {
    if (order < 0) throw ValidationError("hermite_coefficients: negative order");
    static const GaussHermite gh = gauss_hermite(128);
    std::vector<double> phi(static_cast<std::size_t>(order) + 1, 0.0);
    std::vector<double> eta;
    for (std::size_t k = 0; k < gh.node.size(); ++k) {
        double x = gh.node[k];
        double q = env.quantile(normal_cdf(x));
        normalized_hermite(order, x, eta);
        for (int i = 0; i <= order; ++i)
            phi[static_cast<std::size_t>(i)] += gh.weight[k] * q * eta[static_cast<std::size_t>(i)];
    }
    return phi;
}

// ---------------------------------------------------------------------------
// Sampling field correlation inference.

struct SamplingFieldModel {
    VariogramModel correlation; // sill 1, nugget 0
    int hermite_order = 1;
    std::vector<double> bin_lag;  // diagnostics: per bin inverted correlation
    std::vector<double> bin_rho;
    std::vector<std::size_t> bin_count;
    bool fell_back = false; // true when inference had nothing usable to fit
};

struct ResidualSet {
    std::vector<double> r;            // standardized residuals, one per kept datum
    std::vector<std::uint32_t> kept;  // sample ids, in order
    std::size_t skipped = 0;          // envelopes too narrow to standardize
};

// (z_i - mean_i) / std_i against the envelope at each datum's own location.
inline ResidualSet standardized_residuals(const EmberModel& model) {
    ResidualSet out;
    double zsd = std::sqrt(variance_of(model.samples.z));
    double floor_sd = std::max(1e-9 * zsd, 1e-300);
    for (std::size_t i = 0; i < model.samples.size(); ++i) {
        Envelope env = envelope_at(model, model.samples.locations[i], model.samples.y_row(i));
        double sd = env.stddev();
        if (!(sd > floor_sd)) {
            ++out.skipped;
            continue;
        }
        out.r.push_back((model.samples.z[i] - env.mean()) / sd);
        out.kept.push_back(static_cast<std::uint32_t>(i));
    }
    return out;
}

struct CovarianceBins {
    std::vector<double> lag;
    std::vector<double> cov; // mean pair product per bin
    std::vector<std::size_t> count;
    double max_lag = 0.0;
};

inline CovarianceBins residual_covariance_bins(const std::vector<Location>& locs,
                                               const std::vector<double>& r, int n_bins,
                                               double max_lag) {
    if (locs.size() != r.size() || locs.size() < 2)
        throw ValidationError("residual_covariance_bins: bad input");
    std::vector<double> sum(static_cast<std::size_t>(n_bins), 0.0);
    std::vector<double> hsum(static_cast<std::size_t>(n_bins), 0.0);
    std::vector<std::size_t> cnt(static_cast<std::size_t>(n_bins), 0);
    double width = max_lag / n_bins;
    for (std::size_t i = 0; i + 1 < locs.size(); ++i)
        for (std::size_t j = i + 1; j < locs.size(); ++j) {
            double h = distance(locs[i], locs[j]);
            if (h <= 0.0 || h > max_lag) continue;
            auto b = static_cast<std::size_t>(std::min<double>(std::floor(h / width), n_bins - 1));
            sum[b] += r[i] * r[j];
            hsum[b] += h;
            ++cnt[b];
        }
    CovarianceBins out;
    out.max_lag = max_lag;
    for (std::size_t b = 0; b < cnt.size(); ++b) {
        if (cnt[b] == 0) continue;
        out.lag.push_back(hsum[b] / static_cast<double>(cnt[b]));
        out.cov.push_back(sum[b] / static_cast<double>(cnt[b]));
        out.count.push_back(cnt[b]);
    }
    return out;
}

// Solves sum_{i=1..N} a_i rho^i = c for rho. The a_i are nonnegative and sum
// to 1, so the polynomial is increasing on [0,1] with value range [0,1];
// bisection handles both signs and clamps outside [-1,1].
inline double solve_correlation(std::span<const double> a, double c) {
    auto f = [&](double rho) {
        double acc = 0.0, p = 1.0;
        for (double ai : a) {
            p *= rho;
            acc += ai * p;
        }
        return acc;
    };
    if (c >= 1.0) return 1.0;
    if (c <= f(-1.0)) return -1.0;
    double lo, hi;
    if (c >= 0.0) {
        lo = 0.0;
        hi = 1.0;
    } else {
        lo = -1.0;
        hi = 0.0;
    }
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (f(mid) < c)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

// Infers the correlation model of the sampling field. With order 1 the binned
// residual covariance is already the correlation estimate; higher orders
// correct each bin through the Hermite expansion before fitting.
inline SamplingFieldModel infer_sampling_correlation(const EmberModel& model, int order,
                                                     int n_bins = 15, double max_lag = 0.0) {
    if (order < 1) throw ValidationError("infer_sampling_correlation: order must be >= 1");
    SamplingFieldModel out;
    out.hermite_order = order;
    ResidualSet rs = standardized_residuals(model);
    if (rs.r.size() < 2) {
        out.correlation = {VariogramKind::exponential, 1.0,
                           std::max(model.samples.bbox_diagonal() / 4.0, 1e-6), 0.0};
        out.fell_back = true;
        return out;
    }
    std::vector<Location> locs;
    locs.reserve(rs.kept.size());
    for (std::uint32_t id : rs.kept) locs.push_back(model.samples.locations[id]);
    if (max_lag <= 0.0) {
        Location lo = locs.front(), hi = locs.front();
        for (const auto& p : locs)
            for (int i = 0; i < p.dim; ++i) {
                lo.c[static_cast<std::size_t>(i)] = std::min(lo.c[static_cast<std::size_t>(i)], p[i]);
                hi.c[static_cast<std::size_t>(i)] = std::max(hi.c[static_cast<std::size_t>(i)], p[i]);
            }
        // Residuals decorrelate well inside the data extent once the envelope
        // mean is subtracted; a quarter diagonal keeps the bins on the part of
        // the curve that still carries signal.
        max_lag = 0.25 * distance(lo, hi);
    }
    CovarianceBins bins = residual_covariance_bins(locs, rs.r, n_bins, max_lag);

    // Expansion coefficients a_i averaged over the data envelopes, normalized
    // to sum 1. Order 1 short-circuits to a_1 = 1.
    std::vector<double> a(static_cast<std::size_t>(order), 0.0);
    if (order == 1) {
        a[0] = 1.0;
    } else {
        for (std::uint32_t id : rs.kept) {
            Envelope env =
                envelope_at(model, model.samples.locations[id], model.samples.y_row(id));
            std::vector<double> phi = hermite_coefficients(env, order);
            double sd = env.stddev();
            for (int i = 1; i <= order; ++i) {
                double t = phi[static_cast<std::size_t>(i)] / sd;
                a[static_cast<std::size_t>(i) - 1] += t * t;
            }
        }
        double s = 0.0;
        for (double v : a) s += v;
        if (s > 0.0)
            for (double& v : a) v /= s;
        else
            a[0] = 1.0;
    }

    out.bin_lag = bins.lag;
    out.bin_count = bins.count;
    out.bin_rho.resize(bins.lag.size());
    for (std::size_t b = 0; b < bins.lag.size(); ++b)
        out.bin_rho[b] = solve_correlation(a, bins.cov[b]);

    // Fit 1 - rho as a variogram constrained to unit sill, zero nugget. The
    // family is pinned to exponential: it embeds cleanly on the padded torus
    // and one decay parameter is all the binned correlations can support.
    EmpiricalVariogram emp;
    emp.max_lag = max_lag;
    emp.bin_width = max_lag / n_bins;
    for (std::size_t b = 0; b < bins.lag.size(); ++b) {
        emp.lag.push_back(bins.lag[b]);
        emp.gamma.push_back(1.0 - out.bin_rho[b]);
        emp.count.push_back(bins.count[b]);
    }
    if (emp.size() < 2) {
        out.correlation = {VariogramKind::exponential, 1.0,
                           std::max(model.samples.bbox_diagonal() / 4.0, 1e-6), 0.0};
        out.fell_back = true;
        return out;
    }
    VariogramFit fit = fit_variogram(emp, {VariogramKind::exponential});
    if (fit.degenerate) {
        out.correlation = {VariogramKind::exponential, 1.0,
                           std::max(model.samples.bbox_diagonal() / 4.0, 1e-6), 0.0};
        out.fell_back = true;
        return out;
    }
    out.correlation = {fit.model.kind, 1.0, fit.model.range, 0.0};
    return out;
}

// ---------------------------------------------------------------------------
// Unit gaussian random fields by circulant embedding.

struct GaussianField {
    std::vector<double> values; // grid layout, row 0 at the bottom
    int padding_factor = 0;
    double clipped_fraction = 0.0; // negative spectral mass removed
    bool covariance_warning = false;
};

namespace detail {

// FFTW planning is not thread safe; executions on distinct plans are.
inline std::mutex& fftw_plan_mutex() {
    static std::mutex m;
    return m;
}

struct FftwBuffer {
    fftw_complex* p = nullptr;
    explicit FftwBuffer(std::size_t n) : p(fftw_alloc_complex(n)) {
        if (!p) throw NumericError("fftw allocation failed");
    }
    ~FftwBuffer() { fftw_free(p); }
    FftwBuffer(const FftwBuffer&) = delete;
    FftwBuffer& operator=(const FftwBuffer&) = delete;
};

} // namespace detail

// Draws one unit variance field with the given correlation on the grid
// geometry. The correlation is embedded on a torus padded by factor 2, 3 or 4;
// remaining negative spectral mass at factor 4 is clipped to zero, recorded in
// clipped_fraction and flagged, never silently dropped.
inline GaussianField simulate_gaussian_field(const SamplingFieldModel& field,
                                             const RasterGrid& grid, std::uint64_t seed) {
    const VariogramModel& corr = field.correlation;
    GaussianField out;
    const int nx = grid.ncols, ny = grid.nrows;

    int lx = 0, ly = 0;
    std::vector<double> lambda;
    double total_mass = 0.0, neg_mass = 0.0;
    for (int factor : {2, 3, 4}) {
        lx = nx * factor;
        ly = ny * factor;
        std::size_t L = static_cast<std::size_t>(lx) * static_cast<std::size_t>(ly);
        detail::FftwBuffer in(L), spec(L);
        for (int iy = 0; iy < ly; ++iy) {
            double dy = std::min(iy, ly - iy) * grid.cell;
            for (int ix = 0; ix < lx; ++ix) {
                double dx = std::min(ix, lx - ix) * grid.cell;
                std::size_t t = static_cast<std::size_t>(iy) * lx + ix;
                in.p[t][0] = corr.correlation(std::hypot(dx, dy));
                in.p[t][1] = 0.0;
            }
        }
        {
            std::lock_guard<std::mutex> lock(detail::fftw_plan_mutex());
            fftw_plan plan = fftw_plan_dft_2d(ly, lx, in.p, spec.p, FFTW_FORWARD, FFTW_ESTIMATE);
            fftw_execute(plan);
            fftw_destroy_plan(plan);
        }
        lambda.resize(L);
        total_mass = 0.0;
        neg_mass = 0.0;
        for (std::size_t t = 0; t < L; ++t) {
            double v = spec.p[t][0]; // spectrum of a symmetric kernel is real
            total_mass += std::abs(v);
            if (v < 0.0) {
                neg_mass += -v;
                v = 0.0;
            }
            lambda[t] = v;
        }
        out.padding_factor = factor;
        out.clipped_fraction = total_mass > 0.0 ? neg_mass / total_mass : 0.0;
        if (out.clipped_fraction <= 1e-9) break;
    }
    out.covariance_warning = out.clipped_fraction > 1e-9;

    const std::size_t L = static_cast<std::size_t>(lx) * static_cast<std::size_t>(ly);
    detail::FftwBuffer zin(L), zout(L);
    RngStream rng(seed);
    double norm = 1.0 / static_cast<double>(L);
    for (std::size_t t = 0; t < L; ++t) {
        double s = std::sqrt(lambda[t] * norm);
        zin.p[t][0] = s * rng.normal();
        zin.p[t][1] = s * rng.normal();
    }
    {
        std::lock_guard<std::mutex> lock(detail::fftw_plan_mutex());
        fftw_plan plan = fftw_plan_dft_2d(ly, lx, zin.p, zout.p, FFTW_FORWARD, FFTW_ESTIMATE);
        fftw_execute(plan);
        fftw_destroy_plan(plan);
    }
    out.values.resize(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny));
    for (int r = 0; r < ny; ++r)
        for (int c = 0; c < nx; ++c)
            out.values[static_cast<std::size_t>(r) * nx + c] =
                zout.p[static_cast<std::size_t>(r) * lx + c][0];
    return out;
}

// ---------------------------------------------------------------------------
// Data conditioning.

struct DataConditioning {
    std::vector<double> u_low, u_high;     // uniform-space interval per datum
    std::vector<double> matched_atom;      // envelope atom reproduced at the datum
    std::vector<char> exact;               // atom equals the datum exactly
    std::size_t mismatches = 0;            // data matched to a nearest atom instead
};

// For each datum, the envelope at its own location must contain an atom equal
// to the datum (the datum is a training response). The gaussian value at the
// datum is confined to the interval mapping to that atom under the quantile
// transform: u in (F(atom-), F(atom)].
inline DataConditioning data_intervals(const EmberModel& model) {
    DataConditioning out;
    const std::size_t n = model.samples.size();
    out.u_low.resize(n);
    out.u_high.resize(n);
    out.matched_atom.resize(n);
    out.exact.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Envelope env = envelope_at(model, model.samples.locations[i], model.samples.y_row(i));
        const StepCdf& cdf = env.distribution();
        double z = model.samples.z[i];
        auto it = std::lower_bound(cdf.atoms.begin(), cdf.atoms.end(), z);
        std::size_t k;
        if (it != cdf.atoms.end() && *it == z) {
            k = static_cast<std::size_t>(it - cdf.atoms.begin());
            out.exact[i] = 1;
        } else {
            // Nearest atom by absolute distance; ties resolve to the lower one.
            out.exact[i] = 0;
            ++out.mismatches;
            if (it == cdf.atoms.begin())
                k = 0;
            else if (it == cdf.atoms.end())
                k = cdf.atoms.size() - 1;
            else {
                std::size_t hi = static_cast<std::size_t>(it - cdf.atoms.begin());
                k = (z - cdf.atoms[hi - 1] <= cdf.atoms[hi] - z) ? hi - 1 : hi;
            }
        }
        out.matched_atom[i] = cdf.atoms[k];
        double lo = k == 0 ? 0.0 : cdf.cum[k - 1];
        double hi = cdf.cum[k];
        if (hi - lo < 1e-12) {
            // Degenerate slab; widen symmetrically inside [0,1].
            double mid = 0.5 * (lo + hi);
            lo = std::max(0.0, mid - 5e-13);
            hi = std::min(1.0, mid + 5e-13);
        }
        out.u_low[i] = lo;
        out.u_high[i] = hi;
    }
    return out;
}

namespace detail {

// Gibbs sweeps over the truncated gaussian vector: each coordinate in turn is
// redrawn from its full conditional N(mu_i, 1/P_ii) truncated to its interval.
// The running s = P g is updated incrementally.
inline std::vector<double> gibbs_truncated(const Eigen::MatrixXd& precision,
                                           const DataConditioning& cond, int burn_in,
                                           RngStream& rng) {
    const auto n = precision.rows();
    std::vector<double> g(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        double mid = 0.5 * (cond.u_low[static_cast<std::size_t>(i)] +
                            cond.u_high[static_cast<std::size_t>(i)]);
        g[static_cast<std::size_t>(i)] = normal_quantile(std::clamp(mid, 1e-300, 1.0 - 1e-16));
    }
    Eigen::Map<Eigen::VectorXd> gv(g.data(), n);
    Eigen::VectorXd s = precision * gv;
    for (int sweep = 0; sweep < burn_in; ++sweep) {
        for (Eigen::Index i = 0; i < n; ++i) {
            double pii = precision(i, i);
            double mu = g[static_cast<std::size_t>(i)] - s[i] / pii;
            double sigma = 1.0 / std::sqrt(pii);
            double glo = normal_quantile(cond.u_low[static_cast<std::size_t>(i)]);
            double ghi = normal_quantile(cond.u_high[static_cast<std::size_t>(i)]);
            double pa = normal_cdf((glo - mu) / sigma);
            double pb = normal_cdf((ghi - mu) / sigma);
            double gnew;
            if (pb - pa > 1e-300) {
                double u = pa + rng.u01() * (pb - pa);
                gnew = mu + sigma * normal_quantile(std::clamp(u, 1e-300, 1.0 - 1e-16));
            } else {
                // The conditional mass sits entirely outside float resolution;
                // land on the nearest interval edge.
                gnew = mu < glo ? glo : ghi;
            }
            if (std::isfinite(glo)) gnew = std::max(gnew, glo);
            if (std::isfinite(ghi)) gnew = std::min(gnew, ghi);
            double delta = gnew - g[static_cast<std::size_t>(i)];
            if (delta != 0.0) {
                s += delta * precision.col(i);
                g[static_cast<std::size_t>(i)] = gnew;
            }
        }
    }
    return g;
}

inline Eigen::MatrixXd correlation_precision(const VariogramModel& corr,
                                             const std::vector<Location>& locs) {
    const auto n = static_cast<Eigen::Index>(locs.size());
    Eigen::MatrixXd S(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        S(i, i) = 1.0 + 1e-10;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double c = corr.correlation(distance(locs[static_cast<std::size_t>(i)],
                                                 locs[static_cast<std::size_t>(j)]));
            S(i, j) = c;
            S(j, i) = c;
        }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success)
        throw NumericError("conditioning: correlation matrix is not positive definite");
    return llt.solve(Eigen::MatrixXd::Identity(n, n));
}

} // namespace detail

// Gaussian values at the data locations consistent with both the conditioning
// intervals and the field correlation.
inline std::vector<double> sample_conditioning_values(const DataConditioning& cond,
                                                      const SamplingFieldModel& field,
                                                      const std::vector<Location>& locs,
                                                      int burn_in, std::uint64_t seed) {
    if (locs.size() != cond.u_low.size())
        throw ValidationError("sample_conditioning_values: size mismatch");
    Eigen::MatrixXd P = detail::correlation_precision(field.correlation, locs);
    RngStream rng(seed);
    return detail::gibbs_truncated(P, cond, burn_in, rng);
}

// Conditions the unconditional field on the data values g by simple kriging of
// the mismatch, then maps through Phi. Returns one uniform value per cell.
inline std::vector<double> conditional_uniform_field(const std::vector<double>& unconditional,
                                                     const std::vector<double>& g,
                                                     const SamplingFieldModel& field,
                                                     const RasterGrid& grid,
                                                     const std::vector<Location>& data_locs,
                                                     int threads = 0) {
    if (unconditional.size() != grid.n_cells())
        throw ValidationError("conditional_uniform_field: field size mismatch");
    if (g.size() != data_locs.size())
        throw ValidationError("conditional_uniform_field: data size mismatch");
    std::vector<double> u(grid.n_cells());
    std::vector<double> cond = unconditional;
    if (!data_locs.empty()) {
        std::vector<double> resid(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            auto [c, r] = grid.cell_of(data_locs[i]);
            resid[i] = g[i] - unconditional[grid.index_of(c, r)];
        }
        KrigingSystem sys(data_locs, resid, field.correlation, 0.0);
        std::vector<Location> centers(grid.n_cells());
        for (int r = 0; r < grid.nrows; ++r)
            for (int c = 0; c < grid.ncols; ++c)
                centers[grid.index_of(c, r)] = grid.cell_center(c, r);
        std::vector<double> adj = sys.dual_krige_field(centers, threads);
        for (std::size_t t = 0; t < cond.size(); ++t) cond[t] += adj[t];
    }
    for (std::size_t t = 0; t < u.size(); ++t) u[t] = normal_cdf(cond[t]);
    return u;
}

struct Realization {
    RasterGrid grid; // single layer "sim"
    int padding_factor = 0;
    double clipped_fraction = 0.0;
    bool covariance_warning = false;
};

// Draws conditional realizations. Data locations are snapped to their cell
// centers (two data in one cell is an error); at those cells the realization
// writes the matched envelope atom directly, everywhere else it samples the
// cell envelope at the conditional uniform value.
inline std::vector<Realization> simulate(const EmberModel& model, const RasterGrid& grid,
                                         const SamplingFieldModel& field, int n_realizations,
                                         std::uint64_t seed, int threads = 0) {
    if (n_realizations < 1) throw ValidationError("simulate: n_realizations must be >= 1");
    const std::size_t n = model.samples.size();
    const std::size_t nc = grid.n_cells();

    // Snap data into cells.
    std::vector<Location> snapped(n);
    std::vector<std::size_t> data_cell(n);
    std::vector<char> is_data(nc, 0);
    for (std::size_t i = 0; i < n; ++i) {
        auto [c, r] = grid.cell_of(model.samples.locations[i]);
        std::size_t t = grid.index_of(c, r);
        if (is_data[t])
            throw ValidationError("simulate: two data fall in one grid cell");
        is_data[t] = 1;
        data_cell[i] = t;
        snapped[i] = grid.cell_center(c, r);
    }

    DataConditioning cond = data_intervals(model);
    Eigen::MatrixXd P = detail::correlation_precision(field.correlation, snapped);

    // Uniform fields for every realization, then one envelope pass per cell.
    const auto nr = static_cast<std::size_t>(n_realizations);
    std::vector<std::vector<double>> ufields(nr);
    std::vector<std::vector<double>> simvals(nr, std::vector<double>(nc, grid.nodata));
    std::vector<Realization> out(nr);
    for (std::size_t rz = 0; rz < nr; ++rz) {
        GaussianField gf = simulate_gaussian_field(field, grid, derive_seed(seed, "field", rz));
        RngStream grng(derive_seed(seed, "gibbs", rz));
        std::vector<double> g = detail::gibbs_truncated(P, cond, model.config.sim.gibbs_burn_in, grng);
        ufields[rz] = conditional_uniform_field(gf.values, g, field, grid, snapped, threads);
        out[rz].padding_factor = gf.padding_factor;
        out[rz].clipped_fraction = gf.clipped_fraction;
        out[rz].covariance_warning = gf.covariance_warning;
    }

    detail::GridFeatures gfeat = detail::assemble_grid_features(model, grid, threads);
    const std::size_t p_tot = model.n_features();
    parallel_for(nc, [&](std::size_t b, std::size_t e) {
        for (std::size_t t = b; t < e; ++t) {
            if (is_data[t] || !gfeat.valid[t]) continue;
            Envelope env = envelope_from_features(
                model, std::span<const double>(gfeat.values.data() + t * p_tot, p_tot));
            for (std::size_t rz = 0; rz < nr; ++rz)
                simvals[rz][t] = env.quantile(ufields[rz][t]);
        }
    }, threads);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t rz = 0; rz < nr; ++rz)
            simvals[rz][data_cell[i]] = cond.matched_atom[i];
    for (std::size_t rz = 0; rz < nr; ++rz) {
        out[rz].grid = RasterGrid(grid.ncols, grid.nrows, grid.cell, grid.xll, grid.yll);
        out[rz].grid.nodata = grid.nodata;
        out[rz].grid.add_layer("sim", std::move(simvals[rz]));
    }
    return out;
}

// Cellwise average over realizations; NODATA where any realization is NODATA.
inline RasterGrid posterior_mean(std::span<const Realization> reals) {
    if (reals.empty()) throw ValidationError("posterior_mean: no realizations");
    const RasterGrid& g0 = reals.front().grid;
    RasterGrid out(g0.ncols, g0.nrows, g0.cell, g0.xll, g0.yll);
    out.nodata = g0.nodata;
    std::vector<double>& m = out.add_layer("mean");
    for (std::size_t t = 0; t < out.n_cells(); ++t) {
        double acc = 0.0;
        bool ok = true;
        for (const Realization& r : reals) {
            double v = r.grid.layer("sim")[t];
            if (r.grid.is_nodata(v)) {
                ok = false;
                break;
            }
            acc += v;
        }
        m[t] = ok ? acc / static_cast<double>(reals.size()) : out.nodata;
    }
    return out;
}

} // namespace ember
