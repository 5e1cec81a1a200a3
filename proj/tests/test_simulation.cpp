#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "ember/simulation.hpp"

using namespace ember;

namespace {

double normal_pdf(double x) {
    if (!std::isfinite(x)) return 0.0;
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
}

// Unnormalized probabilists' Hermite values He_0..He_order.
std::vector<double> hermite_raw(int order, double x) {
    std::vector<double> he(static_cast<std::size_t>(order) + 1);
    he[0] = 1.0;
    if (order >= 1) he[1] = x;
    for (int i = 1; i < order; ++i)
        he[static_cast<std::size_t>(i) + 1] =
            x * he[static_cast<std::size_t>(i)] - i * he[static_cast<std::size_t>(i) - 1];
    return he;
}

// Exact Hermite coefficients of a step quantile transform: the integral of
// eta_i over each gaussian slab has the closed form
// int_a^b He_i phi dx = phi(a) He_{i-1}(a) - phi(b) He_{i-1}(b).
std::vector<double> slab_oracle(const StepCdf& cdf, int order) {
    std::vector<double> phi(static_cast<std::size_t>(order) + 1, 0.0);
    double prev_u = 0.0;
    for (std::size_t j = 0; j < cdf.atoms.size(); ++j) {
        double a = prev_u <= 0.0 ? -std::numeric_limits<double>::infinity()
                                 : normal_quantile(prev_u);
        double u = cdf.cum[j];
        double b = u >= 1.0 ? std::numeric_limits<double>::infinity() : normal_quantile(u);
        double pa = normal_pdf(a), pb = normal_pdf(b);
        auto hea = hermite_raw(order, std::isfinite(a) ? a : 0.0);
        auto heb = hermite_raw(order, std::isfinite(b) ? b : 0.0);
        phi[0] += cdf.atoms[j] * (normal_cdf(b) - normal_cdf(a));
        double fact = 1.0;
        for (int i = 1; i <= order; ++i) {
            fact *= i;
            double ia = std::isfinite(a) ? pa * hea[static_cast<std::size_t>(i) - 1] : 0.0;
            double ib = std::isfinite(b) ? pb * heb[static_cast<std::size_t>(i) - 1] : 0.0;
            phi[static_cast<std::size_t>(i)] += cdf.atoms[j] * (ia - ib) / std::sqrt(fact);
        }
        prev_u = u;
    }
    return phi;
}

StepCdf staircase_normal(double mu, double sigma, int n_atoms) {
    StepCdf cdf;
    double run = 0.0;
    for (int j = 0; j < n_atoms; ++j) {
        double u = (j + 0.5) / n_atoms;
        cdf.atoms.push_back(mu + sigma * normal_quantile(u));
        cdf.weight.push_back(1.0 / n_atoms);
        run += 1.0 / n_atoms;
        cdf.cum.push_back(run);
    }
    cdf.cum.back() = 1.0;
    return cdf;
}

// Samples at distinct cells of an nx x ny unit cell grid, with two secondary
// variables sampled from the same surfaces the grid layers carry.
struct SimScene {
    SampleSet samples;
    RasterGrid grid;
};

double surf1(double x, double y) { return std::sin(x / 5.0) + std::cos(y / 7.0); }
double surf2(double x, double y) { return 0.05 * (x + y); }

SimScene make_scene(int nx, int ny, int n_data, std::uint64_t seed) {
    SimScene sc{{}, RasterGrid(nx, ny, 1.0)};
    auto& g = sc.grid;
    auto& a = g.add_layer("s1");
    auto& b = g.add_layer("s2");
    for (int r = 0; r < ny; ++r)
        for (int c = 0; c < nx; ++c) {
            Location p = g.cell_center(c, r);
            a[g.index_of(c, r)] = surf1(p.x(), p.y());
            b[g.index_of(c, r)] = surf2(p.x(), p.y());
        }
    RngStream rng(seed);
    std::vector<std::uint32_t> cells =
        subsample_without_replacement(static_cast<std::size_t>(nx) * ny,
                                      static_cast<std::size_t>(n_data), rng);
    sc.samples.secondary_names = {"s1", "s2"};
    for (std::uint32_t t : cells) {
        int r = static_cast<int>(t) / nx, c = static_cast<int>(t) % nx;
        Location p = g.cell_center(c, r);
        double s1 = surf1(p.x(), p.y()), s2 = surf2(p.x(), p.y());
        double z = 2.0 * s1 + s2 + 0.3 * std::sin(p.x() / 3.0) * std::cos(p.y() / 4.0) +
                   0.2 * rng.normal();
        double row[2] = {s1, s2};
        sc.samples.push_back(p, z, row);
    }
    return sc;
}

EmberModel trained_model(const SimScene& sc, std::uint64_t seed, int n_trees = 16) {
    RunConfig cfg;
    cfg.forest.n_trees = n_trees;
    cfg.forest.min_leaf = 3;
    cfg.seed = seed;
    cfg.threads = 1;
    return train_ember(sc.samples, default_embedded_specs(sc.samples), cfg);
}

} // namespace

TEST_CASE("gauss hermite rule integrates normal moments") {
    GaussHermite gh = gauss_hermite(128);
    double m0 = 0, m1 = 0, m2 = 0, m3 = 0, m4 = 0, m6 = 0;
    for (std::size_t k = 0; k < gh.node.size(); ++k) {
        double x = gh.node[k], w = gh.weight[k];
        m0 += w;
        m1 += w * x;
        m2 += w * x * x;
        m3 += w * x * x * x;
        m4 += w * x * x * x * x;
        m6 += w * std::pow(x, 6);
    }
    CHECK(m0 == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(std::abs(m1) < 1e-12);
    CHECK(m2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(m3) < 1e-11);
    CHECK(m4 == doctest::Approx(3.0).epsilon(1e-11));
    CHECK(m6 == doctest::Approx(15.0).epsilon(1e-10));
    // Symmetric rule.
    for (std::size_t k = 0; k < gh.node.size(); ++k)
        CHECK(gh.node[k] == doctest::Approx(-gh.node[gh.node.size() - 1 - k]).epsilon(1e-12));
}

TEST_CASE("gauss hermite rule is orthonormal on the normalized hermite basis") {
    GaussHermite gh = gauss_hermite(128);
    std::vector<double> eta;
    for (int i = 0; i <= 8; ++i)
        for (int j = i; j <= 8; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < gh.node.size(); ++k) {
                normalized_hermite(8, gh.node[k], eta);
                acc += gh.weight[k] * eta[static_cast<std::size_t>(i)] *
                       eta[static_cast<std::size_t>(j)];
            }
            CHECK(std::abs(acc - (i == j ? 1.0 : 0.0)) < 1e-9);
        }
}

TEST_CASE("normalized hermite matches explicit low order formulas") {
    for (double x : {-2.3, -0.7, 0.0, 0.4, 1.7, 3.1}) {
        std::vector<double> eta;
        normalized_hermite(4, x, eta);
        CHECK(eta[0] == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(eta[1] == doctest::Approx(x).epsilon(1e-14));
        CHECK(eta[2] == doctest::Approx((x * x - 1.0) / std::sqrt(2.0)).epsilon(1e-12));
        CHECK(eta[3] == doctest::Approx((x * x * x - 3.0 * x) / std::sqrt(6.0)).epsilon(1e-12));
        CHECK(eta[4] ==
              doctest::Approx((x * x * x * x - 6.0 * x * x + 3.0) / std::sqrt(24.0)).epsilon(1e-12));
    }
}

TEST_CASE("hermite coefficients match the closed form slab oracle") {
    StepCdf cdf = staircase_normal(3.0, 2.0, 200);
    Envelope env(cdf);
    auto quad = hermite_coefficients(env, 5);
    auto exact = slab_oracle(cdf, 5);
    // The oracle integrates the staircase exactly; its zeroth coefficient is
    // the envelope mean by construction.
    CHECK(exact[0] == doctest::Approx(env.mean()).epsilon(1e-12));
    for (std::size_t i = 0; i < quad.size(); ++i)
        CHECK(std::abs(quad[i] - exact[i]) < 0.03);
    // A fine staircase of N(3, 2) keeps its first two coefficients near the
    // affine transform and the rest near zero.
    CHECK(std::abs(quad[0] - 3.0) < 0.05);
    CHECK(std::abs(quad[1] - 2.0) < 0.05);
    for (std::size_t i = 2; i < quad.size(); ++i) CHECK(std::abs(quad[i]) < 0.05);
}

TEST_CASE("correlation polynomial inversion recovers known roots") {
    double a1[] = {1.0};
    CHECK(solve_correlation(a1, 0.37) == doctest::Approx(0.37).epsilon(1e-12));
    CHECK(solve_correlation(a1, -0.2) == doctest::Approx(-0.2).epsilon(1e-12));
    CHECK(solve_correlation(a1, 1.7) == 1.0);
    CHECK(solve_correlation(a1, -3.0) == -1.0);

    double a3[] = {0.5, 0.3, 0.2};
    auto f = [&](double rho) { return 0.5 * rho + 0.3 * rho * rho + 0.2 * rho * rho * rho; };
    CHECK(solve_correlation(a3, f(0.6)) == doctest::Approx(0.6).epsilon(1e-10));
    CHECK(solve_correlation(a3, f(-0.4)) == doctest::Approx(-0.4).epsilon(1e-10));
    CHECK(solve_correlation(a3, 0.0) == doctest::Approx(0.0).epsilon(1e-12));

    // A pure first order expansion run at third order equals the raw value.
    double a_deg[] = {1.0, 0.0, 0.0};
    CHECK(solve_correlation(a_deg, 0.55) == doctest::Approx(0.55).epsilon(1e-10));
}

TEST_CASE("residual covariance bins match pair enumeration") {
    std::mt19937_64 gen(99);
    std::uniform_real_distribution<double> u(0.0, 50.0);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<Location> locs;
    std::vector<double> r;
    for (int i = 0; i < 30; ++i) {
        locs.emplace_back(u(gen), u(gen));
        r.push_back(nd(gen));
    }
    double max_lag = 30.0;
    int n_bins = 5;
    CovarianceBins got = residual_covariance_bins(locs, r, n_bins, max_lag);

    std::map<int, std::vector<std::pair<double, double>>> ref; // bin -> (h, product)
    for (std::size_t i = 0; i + 1 < locs.size(); ++i)
        for (std::size_t j = i + 1; j < locs.size(); ++j) {
            double h = distance(locs[i], locs[j]);
            if (h <= 0.0 || h > max_lag) continue;
            int b = std::min(static_cast<int>(h / (max_lag / n_bins)), n_bins - 1);
            ref[b].emplace_back(h, r[i] * r[j]);
        }
    REQUIRE(got.lag.size() == ref.size());
    std::size_t k = 0;
    for (auto& [b, pairs] : ref) {
        double hs = 0, ps = 0;
        for (auto& [h, p] : pairs) {
            hs += h;
            ps += p;
        }
        CHECK(got.count[k] == pairs.size());
        CHECK(got.lag[k] == doctest::Approx(hs / pairs.size()).epsilon(1e-12));
        CHECK(got.cov[k] == doctest::Approx(ps / pairs.size()).epsilon(1e-12));
        ++k;
    }
}

TEST_CASE("standardized residuals invert the envelope transform") {
    SimScene sc = make_scene(20, 20, 50, 7);
    EmberModel m = trained_model(sc, 11);
    ResidualSet rs = standardized_residuals(m);
    CHECK(rs.kept.size() + rs.skipped == m.samples.size());
    CHECK(rs.skipped == 0);
    for (std::size_t k = 0; k < rs.kept.size(); ++k) {
        std::uint32_t i = rs.kept[k];
        Envelope env = envelope_at(m, m.samples.locations[i], m.samples.y_row(i));
        CHECK(rs.r[k] * env.stddev() + env.mean() ==
              doctest::Approx(m.samples.z[i]).epsilon(1e-9));
    }
}

TEST_CASE("gaussian field is seed reproducible") {
    SamplingFieldModel f;
    f.correlation = {VariogramKind::exponential, 1.0, 10.0, 0.0};
    RasterGrid g(32, 24, 1.0);
    GaussianField a = simulate_gaussian_field(f, g, 42);
    GaussianField b = simulate_gaussian_field(f, g, 42);
    GaussianField c = simulate_gaussian_field(f, g, 43);
    CHECK(a.values == b.values);
    CHECK(a.values != c.values);
    CHECK(a.values.size() == g.n_cells());
}

TEST_CASE("gaussian field moments track the target correlation") {
    SamplingFieldModel f;
    f.correlation = {VariogramKind::exponential, 1.0, 16.0, 0.0};
    RasterGrid g(64, 64, 1.0);
    GaussianField gf = simulate_gaussian_field(f, g, 1234);
    CHECK(gf.covariance_warning == false);
    CHECK(gf.clipped_fraction <= 1e-9);

    double mean = mean_of(gf.values);
    double var = variance_of(gf.values);
    CHECK(std::abs(mean) < 0.35);
    CHECK(var > 0.55);
    CHECK(var < 1.6);

    // Horizontal neighbour correlation against exp(-3/16).
    double sxy = 0, sx = 0, sy = 0, sxx = 0, syy = 0;
    std::size_t n = 0;
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c + 1 < 64; ++c) {
            double x = gf.values[static_cast<std::size_t>(r) * 64 + c];
            double y = gf.values[static_cast<std::size_t>(r) * 64 + c + 1];
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
            ++n;
        }
    double dn = static_cast<double>(n);
    double corr = (sxy / dn - sx / dn * sy / dn) /
                  std::sqrt((sxx / dn - sx / dn * sx / dn) * (syy / dn - sy / dn * sy / dn));
    CHECK(corr == doctest::Approx(std::exp(-3.0 / 16.0)).epsilon(0.12));
}

TEST_CASE("covariance that cannot embed is clipped and flagged") {
    RasterGrid g(64, 64, 1.0);

    // Smooth kernel wider than the domain: negative spectral mass survives
    // even at the widest padding and is clipped, not ignored.
    SamplingFieldModel hard;
    hard.correlation = {VariogramKind::gaussian, 1.0, 120.0, 0.0};
    GaussianField gf = simulate_gaussian_field(hard, g, 7);
    CHECK(gf.covariance_warning == true);
    CHECK(gf.clipped_fraction > 1e-4);
    CHECK(gf.padding_factor == 4);
    for (double v : gf.values) CHECK(std::isfinite(v));

    // A moderate smooth kernel needs the escalation but ends clean.
    SamplingFieldModel moderate;
    moderate.correlation = {VariogramKind::gaussian, 1.0, 40.0, 0.0};
    GaussianField ok = simulate_gaussian_field(moderate, g, 7);
    CHECK(ok.covariance_warning == false);
    CHECK(ok.padding_factor == 4);
    CHECK(ok.clipped_fraction <= 1e-9);
}

TEST_CASE("data intervals recover every datum as an exact atom") {
    SimScene sc = make_scene(20, 20, 40, 3);
    EmberModel m = trained_model(sc, 5);
    DataConditioning cond = data_intervals(m);
    CHECK(cond.mismatches == 0);
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
        CHECK(cond.exact[i] == 1);
        CHECK(cond.matched_atom[i] == m.samples.z[i]);
        CHECK(cond.u_low[i] < cond.u_high[i]);
        Envelope env = envelope_at(m, m.samples.locations[i], m.samples.y_row(i));
        const StepCdf& cdf = env.distribution();
        auto it = std::lower_bound(cdf.atoms.begin(), cdf.atoms.end(), m.samples.z[i]);
        REQUIRE(it != cdf.atoms.end());
        auto k = static_cast<std::size_t>(it - cdf.atoms.begin());
        CHECK(cond.u_high[i] == doctest::Approx(cdf.cum[k]).epsilon(1e-14));
        CHECK(cond.u_high[i] - cond.u_low[i] ==
              doctest::Approx(cdf.weight[k]).epsilon(1e-12));
    }
}

TEST_CASE("conditioning values respect truncation bounds and the truncated mean") {
    DataConditioning cond;
    cond.u_low = {0.6};
    cond.u_high = {0.9};
    cond.matched_atom = {0.0};
    cond.exact = {1};
    SamplingFieldModel f;
    f.correlation = {VariogramKind::exponential, 1.0, 5.0, 0.0};
    std::vector<Location> locs = {{1.0, 1.0}};
    double a = normal_quantile(0.6), b = normal_quantile(0.9);
    double p = 0.3;
    double trunc_mean = (normal_pdf(a) - normal_pdf(b)) / p;

    double acc = 0.0;
    const int n_seeds = 60;
    for (int s = 0; s < n_seeds; ++s) {
        auto g = sample_conditioning_values(cond, f, locs, 100, static_cast<std::uint64_t>(s));
        REQUIRE(g.size() == 1);
        CHECK(g[0] >= a - 1e-9);
        CHECK(g[0] <= b + 1e-9);
        acc += g[0];
    }
    CHECK(std::abs(acc / n_seeds - trunc_mean) < 0.15);

    // Same seed, same chain.
    auto g1 = sample_conditioning_values(cond, f, locs, 100, 9);
    auto g2 = sample_conditioning_values(cond, f, locs, 100, 9);
    CHECK(g1 == g2);
}

TEST_CASE("correlated conditioning keeps both coordinates inside their slabs") {
    DataConditioning cond;
    cond.u_low = {0.05, 0.7};
    cond.u_high = {0.35, 0.95};
    cond.matched_atom = {0.0, 0.0};
    cond.exact = {1, 1};
    SamplingFieldModel f;
    f.correlation = {VariogramKind::exponential, 1.0, 30.0, 0.0};
    std::vector<Location> locs = {{0.0, 0.0}, {1.0, 0.0}};
    for (int s = 0; s < 25; ++s) {
        auto g = sample_conditioning_values(cond, f, locs, 100, 100 + static_cast<std::uint64_t>(s));
        CHECK(g[0] >= normal_quantile(0.05) - 1e-9);
        CHECK(g[0] <= normal_quantile(0.35) + 1e-9);
        CHECK(g[1] >= normal_quantile(0.7) - 1e-9);
        CHECK(g[1] <= normal_quantile(0.95) + 1e-9);
    }
}

TEST_CASE("conditional uniform field interpolates the conditioning values") {
    SamplingFieldModel f;
    f.correlation = {VariogramKind::exponential, 1.0, 8.0, 0.0};
    RasterGrid g(10, 10, 1.0);
    GaussianField gf = simulate_gaussian_field(f, g, 5);
    std::vector<Location> data = {g.cell_center(2, 3), g.cell_center(7, 1), g.cell_center(5, 8)};
    std::vector<double> vals = {1.2, -0.7, 0.3};
    std::vector<double> u = conditional_uniform_field(gf.values, vals, f, g, data);
    REQUIRE(u.size() == g.n_cells());
    for (double v : u) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto [c, r] = g.cell_of(data[i]);
        CHECK(normal_quantile(u[g.index_of(c, r)]) == doctest::Approx(vals[i]).epsilon(1e-6));
    }
    // No data: the field maps straight through Phi.
    std::vector<double> u0 = conditional_uniform_field(gf.values, {}, f, g, {});
    for (std::size_t t = 0; t < u0.size(); ++t)
        CHECK(u0[t] == normal_cdf(gf.values[t]));
}

TEST_CASE("simulation writes matched atoms at data cells and training atoms elsewhere") {
    SimScene sc = make_scene(20, 20, 30, 21);
    EmberModel m = trained_model(sc, 31);
    SamplingFieldModel f;
    f.correlation = {VariogramKind::exponential, 1.0, 8.0, 0.0};

    auto reals = simulate(m, sc.grid, f, 3, 77);
    REQUIRE(reals.size() == 3);
    DataConditioning cond = data_intervals(m);

    std::vector<double> atoms = m.samples.z;
    std::sort(atoms.begin(), atoms.end());
    for (const Realization& rl : reals) {
        const auto& v = rl.grid.layer("sim");
        for (std::size_t i = 0; i < m.samples.size(); ++i) {
            auto [c, r] = sc.grid.cell_of(m.samples.locations[i]);
            CHECK(v[sc.grid.index_of(c, r)] == cond.matched_atom[i]);
        }
        for (double x : v) {
            if (rl.grid.is_nodata(x)) continue;
            CHECK(std::binary_search(atoms.begin(), atoms.end(), x));
        }
    }

    // Bitwise reproducibility, and distinct realizations differ.
    auto again = simulate(m, sc.grid, f, 3, 77);
    for (std::size_t k = 0; k < reals.size(); ++k)
        CHECK(reals[k].grid.layer("sim") == again[k].grid.layer("sim"));
    CHECK(reals[0].grid.layer("sim") != reals[1].grid.layer("sim"));

    // Posterior mean is the cellwise average.
    RasterGrid pm = posterior_mean(reals);
    const auto& mv = pm.layer("mean");
    for (std::size_t t = 0; t < pm.n_cells(); ++t) {
        double acc = 0.0;
        for (const auto& rl : reals) acc += rl.grid.layer("sim")[t];
        CHECK(mv[t] == acc / 3.0);
    }
}

TEST_CASE("simulation rejects data sharing a cell and data outside the grid") {
    SimScene sc = make_scene(10, 10, 8, 2);
    // Two samples in the same cell.
    SampleSet dup = sc.samples;
    double row[2] = {0.0, 0.0};
    Location first = dup.locations.front();
    dup.push_back(first, 1.0, row);
    RunConfig cfg;
    cfg.forest.n_trees = 4;
    cfg.seed = 1;
    SamplingFieldModel f;
    f.correlation = {VariogramKind::exponential, 1.0, 5.0, 0.0};
    // Training rejects exact duplicates, so shift within the cell.
    dup.locations.back().c[0] += 0.2;
    EmberModel m_dup = train_ember(dup, {}, cfg);
    CHECK_THROWS_AS(simulate(m_dup, sc.grid, f, 1, 3), ValidationError);

    // A sample outside the grid footprint.
    SampleSet out = sc.samples;
    out.push_back({-50.0, -50.0}, 0.5, row);
    EmberModel m_out = train_ember(out, {}, cfg);
    CHECK_THROWS_AS(simulate(m_out, sc.grid, f, 1, 3), OutOfDomainError);
}

TEST_CASE("simulation propagates nodata cells") {
    SimScene sc = make_scene(12, 12, 15, 9);
    // Poke a hole away from the data cells.
    std::set<std::size_t> data_cells;
    for (const auto& p : sc.samples.locations) {
        auto [c, r] = sc.grid.cell_of(p);
        data_cells.insert(sc.grid.index_of(c, r));
    }
    std::size_t hole = 0;
    while (data_cells.count(hole)) ++hole;
    RasterGrid g(sc.grid.ncols, sc.grid.nrows, sc.grid.cell);
    std::vector<double> s1 = sc.grid.layer("s1");
    s1[hole] = g.nodata;
    g.add_layer("s1", std::move(s1));
    g.add_layer("s2", sc.grid.layer("s2"));

    EmberModel m = trained_model(sc, 13, 8);
    SamplingFieldModel f;
    f.correlation = {VariogramKind::exponential, 1.0, 6.0, 0.0};
    auto reals = simulate(m, g, f, 2, 5);
    for (const auto& rl : reals) CHECK(rl.grid.is_nodata(rl.grid.layer("sim")[hole]));
    RasterGrid pm = posterior_mean(reals);
    CHECK(pm.is_nodata(pm.layer("mean")[hole]));
}

TEST_CASE("inferred sampling correlation is a unit sill zero nugget model") {
    SimScene sc = make_scene(25, 25, 120, 17);
    EmberModel m = trained_model(sc, 19);
    SamplingFieldModel f1 = infer_sampling_correlation(m, 1);
    CHECK(f1.fell_back == false);
    CHECK(f1.correlation.sill == 1.0);
    CHECK(f1.correlation.nugget == 0.0);
    CHECK(f1.correlation.range > 0.0);
    CHECK(f1.bin_lag.size() >= 2);
    CHECK(f1.bin_rho.size() == f1.bin_lag.size());
    for (double rho : f1.bin_rho) {
        CHECK(rho >= -1.0);
        CHECK(rho <= 1.0);
    }
    SamplingFieldModel f3 = infer_sampling_correlation(m, 3);
    CHECK(f3.fell_back == false);
    CHECK(f3.correlation.sill == 1.0);
    CHECK(f3.hermite_order == 3);
}

TEST_CASE("constant data falls back to a default sampling correlation") {
    SampleSet s;
    s.secondary_names = {"s1"};
    RngStream rng(4);
    for (int i = 0; i < 25; ++i) {
        double row[1] = {rng.u01()};
        s.push_back({rng.u01() * 40.0, rng.u01() * 40.0}, 5.0, row);
    }
    RunConfig cfg;
    cfg.forest.n_trees = 4;
    cfg.seed = 2;
    EmberModel m = train_ember(s, {}, cfg);
    SamplingFieldModel f = infer_sampling_correlation(m, 1);
    CHECK(f.fell_back == true);
    CHECK(f.correlation.kind == VariogramKind::exponential);
    CHECK(f.correlation.sill == 1.0);
}
