#pragma once

// Simple kriging with a known mean. The system is factored once at
// construction and is immutable afterwards, so solves may run concurrently.
//
// A base jitter of 1e-10 * C(0) is always added to the covariance diagonal.
// Keeping the jitter unconditional means every identity (dual form, precision
// based leave-one-out) is exact on the same matrix that direct solves use. On
// factorization failure the jitter escalates by 10x up to 1e-6 * C(0) before
// the system is declared singular.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "ember/common.hpp"
#include "ember/core.hpp"
#include "ember/variogram.hpp"

namespace ember {

struct CrossValidation {
    std::vector<double> estimate;   // leave-one-out estimate at each sample
    std::vector<double> innovation; // z_i minus the leave-one-out estimate
    std::vector<double> variance;   // leave-one-out kriging variance
};

class KrigingSystem {
public:
    KrigingSystem(std::vector<Location> locations, std::vector<double> z, VariogramModel model,
                  double mean)
        : locs_(std::move(locations)), z_(std::move(z)), model_(model), mean_(mean) {
        model_.validate();
        const auto n = static_cast<Eigen::Index>(locs_.size());
        if (n == 0) throw ValidationError("kriging: no data");
        if (static_cast<std::size_t>(n) != z_.size())
            throw ValidationError("kriging: location/value size mismatch");
        check_duplicates();

        Eigen::MatrixXd C(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            C(i, i) = model_.covariance(0.0);
            for (Eigen::Index j = i + 1; j < n; ++j) {
                double c = model_.covariance(distance(locs_[static_cast<std::size_t>(i)],
                                                      locs_[static_cast<std::size_t>(j)]));
                C(i, j) = c;
                C(j, i) = c;
            }
        }
        double c0 = model_.covariance(0.0);
        if (!(c0 > 0.0)) throw ValidationError("kriging: zero covariance at the origin");
        jitter_ = 1e-10 * c0;
        for (;;) {
            C_ = C;
            C_.diagonal().array() += jitter_;
            llt_.compute(C_);
            if (llt_.info() == Eigen::Success) break;
            jitter_ *= 10.0;
            if (jitter_ > 1e-6 * c0)
                throw NumericError("kriging: covariance matrix is singular");
        }
        Eigen::Map<const Eigen::VectorXd> zv(z_.data(), n);
        resid_ = zv.array() - mean_;
        dual_ = llt_.solve(resid_);
        precision_ = llt_.solve(Eigen::MatrixXd::Identity(n, n));
    }

    std::size_t size() const { return locs_.size(); }
    double mean() const { return mean_; }
    double jitter() const { return jitter_; }
    const VariogramModel& model() const { return model_; }
    const std::vector<Location>& locations() const { return locs_; }
    const std::vector<double>& values() const { return z_; }
    const Eigen::MatrixXd& covariance_matrix() const { return C_; }
    const Eigen::MatrixXd& precision() const { return precision_; }
    const Eigen::VectorXd& dual_weights() const { return dual_; }

    // Primal simple kriging: solves for the weights of one target point and
    // returns (estimate, kriging variance).
    std::pair<double, double> krige_at(const Location& p) const {
        Eigen::VectorXd c0 = covariance_vector(p);
        Eigen::VectorXd lambda = llt_.solve(c0);
        double est = mean_ + lambda.dot(resid_);
        double var = model_.covariance(0.0) + jitter_ - lambda.dot(c0);
        return {est, std::max(var, 0.0)};
    }

    // Dual form estimate: one covariance pass against precomputed weights.
    double dual_at(const Location& p) const {
        double acc = mean_;
        for (std::size_t i = 0; i < locs_.size(); ++i)
            acc += model_.covariance(distance(p, locs_[i])) * dual_[static_cast<Eigen::Index>(i)];
        return acc;
    }

    std::vector<double> dual_krige_field(std::span<const Location> targets, int threads = 0) const {
        std::vector<double> out(targets.size());
        parallel_for(targets.size(), [&](std::size_t b, std::size_t e) {
            for (std::size_t k = b; k < e; ++k) out[k] = dual_at(targets[k]);
        }, threads);
        return out;
    }

    // Leave-one-out from the full precision matrix: removing sample i and
    // kriging at its location equals z_i - w_i / P_ii with w the dual weights,
    // with variance 1 / P_ii. No subsystem is ever rebuilt.
    CrossValidation loo_cross_validate() const {
        const auto n = static_cast<Eigen::Index>(locs_.size());
        CrossValidation cv;
        cv.estimate.resize(static_cast<std::size_t>(n));
        cv.innovation.resize(static_cast<std::size_t>(n));
        cv.variance.resize(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            double pii = precision_(i, i);
            double innov = dual_[i] / pii;
            cv.innovation[static_cast<std::size_t>(i)] = innov;
            cv.estimate[static_cast<std::size_t>(i)] = z_[static_cast<std::size_t>(i)] - innov;
            cv.variance[static_cast<std::size_t>(i)] = 1.0 / pii;
        }
        return cv;
    }

private:
    std::vector<Location> locs_;
    std::vector<double> z_;
    VariogramModel model_;
    double mean_;
    double jitter_ = 0.0;
    Eigen::MatrixXd C_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd resid_;
    Eigen::VectorXd dual_;
    Eigen::MatrixXd precision_;

    Eigen::VectorXd covariance_vector(const Location& p) const {
        Eigen::VectorXd c0(static_cast<Eigen::Index>(locs_.size()));
        for (std::size_t i = 0; i < locs_.size(); ++i)
            c0[static_cast<Eigen::Index>(i)] = model_.covariance(distance(p, locs_[i]));
        return c0;
    }

    void check_duplicates() const {
        if (locs_.size() < 2) return;
        Location lo = locs_.front(), hi = locs_.front();
        for (const auto& p : locs_)
            for (int i = 0; i < p.dim; ++i) {
                lo.c[static_cast<std::size_t>(i)] = std::min(lo.c[static_cast<std::size_t>(i)], p[i]);
                hi.c[static_cast<std::size_t>(i)] = std::max(hi.c[static_cast<std::size_t>(i)], p[i]);
            }
        double tol = 1e-9 * distance(lo, hi);
        std::vector<std::size_t> order(locs_.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return locs_[a].x() < locs_[b].x(); });
        for (std::size_t i = 0; i + 1 < order.size(); ++i)
            for (std::size_t j = i + 1; j < order.size(); ++j) {
                if (locs_[order[j]].x() - locs_[order[i]].x() > tol) break;
                if (distance(locs_[order[i]], locs_[order[j]]) <= tol)
                    throw ValidationError("kriging: duplicate data locations");
            }
    }
};

inline KrigingSystem build_system(std::vector<Location> locations, std::vector<double> z,
                                  const VariogramModel& model, double mean) {
    return KrigingSystem(std::move(locations), std::move(z), model, mean);
}

} // namespace ember
