#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "varcp/errors.hpp"
#include "varcp/rng.hpp"

namespace varcp {

enum class NoiseKind { gaussian, uniform_scaled, rademacher_scaled };

/// Margin below 1 required of the companion spectral radius before a model
/// counts as stationary; avoids flapping on borderline eigenvalues.
inline constexpr double stability_margin = 1e-6;

/// A VAR(h) data-generating model: p-dimensional observations, h lag
/// coefficient matrices, and a per-component noise variance that is either a
/// single scalar (homogeneous) or a length-p vector (heterogeneous).
struct VarModel {
    long p = 0;
    std::vector<Eigen::MatrixXd> coefs;  // h matrices, each p x p
    Eigen::VectorXd sigma2;              // size 1 (shared) or size p
    NoiseKind noise = NoiseKind::gaussian;

    long lag() const { return static_cast<long>(coefs.size()); }

    bool heterogeneous_noise() const { return sigma2.size() > 1; }

    double sigma2_at(long j) const { return sigma2.size() == 1 ? sigma2(0) : sigma2(j); }

    void validate() const {
        if (p <= 0) throw config_error("VarModel: dimension p must be positive");
        if (coefs.empty()) throw config_error("VarModel: lag order must be positive");
        for (const auto& a : coefs)
            if (a.rows() != p || a.cols() != p)
                throw config_error("VarModel: every coefficient matrix must be p x p");
        if (sigma2.size() != 1 && sigma2.size() != p)
            throw config_error("VarModel: sigma2 must be a scalar or a length-p vector");
        if ((sigma2.array() < 0.0).any())
            throw config_error("VarModel: noise variances must be nonnegative");
    }
};

/// Convenience constructor for the a*I_p lag-1 models used throughout the
/// simulation protocols.
inline VarModel scaled_identity_model(long p, double diag, double sigma2 = 1.0,
                                      NoiseKind noise = NoiseKind::gaussian) {
    VarModel m;
    m.p = p;
    m.coefs.push_back(diag * Eigen::MatrixXd::Identity(p, p));
    m.sigma2 = Eigen::VectorXd::Constant(1, sigma2);
    m.noise = noise;
    return m;
}

/// VAR(1) form of a VAR(h) model: top block row holds the coefficient
/// matrices, identity blocks sit on the sub-diagonal.
inline Eigen::MatrixXd companion(const VarModel& model) {
    model.validate();
    const long p = model.p;
    const long h = model.lag();
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(h * p, h * p);
    for (long l = 0; l < h; ++l) comp.block(0, l * p, p, p) = model.coefs[static_cast<size_t>(l)];
    for (long l = 1; l < h; ++l)
        comp.block(l * p, (l - 1) * p, p, p) = Eigen::MatrixXd::Identity(p, p);
    return comp;
}

namespace detail {

inline double dense_spectral_radius(const Eigen::MatrixXd& m) {
    Eigen::EigenSolver<Eigen::MatrixXd> solver(m, /*computeEigenvectors=*/false);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace detail

/// Largest eigenvalue modulus. Power iteration handles the easy real-dominant
/// case; complex-dominant spectra stall the iteration and drop to the dense
/// eigensolver (exact) for dimensions up to 512. Above that, the geometric
/// growth rate of the iterates is returned, which is accurate to roughly 1e-3.
inline double spectral_radius(const Eigen::MatrixXd& m) {
    const long n = m.rows();
    if (n != m.cols()) throw config_error("spectral_radius: matrix must be square");
    if (n == 0) return 0.0;
    if (n == 1) return std::abs(m(0, 0));

    rng_engine eng(0x5eed5eedULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd x(n);
    for (long i = 0; i < n; ++i) x(i) = gauss(eng);
    x.normalize();

    const int max_iters = 1000;
    double est = 0.0, prev = -1.0;
    int stable = 0;
    double log_growth = 0.0;
    int growth_count = 0;
    for (int iter = 0; iter < max_iters; ++iter) {
        Eigen::VectorXd y = m * x;
        double norm = y.norm();
        if (norm < 1e-300) return n <= 512 ? detail::dense_spectral_radius(m) : 0.0;
        est = norm;
        x = y / norm;
        if (iter >= max_iters / 2) {
            log_growth += std::log(norm);
            ++growth_count;
        }
        stable = std::abs(est - prev) <= 1e-12 * std::max(1.0, est) ? stable + 1 : 0;
        prev = est;
        if (stable >= 5) return est;
    }
    if (n <= 512) return detail::dense_spectral_radius(m);
    return std::exp(log_growth / growth_count);
}

/// True iff the companion spectral radius clears the stability margin.
inline bool is_stationary(const VarModel& model) {
    return spectral_radius(companion(model)) < 1.0 - stability_margin;
}

/// Trace of the stationary covariance of the stacked companion state,
/// sum_k M^k Q (M^k)', evaluated by doubling: S <- S + M S M', M <- M^2.
/// Converges in O(log 1/(1-rho)) steps for stable M.
inline double stationary_state_variance(const VarModel& model) {
    model.validate();
    const long p = model.p;
    const long hp = model.lag() * p;
    Eigen::MatrixXd m = companion(model);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(hp, hp);
    for (long j = 0; j < p; ++j) s(j, j) = model.sigma2_at(j);
    for (int iter = 0; iter < 64; ++iter) {
        const Eigen::MatrixXd grow = m * s * m.transpose();
        const double before = s.trace();
        s += grow;
        m = (m * m).eval();
        if (grow.trace() <= 1e-10 * std::max(1.0, before)) break;
        if (!s.allFinite()) return std::numeric_limits<double>::infinity();
    }
    return s.trace();
}

/// Piecewise-constant generating process: segment j is in force for time
/// indices start_j .. start_{j+1} - 1 (1-based). Models may have different lag
/// orders; shorter ones act as if padded with zero matrices.
struct ChangeSpec {
    struct Segment {
        long start = 1;  // 1-based time index of the first observation of this segment
        VarModel model;
    };
    std::vector<Segment> segments;
    long total_length = 0;
    long burn_in = 500;

    void validate() const {
        if (segments.empty()) throw config_error("ChangeSpec: at least one segment required");
        if (total_length <= 0) throw config_error("ChangeSpec: total_length must be positive");
        if (burn_in < 0) throw config_error("ChangeSpec: burn_in must be nonnegative");
        if (segments.front().start != 1) throw config_error("ChangeSpec: first segment must start at 1");
        const long p = segments.front().model.p;
        long prev = 0;
        for (const auto& seg : segments) {
            seg.model.validate();
            if (seg.model.p != p) throw config_error("ChangeSpec: all segments must share dimension p");
            if (seg.start <= prev) throw config_error("ChangeSpec: segment starts must be strictly increasing");
            if (seg.start > total_length)
                throw config_error("ChangeSpec: segment start exceeds total_length");
            prev = seg.start;
        }
    }

    long max_lag() const {
        long h = 0;
        for (const auto& seg : segments) h = std::max(h, seg.model.lag());
        return h;
    }
};

/// A realized T x p series. Row t-1 holds observation X_t.
struct Dataset {
    Eigen::MatrixXd values;
    std::vector<std::string> labels;

    long rows() const { return values.rows(); }
    long dim() const { return values.cols(); }
};

namespace detail {

class NoiseSampler {
public:
    explicit NoiseSampler(std::uint64_t seed) : eng_(seed) {}

    void fill(const VarModel& model, Eigen::VectorXd& out) {
        for (long j = 0; j < model.p; ++j) {
            const double sd = std::sqrt(model.sigma2_at(j));
            switch (model.noise) {
                case NoiseKind::gaussian:
                    out(j) = sd * gauss_(eng_);
                    break;
                case NoiseKind::uniform_scaled:
                    // U(-a, a) with a = sqrt(3) sd has variance sd^2
                    out(j) = sd * std::sqrt(3.0) * (2.0 * unit_(eng_) - 1.0);
                    break;
                case NoiseKind::rademacher_scaled:
                    out(j) = unit_(eng_) < 0.5 ? -sd : sd;
                    break;
            }
        }
    }

private:
    rng_engine eng_;
    std::normal_distribution<double> gauss_{0.0, 1.0};
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

}  // namespace detail

/// Generate total_length observations from the piecewise VAR process. The
/// first burn_in draws under segment one are discarded so the series starts
/// near its stationary law. Deterministic in (spec, seed).
inline Dataset simulate(const ChangeSpec& spec, std::uint64_t seed) {
    spec.validate();
    for (const auto& seg : spec.segments)
        if (!is_stationary(seg.model))
            throw numerical_error("simulate: segment model starting at " + std::to_string(seg.start) +
                                  " is not stationary");

    const long p = spec.segments.front().model.p;
    const long h = spec.max_lag();
    detail::NoiseSampler noise(seed);

    // Rolling lag history, newest last.
    std::vector<Eigen::VectorXd> history(static_cast<size_t>(h), Eigen::VectorXd::Zero(p));
    Eigen::VectorXd eps(p), next(p);

    auto step_once = [&](const VarModel& model) {
        noise.fill(model, eps);
        next = eps;
        for (long l = 1; l <= model.lag(); ++l)
            next.noalias() += model.coefs[static_cast<size_t>(l - 1)] * history[history.size() - l];
        std::rotate(history.begin(), history.begin() + 1, history.end());
        history.back() = next;
    };

    for (long t = 0; t < spec.burn_in; ++t) step_once(spec.segments.front().model);

    Dataset out;
    out.values.resize(spec.total_length, p);
    size_t seg_idx = 0;
    for (long t = 1; t <= spec.total_length; ++t) {
        while (seg_idx + 1 < spec.segments.size() && spec.segments[seg_idx + 1].start <= t) ++seg_idx;
        step_once(spec.segments[seg_idx].model);
        out.values.row(t - 1) = history.back().transpose();
    }
    return out;
}

/// Single-segment convenience wrapper.
inline Dataset simulate(const VarModel& model, long length, std::uint64_t seed, long burn_in = 500) {
    ChangeSpec spec;
    spec.segments.push_back({1, model});
    spec.total_length = length;
    spec.burn_in = burn_in;
    return simulate(spec, seed);
}

/// Perturb `sparsity` randomly chosen coefficient entries by random signs of
/// equal magnitude, rescaled so the vectorized distance from `base` is exactly
/// `jump`; redraws the support until the perturbed model is stationary and its
/// stationary variance stays within `max_amplification` of the base model's.
/// The amplification bound rejects draws whose transition matrices, while
/// stable, amplify the noise by orders of magnitude through non-normal
/// feedback chains; such processes sit far outside the bounded-spectrum regime
/// every protocol here assumes.
inline VarModel make_jump(const VarModel& base, double jump, long sparsity, std::uint64_t seed,
                          int max_retries = 200, double max_amplification = 1000.0) {
    base.validate();
    if (!is_stationary(base)) throw numerical_error("make_jump: base model is not stationary");
    if (jump < 0.0) throw config_error("make_jump: jump must be nonnegative");
    if (jump == 0.0) return base;
    const double variance_cap = max_amplification * stationary_state_variance(base);

    const long h = base.lag();
    const long p = base.p;
    const long dim = h * p * p;
    if (sparsity < 1 || sparsity > dim)
        throw config_error("make_jump: sparsity must lie in [1, h*p^2]");

    rng_engine eng(seed);
    std::vector<long> indices(static_cast<size_t>(dim));
    std::iota(indices.begin(), indices.end(), 0L);

    for (int attempt = 0; attempt < max_retries; ++attempt) {
        // Partial Fisher-Yates: first `sparsity` slots become the support.
        for (long i = 0; i < sparsity; ++i) {
            std::uniform_int_distribution<long> pick(i, dim - 1);
            std::swap(indices[static_cast<size_t>(i)], indices[static_cast<size_t>(pick(eng))]);
        }
        Eigen::VectorXd delta = Eigen::VectorXd::Zero(dim);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (long i = 0; i < sparsity; ++i)
            delta(indices[static_cast<size_t>(i)]) = unit(eng) < 0.5 ? -1.0 : 1.0;
        delta *= jump / delta.norm();

        VarModel candidate = base;
        for (long i = 0; i < sparsity; ++i) {
            const long idx = indices[static_cast<size_t>(i)];
            const long l = idx / (p * p);
            const long r = (idx % (p * p)) / p;
            const long c = idx % p;
            candidate.coefs[static_cast<size_t>(l)](r, c) += delta(idx);
        }
        if (is_stationary(candidate) && stationary_state_variance(candidate) <= variance_cap)
            return candidate;
    }
    throw numerical_error("make_jump: no stationary perturbation found within retry budget");
}

}  // namespace varcp
