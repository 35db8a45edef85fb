#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include "varcp/errors.hpp"
#include "varcp/estimation.hpp"
#include "varcp/gaussian.hpp"

namespace varcp {

/// Recommended window length, round(10 * ln(h * p^2)).
inline long default_omega(long h, long p) {
    return std::lround(10.0 * std::log(static_cast<double>(h) * p * p));
}

struct MonitorConfig {
    std::optional<long> omega;  // window length; defaults to the 10*ln(h*p^2) rule
    double alpha = 1e-3;
    double refine_ratio = 0.15;
    bool confirm = true;
    VarianceMode mode = VarianceMode::homogeneous;

    long resolved_omega(long h, long p) const { return omega ? *omega : default_omega(h, p); }

    long refine_window(long h, long p) const {
        return std::lround(refine_ratio * static_cast<double>(resolved_omega(h, p)));
    }

    /// Window and level checks; every monitor enforces these.
    void validate_base(long h, long p) const {
        const long w = resolved_omega(h, p);
        if (w < 2) throw config_error("MonitorConfig: omega must be at least 2");
        if (!(alpha > 0.0 && alpha < 1.0)) throw config_error("MonitorConfig: alpha must lie in (0, 1)");
    }

    /// Full invariant, including the refinement window constraint. Checked
    /// where refinement is in play (pipeline runs, refine itself); the
    /// refinement sub-run only needs the base checks.
    void validate(long h, long p) const {
        validate_base(h, p);
        const long w = resolved_omega(h, p);
        const long sub = refine_window(h, p);
        if (sub < 1 || sub >= w)
            throw config_error("MonitorConfig: refine_ratio*omega must round into [1, omega)");
    }
};

/// Two-sided alarm threshold, the (1 - alpha/2) standard normal quantile.
inline double threshold(double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw config_error("threshold: alpha must lie in (0, 1]");
    if (alpha == 1.0) return 0.0;
    return normal_quantile(1.0 - alpha / 2.0);
}

/// Mean squared one-step prediction error over the last omega positions of a
/// window of h+omega observations, plus the per-component split of the same
/// sum (the heterogeneous statistic consumes the components).
struct WindowResidualStat {
    double total = 0.0;              // (1/omega) sum_i ||Xhat_i - X_i||_2^2
    Eigen::VectorXd per_component;   // same average split by component
};

template <typename Window>
inline WindowResidualStat window_residual_stat(const Window& window, const FittedBaseline& fb,
                                               long omega) {
    const long m = static_cast<long>(window.size());
    if (m != fb.h + omega)
        throw data_error("window_residual_stat: window must hold exactly h+omega observations");
    WindowResidualStat out;
    out.per_component = Eigen::VectorXd::Zero(fb.p);
    for (long i = fb.h; i < m; ++i) {
        Eigen::VectorXd pred = Eigen::VectorXd::Zero(fb.p);
        for (long l = 1; l <= fb.h; ++l)
            pred.noalias() += fb.coefs[static_cast<size_t>(l - 1)] * window[static_cast<size_t>(i - l)];
        const Eigen::VectorXd resid = window[static_cast<size_t>(i)] - pred;
        out.total += resid.squaredNorm();
        out.per_component += resid.cwiseAbs2();
    }
    out.total /= static_cast<double>(omega);
    out.per_component /= static_cast<double>(omega);
    return out;
}

/// Standardized prediction-error statistic. Homogeneous variance:
/// sqrt(p*omega/V) (R/p - sigma2); heterogeneous: sqrt(omega) (R - sum_j
/// sigma2_j) / sqrt(sum_j V_j).
inline double test_statistic(double r_hat, const FittedBaseline& fb, long omega) {
    const double w = static_cast<double>(omega);
    if (fb.mode == VarianceMode::homogeneous) {
        const double v = fb.v_hat(0);
        if (v <= 0.0) throw numerical_error("test_statistic: nonpositive fourth-moment estimate");
        return std::sqrt(static_cast<double>(fb.p) * w / v) *
               (r_hat / static_cast<double>(fb.p) - fb.sigma2_hat(0));
    }
    const double vsum = fb.v_hat.sum();
    if (vsum <= 0.0) throw numerical_error("test_statistic: nonpositive fourth-moment estimate");
    return std::sqrt(w) * (r_hat - fb.sigma2_hat.sum()) / std::sqrt(vsum);
}

namespace detail {

/// Fixed-capacity ring; push drops the oldest element once full.
template <typename T>
class RingWindow {
public:
    explicit RingWindow(size_t capacity) : buf_(capacity), capacity_(capacity) {}

    void push(T value) {
        buf_[head_] = std::move(value);
        head_ = (head_ + 1) % capacity_;
        if (count_ < capacity_) ++count_;
    }

    size_t size() const { return count_; }
    bool full() const { return count_ == capacity_; }

    /// i = 0 is the newest element.
    const T& from_newest(size_t i) const { return buf_[(head_ + capacity_ - 1 - i) % capacity_]; }

    /// i = 0 is the oldest element.
    const T& from_oldest(size_t i) const { return buf_[(head_ + capacity_ - count_ + i) % capacity_]; }

private:
    std::vector<T> buf_;
    size_t capacity_;
    size_t head_ = 0;
    size_t count_ = 0;
};

}  // namespace detail

struct StepResult {
    std::optional<double> statistic;
    bool alarm = false;
};

/// Sliding-window monitor over one stream. Holds the last h+omega
/// observations; once warm it emits one statistic per push, computed from the
/// stored per-time residuals so the value depends only on the window contents.
/// Strictly sequential: one step call at a time per state.
class MonitorState {
public:
    MonitorState(std::shared_ptr<const FittedBaseline> baseline, const MonitorConfig& config,
                 long start_index = 1)
        : baseline_(std::move(baseline)),
          config_(config),
          omega_(config.resolved_omega(baseline_->h, baseline_->p)),
          obs_(static_cast<size_t>(baseline_->h + omega_)),
          resid_(static_cast<size_t>(omega_)),
          t_(start_index - 1) {
        config_.validate_base(baseline_->h, baseline_->p);
        const double v = baseline_->mode == VarianceMode::homogeneous ? baseline_->v_hat(0)
                                                                      : baseline_->v_hat.sum();
        if (v < degenerate_moment_tol)
            throw numerical_error("MonitorState: fourth-moment estimate below 1e-12; refusing to monitor");
        threshold_ = threshold(config_.alpha);
    }

    StepResult step(const Eigen::VectorXd& x) {
        const auto& fb = *baseline_;
        if (x.size() != fb.p) throw data_error("MonitorState::step: observation dimension mismatch");
        if (static_cast<long>(obs_.size()) >= fb.h) {
            Eigen::VectorXd pred = Eigen::VectorXd::Zero(fb.p);
            for (long l = 1; l <= fb.h; ++l)
                pred.noalias() += fb.coefs[static_cast<size_t>(l - 1)] * obs_.from_newest(static_cast<size_t>(l - 1));
            resid_.push((x - pred).squaredNorm());
        }
        obs_.push(x);
        ++t_;
        StepResult out;
        if (resid_.full()) {
            double sum = 0.0;
            for (size_t i = 0; i < resid_.size(); ++i) sum += resid_.from_oldest(i);
            const double r_hat = sum / static_cast<double>(omega_);
            const double stat = test_statistic(r_hat, fb, omega_);
            last_stat_ = stat;
            out.statistic = stat;
            out.alarm = std::abs(stat) > threshold_;
        }
        return out;
    }

    /// Global index of the newest pushed observation.
    long t() const { return t_; }

    long omega() const { return omega_; }

    std::optional<double> last_stat() const { return last_stat_; }

    const FittedBaseline& baseline() const { return *baseline_; }

    bool warm() const { return resid_.full(); }

    /// The h+omega observations currently held, oldest first. Valid once warm;
    /// at an alarm this is exactly the refinement window.
    std::vector<Eigen::VectorXd> window_snapshot() const {
        std::vector<Eigen::VectorXd> out;
        out.reserve(obs_.size());
        for (size_t i = 0; i < obs_.size(); ++i) out.push_back(obs_.from_oldest(i));
        return out;
    }

private:
    std::shared_ptr<const FittedBaseline> baseline_;
    MonitorConfig config_;
    long omega_;
    detail::RingWindow<Eigen::VectorXd> obs_;
    detail::RingWindow<double> resid_;
    long t_;
    double threshold_ = 0.0;
    std::optional<double> last_stat_;
};

/// Re-run detection inside an alarm window with the reduced window length
/// omega' = round(refine_ratio * omega). `window` holds the h lead-in
/// observations followed by the omega observations after the alarm time
/// `t_hat`. Returns the index of the last observation read when the first
/// sub-alarm fires, always in (t_hat, t_hat + omega]; absent when no sub-alarm
/// fires inside the window.
inline std::optional<long> refine(const std::vector<Eigen::VectorXd>& window,
                                  std::shared_ptr<const FittedBaseline> baseline,
                                  const MonitorConfig& config, long t_hat) {
    const auto& fb = *baseline;
    config.validate(fb.h, fb.p);
    const long omega = config.resolved_omega(fb.h, fb.p);
    if (static_cast<long>(window.size()) != fb.h + omega)
        throw data_error("refine: window must hold exactly h+omega observations");
    const long sub_omega = config.refine_window(fb.h, fb.p);

    MonitorConfig sub = config;
    sub.omega = sub_omega;
    MonitorState state(std::move(baseline), sub, /*start_index=*/t_hat - fb.h + 1);
    for (const auto& x : window) {
        const StepResult res = state.step(x);
        if (res.alarm) return state.t();
    }
    return std::nullopt;
}

/// Confirmation step: the original alarm stands iff refinement re-triggers
/// inside the alarm window.
inline bool confirm(const std::vector<Eigen::VectorXd>& window,
                    std::shared_ptr<const FittedBaseline> baseline, const MonitorConfig& config) {
    return refine(window, std::move(baseline), config, /*t_hat=*/0).has_value();
}

}  // namespace varcp
