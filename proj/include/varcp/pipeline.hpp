#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "varcp/errors.hpp"
#include "varcp/model.hpp"
#include "varcp/monitor.hpp"

namespace varcp {

struct PipelineConfig {
    long n = 0;  // effective training sample size; training consumes n + h observations
    std::optional<long> h;
    long h_max = 1;
    MonitorConfig monitor;
    std::optional<double> lambda;
    bool retrain = false;
    std::optional<long> min_spacing_hint;  // advisory; documents the multi-change assumption

    /// Lag used when sizing the training window: the known lag, or the BIC
    /// search ceiling when the lag is to be selected.
    long collect_lag() const { return h ? *h : h_max; }

    void validate() const {
        if (n <= 0) throw config_error("PipelineConfig: training length n must be positive");
        if (collect_lag() < 1) throw config_error("PipelineConfig: lag must be positive");
        if (retrain && !monitor.confirm)
            throw config_error("PipelineConfig: retraining requires the confirmation step");
    }
};

struct AlarmRecord {
    long t_hat = 0;      // alarm time: start index of the triggering window
    long last_read = 0;  // t_hat + omega
    std::optional<long> refined;
    std::optional<bool> confirmed;
    double statistic = 0.0;
    std::optional<int> cluster_id;
};

struct AlarmCluster {
    std::optional<long> start_estimate;  // refinement result of the first member
    std::vector<size_t> members;         // indices into RunReport::alarms, time-ordered
};

struct BaselineSummary {
    long n = 0;
    long h = 0;
    long p = 0;
    double lambda = 0.0;
    long nonzeros = 0;
    double sigma2_mean = 0.0;
    double v_mean = 0.0;

    static BaselineSummary from(const FittedBaseline& fb) {
        BaselineSummary s;
        s.n = fb.n;
        s.h = fb.h;
        s.p = fb.p;
        s.lambda = fb.lambda;
        s.nonzeros = (fb.beta.array() != 0.0).count();
        s.sigma2_mean = fb.sigma2_hat.mean();
        s.v_mean = fb.v_hat.mean();
        return s;
    }
};

struct SegmentReport {
    long train_begin = 0;
    long train_end = 0;
    long monitor_begin = 0;
    long monitor_end = 0;  // < monitor_begin when nothing was monitored
    BaselineSummary baseline;
};

struct RunReport {
    std::vector<AlarmRecord> alarms;
    std::vector<AlarmCluster> clusters;
    std::vector<SegmentReport> segments;
    long run_length = 0;  // observations monitored up to and including the first alarm
    bool any_alarm = false;
    long monitored = 0;
    bool retrain_truncated = false;  // stream ended inside a retraining window
};

/// One log-worthy occurrence. `t` is the position of the newest observation
/// consumed when the event fired, so event times never decrease within a run;
/// alarm-related events carry the alarm time separately.
struct MonitorEvent {
    enum class Kind { stat, alarm, confirmed, dismissed, cluster, retrain };
    Kind kind = Kind::stat;
    long t = 0;
    double statistic = std::numeric_limits<double>::quiet_NaN();
    std::optional<long> t_hat;
    std::optional<long> refined;
    std::optional<long> train_start;
    std::optional<int> cluster_id;
};

using EventSink = std::function<void(const MonitorEvent&)>;
using ObservationSource = std::function<std::optional<Eigen::VectorXd>()>;

/// Row-by-row view over an in-memory dataset. The dataset must outlive the
/// returned source.
inline ObservationSource dataset_source(const Dataset& data) {
    long next = 0;
    return [&data, next]() mutable -> std::optional<Eigen::VectorXd> {
        if (next >= data.rows()) return std::nullopt;
        return Eigen::VectorXd(data.values.row(next++).transpose());
    };
}

/// Group time-ordered alarms: a gap larger than omega between consecutive
/// alarm times opens a new cluster; each cluster's start estimate is the
/// refinement result of its first alarm.
inline std::vector<AlarmCluster> cluster_alarms(const std::vector<AlarmRecord>& alarms, long omega) {
    std::vector<AlarmCluster> clusters;
    long prev = std::numeric_limits<long>::min();
    for (size_t i = 0; i < alarms.size(); ++i) {
        if (i > 0 && alarms[i].t_hat < alarms[i - 1].t_hat)
            throw config_error("cluster_alarms: alarms must be time-ordered");
        if (clusters.empty() || alarms[i].t_hat - prev > omega) {
            clusters.push_back({alarms[i].refined, {}});
        }
        clusters.back().members.push_back(i);
        prev = alarms[i].t_hat;
    }
    return clusters;
}

namespace detail {

inline RunReport run_stream(const ObservationSource& source, const PipelineConfig& config,
                            bool retrain, const EventSink& sink) {
    config.validate();
    RunReport report;
    long stream_pos = 0;  // global 1-based index of the last observation read
    auto next = [&]() -> std::optional<Eigen::VectorXd> {
        auto v = source();
        if (v) ++stream_pos;
        return v;
    };
    auto emit = [&](MonitorEvent ev) {
        if (sink) sink(ev);
    };

    std::vector<Eigen::VectorXd> carry;  // observations already read that open the next training window
    long train_start = 1;
    long report_omega = 0;
    bool exhausted = false;

    while (!exhausted) {
        const long need = config.n + config.collect_lag();
        std::vector<Eigen::VectorXd> train = std::move(carry);
        carry.clear();
        while (static_cast<long>(train.size()) < need) {
            auto v = next();
            if (!v) {
                if (report.segments.empty())
                    throw data_error("run: stream provides fewer than n+h observations");
                report.retrain_truncated = true;
                exhausted = true;
                break;
            }
            train.push_back(std::move(*v));
        }
        if (exhausted) break;

        Dataset tds;
        tds.values.resize(need, train.front().size());
        for (long i = 0; i < need; ++i) tds.values.row(i) = train[static_cast<size_t>(i)].transpose();
        BaselineOptions bopts;
        bopts.h = config.h;
        bopts.h_max = config.h_max;
        bopts.mode = config.monitor.mode;
        bopts.lambda = config.lambda;
        auto fb = std::make_shared<const FittedBaseline>(fit_baseline(tds, bopts));

        const long train_end = train_start + need - 1;
        config.monitor.validate(fb->h, fb->p);
        const long omega = config.monitor.resolved_omega(fb->h, fb->p);
        if (report_omega == 0) report_omega = omega;

        // Seed the window with the training tail so the first monitored
        // observation already completes a full window (Algorithm 1 starts the
        // statistic loop at t = n+h-omega+1).
        const long seeds = std::min(need, fb->h + omega - 1);
        MonitorState mon(fb, config.monitor, /*start_index=*/train_end - seeds + 1);
        for (long i = need - seeds; i < need; ++i) mon.step(train[static_cast<size_t>(i)]);

        SegmentReport seg;
        seg.train_begin = train_start;
        seg.train_end = train_end;
        seg.monitor_begin = train_end + 1;
        seg.monitor_end = train_end;
        seg.baseline = BaselineSummary::from(*fb);

        bool segment_done = false;
        while (!segment_done) {
            auto v = next();
            if (!v) {
                exhausted = true;
                break;
            }
            const StepResult res = mon.step(*v);
            seg.monitor_end = mon.t();
            ++report.monitored;
            if (res.statistic) {
                MonitorEvent ev;
                ev.kind = MonitorEvent::Kind::stat;
                ev.t = mon.t();
                ev.statistic = *res.statistic;
                emit(ev);
            }
            if (!res.alarm) continue;

            AlarmRecord rec;
            rec.t_hat = mon.t() - omega;
            rec.last_read = mon.t();
            rec.statistic = *res.statistic;
            if (!report.any_alarm) {
                report.any_alarm = true;
                report.run_length = report.monitored;
            }
            {
                MonitorEvent ev;
                ev.kind = MonitorEvent::Kind::alarm;
                ev.t = rec.last_read;
                ev.statistic = rec.statistic;
                ev.t_hat = rec.t_hat;
                emit(ev);
            }

            const auto window = mon.window_snapshot();
            rec.refined = refine(window, fb, config.monitor, rec.t_hat);
            if (config.monitor.confirm) {
                rec.confirmed = rec.refined.has_value();
                MonitorEvent ev;
                ev.kind = *rec.confirmed ? MonitorEvent::Kind::confirmed : MonitorEvent::Kind::dismissed;
                ev.t = rec.last_read;
                ev.t_hat = rec.t_hat;
                ev.refined = rec.refined;
                emit(ev);
            }
            report.alarms.push_back(rec);

            if (retrain && rec.confirmed && *rec.confirmed) {
                const long cut = *rec.refined;  // discard everything up to the refined estimate
                const long window_lo = rec.t_hat - fb->h + 1;
                carry.clear();
                for (long g = cut + 1; g <= mon.t(); ++g)
                    carry.push_back(window[static_cast<size_t>(g - window_lo)]);
                train_start = cut + 1;
                MonitorEvent ev;
                ev.kind = MonitorEvent::Kind::retrain;
                ev.t = mon.t();
                ev.train_start = train_start;
                emit(ev);
                segment_done = true;
            }
        }
        report.segments.push_back(seg);
    }

    if (!report.any_alarm) report.run_length = report.monitored;
    report.clusters = cluster_alarms(report.alarms, report_omega);
    for (size_t ci = 0; ci < report.clusters.size(); ++ci) {
        for (size_t ai : report.clusters[ci].members)
            report.alarms[ai].cluster_id = static_cast<int>(ci);
        const auto& cl = report.clusters[ci];
        MonitorEvent ev;
        ev.kind = MonitorEvent::Kind::cluster;
        ev.t = stream_pos;  // summary record appended once the run is over
        ev.t_hat = report.alarms[cl.members.front()].t_hat;
        ev.refined = cl.start_estimate;
        ev.cluster_id = static_cast<int>(ci);
        emit(ev);
    }
    return report;
}

}  // namespace detail

/// Train once on the first n+h observations, then monitor the remainder.
/// Alarms are recorded, refined, and (optionally) confirmed; monitoring always
/// continues and the baseline is never replaced.
inline RunReport run_single(const ObservationSource& source, const PipelineConfig& config,
                            const EventSink& sink = nullptr) {
    return detail::run_stream(source, config, /*retrain=*/false, sink);
}

inline RunReport run_single(const Dataset& data, const PipelineConfig& config,
                            const EventSink& sink = nullptr) {
    return run_single(dataset_source(data), config, sink);
}

/// Sequential multi-change variant: every confirmed alarm cuts the stream at
/// its refined estimate, the next n+h observations become fresh training data,
/// and monitoring resumes under the new baseline. Dismissed alarms do not
/// retrain. Requires confirmation when retraining is enabled.
inline RunReport run_sequential(const ObservationSource& source, const PipelineConfig& config,
                                const EventSink& sink = nullptr) {
    return detail::run_stream(source, config, config.retrain, sink);
}

inline RunReport run_sequential(const Dataset& data, const PipelineConfig& config,
                                const EventSink& sink = nullptr) {
    return run_sequential(dataset_source(data), config, sink);
}

// ---------------------------------------------------------------------------
// Benchmark harness: seeded replications of the simulation protocols.
// ---------------------------------------------------------------------------

enum class Scenario { run_length, delay, window_sweep, refine, multicp };

struct BenchParams {
    long p = 10;
    long h = 1;
    long n = 2000;
    double alpha = 1e-3;
    std::optional<long> omega;      // protocol window; defaults to the omega rule
    double a_diag = 0.8;            // baseline transition 0.8 * I
    double sigma2 = 1.0;
    bool hetero_sigma = false;      // draw per-component variances from U(0.5, 1.5)
    VarianceMode mode = VarianceMode::homogeneous;
    double jump = 4.0;
    long jump_sparsity = 0;         // 0 -> p
    double refine_ratio = 0.15;
    bool confirm = true;
    long monitored = 10000;         // run_length: monitored stream length
    long post_change_monitored = 200;  // delay-style scenarios: observations after the change
    long change_lead = 300;         // window_sweep/refine: monitored observations before the change
    std::vector<long> omega_grid = {20, 30, 40, 50, 60, 80, 100};
    std::vector<double> jump_grid = {2.0, 2.5, 3.0, 3.5, 4.0, 4.5};
    std::vector<long> change_points = {2300, 4600};  // multicp, absolute positions
    long total_length = 6900;                        // multicp
    long match_tolerance = 10;                       // multicp F1 matching window
    long burn_in = 500;
    int threads = 0;  // 0 -> hardware concurrency
};

struct BenchTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

struct BenchResult {
    BenchTable raw;
    BenchTable summary;
};

namespace detail {

template <typename Fn>
inline void parallel_for(long count, int threads, Fn&& fn) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    threads = static_cast<int>(std::max(1L, std::min<long>(threads, count)));
    if (threads == 1) {
        for (long i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<long> cursor{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            while (true) {
                const long i = cursor.fetch_add(1);
                if (i >= count) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

inline double quantile(std::vector<double> values, double q) {
    values.erase(std::remove_if(values.begin(), values.end(),
                                [](double v) { return !std::isfinite(v); }),
                 values.end());
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = static_cast<size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

inline VarModel bench_base_model(const BenchParams& params, rng_engine& eng) {
    VarModel base = scaled_identity_model(params.p, params.a_diag, params.sigma2);
    if (params.hetero_sigma) {
        std::uniform_real_distribution<double> unif(0.5, 1.5);
        base.sigma2.resize(params.p);
        for (long j = 0; j < params.p; ++j) base.sigma2(j) = unif(eng);
    }
    return base;
}

inline PipelineConfig bench_pipeline_config(const BenchParams& params) {
    PipelineConfig config;
    config.n = params.n;
    config.h = params.h;
    config.monitor.omega = params.omega;
    config.monitor.alpha = params.alpha;
    config.monitor.refine_ratio = params.refine_ratio;
    config.monitor.confirm = params.confirm;
    config.monitor.mode = params.mode;
    return config;
}

struct FirstAlarmOutcome {
    bool alarmed = false;
    long run_length = 0;            // monitored observations up to the first alarm (or total)
    std::optional<long> refined;    // refinement of the first alarm
};

inline FirstAlarmOutcome first_alarm(const RunReport& report) {
    FirstAlarmOutcome out;
    out.alarmed = report.any_alarm;
    out.run_length = report.run_length;
    if (!report.alarms.empty()) out.refined = report.alarms.front().refined;
    return out;
}

inline double multicp_f1(const std::vector<long>& truth, const std::vector<long>& detections,
                         long tolerance) {
    std::vector<bool> used(detections.size(), false);
    long tp = 0;
    for (long cp : truth) {
        long best = -1;
        long best_dist = tolerance + 1;
        for (size_t i = 0; i < detections.size(); ++i) {
            if (used[i]) continue;
            const long dist = std::abs(detections[i] - cp);
            if (dist <= tolerance && dist < best_dist) {
                best = static_cast<long>(i);
                best_dist = dist;
            }
        }
        if (best >= 0) {
            used[static_cast<size_t>(best)] = true;
            ++tp;
        }
    }
    const long fp = static_cast<long>(detections.size()) - tp;
    const long fn = static_cast<long>(truth.size()) - tp;
    const double denom = static_cast<double>(2 * tp + fp + fn);
    return denom == 0.0 ? 1.0 : 2.0 * static_cast<double>(tp) / denom;
}

}  // namespace detail

/// Seeded replications of the simulation protocols (no-change run lengths,
/// post-change detection delays, window sweeps, refinement accuracy, and the
/// sequential multi-change F1). Replication i uses a seed derived from the
/// master seed, so results are deterministic regardless of thread schedule.
inline BenchResult bench(Scenario scenario, const BenchParams& params, long replications,
                         std::uint64_t seed) {
    if (replications < 1) throw config_error("bench: replications must be positive");
    BenchResult result;

    const long train_rows = params.n + params.h;
    auto config = detail::bench_pipeline_config(params);

    switch (scenario) {
        case Scenario::run_length: {
            result.raw.columns = {"rep", "run_length", "alarmed"};
            result.raw.rows.resize(static_cast<size_t>(replications));
            detail::parallel_for(replications, params.threads, [&](long rep) {
                rng_engine eng(derive_seed(seed, static_cast<std::uint64_t>(rep)));
                VarModel base = detail::bench_base_model(params, eng);
                Dataset data = simulate(base, train_rows + params.monitored, eng(), params.burn_in);
                const auto report = run_single(data, config);
                const auto out = detail::first_alarm(report);
                result.raw.rows[static_cast<size_t>(rep)] = {
                    static_cast<double>(rep), static_cast<double>(out.run_length),
                    out.alarmed ? 1.0 : 0.0};
            });
            std::vector<double> lengths;
            for (const auto& row : result.raw.rows) lengths.push_back(row[1]);
            result.summary.columns = {"n", "p", "alpha", "median", "q2.5", "q97.5"};
            result.summary.rows = {{static_cast<double>(params.n), static_cast<double>(params.p),
                                    params.alpha, detail::quantile(lengths, 0.5),
                                    detail::quantile(lengths, 0.025), detail::quantile(lengths, 0.975)}};
            break;
        }
        case Scenario::delay: {
            result.raw.columns = {"rep", "delay", "alarmed"};
            result.raw.rows.resize(static_cast<size_t>(replications));
            detail::parallel_for(replications, params.threads, [&](long rep) {
                rng_engine eng(derive_seed(seed, static_cast<std::uint64_t>(rep)));
                VarModel base = detail::bench_base_model(params, eng);
                const long sparsity = params.jump_sparsity > 0 ? params.jump_sparsity : params.p;
                VarModel post = make_jump(base, params.jump, sparsity, eng());
                ChangeSpec spec;
                spec.segments.push_back({1, base});
                spec.segments.push_back({train_rows + 1, post});  // change at the training end
                spec.total_length = train_rows + params.post_change_monitored;
                spec.burn_in = params.burn_in;
                Dataset data = simulate(spec, eng());
                const auto out = detail::first_alarm(run_single(data, config));
                result.raw.rows[static_cast<size_t>(rep)] = {
                    static_cast<double>(rep),
                    out.alarmed ? static_cast<double>(out.run_length)
                                : std::numeric_limits<double>::quiet_NaN(),
                    out.alarmed ? 1.0 : 0.0};
            });
            std::vector<double> delays;
            for (const auto& row : result.raw.rows) delays.push_back(row[1]);
            result.summary.columns = {"n", "p", "alpha", "jump", "omega", "median", "q2.5", "q97.5"};
            result.summary.rows = {{static_cast<double>(params.n), static_cast<double>(params.p),
                                    params.alpha, params.jump,
                                    static_cast<double>(config.monitor.resolved_omega(params.h, params.p)),
                                    detail::quantile(delays, 0.5), detail::quantile(delays, 0.025),
                                    detail::quantile(delays, 0.975)}};
            break;
        }
        case Scenario::window_sweep: {
            const long grid = static_cast<long>(params.omega_grid.size());
            if (grid == 0) throw config_error("bench: window_sweep needs a nonempty omega grid");
            result.raw.columns = {"omega", "rep", "early_stop", "delay"};
            result.raw.rows.resize(static_cast<size_t>(grid * replications));
            detail::parallel_for(grid * replications, params.threads, [&](long idx) {
                const long gi = idx / replications;
                const long rep = idx % replications;
                rng_engine eng(derive_seed(seed, static_cast<std::uint64_t>(rep)));
                VarModel base = detail::bench_base_model(params, eng);
                const long sparsity = params.jump_sparsity > 0 ? params.jump_sparsity : params.p;
                VarModel post = make_jump(base, params.jump, sparsity, eng());
                const long t_star = train_rows + params.change_lead;
                ChangeSpec spec;
                spec.segments.push_back({1, base});
                spec.segments.push_back({t_star + 1, post});
                spec.total_length = t_star + params.post_change_monitored;
                spec.burn_in = params.burn_in;
                Dataset data = simulate(spec, eng());
                auto cfg = config;
                cfg.monitor.omega = params.omega_grid[static_cast<size_t>(gi)];
                const auto out = detail::first_alarm(run_single(data, cfg));
                const long last_read = train_rows + out.run_length;
                const bool early = out.alarmed && last_read <= t_star;
                const double delay = out.alarmed && !early
                                         ? static_cast<double>(last_read - t_star)
                                         : std::numeric_limits<double>::quiet_NaN();
                result.raw.rows[static_cast<size_t>(idx)] = {
                    static_cast<double>(params.omega_grid[static_cast<size_t>(gi)]),
                    static_cast<double>(rep), early ? 1.0 : 0.0, delay};
            });
            result.summary.columns = {"n",     "p",          "alpha",  "jump",
                                      "omega", "early_stop", "median", "q2.5",
                                      "q97.5"};
            for (long gi = 0; gi < grid; ++gi) {
                std::vector<double> delays;
                double early = 0.0;
                for (long rep = 0; rep < replications; ++rep) {
                    const auto& row = result.raw.rows[static_cast<size_t>(gi * replications + rep)];
                    early += row[2];
                    delays.push_back(row[3]);
                }
                result.summary.rows.push_back(
                    {static_cast<double>(params.n), static_cast<double>(params.p), params.alpha,
                     params.jump, static_cast<double>(params.omega_grid[static_cast<size_t>(gi)]),
                     early / static_cast<double>(replications), detail::quantile(delays, 0.5),
                     detail::quantile(delays, 0.025), detail::quantile(delays, 0.975)});
            }
            break;
        }
        case Scenario::refine: {
            result.raw.columns = {"rep", "early_stop", "delay", "refined_error"};
            result.raw.rows.resize(static_cast<size_t>(replications));
            detail::parallel_for(replications, params.threads, [&](long rep) {
                rng_engine eng(derive_seed(seed, static_cast<std::uint64_t>(rep)));
                VarModel base = detail::bench_base_model(params, eng);
                const long sparsity = params.jump_sparsity > 0 ? params.jump_sparsity : params.p;
                VarModel post = make_jump(base, params.jump, sparsity, eng());
                const long t_star = train_rows + params.change_lead;
                ChangeSpec spec;
                spec.segments.push_back({1, base});
                spec.segments.push_back({t_star + 1, post});
                spec.total_length = t_star + params.post_change_monitored;
                spec.burn_in = params.burn_in;
                Dataset data = simulate(spec, eng());
                const auto report = run_single(data, config);
                double delay = std::numeric_limits<double>::quiet_NaN();
                double refined_err = std::numeric_limits<double>::quiet_NaN();
                bool early = false;
                // first alarm whose window reaches past the true change
                for (const auto& alarm : report.alarms) {
                    if (alarm.last_read <= t_star) {
                        early = true;
                        break;
                    }
                    delay = static_cast<double>(alarm.last_read - t_star);
                    if (alarm.refined)
                        refined_err = static_cast<double>(std::abs(*alarm.refined - t_star));
                    break;
                }
                result.raw.rows[static_cast<size_t>(rep)] = {static_cast<double>(rep),
                                                             early ? 1.0 : 0.0, delay, refined_err};
            });
            std::vector<double> delays, errors;
            for (const auto& row : result.raw.rows) {
                delays.push_back(row[2]);
                errors.push_back(row[3]);
            }
            result.summary.columns = {"n",            "p",              "alpha",        "jump",
                                      "refine_ratio", "delay_median",   "refined_median",
                                      "refined_q2.5", "refined_q97.5"};
            result.summary.rows = {{static_cast<double>(params.n), static_cast<double>(params.p),
                                    params.alpha, params.jump, params.refine_ratio,
                                    detail::quantile(delays, 0.5), detail::quantile(errors, 0.5),
                                    detail::quantile(errors, 0.025), detail::quantile(errors, 0.975)}};
            break;
        }
        case Scenario::multicp: {
            const long grid = static_cast<long>(params.jump_grid.size());
            if (grid == 0) throw config_error("bench: multicp needs a nonempty jump grid");
            result.raw.columns = {"jump", "rep", "f1"};
            result.raw.rows.resize(static_cast<size_t>(grid * replications));
            detail::parallel_for(grid * replications, params.threads, [&](long idx) {
                const long gi = idx / replications;
                const long rep = idx % replications;
                const double jump = params.jump_grid[static_cast<size_t>(gi)];
                rng_engine eng(derive_seed(seed, static_cast<std::uint64_t>(idx)));
                VarModel base = detail::bench_base_model(params, eng);
                const long sparsity = params.jump_sparsity > 0 ? params.jump_sparsity : params.p;
                ChangeSpec spec;
                spec.total_length = params.total_length;
                spec.burn_in = params.burn_in;
                spec.segments.push_back({1, base});
                bool jumped = false;  // segments alternate base -> jumped -> base -> ...
                for (long cp : params.change_points) {
                    jumped = !jumped;
                    spec.segments.push_back(
                        {cp + 1, jumped ? make_jump(base, jump, sparsity, eng()) : base});
                }
                Dataset data = simulate(spec, eng());
                auto cfg = config;
                cfg.retrain = true;
                const auto report = run_sequential(data, cfg);
                std::vector<long> detections;
                for (const auto& alarm : report.alarms)
                    if (alarm.confirmed && *alarm.confirmed && alarm.refined)
                        detections.push_back(*alarm.refined);
                const double f1 =
                    detail::multicp_f1(params.change_points, detections, params.match_tolerance);
                result.raw.rows[static_cast<size_t>(idx)] = {jump, static_cast<double>(rep), f1};
            });
            result.summary.columns = {"p",    "n",       "alpha",  "omega", "jump",
                                      "mean_f1", "median", "q2.5",  "q97.5"};
            for (long gi = 0; gi < grid; ++gi) {
                std::vector<double> scores;
                for (long rep = 0; rep < replications; ++rep)
                    scores.push_back(result.raw.rows[static_cast<size_t>(gi * replications + rep)][2]);
                double total = 0.0;
                for (double f1 : scores) total += f1;
                result.summary.rows.push_back(
                    {static_cast<double>(params.p), static_cast<double>(params.n), params.alpha,
                     static_cast<double>(config.monitor.resolved_omega(params.h, params.p)),
                     params.jump_grid[static_cast<size_t>(gi)],
                     total / static_cast<double>(replications), detail::quantile(scores, 0.5),
                     detail::quantile(scores, 0.025), detail::quantile(scores, 0.975)});
            }
            break;
        }
    }
    return result;
}

}  // namespace varcp
