// varcp: streaming change point detection for high-dimensional VAR series.
//
// Subcommands: simulate (generate piecewise VAR data), fit (train a baseline),
// monitor (stream a CSV through the detector), bench (seeded simulation
// protocols). Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical
// failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "varcp/varcp.hpp"

namespace {

using varcp::io::ordered_json;

struct Settings {
    std::optional<long> n, h, h_max, omega, min_spacing_hint;
    std::optional<double> alpha, refine_ratio, lambda;
    std::optional<bool> confirm, retrain;
    std::optional<std::string> variance_mode, input, output, alarm_log;
    std::vector<std::string> columns;
    std::optional<std::uint64_t> seed;
};

Settings load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw varcp::data_error("cannot open config '" + path + "'");
    ordered_json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw varcp::config_error(std::string("config: invalid JSON: ") + e.what());
    }

    Settings s;
    std::vector<std::string> problems;
    if (!doc.contains("schema"))
        problems.push_back("config: missing schema tag (expected \"" +
                           std::string(varcp::io::config_schema) + "\")");
    for (const auto& [key, value] : doc.items()) {
        try {
            if (key == "schema") {
                if (value.get<std::string>() != varcp::io::config_schema)
                    problems.push_back("config: unsupported schema '" + value.get<std::string>() + "'");
            } else if (key == "n") {
                s.n = value.get<long>();
            } else if (key == "h") {
                s.h = value.get<long>();
            } else if (key == "h_max") {
                s.h_max = value.get<long>();
            } else if (key == "omega") {
                s.omega = value.get<long>();
            } else if (key == "alpha") {
                s.alpha = value.get<double>();
            } else if (key == "refine_ratio") {
                s.refine_ratio = value.get<double>();
            } else if (key == "lambda") {
                if (!value.is_null()) s.lambda = value.get<double>();
            } else if (key == "confirm") {
                s.confirm = value.get<bool>();
            } else if (key == "retrain") {
                s.retrain = value.get<bool>();
            } else if (key == "variance_mode") {
                s.variance_mode = value.get<std::string>();
            } else if (key == "min_spacing_hint") {
                if (!value.is_null()) s.min_spacing_hint = value.get<long>();
            } else if (key == "input") {
                s.input = value.get<std::string>();
            } else if (key == "output") {
                s.output = value.get<std::string>();
            } else if (key == "alarm_log") {
                s.alarm_log = value.get<std::string>();
            } else if (key == "columns") {
                s.columns = value.get<std::vector<std::string>>();
            } else if (key == "seed") {
                s.seed = value.get<std::uint64_t>();
            } else {
                problems.push_back("config: unknown key '" + key + "'");
            }
        } catch (const nlohmann::json::exception&) {
            problems.push_back("config: key '" + key + "' has the wrong type");
        }
    }
    if (!problems.empty()) {
        std::string joined;
        for (const auto& p : problems) joined += p + "\n";
        joined.pop_back();
        throw varcp::config_error(joined);
    }
    return s;
}

// Flag values override file values.
template <typename T>
void overlay(std::optional<T>& base, const std::optional<T>& flag) {
    if (flag) base = flag;
}

std::uint64_t effective_seed(const std::optional<std::uint64_t>& seed) {
    if (const char* env = std::getenv("VARCP_SEED")) return std::strtoull(env, nullptr, 10);
    return seed.value_or(0);
}

varcp::PipelineConfig pipeline_config_from(const Settings& s) {
    std::vector<std::string> problems;
    if (!s.n)
        problems.push_back("config: training length 'n' is required");
    else if (*s.n <= 0)
        problems.push_back("config: 'n' must be positive");
    if (s.h && s.h_max) problems.push_back("config: give 'h' or 'h_max', not both");
    if (s.h && *s.h < 1) problems.push_back("config: 'h' must be positive");
    if (s.h_max && *s.h_max < 1) problems.push_back("config: 'h_max' must be positive");
    if (s.alpha && !(*s.alpha > 0.0 && *s.alpha < 1.0))
        problems.push_back("config: 'alpha' must lie in (0, 1)");
    if (s.refine_ratio && !(*s.refine_ratio > 0.0 && *s.refine_ratio < 1.0))
        problems.push_back("config: 'refine_ratio' must lie in (0, 1)");
    if (s.omega && *s.omega < 2) problems.push_back("config: 'omega' must be at least 2");
    if (s.lambda && *s.lambda < 0.0) problems.push_back("config: 'lambda' must be nonnegative");
    if (s.variance_mode && *s.variance_mode != "homogeneous" && *s.variance_mode != "heterogeneous")
        problems.push_back("config: 'variance_mode' must be homogeneous or heterogeneous");
    if (s.retrain.value_or(false) && !s.confirm.value_or(true))
        problems.push_back("config: 'retrain' requires 'confirm'");
    if (!problems.empty()) {
        std::string joined;
        for (const auto& p : problems) joined += p + "\n";
        joined.pop_back();
        throw varcp::config_error(joined);
    }

    varcp::PipelineConfig config;
    config.n = *s.n;
    if (s.h) config.h = *s.h;
    config.h_max = s.h_max.value_or(1);
    if (s.omega) config.monitor.omega = *s.omega;
    config.monitor.alpha = s.alpha.value_or(1e-3);
    config.monitor.refine_ratio = s.refine_ratio.value_or(0.15);
    config.monitor.confirm = s.confirm.value_or(true);
    if (s.variance_mode)
        config.monitor.mode = varcp::io::variance_mode_from(*s.variance_mode);
    config.lambda = s.lambda;
    config.retrain = s.retrain.value_or(false);
    config.min_spacing_hint = s.min_spacing_hint;
    return config;
}

int cmd_simulate(const std::string& spec_path, std::optional<std::uint64_t> seed,
                 const std::string& output) {
    const std::uint64_t s = effective_seed(seed);
    const varcp::ChangeSpec spec = varcp::io::read_sim_spec(spec_path, s);
    const varcp::Dataset data = varcp::simulate(spec, s);
    varcp::io::write_dataset_csv(output, data);
    std::cout << "wrote " << data.rows() << " rows x " << data.dim() << " columns to " << output
              << "\n";
    return 0;
}

int cmd_fit(const Settings& s) {
    if (!s.input) throw varcp::config_error("fit: input path required");
    if (!s.output) throw varcp::config_error("fit: output path required");
    varcp::Dataset data = varcp::io::read_dataset_csv(*s.input, s.columns);
    varcp::BaselineOptions opts;
    if (s.h) opts.h = *s.h;
    opts.h_max = s.h_max.value_or(1);
    if (s.variance_mode) opts.mode = varcp::io::variance_mode_from(*s.variance_mode);
    opts.lambda = s.lambda;
    const varcp::FittedBaseline fb = varcp::fit_baseline(data, opts);
    varcp::io::write_baseline(*s.output, fb);
    std::cout << "fitted baseline: n=" << fb.n << " h=" << fb.h << " p=" << fb.p
              << " lambda=" << fb.lambda << " -> " << *s.output << "\n";
    return 0;
}

int cmd_monitor(const Settings& s) {
    if (!s.input) throw varcp::config_error("monitor: input path required");
    const varcp::PipelineConfig config = pipeline_config_from(s);
    const std::string report_path = s.output.value_or("report.json");
    const std::string log_path = s.alarm_log.value_or("alarms.jsonl");

    varcp::io::CsvStreamer streamer(*s.input, s.columns);
    varcp::io::AlarmLogWriter log(log_path);
    const auto sink = [&log](const varcp::MonitorEvent& ev) { log.write(ev); };
    const varcp::RunReport report = config.retrain
                                        ? varcp::run_sequential(streamer.as_source(), config, sink)
                                        : varcp::run_single(streamer.as_source(), config, sink);
    varcp::io::write_report(report_path, report);
    std::cout << "monitored " << report.monitored << " observations, " << report.alarms.size()
              << " alarms, " << report.clusters.size() << " clusters -> " << report_path << "\n";
    return 0;
}

int cmd_bench(const std::string& scenario_name, varcp::BenchParams params, long reps,
              std::optional<std::uint64_t> seed, const std::string& output,
              std::string raw_output) {
    varcp::Scenario scenario;
    if (scenario_name == "run_length")
        scenario = varcp::Scenario::run_length;
    else if (scenario_name == "delay")
        scenario = varcp::Scenario::delay;
    else if (scenario_name == "window_sweep")
        scenario = varcp::Scenario::window_sweep;
    else if (scenario_name == "refine")
        scenario = varcp::Scenario::refine;
    else if (scenario_name == "multicp")
        scenario = varcp::Scenario::multicp;
    else
        throw varcp::config_error("bench: unknown scenario '" + scenario_name + "'");

    if (params.hetero_sigma) params.mode = varcp::VarianceMode::heterogeneous;
    const auto result = varcp::bench(scenario, params, reps, effective_seed(seed));
    if (raw_output.empty()) raw_output = output + ".raw.csv";
    varcp::io::write_bench_csv(output, result.summary);
    varcp::io::write_bench_csv(raw_output, result.raw);
    std::cout << "bench " << scenario_name << ": " << reps << " replications -> " << output
              << " (raw: " << raw_output << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"online change point detection for high-dimensional VAR time series"};
    app.require_subcommand(1);
    // config keys mirror flags one-to-one, so --h must stay available for the
    // lag order; help is long-form only
    app.set_help_flag("--help", "print help");

    // --- simulate ---
    auto* sim = app.add_subcommand("simulate", "generate a piecewise VAR dataset CSV");
    sim->set_help_flag("--help", "print help");
    std::string sim_spec, sim_output = "data.csv";
    std::optional<std::uint64_t> sim_seed;
    sim->add_option("--spec", sim_spec, "simulation spec JSON")->required();
    sim->add_option("--seed", sim_seed, "master seed (env VARCP_SEED overrides)");
    sim->add_option("--output", sim_output, "output CSV path");

    // --- shared settings flags for fit/monitor ---
    Settings flags;
    std::string config_path;
    auto add_settings_flags = [&flags, &config_path](CLI::App* cmd, bool with_pipeline) {
        cmd->set_help_flag("--help", "print help");
        cmd->add_option("--config", config_path, "config JSON; flags override file keys");
        cmd->add_option("--input", flags.input, "input dataset CSV");
        cmd->add_option("--output", flags.output, "output path");
        cmd->add_option("--columns", flags.columns, "series names to select")->delimiter(',');
        cmd->add_option("--h", flags.h, "known lag order");
        cmd->add_option("--h-max", flags.h_max, "BIC lag search ceiling");
        cmd->add_option("--lambda", flags.lambda, "penalty override (skips CV)");
        cmd->add_option("--variance-mode", flags.variance_mode, "homogeneous|heterogeneous");
        if (with_pipeline) {
            cmd->add_option("--n", flags.n, "training length");
            cmd->add_option("--alpha", flags.alpha, "false alarm level in (0,1)");
            cmd->add_option("--omega", flags.omega, "window length (default 10*ln(h*p^2) rule)");
            cmd->add_option("--refine-ratio", flags.refine_ratio, "refinement window ratio");
            cmd->add_flag("--confirm,!--no-confirm", flags.confirm, "confirmation step");
            cmd->add_flag("--retrain,!--no-retrain", flags.retrain, "retrain after confirmed alarms");
            cmd->add_option("--min-spacing-hint", flags.min_spacing_hint,
                            "advisory minimum change spacing");
            cmd->add_option("--alarm-log", flags.alarm_log, "alarm log path (JSON lines)");
            cmd->add_option("--seed", flags.seed, "seed (env VARCP_SEED overrides)");
        }
    };

    auto* fit = app.add_subcommand("fit", "fit a baseline on a full CSV and write it as JSON");
    add_settings_flags(fit, /*with_pipeline=*/false);

    auto* mon = app.add_subcommand("monitor", "stream a CSV through the detector");
    add_settings_flags(mon, /*with_pipeline=*/true);

    // --- bench ---
    auto* ben = app.add_subcommand("bench", "seeded simulation protocols");
    ben->set_help_flag("--help", "print help");
    std::string scenario, bench_output = "bench.csv", bench_raw;
    long reps = 100;
    std::optional<std::uint64_t> bench_seed;
    varcp::BenchParams params;
    std::optional<long> bench_omega;
    bool bench_no_confirm = false;
    ben->add_option("--scenario", scenario, "run_length|delay|window_sweep|refine|multicp")
        ->required();
    ben->add_option("--reps", reps, "replications");
    ben->add_option("--seed", bench_seed, "master seed (env VARCP_SEED overrides)");
    ben->add_option("--output", bench_output, "summary CSV path");
    ben->add_option("--raw-output", bench_raw, "per-replication CSV path (default <output>.raw.csv)");
    ben->add_option("--p", params.p, "series dimension");
    ben->add_option("--h", params.h, "lag order");
    ben->add_option("--n", params.n, "training length");
    ben->add_option("--alpha", params.alpha, "false alarm level");
    ben->add_option("--omega", bench_omega, "window length");
    ben->add_option("--jump", params.jump, "jump size");
    ben->add_option("--sparsity", params.jump_sparsity, "jump support size (0 = p)");
    ben->add_option("--refine-ratio", params.refine_ratio, "refinement window ratio");
    ben->add_flag("--no-confirm", bench_no_confirm, "disable the confirmation step");
    ben->add_option("--monitored", params.monitored, "monitored length (run_length)");
    ben->add_option("--post-change-monitored", params.post_change_monitored,
                    "observations generated after the change");
    ben->add_option("--change-lead", params.change_lead,
                    "monitored observations before the change (window_sweep/refine)");
    ben->add_option("--total-length", params.total_length, "stream length (multicp)");
    ben->add_option("--change-points", params.change_points, "absolute change points (multicp)")
        ->delimiter(',');
    ben->add_option("--jump-grid", params.jump_grid, "jump sizes (multicp)")->delimiter(',');
    ben->add_option("--omega-grid", params.omega_grid, "window lengths (window_sweep)")
        ->delimiter(',');
    ben->add_option("--a-diag", params.a_diag, "baseline diagonal transition weight");
    ben->add_option("--sigma2", params.sigma2, "noise variance");
    ben->add_flag("--hetero", params.hetero_sigma,
                  "heterogeneous protocol: U(0.5,1.5) variances + per-component statistic");
    ben->add_option("--threads", params.threads, "worker threads (0 = all cores)");
    ben->add_option("--burn-in", params.burn_in, "simulation burn-in");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (sim->parsed()) return cmd_simulate(sim_spec, sim_seed, sim_output);
        Settings merged;
        if (!config_path.empty()) merged = load_config_file(config_path);
        overlay(merged.n, flags.n);
        overlay(merged.h, flags.h);
        overlay(merged.h_max, flags.h_max);
        overlay(merged.omega, flags.omega);
        overlay(merged.alpha, flags.alpha);
        overlay(merged.refine_ratio, flags.refine_ratio);
        overlay(merged.lambda, flags.lambda);
        overlay(merged.confirm, flags.confirm);
        overlay(merged.retrain, flags.retrain);
        overlay(merged.variance_mode, flags.variance_mode);
        overlay(merged.min_spacing_hint, flags.min_spacing_hint);
        overlay(merged.input, flags.input);
        overlay(merged.output, flags.output);
        overlay(merged.alarm_log, flags.alarm_log);
        overlay(merged.seed, flags.seed);
        if (!flags.columns.empty()) merged.columns = flags.columns;

        if (fit->parsed()) return cmd_fit(merged);
        if (mon->parsed()) return cmd_monitor(merged);
        if (ben->parsed()) {
            if (bench_omega) params.omega = *bench_omega;
            params.confirm = !bench_no_confirm;
            return cmd_bench(scenario, params, reps, bench_seed, bench_output, bench_raw);
        }
    } catch (const varcp::config_error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const varcp::data_error& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const varcp::numerical_error& e) {
        std::cerr << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
