#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "varcp/errors.hpp"
#include "varcp/model.hpp"
#include "varcp/pipeline.hpp"

namespace varcp::io {

using ordered_json = nlohmann::ordered_json;

inline constexpr const char* dataset_schema = "# varcp-dataset v1";
inline constexpr const char* bench_schema = "# varcp-bench v1";
inline constexpr const char* baseline_schema = "varcp-baseline-v1";
inline constexpr const char* alarmlog_schema = "varcp-alarmlog-v1";
inline constexpr const char* report_schema = "varcp-report-v1";
inline constexpr const char* config_schema = "varcp-config-v1";
inline constexpr const char* simspec_schema = "varcp-simspec-v1";

namespace detail {

inline std::string format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream iss(line);
    while (std::getline(iss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

inline double parse_double(const std::string& field, long row, long col) {
    double value = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    while (ptr < end && (*ptr == ' ' || *ptr == '\t' || *ptr == '\r')) ++ptr;
    if (ec != std::errc() || ptr != end)
        throw data_error("csv: row " + std::to_string(row) + ", column " + std::to_string(col) +
                         ": cannot parse '" + field + "' as a number");
    return value;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset CSV: schema comment, header of series names, then one row per time
// step with 12 significant digits.
// ---------------------------------------------------------------------------

inline void write_dataset_csv(std::ostream& out, const Dataset& data) {
    out << dataset_schema << '\n';
    for (long j = 0; j < data.dim(); ++j) {
        if (j) out << ',';
        out << (j < static_cast<long>(data.labels.size()) ? data.labels[static_cast<size_t>(j)]
                                                          : "s" + std::to_string(j + 1));
    }
    out << '\n';
    for (long i = 0; i < data.rows(); ++i) {
        for (long j = 0; j < data.dim(); ++j) {
            if (j) out << ',';
            out << detail::format_value(data.values(i, j));
        }
        out << '\n';
    }
}

inline void write_dataset_csv(const std::string& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot open '" + path + "' for writing");
    write_dataset_csv(out, data);
}

/// Read a dataset CSV. The leading schema comment is optional so externally
/// produced header+rows files replay unchanged. `columns`, when nonempty,
/// selects and orders series by header name.
inline Dataset read_dataset_csv(std::istream& in, const std::vector<std::string>& columns = {}) {
    std::string line;
    if (!std::getline(in, line)) throw data_error("csv: empty input");
    if (!line.empty() && line[0] == '#') {
        if (!std::getline(in, line)) throw data_error("csv: missing header line");
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> header = detail::split_csv_line(line);
    if (header.empty()) throw data_error("csv: empty header line");

    std::vector<long> select;
    if (!columns.empty()) {
        for (const auto& name : columns) {
            auto it = std::find(header.begin(), header.end(), name);
            if (it == header.end()) throw data_error("csv: no column named '" + name + "'");
            select.push_back(it - header.begin());
        }
    } else {
        for (long j = 0; j < static_cast<long>(header.size()); ++j) select.push_back(j);
    }

    std::vector<std::vector<double>> rows;
    long row_index = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row_index;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw data_error("csv: row " + std::to_string(row_index) + ": expected " +
                             std::to_string(header.size()) + " fields, got " +
                             std::to_string(fields.size()));
        std::vector<double> row;
        row.reserve(select.size());
        for (long j : select)
            row.push_back(detail::parse_double(fields[static_cast<size_t>(j)], row_index, j + 1));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw data_error("csv: no data rows");

    Dataset data;
    for (long j : select) data.labels.push_back(header[static_cast<size_t>(j)]);
    data.values.resize(static_cast<long>(rows.size()), static_cast<long>(select.size()));
    for (long i = 0; i < data.rows(); ++i)
        for (long j = 0; j < data.dim(); ++j)
            data.values(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    return data;
}

inline Dataset read_dataset_csv(const std::string& path, const std::vector<std::string>& columns = {}) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open '" + path + "' for reading");
    return read_dataset_csv(in, columns);
}

/// Row-by-row CSV reader for streaming runs: the header is consumed up front,
/// each next() parses a single line. Errors carry the data row index.
class CsvStreamer {
public:
    explicit CsvStreamer(const std::string& path, const std::vector<std::string>& columns = {})
        : in_(path) {
        if (!in_) throw data_error("cannot open '" + path + "' for reading");
        std::string line;
        if (!std::getline(in_, line)) throw data_error("csv: empty input");
        if (!line.empty() && line[0] == '#') {
            if (!std::getline(in_, line)) throw data_error("csv: missing header line");
        }
        if (!line.empty() && line.back() == '\r') line.pop_back();
        header_ = detail::split_csv_line(line);
        if (header_.empty()) throw data_error("csv: empty header line");
        if (!columns.empty()) {
            for (const auto& name : columns) {
                auto it = std::find(header_.begin(), header_.end(), name);
                if (it == header_.end()) throw data_error("csv: no column named '" + name + "'");
                select_.push_back(it - header_.begin());
            }
        } else {
            for (long j = 0; j < static_cast<long>(header_.size()); ++j) select_.push_back(j);
        }
    }

    const std::vector<std::string>& header() const { return header_; }

    long dim() const { return static_cast<long>(select_.size()); }

    std::optional<Eigen::VectorXd> next() {
        std::string line;
        while (std::getline(in_, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            ++row_;
            const auto fields = detail::split_csv_line(line);
            if (fields.size() != header_.size())
                throw data_error("csv: row " + std::to_string(row_) + ": expected " +
                                 std::to_string(header_.size()) + " fields, got " +
                                 std::to_string(fields.size()));
            Eigen::VectorXd x(dim());
            for (size_t j = 0; j < select_.size(); ++j)
                x(static_cast<long>(j)) =
                    detail::parse_double(fields[static_cast<size_t>(select_[j])], row_, select_[j] + 1);
            return x;
        }
        return std::nullopt;
    }

    ObservationSource as_source() {
        return [this] { return next(); };
    }

private:
    std::ifstream in_;
    std::vector<std::string> header_;
    std::vector<long> select_;
    long row_ = 0;
};

// ---------------------------------------------------------------------------
// FittedBaseline: one-line JSON document, schema tag first.
// ---------------------------------------------------------------------------

inline std::string variance_mode_name(VarianceMode mode) {
    return mode == VarianceMode::homogeneous ? "homogeneous" : "heterogeneous";
}

inline VarianceMode variance_mode_from(const std::string& name) {
    if (name == "homogeneous") return VarianceMode::homogeneous;
    if (name == "heterogeneous") return VarianceMode::heterogeneous;
    throw config_error("unknown variance_mode '" + name + "'");
}

inline void write_baseline(std::ostream& out, const FittedBaseline& fb) {
    ordered_json doc;
    doc["schema"] = baseline_schema;
    doc["p"] = fb.p;
    doc["h"] = fb.h;
    doc["n"] = fb.n;
    doc["lambda"] = fb.lambda;
    doc["variance_mode"] = variance_mode_name(fb.mode);
    doc["sigma2_hat"] = std::vector<double>(fb.sigma2_hat.data(), fb.sigma2_hat.data() + fb.sigma2_hat.size());
    doc["v_hat"] = std::vector<double>(fb.v_hat.data(), fb.v_hat.data() + fb.v_hat.size());
    doc["beta"] = std::vector<double>(fb.beta.data(), fb.beta.data() + fb.beta.size());
    out << doc.dump() << '\n';
}

inline void write_baseline(const std::string& path, const FittedBaseline& fb) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot open '" + path + "' for writing");
    write_baseline(out, fb);
}

inline FittedBaseline read_baseline(std::istream& in) {
    ordered_json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("baseline file: invalid JSON: ") + e.what());
    }
    if (doc.value("schema", "") != baseline_schema)
        throw data_error("baseline file: missing or unexpected schema tag");
    const long p = doc.at("p").get<long>();
    const long h = doc.at("h").get<long>();
    const long n = doc.at("n").get<long>();
    const double lambda = doc.at("lambda").get<double>();
    const VarianceMode mode = variance_mode_from(doc.at("variance_mode").get<std::string>());
    auto as_vector = [&](const char* key) {
        const auto vec = doc.at(key).get<std::vector<double>>();
        return Eigen::Map<const Eigen::VectorXd>(vec.data(), static_cast<long>(vec.size())).eval();
    };
    return FittedBaseline::assemble(as_vector("beta"), as_vector("sigma2_hat"), as_vector("v_hat"),
                                    lambda, n, h, p, mode);
}

inline FittedBaseline read_baseline(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open '" + path + "' for reading");
    return read_baseline(in);
}

// ---------------------------------------------------------------------------
// Alarm log: line-delimited JSON, schema record first, flushed per event so a
// long run can be tailed mid-flight.
// ---------------------------------------------------------------------------

class AlarmLogWriter {
public:
    explicit AlarmLogWriter(const std::string& path) : out_(path) {
        if (!out_) throw data_error("cannot open '" + path + "' for writing");
        ordered_json head;
        head["schema"] = alarmlog_schema;
        out_ << head.dump() << '\n' << std::flush;
    }

    void write(const MonitorEvent& ev) {
        static const char* names[] = {"stat", "alarm", "confirmed", "dismissed", "cluster", "retrain"};
        ordered_json rec;
        rec["event"] = names[static_cast<int>(ev.kind)];
        rec["t"] = ev.t;
        if (std::isfinite(ev.statistic)) rec["stat"] = ev.statistic;
        if (ev.t_hat) rec["t_hat"] = *ev.t_hat;
        if (ev.refined) rec["refined"] = *ev.refined;
        if (ev.train_start) rec["train_start"] = *ev.train_start;
        if (ev.cluster_id) rec["cluster"] = *ev.cluster_id;
        out_ << rec.dump() << '\n' << std::flush;
    }

private:
    std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Run report JSON.
// ---------------------------------------------------------------------------

inline ordered_json report_to_json(const RunReport& report) {
    ordered_json doc;
    doc["schema"] = report_schema;
    doc["run_length"] = report.run_length;
    doc["monitored"] = report.monitored;
    doc["any_alarm"] = report.any_alarm;
    doc["retrain_truncated"] = report.retrain_truncated;
    doc["alarms"] = ordered_json::array();
    for (const auto& a : report.alarms) {
        ordered_json rec;
        rec["t_hat"] = a.t_hat;
        rec["last_read"] = a.last_read;
        rec["statistic"] = a.statistic;
        rec["refined"] = a.refined ? ordered_json(*a.refined) : ordered_json(nullptr);
        rec["confirmed"] = a.confirmed ? ordered_json(*a.confirmed) : ordered_json(nullptr);
        rec["cluster"] = a.cluster_id ? ordered_json(*a.cluster_id) : ordered_json(nullptr);
        doc["alarms"].push_back(rec);
    }
    doc["clusters"] = ordered_json::array();
    for (const auto& c : report.clusters) {
        ordered_json rec;
        rec["start_estimate"] = c.start_estimate ? ordered_json(*c.start_estimate) : ordered_json(nullptr);
        rec["members"] = c.members;
        doc["clusters"].push_back(rec);
    }
    doc["segments"] = ordered_json::array();
    for (const auto& s : report.segments) {
        ordered_json rec;
        rec["train_begin"] = s.train_begin;
        rec["train_end"] = s.train_end;
        rec["monitor_begin"] = s.monitor_begin;
        rec["monitor_end"] = s.monitor_end;
        rec["baseline"] = {{"n", s.baseline.n},
                           {"h", s.baseline.h},
                           {"p", s.baseline.p},
                           {"lambda", s.baseline.lambda},
                           {"nonzeros", s.baseline.nonzeros},
                           {"sigma2_mean", s.baseline.sigma2_mean},
                           {"v_mean", s.baseline.v_mean}};
        doc["segments"].push_back(rec);
    }
    return doc;
}

inline void write_report(const std::string& path, const RunReport& report) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot open '" + path + "' for writing");
    out << report_to_json(report).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Bench tables.
// ---------------------------------------------------------------------------

inline void write_bench_csv(std::ostream& out, const BenchTable& table) {
    out << bench_schema << '\n';
    for (size_t j = 0; j < table.columns.size(); ++j) {
        if (j) out << ',';
        out << table.columns[j];
    }
    out << '\n';
    for (const auto& row : table.rows) {
        for (size_t j = 0; j < row.size(); ++j) {
            if (j) out << ',';
            out << detail::format_value(row[j]);
        }
        out << '\n';
    }
}

inline void write_bench_csv(const std::string& path, const BenchTable& table) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot open '" + path + "' for writing");
    write_bench_csv(out, table);
}

// ---------------------------------------------------------------------------
// Simulation spec: segments with explicit, scaled-identity, jumped, or reused
// models.
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::VectorXd sigma2_from_json(const ordered_json& j, long p) {
    Eigen::VectorXd out;
    if (j.is_number()) {
        out.resize(1);
        out(0) = j.get<double>();
    } else if (j.is_array()) {
        const auto vec = j.get<std::vector<double>>();
        if (static_cast<long>(vec.size()) != p && vec.size() != 1)
            throw config_error("simspec: sigma2 array must have length 1 or p");
        out = Eigen::Map<const Eigen::VectorXd>(vec.data(), static_cast<long>(vec.size()));
    } else {
        throw config_error("simspec: sigma2 must be a number or an array");
    }
    return out;
}

inline NoiseKind noise_from_json(const std::string& name) {
    if (name == "gaussian") return NoiseKind::gaussian;
    if (name == "uniform") return NoiseKind::uniform_scaled;
    if (name == "rademacher") return NoiseKind::rademacher_scaled;
    throw config_error("simspec: unknown noise kind '" + name + "'");
}

}  // namespace detail

/// Parse a simulation spec document. Jump segments draw their support from a
/// seed derived from `master_seed` and the segment index, so repeated runs
/// with the same seed produce identical files.
inline ChangeSpec parse_sim_spec(const ordered_json& doc, std::uint64_t master_seed) {
    if (doc.value("schema", "") != simspec_schema)
        throw config_error("simspec: missing or unexpected schema tag");
    ChangeSpec spec;
    spec.total_length = doc.at("total_length").get<long>();
    spec.burn_in = doc.value("burn_in", 500L);
    const auto& segments = doc.at("segments");
    if (!segments.is_array() || segments.empty())
        throw config_error("simspec: segments must be a nonempty array");

    for (size_t idx = 0; idx < segments.size(); ++idx) {
        const auto& seg = segments[idx];
        const long start = seg.at("start").get<long>();
        const auto& mj = seg.at("model");
        VarModel model;
        if (mj.contains("same_as_segment")) {
            const size_t ref = mj.at("same_as_segment").get<size_t>();
            if (ref >= spec.segments.size())
                throw config_error("simspec: same_as_segment must reference an earlier segment");
            model = spec.segments[ref].model;
        } else if (mj.contains("jump_from_previous")) {
            if (spec.segments.empty())
                throw config_error("simspec: jump_from_previous needs a previous segment");
            const auto& jj = mj.at("jump_from_previous");
            const VarModel& prev = spec.segments.back().model;
            const double jump = jj.at("jump").get<double>();
            const long sparsity = jj.value("sparsity", prev.p);
            const std::uint64_t jseed =
                jj.contains("seed") ? jj.at("seed").get<std::uint64_t>()
                                    : derive_seed(master_seed ^ 0x6d616b656a756d70ULL, idx);
            model = make_jump(prev, jump, sparsity, jseed);
        } else if (mj.contains("scaled_identity")) {
            const long p = mj.at("p").get<long>();
            model = scaled_identity_model(p, mj.at("scaled_identity").get<double>());
            if (mj.contains("sigma2")) model.sigma2 = detail::sigma2_from_json(mj.at("sigma2"), p);
            if (mj.contains("noise")) model.noise = detail::noise_from_json(mj.at("noise").get<std::string>());
        } else if (mj.contains("A")) {
            const auto& arrays = mj.at("A");
            if (!arrays.is_array() || arrays.empty())
                throw config_error("simspec: A must be a nonempty array of matrices");
            for (const auto& matrix : arrays) {
                const auto rows = matrix.get<std::vector<std::vector<double>>>();
                const long p = static_cast<long>(rows.size());
                Eigen::MatrixXd a(p, p);
                for (long r = 0; r < p; ++r) {
                    if (static_cast<long>(rows[static_cast<size_t>(r)].size()) != p)
                        throw config_error("simspec: coefficient matrices must be square");
                    for (long c = 0; c < p; ++c) a(r, c) = rows[static_cast<size_t>(r)][static_cast<size_t>(c)];
                }
                model.coefs.push_back(a);
            }
            model.p = model.coefs.front().rows();
            model.sigma2 = mj.contains("sigma2") ? detail::sigma2_from_json(mj.at("sigma2"), model.p)
                                                 : Eigen::VectorXd::Constant(1, 1.0);
            if (mj.contains("noise")) model.noise = detail::noise_from_json(mj.at("noise").get<std::string>());
        } else {
            throw config_error("simspec: segment model needs A, scaled_identity, jump_from_previous, "
                               "or same_as_segment");
        }
        spec.segments.push_back({start, std::move(model)});
    }
    spec.validate();
    return spec;
}

inline ChangeSpec read_sim_spec(const std::string& path, std::uint64_t master_seed) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open '" + path + "' for reading");
    ordered_json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("simspec: invalid JSON: ") + e.what());
    }
    return parse_sim_spec(doc, master_seed);
}

}  // namespace varcp::io
