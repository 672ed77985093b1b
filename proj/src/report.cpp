#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "c3/bench.hpp"

namespace c3 {

namespace {

using nlohmann::json;

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

json run_json(const RunResult& r) {
    return {{"repetition", r.repetition}, {"rotation", r.rotation},       {"seed", r.seed},
            {"c3", r.c3},                 {"cv", r.cv},                   {"cv_independent", r.cv_independent},
            {"full_c3", opt(r.full_c3)},  {"full_cv", opt(r.full_cv)}};
}

RunResult run_from(const json& j) {
    RunResult r;
    r.repetition = j.at("repetition").get<std::size_t>();
    r.rotation = j.at("rotation").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.c3 = j.at("c3").get<std::vector<double>>();
    r.cv = j.at("cv").get<std::vector<double>>();
    r.cv_independent = j.at("cv_independent").get<std::vector<double>>();
    r.full_c3 = opt_from(j, "full_c3");
    r.full_cv = opt_from(j, "full_cv");
    return r;
}

json row_json(const ReportRow& r) {
    json runs = json::array();
    for (const auto& run : r.runs) runs.push_back(run_json(run));
    return {{"label", r.label},
            {"batches", r.batches},
            {"fraction", r.fraction},
            {"lambda", r.lambda},
            {"skipped", r.skipped},
            {"runs", runs},
            {"c3_batches", r.c3_batches},
            {"cv_batches", r.cv_batches},
            {"cv_independent_batches", r.cv_independent_batches},
            {"mu1", r.mu1},
            {"sigma1_sq", r.sigma1_sq},
            {"mu2", r.mu2},
            {"sigma2_sq", r.sigma2_sq},
            {"full_cv", opt(r.full_cv)},
            {"full_c3", opt(r.full_c3)},
            {"reference", opt(r.reference)},
            {"delta1", opt(r.delta1)},
            {"delta2", opt(r.delta2)},
            {"delta3", r.delta3},
            {"delta3_per_repetition", r.delta3_per_repetition}};
}

ReportRow row_from(const json& j) {
    ReportRow r;
    r.label = j.at("label").get<std::string>();
    r.batches = j.at("batches").get<std::size_t>();
    r.fraction = j.at("fraction").get<double>();
    r.lambda = j.at("lambda").get<double>();
    r.skipped = j.at("skipped").get<bool>();
    for (const auto& run : j.at("runs")) r.runs.push_back(run_from(run));
    r.c3_batches = j.at("c3_batches").get<std::vector<double>>();
    r.cv_batches = j.at("cv_batches").get<std::vector<double>>();
    r.cv_independent_batches = j.at("cv_independent_batches").get<std::vector<double>>();
    r.mu1 = j.at("mu1").get<double>();
    r.sigma1_sq = j.at("sigma1_sq").get<double>();
    r.mu2 = j.at("mu2").get<double>();
    r.sigma2_sq = j.at("sigma2_sq").get<double>();
    r.full_cv = opt_from(j, "full_cv");
    r.full_c3 = opt_from(j, "full_c3");
    r.reference = opt_from(j, "reference");
    r.delta1 = opt_from(j, "delta1");
    r.delta2 = opt_from(j, "delta2");
    r.delta3 = j.at("delta3").get<double>();
    r.delta3_per_repetition = j.at("delta3_per_repetition").get<std::vector<double>>();
    return r;
}

std::string num(double v, const char* fmt = "%.10g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string emit_csv(const ExperimentReport& report) {
    std::ostringstream os;
    os << "config,metric,value\n";
    const auto line = [&](const std::string& cfg, const std::string& metric, double v) {
        os << csv_field(cfg) << ',' << csv_field(metric) << ',' << num(v) << '\n';
    };
    for (const auto& row : report.rows) {
        if (row.runs.empty()) {
            os << csv_field(row.label) << ",skipped,1\n";
            continue;
        }
        for (std::size_t b = 0; b < row.c3_batches.size(); ++b) line(row.label, "C3_B" + std::to_string(b + 1), row.c3_batches[b]);
        for (std::size_t b = 0; b < row.cv_batches.size(); ++b) line(row.label, "CV_B" + std::to_string(b + 1), row.cv_batches[b]);
        for (std::size_t b = 0; b < row.cv_independent_batches.size(); ++b) {
            line(row.label, "CVI_B" + std::to_string(b + 1), row.cv_independent_batches[b]);
        }
        line(row.label, "mu1", row.mu1);
        line(row.label, "sigma1_sq", row.sigma1_sq);
        line(row.label, "mu2", row.mu2);
        line(row.label, "sigma2_sq", row.sigma2_sq);
        if (row.full_cv) line(row.label, "full_cv", *row.full_cv);
        if (row.full_c3) line(row.label, "full_c3", *row.full_c3);
        if (row.delta1) line(row.label, "delta1", *row.delta1);
        if (row.delta2) line(row.label, "delta2", *row.delta2);
        line(row.label, "delta3", row.delta3);
        if (row.skipped) line(row.label, "skipped", 1.0);
    }
    return os.str();
}

std::string cell(const std::optional<double>& v) { return v ? num(*v, "%.2f") : std::string(); }

std::string emit_markdown(const ExperimentReport& report) {
    std::ostringstream os;
    os << "# C3 experiment report\n\n";
    os << "Protocol: " << report.protocol << ", repetitions: " << report.repetitions
       << ", base seed: " << report.base_seed << ", config hash: `" << report.config_hash << "`\n";
    for (const auto& row : report.rows) {
        os << "\n## " << row.label << "\n\n";
        if (row.runs.empty()) {
            os << "_skipped: time limit reached before any run finished_\n";
            continue;
        }
        const std::size_t k = row.c3_batches.size();
        os << "| Method |";
        for (std::size_t b = 0; b < k; ++b) os << " B" << b + 1 << " |";
        os << " μ | σ² | CV | C³ | Δ₁ | Δ₂ | Δ₃ |\n|---|";
        for (std::size_t b = 0; b < k + 7; ++b) os << "---|";
        os << '\n';
        const auto batches = [&](const std::vector<double>& v) {
            for (std::size_t b = 0; b < k; ++b) os << ' ' << (b < v.size() ? num(v[b], "%.2f") : std::string()) << " |";
        };
        os << "| CV |";
        batches(row.cv_batches);
        os << ' ' << num(row.mu1, "%.2f") << " | " << num(row.sigma1_sq, "%.2f") << " | " << cell(row.full_cv)
           << " | | | | |\n";
        os << "| C³ |";
        batches(row.c3_batches);
        os << ' ' << num(row.mu2, "%.2f") << " | " << num(row.sigma2_sq, "%.2f") << " | | " << cell(row.full_c3)
           << " | " << (row.delta1 ? format_delta(*row.delta1) : std::string()) << " | "
           << (row.delta2 ? format_delta(*row.delta2) : std::string()) << " | " << format_delta(row.delta3)
           << " |\n";
        if (!row.cv_independent_batches.empty()) {
            os << "| CV-independent |";
            batches(row.cv_independent_batches);
            os << ' ' << num(mean_of(row.cv_independent_batches), "%.2f") << " | "
               << num(population_variance(row.cv_independent_batches), "%.2f") << " | | | | | |\n";
        }
        if (row.skipped) os << "\n_partial: some repetitions skipped by the time limit_\n";
    }
    return os.str();
}

}  // namespace

std::string format_delta(double delta) {
    const double rounded = std::round(delta * 10.0) / 10.0;
    if (rounded == 0.0) return "0";
    return (rounded > 0 ? "↑ " : "↓ ") + num(std::abs(rounded), "%.1f");
}

json to_json(const ExperimentReport& report) {
    json rows = json::array();
    for (const auto& r : report.rows) rows.push_back(row_json(r));
    json series = json::array();
    for (const auto& [l, a] : report.sweep_series) series.push_back({l, a});
    return {{"kind", "c3.experiment_report"},
            {"schema_version", report.schema_version},
            {"protocol", report.protocol},
            {"base_seed", report.base_seed},
            {"repetitions", report.repetitions},
            {"config_hash", report.config_hash},
            {"config", report.config},
            {"wall_time_seconds", opt(report.wall_time_seconds)},
            {"sweep_series", series},
            {"rows", rows}};
}

ExperimentReport report_from_json(const json& j) {
    if (j.value("kind", std::string()) != "c3.experiment_report") {
        throw std::invalid_argument("report: not an experiment report");
    }
    ExperimentReport r;
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != kReportSchemaVersion) throw std::invalid_argument("report: unsupported schema version");
    r.protocol = j.at("protocol").get<std::string>();
    r.base_seed = j.at("base_seed").get<std::uint64_t>();
    r.repetitions = j.at("repetitions").get<std::size_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.config = j.at("config");
    r.wall_time_seconds = opt_from(j, "wall_time_seconds");
    for (const auto& p : j.at("sweep_series")) r.sweep_series.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    for (const auto& row : j.at("rows")) r.rows.push_back(row_from(row));
    return r;
}

std::string emit_report(const ExperimentReport& report, ReportFormat format) {
    switch (format) {
        case ReportFormat::json:
            return to_json(report).dump(2) + "\n";
        case ReportFormat::csv:
            return emit_csv(report);
        case ReportFormat::markdown:
            return emit_markdown(report);
    }
    throw std::invalid_argument("report: unknown format");
}

std::string emit_sweep_series(const ExperimentReport& report) {
    std::string out = "lambda,accuracy\n";
    for (const auto& [l, a] : report.sweep_series) out += num(l) + "," + num(a) + "\n";
    return out;
}

}  // namespace c3
