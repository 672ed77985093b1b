#include "c3/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <stdexcept>

#include "c3/kernels.hpp"
#include "c3/rng.hpp"

#ifdef C3_HAVE_OPENMP
#include <omp.h>
#endif

namespace c3 {

namespace {
// Per-batch percentages are printed rounded to 5% steps, so 1/6 shows up as 15%.
constexpr double kSplitRounding = 0.025;
}  // namespace

std::vector<SplitCell> standard_split_grid() {
    return {{0.05, 20}, {0.10, 10}, {0.15, 6}, {0.20, 5}, {0.25, 4}, {0.50, 2}};
}

void ProtocolSpec::validate() const {
    if (repetitions == 0) throw std::invalid_argument("protocol: repetitions must be >= 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
        throw std::invalid_argument("protocol: validation_fraction must lie in (0, 1)");
    }
    if (mode == ProtocolMode::batchwise) {
        if (cells.empty()) throw std::invalid_argument("protocol: no split cells");
        for (const auto& c : cells) {
            if (c.batches == 0) throw std::invalid_argument("protocol: cell with zero batches");
            if (!(c.fraction > 0.0) || std::abs(c.fraction - 1.0 / static_cast<double>(c.batches)) > kSplitRounding) {
                throw std::invalid_argument("protocol: fraction x batches must cover 100% of the training data");
            }
        }
    } else if (folds < 2) {
        throw std::invalid_argument("protocol: foldwise mode needs at least 2 folds");
    }
    if (cell_time_limit_seconds < 0.0) throw std::invalid_argument("protocol: negative time limit");
    if (jobs < 0) throw std::invalid_argument("protocol: jobs must be >= 0");
}

std::string DataSource::describe() const {
    if (dataset) return dataset->provenance;
    if (recipe) return "recipe:" + to_json(*recipe).dump();
    return "none";
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double population_variance(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

namespace {

std::vector<double> column_means(const std::vector<RunResult>& runs, std::vector<double> RunResult::*field) {
    if (runs.empty()) return {};
    std::vector<double> out((runs.front().*field).size(), 0.0);
    for (const auto& r : runs) {
        const auto& v = r.*field;
        if (v.size() != out.size()) throw std::invalid_argument("report: runs disagree on batch count");
        for (std::size_t b = 0; b < v.size(); ++b) out[b] += v[b];
    }
    for (double& x : out) x /= static_cast<double>(runs.size());
    return out;
}

std::optional<double> optional_mean(const std::vector<RunResult>& runs, std::optional<double> RunResult::*field) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : runs) {
        if (r.*field) {
            s += *(r.*field);
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
}

}  // namespace

void summarize_row(ReportRow& row) {
    row.c3_batches = column_means(row.runs, &RunResult::c3);
    row.cv_batches = column_means(row.runs, &RunResult::cv);
    row.cv_independent_batches = column_means(row.runs, &RunResult::cv_independent);
    row.mu1 = mean_of(row.cv_batches);
    row.sigma1_sq = population_variance(row.cv_batches);
    row.mu2 = mean_of(row.c3_batches);
    row.sigma2_sq = population_variance(row.c3_batches);
    row.delta3 = row.mu2 - row.mu1;
    row.full_c3 = optional_mean(row.runs, &RunResult::full_c3);
    row.full_cv = optional_mean(row.runs, &RunResult::full_cv);
    row.delta1.reset();
    row.delta2.reset();
    if (row.full_c3 && row.full_cv) row.delta1 = *row.full_c3 - *row.full_cv;
    if (row.full_c3 && row.reference) row.delta2 = *row.full_c3 - *row.reference;

    row.delta3_per_repetition.clear();
    std::size_t max_rep = 0;
    for (const auto& r : row.runs) max_rep = std::max(max_rep, r.repetition + 1);
    for (std::size_t rep = 0; rep < max_rep; ++rep) {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto& r : row.runs) {
            if (r.repetition != rep) continue;
            s += mean_of(r.c3) - mean_of(r.cv);
            ++n;
        }
        if (n > 0) row.delta3_per_repetition.push_back(s / static_cast<double>(n));
    }
}

std::vector<FoldRotation> fold_rotations(std::size_t n, std::size_t k, std::uint64_t seed, bool shuffle) {
    const auto folds = fragment(n, k, seed, shuffle);
    std::vector<FoldRotation> out;
    for (std::size_t f = 0; f < k; ++f) {
        FoldRotation rot;
        rot.held_out = f;
        const auto v = folds.indices(f);
        rot.validation.assign(v.begin(), v.end());
        for (std::size_t g = 0; g < k; ++g) {
            if (g == f) continue;
            const auto idx = folds.indices(g);
            const std::size_t begin = rot.train.size();
            rot.train.insert(rot.train.end(), idx.begin(), idx.end());
            rot.plan.batches.push_back({begin, rot.train.size()});
        }
        rot.plan.order.resize(rot.train.size());
        for (std::size_t i = 0; i < rot.train.size(); ++i) rot.plan.order[i] = i;
        out.push_back(std::move(rot));
    }
    return out;
}

namespace {

enum SeedTag : std::uint64_t { kDataTag = 11, kHoldoutTag = 12, kFoldTag = 13 };

std::string cell_label(const ProtocolSpec& p, std::size_t cell) {
    char buf[96];
    if (p.mode == ProtocolMode::foldwise) {
        std::snprintf(buf, sizeof buf, "Foldwise k = %zu", p.folds);
    } else {
        const auto& c = p.cells[cell];
        std::snprintf(buf, sizeof buf, "Training data = %g%%, Number_of_Batches = %zu",
                      std::round(c.fraction * 1000.0) / 10.0, c.batches);
    }
    return buf;
}

double percent(double acc) { return 100.0 * acc; }

std::vector<double> percents(const RunTrace& t) {
    std::vector<double> out;
    for (const auto& r : t.records) out.push_back(percent(r.validation_accuracy));
    return out;
}

TrainConfig run_config(const TrainConfig& base, const ProtocolSpec& p, std::uint64_t seed) {
    TrainConfig t = base;
    t.seed = seed;
    t.keep_checkpoints = false;
    if (p.recalibrate_loss) t.penalty.gradient_scale = 1.0 / (1.0 + t.penalty.lambda);
    return t;
}

RunResult run_methods(const Dataset& train, const Dataset& validation, const FragmentationPlan& plan,
                      const MlpSpec& spec, const ProtocolSpec& p, const TrainConfig& t) {
    RunResult res;
    res.seed = t.seed;
    res.c3 = percents(shift_correction(train, validation, plan, spec, t));
    TrainConfig cv = t;
    cv.baseline = BaselineMode::cv_sequential;
    res.cv = percents(cv_baseline(train, validation, plan, spec, cv));
    if (p.include_independent) {
        cv.baseline = BaselineMode::cv_independent;
        res.cv_independent = percents(cv_baseline(train, validation, plan, spec, cv));
    }
    if (p.include_full_dataset) {
        const auto whole = fragment(train.size(), 1, 0, false);
        res.full_c3 = percent(shift_correction(train, validation, whole, spec, t).records.back().validation_accuracy);
        cv.baseline = BaselineMode::cv_sequential;
        res.full_cv = percent(cv_baseline(train, validation, whole, spec, cv).records.back().validation_accuracy);
    }
    return res;
}

Dataset materialize_source(const DataSource& source, std::size_t batches, std::uint64_t seed,
                           FragmentationPlan* plan) {
    if (source.dataset) return *source.dataset;
    ShiftRecipe r = *source.recipe;
    const std::size_t total = r.n_per_batch * r.batches;
    if (batches > total) {
        throw DataError(DataErrorKind::invalid_argument, "infeasible split: K = " + std::to_string(batches) +
                                                             " exceeds n = " + std::to_string(total));
    }
    r.batches = batches;
    auto syn = synth_shift(r, total / batches, seed);
    if (plan) *plan = std::move(syn.plan);
    return std::move(syn.dataset);
}

std::vector<RunResult> batchwise_job(const DataSource& source, const ProtocolSpec& p, const TrainConfig& base,
                                     const MlpSpec& spec, std::size_t cell, std::uint64_t seed) {
    const std::size_t k = p.cells[cell].batches;
    FragmentationPlan plan;
    const Dataset data = materialize_source(source, k, derive_seed(seed, {kDataTag}), &plan);
    if (k > data.size()) {
        throw DataError(DataErrorKind::invalid_argument, "infeasible split: K = " + std::to_string(k) +
                                                             " exceeds n = " + std::to_string(data.size()));
    }
    const bool shuffle = p.shuffle.value_or(!source.recipe.has_value());
    const std::uint64_t hseed = derive_seed(seed, {kHoldoutTag});
    const HoldoutSplit split = (source.recipe && !shuffle)
                                   ? holdout_split(data, plan, p.validation_fraction, hseed)
                                   : holdout_then_fragment(data, p.validation_fraction, k, hseed, shuffle);
    return {run_methods(split.train, split.validation, split.plan, spec, p, run_config(base, p, seed))};
}

std::vector<RunResult> foldwise_job(const DataSource& source, const ProtocolSpec& p, const TrainConfig& base,
                                    const MlpSpec& spec, std::uint64_t seed) {
    const std::size_t recipe_batches = source.recipe ? source.recipe->batches : 1;
    const Dataset data = materialize_source(source, recipe_batches, derive_seed(seed, {kDataTag}), nullptr);
    if (p.folds > data.size()) throw DataError(DataErrorKind::invalid_argument, "infeasible split: k exceeds n");
    const bool shuffle = p.shuffle.value_or(!source.recipe.has_value());
    std::vector<RunResult> out;
    for (const auto& rot : fold_rotations(data.size(), p.folds, derive_seed(seed, {kFoldTag}), shuffle)) {
        const Dataset train = data.subset(rot.train);
        const Dataset validation = data.subset(rot.validation);
        auto res = run_methods(train, validation, rot.plan, spec, p, run_config(base, p, seed));
        res.rotation = rot.held_out;
        out.push_back(std::move(res));
    }
    return out;
}

std::string hex_digest(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

nlohmann::json protocol_json(const ProtocolSpec& p) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : p.cells) cells.push_back({{"fraction", c.fraction}, {"batches", c.batches}});
    nlohmann::json j = {{"mode", p.mode == ProtocolMode::batchwise ? "batchwise" : "foldwise"},
                        {"cells", cells},
                        {"folds", p.folds},
                        {"repetitions", p.repetitions},
                        {"base_seed", p.base_seed},
                        {"validation_fraction", p.validation_fraction},
                        {"recalibrate_loss", p.recalibrate_loss},
                        {"include_independent", p.include_independent},
                        {"include_full_dataset", p.include_full_dataset},
                        {"cell_time_limit_seconds", p.cell_time_limit_seconds}};
    j["shuffle"] = p.shuffle ? nlohmann::json(*p.shuffle) : nlohmann::json(nullptr);
    j["reference_accuracy"] = p.reference_accuracy ? nlohmann::json(*p.reference_accuracy) : nlohmann::json(nullptr);
    return j;
}

}  // namespace

ExperimentReport run_protocol(const DataSource& source, const ProtocolSpec& protocol, const TrainConfig& train,
                              const MlpSpec& spec) {
    protocol.validate();
    train.validate();
    if (!source.dataset && !source.recipe) throw std::invalid_argument("run_protocol: no data source");

    const std::size_t cells = protocol.mode == ProtocolMode::batchwise ? protocol.cells.size() : 1;
    const std::size_t reps = protocol.repetitions;
    const std::size_t jobs = cells * reps;

    std::vector<std::vector<RunResult>> results(jobs);
    std::vector<char> skipped(jobs, 0);
    std::vector<std::exception_ptr> errors(jobs);
    std::vector<std::atomic<long long>> cell_nanos(cells);
    for (auto& c : cell_nanos) c = 0;
    const bool limited = protocol.cell_time_limit_seconds > 0.0;
    const long long budget = static_cast<long long>(std::ceil(protocol.cell_time_limit_seconds * 1e9));

    const int threads = protocol.jobs > 0 ? protocol.jobs : kernels::max_threads();
    (void)threads;
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (long long job = 0; job < static_cast<long long>(jobs); ++job) {
        const std::size_t cell = static_cast<std::size_t>(job) / reps;
        const std::size_t rep = static_cast<std::size_t>(job) % reps;
        if (limited && cell_nanos[cell].load() >= budget) {
            skipped[static_cast<std::size_t>(job)] = 1;
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        try {
            const std::uint64_t seed = derive_seed(protocol.base_seed, {cell, rep});
            auto res = protocol.mode == ProtocolMode::batchwise
                           ? batchwise_job(source, protocol, train, spec, cell, seed)
                           : foldwise_job(source, protocol, train, spec, seed);
            for (auto& r : res) r.repetition = rep;
            results[static_cast<std::size_t>(job)] = std::move(res);
        } catch (...) {
            errors[static_cast<std::size_t>(job)] = std::current_exception();
        }
        const auto elapsed = std::chrono::steady_clock::now() - start;
        cell_nanos[cell] += std::max<long long>(1, std::chrono::duration_cast<std::chrono::nanoseconds>(elapsed).count());
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    ExperimentReport report;
    report.protocol = protocol.mode == ProtocolMode::batchwise ? "batchwise" : "foldwise";
    report.base_seed = protocol.base_seed;
    report.repetitions = reps;
    for (std::size_t cell = 0; cell < cells; ++cell) {
        ReportRow row;
        row.label = cell_label(protocol, cell);
        if (protocol.mode == ProtocolMode::batchwise) {
            row.batches = protocol.cells[cell].batches;
            row.fraction = protocol.cells[cell].fraction;
        } else {
            row.batches = protocol.folds - 1;
            row.fraction = 1.0 / static_cast<double>(protocol.folds);
        }
        row.lambda = train.penalty.lambda;
        row.reference = protocol.reference_accuracy;
        for (std::size_t rep = 0; rep < reps; ++rep) {
            const std::size_t job = cell * reps + rep;
            if (skipped[job]) row.skipped = true;
            for (auto& r : results[job]) row.runs.push_back(std::move(r));
        }
        summarize_row(row);
        report.rows.push_back(std::move(row));
    }
    report.config = {{"protocol", protocol_json(protocol)},
                     {"train", to_json(train)},
                     {"spec", to_json(spec)},
                     {"source", source.describe()}};
    report.config_hash = hex_digest(report.config.dump());
    return report;
}

ExperimentReport lambda_sweep(const DataSource& source, const std::vector<double>& values,
                              const ProtocolSpec& protocol, const TrainConfig& train, const MlpSpec& spec) {
    if (values.empty()) throw std::invalid_argument("lambda_sweep: no lambda values");
    for (double v : values) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("lambda_sweep: negative lambda");
    }
    ExperimentReport out;
    nlohmann::json configs = nlohmann::json::array();
    for (double lambda : values) {
        TrainConfig t = train;
        t.penalty.lambda = lambda;
        auto rep = run_protocol(source, protocol, t, spec);
        double mu = 0.0;
        for (auto& row : rep.rows) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "lambda = %g | ", lambda);
            row.label = buf + row.label;
            mu += row.mu2;
            out.rows.push_back(std::move(row));
        }
        out.sweep_series.emplace_back(lambda, mu / static_cast<double>(rep.rows.size()));
        out.protocol = rep.protocol;
        out.base_seed = rep.base_seed;
        out.repetitions = rep.repetitions;
        configs.push_back(rep.config);
    }
    out.config = {{"sweep", values}, {"runs", configs}};
    out.config_hash = hex_digest(out.config.dump());
    return out;
}

std::vector<std::string> verify_report(const ExperimentReport& report, double tol) {
    std::vector<std::string> problems;
    const auto check = [&](const std::string& where, double stored, double recomputed) {
        if (!(std::abs(stored - recomputed) <= tol)) {
            problems.push_back(where + ": stored " + std::to_string(stored) + " != recomputed " +
                               std::to_string(recomputed));
        }
    };
    for (const auto& row : report.rows) {
        const std::string at = "row '" + row.label + "'";
        if (row.runs.empty()) {
            if (!row.skipped) problems.push_back(at + ": no runs and not marked skipped");
            continue;
        }
        // Independent recomputation straight from the raw runs.
        const std::size_t k = row.runs.front().c3.size();
        std::vector<double> c3(k, 0.0), cv(k, 0.0);
        for (const auto& r : row.runs) {
            if (r.c3.size() != k || r.cv.size() != k) {
                problems.push_back(at + ": ragged run");
                break;
            }
            for (std::size_t b = 0; b < k; ++b) {
                c3[b] += r.c3[b] / static_cast<double>(row.runs.size());
                cv[b] += r.cv[b] / static_cast<double>(row.runs.size());
            }
        }
        if (row.c3_batches.size() != k || row.cv_batches.size() != k) {
            problems.push_back(at + ": batch column count mismatch");
            continue;
        }
        double mu1 = 0.0, mu2 = 0.0;
        for (std::size_t b = 0; b < k; ++b) {
            check(at + " C3 B" + std::to_string(b + 1), row.c3_batches[b], c3[b]);
            check(at + " CV B" + std::to_string(b + 1), row.cv_batches[b], cv[b]);
            mu1 += row.cv_batches[b];
            mu2 += row.c3_batches[b];
        }
        mu1 /= static_cast<double>(k);
        mu2 /= static_cast<double>(k);
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t b = 0; b < k; ++b) {
            s1 += (row.cv_batches[b] - mu1) * (row.cv_batches[b] - mu1);
            s2 += (row.c3_batches[b] - mu2) * (row.c3_batches[b] - mu2);
        }
        check(at + " mu1", row.mu1, mu1);
        check(at + " mu2", row.mu2, mu2);
        check(at + " sigma1^2", row.sigma1_sq, s1 / static_cast<double>(k));
        check(at + " sigma2^2", row.sigma2_sq, s2 / static_cast<double>(k));
        check(at + " delta3", row.delta3, row.mu2 - row.mu1);
        if (row.full_c3 && row.full_cv) {
            if (!row.delta1) {
                problems.push_back(at + ": delta1 missing");
            } else {
                check(at + " delta1", *row.delta1, *row.full_c3 - *row.full_cv);
            }
        }
        if (row.full_c3 && row.reference && row.delta2) check(at + " delta2", *row.delta2, *row.full_c3 - *row.reference);
    }
    return problems;
}

}  // namespace c3
