#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "c3/bench.hpp"
#include "c3/data.hpp"
#include "c3/rng.hpp"
#include "c3/trainer.hpp"
#include "json.hpp"

namespace c3::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Argument problems found after parsing; mapped to exit code 2.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Integer flags that must be >= 1.
const CLI::Validator kAtLeastOne(
    [](std::string& v) {
        try {
            if (std::stoll(v) >= 1) return std::string();
        } catch (const std::exception&) {
        }
        return "must be an integer >= 1, got '" + v + "'";
    },
    "INT>=1");

enum SeedTag : std::uint64_t { kDataTag = 11, kHoldoutTag = 12 };

struct SourceFlags {
    std::string csv;
    std::string label_column = "-1";
    bool header = true;
    std::string idx_images;
    std::string idx_labels;
    std::string synth;
};

struct TrainFlags {
    double lambda = 0.1;
    std::string mode = "quadratic";
    std::string accumulation = "sum";
    std::size_t epochs = 10;
    std::size_t minibatch = 32;
    double lr = 1e-3;
    std::string optimizer = "adam";
    std::uint64_t seed = 0;
    std::string loop_order = "epochs_outer";
    std::vector<std::size_t> hidden;
    double validation_fraction = 0.2;
    std::optional<bool> shuffle;
};

void add_source_flags(CLI::App& cmd, SourceFlags& s) {
    cmd.add_option("--csv", s.csv, "CSV dataset (features plus one label column)");
    cmd.add_option("--label-column", s.label_column, "Label column: index (negative counts from the end) or header name");
    cmd.add_flag("--header,!--no-header", s.header, "CSV has a header row");
    cmd.add_option("--idx-images", s.idx_images, "IDX3 image file");
    cmd.add_option("--idx-labels", s.idx_labels, "IDX1 label file");
    cmd.add_option("--synth", s.synth, "Synthetic shift recipe (JSON)");
}

void add_train_flags(CLI::App& cmd, TrainFlags& t) {
    cmd.add_option("--lambda", t.lambda, "Penalty strength")->check(CLI::NonNegativeNumber);
    cmd.add_option("--mode", t.mode, "Penalty form")->check(CLI::IsMember({"quadratic", "trace"}));
    cmd.add_option("--accumulation", t.accumulation, "Fisher accumulation across batches")
        ->check(CLI::IsMember({"sum", "mean"}));
    cmd.add_option("--epochs", t.epochs, "Passes over the batch sequence")->check(kAtLeastOne);
    cmd.add_option("--minibatch", t.minibatch, "Minibatch size")->check(kAtLeastOne);
    cmd.add_option("--lr", t.lr, "Learning rate")->check(CLI::PositiveNumber);
    cmd.add_option("--optimizer", t.optimizer, "Optimizer")->check(CLI::IsMember({"adam", "sgd"}));
    cmd.add_option("--seed", t.seed, "Seed for every random choice");
    cmd.add_option("--loop-order", t.loop_order, "Loop nesting")
        ->check(CLI::IsMember({"epochs_outer", "batches_outer"}));
    cmd.add_option("--hidden", t.hidden, "Hidden layer widths (default: one relu layer of 4 units)")
        ->check(kAtLeastOne);
    cmd.add_option("--validation-fraction", t.validation_fraction, "Share of every batch held out for validation")
        ->check(CLI::Range(0.0, 1.0).description("in (0, 1)"));
    cmd.add_flag("--shuffle,!--no-shuffle", t.shuffle,
                 "Shuffle before fragmenting (default: off for --synth, on otherwise)");
}

std::size_t count_sources(const SourceFlags& s) {
    return (s.csv.empty() ? 0 : 1) + ((s.idx_images.empty() && s.idx_labels.empty()) ? 0 : 1) +
           (s.synth.empty() ? 0 : 1);
}

void validate_source(const SourceFlags& s) {
    const auto n = count_sources(s);
    if (n == 0) throw UsageError("one data source is required: --csv, --idx-images/--idx-labels or --synth");
    if (n > 1) throw UsageError("--csv, --idx-images/--idx-labels and --synth are mutually exclusive");
    if (s.idx_images.empty() != s.idx_labels.empty()) {
        throw UsageError("--idx-images and --idx-labels must be given together");
    }
}

void validate_train(const TrainFlags& t) {
    if (!(t.validation_fraction > 0.0 && t.validation_fraction < 1.0)) {
        throw UsageError("--validation-fraction must lie strictly between 0 and 1");
    }
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error("'" + path + "' is not valid JSON: " + e.what());
    }
}

DataSource load_source(const SourceFlags& s) {
    if (!s.synth.empty()) return DataSource::from_recipe(shift_recipe_from_json(read_json_file(s.synth)));
    if (!s.csv.empty()) return DataSource::from_dataset(load_csv(s.csv, s.label_column, s.header));
    return DataSource::from_dataset(load_idx(s.idx_images, s.idx_labels));
}

TrainConfig make_train_config(const TrainFlags& t) {
    TrainConfig cfg;
    cfg.epochs = t.epochs;
    cfg.minibatch_size = t.minibatch;
    cfg.optimizer.kind = t.optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
    cfg.optimizer.learning_rate = t.lr;
    cfg.penalty.lambda = t.lambda;
    cfg.penalty.mode = t.mode == "trace" ? PenaltyMode::trace : PenaltyMode::quadratic;
    cfg.penalty.accumulation = t.accumulation == "mean" ? Accumulation::mean : Accumulation::sum;
    cfg.seed = t.seed;
    cfg.loop_order = t.loop_order == "batches_outer" ? LoopOrder::batches_outer : LoopOrder::epochs_outer;
    cfg.validate();
    return cfg;
}

MlpSpec make_spec(const TrainFlags& t, std::size_t dim, std::size_t classes) {
    MlpSpec spec = MlpSpec::tabular(dim, classes);
    if (!t.hidden.empty()) {
        spec.hidden.clear();
        for (auto w : t.hidden) spec.hidden.push_back({w, Activation::relu});
    }
    spec.validate();
    return spec;
}

std::size_t source_dim(const DataSource& src) { return src.dataset ? src.dataset->dim() : src.recipe->dim; }
std::size_t source_classes(const DataSource& src) {
    return src.dataset ? src.dataset->class_count : src.recipe->classes;
}

/// Writes next to the target, then renames over it.
void write_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out << content;
        out.flush();
        if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

ReportFormat parse_format(const std::string& f) {
    if (f == "json") return ReportFormat::json;
    if (f == "csv") return ReportFormat::csv;
    return ReportFormat::markdown;
}

// ---- train ---------------------------------------------------------------

struct TrainCommand {
    SourceFlags source;
    TrainFlags train;
    std::size_t batches = 0;
    std::string baseline = "c3";
    std::string out;
    bool checkpoints = false;
};

int cmd_train(const TrainCommand& c, std::ostream& out) {
    const DataSource src = load_source(c.source);
    const TrainConfig base = make_train_config(c.train);
    TrainConfig cfg = base;
    cfg.baseline = baseline_from_string(c.baseline);
    cfg.keep_checkpoints = c.checkpoints;
    const MlpSpec spec = make_spec(c.train, source_dim(src), source_classes(src));

    const std::uint64_t data_seed = derive_seed(c.train.seed, {kDataTag});
    const std::uint64_t holdout_seed = derive_seed(c.train.seed, {kHoldoutTag});
    HoldoutSplit split;
    if (src.recipe) {
        ShiftRecipe r = *src.recipe;
        const std::size_t total = r.n_per_batch * r.batches;
        if (c.batches > total) {
            throw DataError(DataErrorKind::invalid_argument,
                            "infeasible split: K = " + std::to_string(c.batches) + " exceeds n = " +
                                std::to_string(total));
        }
        r.batches = c.batches;
        const auto syn = synth_shift(r, total / c.batches, data_seed);
        split = c.train.shuffle.value_or(false)
                    ? holdout_then_fragment(syn.dataset, c.train.validation_fraction, c.batches, holdout_seed, true)
                    : holdout_split(syn.dataset, syn.plan, c.train.validation_fraction, holdout_seed);
    } else {
        split = holdout_then_fragment(*src.dataset, c.train.validation_fraction, c.batches, holdout_seed,
                                      c.train.shuffle.value_or(true));
    }
    const RunTrace trace = run_training(split.train, split.validation, split.plan, spec, cfg);
    json doc = to_json(trace);
    doc["config"] = {{"train", to_json(cfg)}, {"spec", to_json(spec)}, {"source", src.describe()},
                     {"batches", c.batches}, {"validation_fraction", c.train.validation_fraction}};
    write_atomic(c.out, doc.dump(2) + "\n");
    out << "mean batchwise accuracy " << 100.0 * trace.mean_accuracy() << "% over " << c.batches
        << " batches -> " << c.out << "\n";
    return kExitOk;
}

// ---- sweep ---------------------------------------------------------------

struct SweepCommand {
    SourceFlags source;
    TrainFlags train;
    std::vector<double> values = kDefaultLambdaGrid;
    std::vector<std::size_t> batches = {2};
    bool standard_grid = false;
    std::size_t folds = 0;
    std::size_t repetitions = 5;
    int jobs = 0;
    bool recalibrate = false;
    bool no_independent = false;
    bool no_full = false;
    std::optional<double> reference;
    double time_limit = 0.0;
    bool timing = false;
    std::string format = "json";
    std::string out;
    std::string series;
};

int cmd_sweep(const SweepCommand& c, std::ostream& out) {
    if (c.values.empty()) throw UsageError("--values needs at least one lambda");
    if (std::any_of(c.values.begin(), c.values.end(), [](double v) { return !(v >= 0.0); })) {
        throw UsageError("--values must all be >= 0");
    }
    ProtocolSpec p;
    if (c.folds > 0) {
        p.mode = ProtocolMode::foldwise;
        p.folds = c.folds;
    } else if (c.standard_grid) {
        p.cells = standard_split_grid();
    } else {
        p.cells.clear();
        for (auto k : c.batches) p.cells.push_back({1.0 / static_cast<double>(k), k});
    }
    p.repetitions = c.repetitions;
    p.base_seed = c.train.seed;
    p.validation_fraction = c.train.validation_fraction;
    p.shuffle = c.train.shuffle;
    p.recalibrate_loss = c.recalibrate;
    p.include_independent = !c.no_independent;
    p.include_full_dataset = !c.no_full;
    p.reference_accuracy = c.reference;
    p.cell_time_limit_seconds = c.time_limit;
    p.jobs = c.jobs;
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    const DataSource src = load_source(c.source);
    const TrainConfig cfg = make_train_config(c.train);
    const MlpSpec spec = make_spec(c.train, source_dim(src), source_classes(src));

    const auto start = std::chrono::steady_clock::now();
    ExperimentReport report = lambda_sweep(src, c.values, p, cfg, spec);
    if (c.timing) {
        report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    const auto problems = verify_report(report);
    if (!problems.empty()) throw std::runtime_error("report failed verification: " + problems.front());

    const std::string doc = emit_report(report, parse_format(c.format));
    if (c.out.empty()) {
        out << doc;
    } else {
        write_atomic(c.out, doc);
        out << report.rows.size() << " rows -> " << c.out << "\n";
    }
    if (!c.series.empty()) write_atomic(c.series, emit_sweep_series(report));
    return kExitOk;
}

// ---- synth ---------------------------------------------------------------

struct SynthCommand {
    std::string recipe;
    std::string kind = "mean_drift";
    std::size_t batches = 2;
    std::size_t dim = 10;
    std::size_t classes = 2;
    double delta = 0.5;
    double sigma_ramp = 0.5;
    double separation = 2.0;
    std::size_t n_per_batch = 1000;
    std::uint64_t seed = 0;
    std::string out;
    std::string manifest;
};

int cmd_synth(const SynthCommand& c, CLI::App& cmd, std::ostream& out) {
    ShiftRecipe r;
    if (!c.recipe.empty()) r = shift_recipe_from_json(read_json_file(c.recipe));
    // Explicit flags override the recipe file.
    const auto given = [&](const char* name) { return cmd.count(name) > 0 || c.recipe.empty(); };
    if (given("--kind")) {
        r.kind = c.kind == "feature_permutation"    ? ShiftKind::feature_permutation
                 : c.kind == "gaussian_corruption" ? ShiftKind::gaussian_corruption
                                                   : ShiftKind::mean_drift;
    }
    if (given("--batches")) r.batches = c.batches;
    if (given("--dim")) r.dim = c.dim;
    if (given("--classes")) r.classes = c.classes;
    if (given("--delta")) r.delta = c.delta;
    if (given("--sigma-ramp")) r.sigma_ramp = c.sigma_ramp;
    if (given("--separation")) r.class_separation = c.separation;
    if (given("--n-per-batch")) r.n_per_batch = c.n_per_batch;
    try {
        r.validate();
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }

    const auto syn = synth_shift(r, c.seed);
    fs::path tmp = fs::path(c.out);
    tmp += ".tmp";
    write_csv(syn.dataset, tmp);
    fs::rename(tmp, c.out);

    json batches = json::array();
    for (std::size_t b = 0; b < syn.plan.batches.size(); ++b) {
        const auto m = batch_moments(syn.dataset, syn.plan, b);
        batches.push_back({{"index", b},
                           {"begin", syn.plan.batches[b].begin},
                           {"end", syn.plan.batches[b].end},
                           {"mean", m.mean},
                           {"variance", m.variance}});
    }
    const auto kl = pairwise_kl(syn.dataset, syn.plan);
    json manifest = {{"kind", "c3.synth_manifest"}, {"recipe", to_json(r)}, {"seed", c.seed},
                     {"samples", syn.dataset.size()}, {"batches", batches}, {"pairwise_kl", kl}};
    const std::string manifest_path = c.manifest.empty() ? c.out + ".json" : c.manifest;
    write_atomic(manifest_path, manifest.dump(2) + "\n");
    out << syn.dataset.size() << " samples in " << r.batches << " batches -> " << c.out << "\n";
    return kExitOk;
}

// ---- report --------------------------------------------------------------

struct ReportCommand {
    std::string in;
    std::string format = "markdown";
    std::string out;
    bool verify = true;
};

int cmd_report(const ReportCommand& c, std::ostream& out, std::ostream& err) {
    const ExperimentReport report = report_from_json(read_json_file(c.in));
    if (c.verify) {
        const auto problems = verify_report(report);
        if (!problems.empty()) {
            for (const auto& p : problems) err << "c3 report: " << p << "\n";
            return kExitRuntime;
        }
    }
    const std::string doc = emit_report(report, parse_format(c.format));
    if (c.out.empty()) {
        out << doc;
    } else {
        write_atomic(c.out, doc);
    }
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Causal covariate shift correction: Fisher-penalized training over causal batch sequences", "c3"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_version_flag("--version", "c3 1.0.0");

    TrainCommand train;
    auto* train_cmd = app.add_subcommand("train", "Train over K causal batches and write a run trace (JSON)");
    add_source_flags(*train_cmd, train.source);
    add_train_flags(*train_cmd, train.train);
    train_cmd->add_option("--batches", train.batches, "Number of causal batches K")
        ->required()
        ->check(kAtLeastOne);
    train_cmd->add_option("--baseline", train.baseline, "Training mode")
        ->check(CLI::IsMember({"c3", "cv_sequential", "cv_independent"}));
    train_cmd->add_flag("--checkpoints", train.checkpoints, "Store theta after every batch of every epoch");
    train_cmd->add_option("--out", train.out, "Run trace output path")->required();

    SweepCommand sweep;
    auto* sweep_cmd = app.add_subcommand("sweep", "Lambda sweep over a batchwise or foldwise protocol");
    add_source_flags(*sweep_cmd, sweep.source);
    add_train_flags(*sweep_cmd, sweep.train);
    sweep_cmd->add_option("--values", sweep.values, "Lambda grid")->expected(1, -1)->delimiter(',');
    sweep_cmd->add_option("--batches", sweep.batches, "Batch counts K (one grid cell each)")
        ->delimiter(',')
        ->check(kAtLeastOne);
    sweep_cmd->add_flag("--standard-grid", sweep.standard_grid, "Use the six (fraction, K) cells 5%/20 ... 50%/2");
    sweep_cmd->add_option("--folds", sweep.folds, "Foldwise protocol with k folds (0 = batchwise)");
    sweep_cmd->add_option("--repetitions", sweep.repetitions, "Repetitions per cell")->check(kAtLeastOne);
    sweep_cmd->add_option("--jobs", sweep.jobs, "Worker threads for independent runs (0 = OpenMP default)")
        ->check(CLI::NonNegativeNumber);
    sweep_cmd->add_flag("--recalibrate", sweep.recalibrate, "Scale the penalty gradient by 1/(1+lambda)");
    sweep_cmd->add_flag("--no-independent", sweep.no_independent, "Skip the independent-model baseline");
    sweep_cmd->add_flag("--no-full", sweep.no_full, "Skip the whole-training-set runs");
    sweep_cmd->add_option("--reference", sweep.reference, "External reference accuracy in percent");
    sweep_cmd->add_option("--time-limit", sweep.time_limit, "Per-cell budget in seconds (0 = none)")
        ->check(CLI::NonNegativeNumber);
    sweep_cmd->add_flag("--timing", sweep.timing, "Record wall time in the report (breaks byte identity)");
    sweep_cmd->add_option("--format", sweep.format, "Report format")
        ->check(CLI::IsMember({"json", "csv", "markdown"}));
    sweep_cmd->add_option("--out", sweep.out, "Report output path (stdout when empty)");
    sweep_cmd->add_option("--series", sweep.series, "Write the (lambda, accuracy) series CSV here");

    SynthCommand synth;
    auto* synth_cmd = app.add_subcommand("synth", "Materialize a synthetic shift recipe to CSV");
    synth_cmd->add_option("--recipe", synth.recipe, "Recipe JSON (flags given explicitly override it)");
    synth_cmd->add_option("--kind", synth.kind, "Shift family")
        ->check(CLI::IsMember({"mean_drift", "feature_permutation", "gaussian_corruption"}));
    synth_cmd->add_option("--batches", synth.batches, "Number of batches")->check(kAtLeastOne);
    synth_cmd->add_option("--dim", synth.dim, "Feature count")->check(kAtLeastOne);
    synth_cmd->add_option("--classes", synth.classes, "Class count")->check(kAtLeastOne);
    synth_cmd->add_option("--delta", synth.delta, "Mean drift per batch")->check(CLI::NonNegativeNumber);
    synth_cmd->add_option("--sigma-ramp", synth.sigma_ramp, "Noise sd added per batch")
        ->check(CLI::NonNegativeNumber);
    synth_cmd->add_option("--separation", synth.separation, "Class mean separation")->check(CLI::NonNegativeNumber);
    synth_cmd->add_option("--n-per-batch", synth.n_per_batch, "Samples per batch")->check(kAtLeastOne);
    synth_cmd->add_option("--seed", synth.seed, "Generator seed");
    synth_cmd->add_option("--out", synth.out, "CSV output path")->required();
    synth_cmd->add_option("--manifest", synth.manifest, "Manifest JSON path (default: <out>.json)");

    ReportCommand report;
    auto* report_cmd = app.add_subcommand("report", "Render a JSON experiment report");
    report_cmd->add_option("--in", report.in, "Report JSON")->required();
    report_cmd->add_option("--format", report.format, "Output format")
        ->check(CLI::IsMember({"json", "csv", "markdown"}));
    report_cmd->add_option("--out", report.out, "Output path (stdout when empty)");
    report_cmd->add_flag("--verify,!--no-verify", report.verify, "Recompute derived columns before rendering");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "c3: " << e.what() << "\n";
        err << "Run with --help for usage.\n";
        return kExitUsage;
    }

    try {
        if (*train_cmd) {
            validate_source(train.source);
            validate_train(train.train);
            return cmd_train(train, out);
        }
        if (*sweep_cmd) {
            validate_source(sweep.source);
            validate_train(sweep.train);
            return cmd_sweep(sweep, out);
        }
        if (*synth_cmd) return cmd_synth(synth, *synth_cmd, out);
        if (*report_cmd) return cmd_report(report, out, err);
    } catch (const UsageError& e) {
        err << "c3: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "c3: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace c3::cli
