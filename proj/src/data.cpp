#include "c3/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace c3 {

Dataset Dataset::make(Tensor2D features, std::vector<std::size_t> labels, std::size_t class_count,
                      std::string provenance) {
    Dataset d{std::move(features), std::move(labels), class_count, std::move(provenance), {}};
    d.ids.resize(d.labels.size());
    std::iota(d.ids.begin(), d.ids.end(), std::size_t{0});
    d.validate();
    return d;
}

void Dataset::validate() const {
    if (labels.empty()) throw DataError(DataErrorKind::no_data_rows, "dataset: no data rows");
    if (features.rows() != labels.size()) throw DimensionError("dataset: feature/label row count mismatch");
    if (ids.size() != labels.size()) throw DimensionError("dataset: id count mismatch");
    for (auto y : labels) {
        if (y >= class_count) throw DataError(DataErrorKind::invalid_argument, "dataset: label >= class_count");
    }
    if (!features.all_finite()) throw NumericError("dataset: non-finite feature value");
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.features = features.gather_rows(rows);
    out.class_count = class_count;
    out.provenance = provenance;
    out.labels.reserve(rows.size());
    out.ids.reserve(rows.size());
    for (auto r : rows) {
        out.labels.push_back(labels.at(r));
        out.ids.push_back(ids.at(r));
    }
    return out;
}

std::span<const std::size_t> FragmentationPlan::indices(std::size_t batch) const {
    const auto& r = batches.at(batch);
    return {order.data() + r.begin, r.size()};
}

std::vector<std::size_t> FragmentationPlan::sizes() const {
    std::vector<std::size_t> out;
    for (const auto& r : batches) out.push_back(r.size());
    return out;
}

void FragmentationPlan::validate(std::size_t n) const {
    if (order.size() != n) throw DimensionError("plan: order does not cover the dataset");
    std::vector<bool> seen(n, false);
    for (auto i : order) {
        if (i >= n || seen[i]) throw DimensionError("plan: order is not a permutation");
        seen[i] = true;
    }
    std::size_t cursor = 0;
    for (const auto& r : batches) {
        if (r.begin != cursor || r.end < r.begin) throw DimensionError("plan: ranges not contiguous");
        cursor = r.end;
    }
    if (cursor != n) throw DimensionError("plan: ranges not exhaustive");
}

FragmentationPlan fragment(std::size_t n, std::size_t k, std::uint64_t seed, bool shuffle) {
    if (k == 0) throw DataError(DataErrorKind::invalid_argument, "fragment: K must be >= 1");
    if (k > n) {
        throw DataError(DataErrorKind::invalid_argument,
                        "fragment: K = " + std::to_string(k) + " exceeds n = " + std::to_string(n));
    }
    FragmentationPlan plan;
    plan.order.resize(n);
    std::iota(plan.order.begin(), plan.order.end(), std::size_t{0});
    if (shuffle) {
        std::mt19937_64 gen(seed);
        std::shuffle(plan.order.begin(), plan.order.end(), gen);
    }
    const std::size_t base = n / k, extra = n % k;
    std::size_t cursor = 0;
    for (std::size_t b = 0; b < k; ++b) {
        const std::size_t len = base + (b < extra ? 1 : 0);
        plan.batches.push_back({cursor, cursor + len});
        cursor += len;
    }
    return plan;
}

FragmentationPlan fragment(const Dataset& dataset, std::size_t k, std::uint64_t seed, bool shuffle) {
    return fragment(dataset.size(), k, seed, shuffle);
}

void ShiftRecipe::validate() const {
    auto fail = [](const std::string& m) { throw DataError(DataErrorKind::invalid_argument, "shift recipe: " + m); };
    if (batches == 0) fail("batches must be >= 1");
    if (dim == 0) fail("dim must be >= 1");
    if (classes < 2) fail("classes must be >= 2");
    if (!(delta >= 0.0) || !std::isfinite(delta)) fail("delta must be >= 0");
    if (!(sigma_ramp >= 0.0) || !std::isfinite(sigma_ramp)) fail("sigma_ramp must be >= 0");
    if (!std::isfinite(class_separation)) fail("class_separation must be finite");
    if (n_per_batch == 0) fail("n_per_batch must be >= 1");
}

namespace {

std::string kind_name(ShiftKind k) {
    switch (k) {
        case ShiftKind::mean_drift: return "mean_drift";
        case ShiftKind::feature_permutation: return "feature_permutation";
        case ShiftKind::gaussian_corruption: return "gaussian_corruption";
    }
    return "?";
}

ShiftKind kind_from_name(const std::string& s) {
    if (s == "mean_drift") return ShiftKind::mean_drift;
    if (s == "feature_permutation") return ShiftKind::feature_permutation;
    if (s == "gaussian_corruption") return ShiftKind::gaussian_corruption;
    throw DataError(DataErrorKind::invalid_argument, "shift recipe: unknown kind '" + s + "'");
}

}  // namespace

nlohmann::json to_json(const ShiftRecipe& r) {
    return {{"kind", kind_name(r.kind)},         {"batches", r.batches},
            {"dim", r.dim},                      {"classes", r.classes},
            {"delta", r.delta},                  {"sigma_ramp", r.sigma_ramp},
            {"class_separation", r.class_separation}, {"n_per_batch", r.n_per_batch},
            {"identity_permutation", r.identity_permutation}};
}

ShiftRecipe shift_recipe_from_json(const nlohmann::json& j) {
    ShiftRecipe r;
    try {
        r.kind = kind_from_name(j.value("kind", std::string("mean_drift")));
        r.batches = j.value("batches", r.batches);
        r.dim = j.value("dim", r.dim);
        r.classes = j.value("classes", r.classes);
        r.delta = j.value("delta", r.delta);
        r.sigma_ramp = j.value("sigma_ramp", r.sigma_ramp);
        r.class_separation = j.value("class_separation", r.class_separation);
        r.n_per_batch = j.value("n_per_batch", r.n_per_batch);
        r.identity_permutation = j.value("identity_permutation", r.identity_permutation);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(DataErrorKind::invalid_argument, std::string("shift recipe: ") + e.what());
    }
    r.validate();
    return r;
}

SyntheticData synth_shift(const ShiftRecipe& recipe, std::size_t n_per_batch, std::uint64_t seed) {
    recipe.validate();
    if (n_per_batch == 0) throw DataError(DataErrorKind::invalid_argument, "synth_shift: n_per_batch must be >= 1");
    const std::size_t k = recipe.batches, d = recipe.dim, c = recipe.classes;
    const std::size_t n = k * n_per_batch;
    Tensor2D x(n, d);
    std::vector<std::size_t> y(n);
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, c - 1);
    const double centre = 0.5 * static_cast<double>(c - 1);

    std::vector<double> base(d);
    for (std::size_t b = 0; b < k; ++b) {
        std::vector<std::size_t> perm(d);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        if (recipe.kind == ShiftKind::feature_permutation && b > 0 && !recipe.identity_permutation) {
            std::mt19937_64 pgen(seed ^ (0xA5A5A5A5ULL + b));
            std::shuffle(perm.begin(), perm.end(), pgen);
        }
        const double fb = static_cast<double>(b);
        for (std::size_t s = 0; s < n_per_batch; ++s) {
            const std::size_t row = b * n_per_batch + s;
            const std::size_t cls = pick(gen);
            y[row] = cls;
            for (std::size_t f = 0; f < d; ++f) base[f] = normal(gen);
            base[0] += recipe.class_separation * (static_cast<double>(cls) - centre);
            for (std::size_t f = 0; f < d; ++f) {
                double v = base[perm[f]];
                if (recipe.kind == ShiftKind::mean_drift) v += fb * recipe.delta;
                if (recipe.kind == ShiftKind::gaussian_corruption) v += fb * recipe.sigma_ramp * normal(gen);
                x(row, f) = v;
            }
        }
    }
    SyntheticData out{Dataset::make(std::move(x), std::move(y), c, "synth:" + kind_name(recipe.kind)),
                      fragment(n, k, 0, false)};
    return out;
}

SyntheticData synth_shift(const ShiftRecipe& recipe, std::uint64_t seed) {
    return synth_shift(recipe, recipe.n_per_batch, seed);
}

HoldoutSplit holdout_split(const Dataset& dataset, const FragmentationPlan& plan, double fraction,
                           std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction < 1.0)) {
        throw DataError(DataErrorKind::invalid_argument, "holdout: fraction must lie in [0, 1)");
    }
    plan.validate(dataset.size());
    std::mt19937_64 gen(seed);
    std::vector<std::size_t> train_rows, val_rows;
    FragmentationPlan train_plan;
    for (std::size_t b = 0; b < plan.batch_count(); ++b) {
        const auto idx = plan.indices(b);
        std::vector<std::size_t> pos(idx.size());
        std::iota(pos.begin(), pos.end(), std::size_t{0});
        std::shuffle(pos.begin(), pos.end(), gen);
        const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
        std::vector<bool> held(idx.size(), false);
        for (std::size_t k = 0; k < take; ++k) held[pos[k]] = true;
        const std::size_t begin = train_rows.size();
        for (std::size_t k = 0; k < idx.size(); ++k) (held[k] ? val_rows : train_rows).push_back(idx[k]);
        if (train_rows.size() == begin) {
            throw DataError(DataErrorKind::invalid_argument, "holdout: batch " + std::to_string(b) + " left empty");
        }
        train_plan.batches.push_back({begin, train_rows.size()});
    }
    train_plan.order.resize(train_rows.size());
    std::iota(train_plan.order.begin(), train_plan.order.end(), std::size_t{0});
    if (val_rows.empty()) throw DataError(DataErrorKind::invalid_argument, "holdout: validation set is empty");
    std::sort(val_rows.begin(), val_rows.end());
    return {dataset.subset(train_rows), std::move(train_plan), dataset.subset(val_rows)};
}

HoldoutSplit holdout_then_fragment(const Dataset& dataset, double fraction, std::size_t k, std::uint64_t seed,
                                   bool shuffle) {
    const auto whole = fragment(dataset.size(), 1, 0, false);
    auto split = holdout_split(dataset, whole, fraction, seed);
    split.plan = fragment(split.train.size(), k, seed ^ 0x5DEECE66DULL, shuffle);
    return split;
}

GaussianMoments moments(const Tensor2D& x) {
    if (x.rows() < 2) throw DataError(DataErrorKind::invalid_argument, "moments: batch needs at least 2 samples");
    GaussianMoments m{std::vector<double>(x.cols(), 0.0), std::vector<double>(x.cols(), 0.0)};
    const double n = static_cast<double>(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) m.mean[c] += x(r, c);
    }
    for (double& v : m.mean) v /= n;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            const double d = x(r, c) - m.mean[c];
            m.variance[c] += d * d;
        }
    }
    for (double& v : m.variance) v = std::max(v / (n - 1.0), kVarianceFloor);
    return m;
}

GaussianMoments batch_moments(const Dataset& dataset, const FragmentationPlan& plan, std::size_t batch_index) {
    if (batch_index >= plan.batch_count()) {
        throw DataError(DataErrorKind::invalid_argument, "batch_moments: batch index out of range");
    }
    return moments(dataset.features.gather_rows(plan.indices(batch_index)));
}

// ---------------------------------------------------------------- CSV

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            cells.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    cells.push_back(trim(cur));
    return cells;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_index(const std::string& s, std::size_t& out) {
    if (s.empty()) return false;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column, bool has_header) {
    std::ifstream in(path);
    if (!in) throw DataError(DataErrorKind::io, "cannot open " + path.string());

    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header;
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::size_t> row_lines;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        if (has_header && header.empty()) {
            header = split_csv_line(line);
            continue;
        }
        rows.push_back(split_csv_line(line));
        row_lines.push_back(line_no);
    }
    if (rows.empty()) throw DataError(DataErrorKind::no_data_rows, "no data rows in " + path.string());

    const std::size_t width = has_header ? header.size() : rows.front().size();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != width) {
            throw DataError(DataErrorKind::ragged_row, "ragged row at line " + std::to_string(row_lines[r]) + ": " +
                                                           std::to_string(rows[r].size()) + " cells, expected " +
                                                           std::to_string(width));
        }
    }

    long long label_idx = 0;
    long long parsed = 0;
    const char* lb = label_column.data();
    const auto [lp, lec] = std::from_chars(lb, lb + label_column.size(), parsed);
    if (lec == std::errc() && lp == lb + label_column.size()) {
        label_idx = parsed < 0 ? static_cast<long long>(width) + parsed : parsed;
        if (label_idx < 0 || label_idx >= static_cast<long long>(width)) {
            throw DataError(DataErrorKind::missing_label_column,
                            "missing label column " + label_column + " (" + std::to_string(width) + " columns)");
        }
    } else {
        const auto it = std::find(header.begin(), header.end(), label_column);
        if (it == header.end()) {
            throw DataError(DataErrorKind::missing_label_column, "missing label column '" + label_column + "'");
        }
        label_idx = it - header.begin();
    }
    if (width < 2) throw DataError(DataErrorKind::missing_label_column, "csv needs a label and at least one feature");

    const std::size_t lab = static_cast<std::size_t>(label_idx);
    const std::size_t d = width - 1;
    Tensor2D x(rows.size(), d);
    std::vector<std::size_t> y(rows.size());

    bool integer_labels = true;
    for (const auto& row : rows) {
        std::size_t v;
        if (!parse_index(row[lab], v)) {
            integer_labels = false;
            break;
        }
    }
    std::map<std::string, std::size_t> classes;
    std::size_t class_count = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::size_t f = 0;
        for (std::size_t c = 0; c < width; ++c) {
            if (c == lab) continue;
            double v;
            if (!parse_double(rows[r][c], v)) {
                throw DataError(DataErrorKind::non_numeric_feature, "non-numeric feature '" + rows[r][c] +
                                                                        "' at line " + std::to_string(row_lines[r]) +
                                                                        ", column " + std::to_string(c));
            }
            x(r, f++) = v;
        }
        if (integer_labels) {
            parse_index(rows[r][lab], y[r]);
            class_count = std::max(class_count, y[r] + 1);
        } else {
            auto [it, inserted] = classes.try_emplace(rows[r][lab], classes.size());
            y[r] = it->second;
            class_count = classes.size();
        }
    }
    return Dataset::make(std::move(x), std::move(y), class_count, "csv:" + path.string());
}

void write_csv(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError(DataErrorKind::io, "cannot write " + path.string());
    for (std::size_t f = 0; f < dataset.dim(); ++f) out << 'f' << f << ',';
    out << "label\n";
    char buf[40];
    for (std::size_t r = 0; r < dataset.size(); ++r) {
        for (double v : dataset.features.row(r)) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << buf << ',';
        }
        out << dataset.labels[r] << '\n';
    }
    if (!out) throw DataError(DataErrorKind::io, "write failed for " + path.string());
}

// ---------------------------------------------------------------- IDX

namespace {

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t at) {
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError(DataErrorKind::io, "cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", v);
    return buf;
}

}  // namespace

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
    if (images.size() < 16) throw DataError(DataErrorKind::truncated_payload, "idx images: truncated header");
    if (labels.size() < 8) throw DataError(DataErrorKind::truncated_payload, "idx labels: truncated header");
    if (const auto m = be32(images, 0); m != 0x00000803) {
        throw DataError(DataErrorKind::unsupported_magic, "idx images: unsupported magic " + hex32(m));
    }
    if (const auto m = be32(labels, 0); m != 0x00000801) {
        throw DataError(DataErrorKind::unsupported_magic, "idx labels: unsupported magic " + hex32(m));
    }
    const std::size_t count = be32(images, 4), rows = be32(images, 8), cols = be32(images, 12);
    const std::size_t label_count = be32(labels, 4);
    if (count != label_count) {
        throw DataError(DataErrorKind::count_mismatch, "idx: count mismatch (" + std::to_string(count) +
                                                           " images, " + std::to_string(label_count) + " labels)");
    }
    const std::size_t d = rows * cols;
    if (images.size() - 16 < count * d) throw DataError(DataErrorKind::truncated_payload, "idx images: truncated payload");
    if (labels.size() - 8 < count) throw DataError(DataErrorKind::truncated_payload, "idx labels: truncated payload");
    if (count == 0) throw DataError(DataErrorKind::no_data_rows, "idx: no data rows");

    Tensor2D x(count, d);
    auto xv = x.values();
    for (std::size_t k = 0; k < count * d; ++k) xv[k] = static_cast<double>(images[16 + k]) / 255.0;
    std::vector<std::size_t> y(count);
    std::size_t classes = 0;
    for (std::size_t k = 0; k < count; ++k) {
        y[k] = labels[8 + k];
        classes = std::max(classes, y[k] + 1);
    }
    return Dataset::make(std::move(x), std::move(y), std::max<std::size_t>(classes, 2), "idx");
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto img = read_file(images);
    const auto lab = read_file(labels);
    auto d = parse_idx(img, lab);
    d.provenance = "idx:" + images.string();
    return d;
}

}  // namespace c3
