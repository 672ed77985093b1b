#include <unistd.h>

#include <algorithm>
#include <functional>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "c3/data.hpp"
#include "c3/trainer.hpp"
#include "doctest.h"

using namespace c3;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("c3_test_data_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path write(const std::string& name, const std::string& content) const {
        std::ofstream(path / name, std::ios::binary) << content;
        return path / name;
    }
};

std::vector<std::uint8_t> be32(std::uint32_t v) {
    return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8),
            static_cast<std::uint8_t>(v)};
}

std::vector<std::uint8_t> idx_images(std::uint32_t magic, std::uint32_t n, std::uint32_t r, std::uint32_t c,
                                     std::vector<std::uint8_t> pixels) {
    std::vector<std::uint8_t> out;
    for (auto v : {magic, n, r, c}) {
        const auto b = be32(v);
        out.insert(out.end(), b.begin(), b.end());
    }
    out.insert(out.end(), pixels.begin(), pixels.end());
    return out;
}

std::vector<std::uint8_t> idx_labels(std::uint32_t magic, std::uint32_t n, std::vector<std::uint8_t> labels) {
    std::vector<std::uint8_t> out;
    for (auto v : {magic, n}) {
        const auto b = be32(v);
        out.insert(out.end(), b.begin(), b.end());
    }
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

DataErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const DataError& e) {
        return e.kind();
    }
    FAIL("no DataError thrown");
    return DataErrorKind::io;
}

}  // namespace

TEST_CASE("fragment sizes follow the remainder rule") {
    CHECK(fragment(100, 4, 0, false).sizes() == std::vector<std::size_t>{25, 25, 25, 25});
    CHECK(fragment(10, 3, 0, false).sizes() == std::vector<std::size_t>{4, 3, 3});
    const auto big = fragment(60000, 20, 0, false);
    CHECK(big.batch_count() == 20);
    for (auto s : big.sizes()) CHECK(s == 3000);
    CHECK_THROWS_AS((void)fragment(3, 4, 0, false), DataError);
    CHECK_THROWS_AS((void)fragment(3, 0, 0, false), DataError);
}

TEST_CASE("fragment is a partition that keeps causal order") {
    const auto plain = fragment(10, 3, 0, false);
    std::vector<std::size_t> concat;
    for (std::size_t b = 0; b < plain.batch_count(); ++b) {
        const auto idx = plain.indices(b);
        concat.insert(concat.end(), idx.begin(), idx.end());
    }
    std::vector<std::size_t> iota(10);
    std::iota(iota.begin(), iota.end(), 0);
    CHECK(concat == iota);

    const auto shuffled = fragment(50, 4, 9, true);
    CHECK_NOTHROW(shuffled.validate(50));
    std::vector<std::size_t> sorted = shuffled.order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> all(50);
    std::iota(all.begin(), all.end(), 0);
    CHECK(sorted == all);
    CHECK(shuffled.order != all);
    CHECK(fragment(50, 4, 9, true) == shuffled);
}

TEST_CASE("synth_shift is deterministic and validates recipes") {
    ShiftRecipe r;
    r.batches = 3;
    const auto a = synth_shift(r, 200, 5);
    const auto b = synth_shift(r, 200, 5);
    CHECK(a.dataset.features == b.dataset.features);
    CHECK(a.dataset.labels == b.dataset.labels);
    CHECK(a.plan == b.plan);
    CHECK(a.plan.sizes() == std::vector<std::size_t>{200, 200, 200});
    CHECK_FALSE(synth_shift(r, 200, 6).dataset.features == a.dataset.features);
    r.delta = -1.0;
    CHECK_THROWS_AS((void)synth_shift(r, 10, 0), DataError);
    r.delta = 0.5;
    r.sigma_ramp = -0.1;
    CHECK_THROWS_AS((void)synth_shift(r, 10, 0), DataError);
}

TEST_CASE("mean_drift with delta 0 keeps batch moments equal within sampling error") {
    ShiftRecipe r;
    r.batches = 3;
    r.delta = 0.0;
    const auto syn = synth_shift(r, 4000, 1);
    const auto m0 = batch_moments(syn.dataset, syn.plan, 0);
    for (std::size_t b = 1; b < 3; ++b) {
        const auto mb = batch_moments(syn.dataset, syn.plan, b);
        for (std::size_t f = 1; f < r.dim; ++f) {
            // 4 standard errors of a difference of two means of unit-variance data
            CHECK(std::abs(mb.mean[f] - m0.mean[f]) < 4.0 * std::sqrt(2.0 / 4000.0));
            CHECK(std::abs(mb.variance[f] - m0.variance[f]) < 0.15);
        }
    }
}

TEST_CASE("mean_drift moments track the generative parameters") {
    ShiftRecipe r;
    r.batches = 3;
    r.delta = 2.0;
    const std::size_t n = 5000;
    const auto syn = synth_shift(r, n, 3);
    for (std::size_t b = 0; b < 3; ++b) {
        const auto m = batch_moments(syn.dataset, syn.plan, b);
        for (std::size_t f = 1; f < r.dim; ++f) {
            CHECK(std::abs(m.mean[f] - 2.0 * static_cast<double>(b)) < 3.0 / std::sqrt(static_cast<double>(n)));
        }
    }
}

TEST_CASE("delta 0.5 drift gives a pairwise KL near d * delta^2 / 2") {
    ShiftRecipe r;
    r.batches = 2;
    r.delta = 0.5;
    double kl = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto syn = synth_shift(r, 5000, seed);
        // feature 0 also carries the class split; the others are pure drift
        const auto m0 = batch_moments(syn.dataset, syn.plan, 0);
        const auto m1 = batch_moments(syn.dataset, syn.plan, 1);
        for (std::size_t f = 1; f < r.dim; ++f) kl += gaussian_kl(m1.mean[f], m1.variance[f], m0.mean[f], m0.variance[f]);
    }
    kl /= 5.0 * static_cast<double>(r.dim - 1);
    CHECK(kl == doctest::Approx(0.125).epsilon(0.1));
}

TEST_CASE("pairwise KL grows with batch distance under mean drift") {
    ShiftRecipe r;
    r.batches = 4;
    r.delta = 0.5;
    std::vector<double> by_gap(4, 0.0);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto syn = synth_shift(r, 1000, seed);
        const auto kl = pairwise_kl(syn.dataset, syn.plan);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(std::abs(kl[i][i]) < 1e-9);
            for (std::size_t j = 0; j < 4; ++j) {
                CHECK(kl[i][j] >= 0.0);
                if (i != j) by_gap[i > j ? i - j : j - i] += kl[i][j];
            }
        }
    }
    // ordered pairs per gap: 6, 4, 2
    const double g1 = by_gap[1] / 6.0, g2 = by_gap[2] / 4.0, g3 = by_gap[3] / 2.0;
    CHECK(g1 <= g2);
    CHECK(g2 <= g3);
}

TEST_CASE("feature_permutation with the identity permutation equals unshifted data") {
    ShiftRecipe r;
    r.batches = 3;
    r.kind = ShiftKind::feature_permutation;
    r.identity_permutation = true;
    ShiftRecipe none = r;
    none.kind = ShiftKind::mean_drift;
    none.delta = 0.0;
    const auto a = synth_shift(r, 50, 4);
    const auto b = synth_shift(none, 50, 4);
    CHECK(a.dataset.features == b.dataset.features);
    CHECK(a.dataset.labels == b.dataset.labels);
}

TEST_CASE("gaussian_corruption inflates variance with the batch index") {
    ShiftRecipe r;
    r.batches = 3;
    r.kind = ShiftKind::gaussian_corruption;
    r.sigma_ramp = 1.0;
    const auto syn = synth_shift(r, 4000, 2);
    const auto v0 = batch_moments(syn.dataset, syn.plan, 0).variance[3];
    const auto v2 = batch_moments(syn.dataset, syn.plan, 2).variance[3];
    CHECK(v0 == doctest::Approx(1.0).epsilon(0.1));
    CHECK(v2 == doctest::Approx(5.0).epsilon(0.1));
}

TEST_CASE("batch moments: hand arithmetic and the variance floor") {
    Tensor2D x(2, 2, {0.0, 3.0, 2.0, 3.0});
    const auto m = moments(x);
    CHECK(m.mean == std::vector<double>{1.0, 3.0});
    CHECK(m.variance[0] == 2.0);
    CHECK(m.variance[1] == kVarianceFloor);
    CHECK_THROWS_AS((void)moments(Tensor2D(1, 2)), DataError);
}

TEST_CASE("holdout split is disjoint, seeded and keeps batch order") {
    ShiftRecipe r;
    r.batches = 4;
    const auto syn = synth_shift(r, 100, 1);
    const auto split = holdout_split(syn.dataset, syn.plan, 0.2, 7);
    CHECK(split.validation.size() == 80);
    CHECK(split.train.size() == 320);
    CHECK(split.plan.sizes() == std::vector<std::size_t>{80, 80, 80, 80});
    std::set<std::size_t> train_ids(split.train.ids.begin(), split.train.ids.end());
    for (auto id : split.validation.ids) CHECK(train_ids.count(id) == 0);
    // batch b of the training plan only contains rows of source batch b
    for (std::size_t b = 0; b < 4; ++b) {
        for (auto row : split.plan.indices(b)) {
            const auto id = split.train.ids[row];
            CHECK(id / 100 == b);
        }
    }
    const auto again = holdout_split(syn.dataset, syn.plan, 0.2, 7);
    CHECK(again.validation.ids == split.validation.ids);
    const auto whole = holdout_then_fragment(syn.dataset, 0.25, 3, 7, true);
    CHECK(whole.validation.size() == 100);
    CHECK(whole.plan.batch_count() == 3);
}

TEST_CASE("CSV write then read reproduces the dataset exactly") {
    TempDir tmp;
    ShiftRecipe r;
    r.classes = 3;
    const auto syn = synth_shift(r, 30, 8);
    write_csv(syn.dataset, tmp.path / "d.csv");
    const auto back = load_csv(tmp.path / "d.csv", "label", true);
    CHECK(back.features == syn.dataset.features);
    CHECK(back.labels == syn.dataset.labels);
    CHECK(back.class_count == 3);
}

TEST_CASE("CSV label mapping, header handling and column selection") {
    TempDir tmp;
    const auto p = tmp.write("abc.csv", "x1,x2,y\n1,2,a\n3,4,b\n5,6,a\n");
    const auto d = load_csv(p, "-1", true);
    CHECK(d.size() == 3);
    CHECK(d.class_count == 2);
    CHECK(d.labels == std::vector<std::size_t>{0, 1, 0});
    CHECK(d.features(2, 1) == 6.0);
    const auto by_name = load_csv(p, "y", true);
    CHECK(by_name.labels == d.labels);

    const auto first = tmp.write("first.csv", "2,0.5\n0,1.5\n");
    const auto f = load_csv(first, "0", false);
    CHECK(f.labels == std::vector<std::size_t>{2, 0});
    CHECK(f.class_count == 3);
    CHECK(f.features(1, 0) == 1.5);
}

TEST_CASE("malformed CSV inputs have distinct diagnostics") {
    TempDir tmp;
    const auto empty = tmp.write("empty.csv", "");
    CHECK(kind_of([&] { (void)load_csv(empty); }) == DataErrorKind::no_data_rows);
    try {
        (void)load_csv(empty);
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("no data rows") != std::string::npos);
    }
    const auto header_only = tmp.write("h.csv", "a,b\n");
    CHECK(kind_of([&] { (void)load_csv(header_only, "-1", true); }) == DataErrorKind::no_data_rows);
    const auto ragged = tmp.write("r.csv", "1,2,0\n1,0\n");
    CHECK(kind_of([&] { (void)load_csv(ragged, "-1", false); }) == DataErrorKind::ragged_row);
    const auto text = tmp.write("t.csv", "1,x,0\n");
    CHECK(kind_of([&] { (void)load_csv(text, "-1", false); }) == DataErrorKind::non_numeric_feature);
    const auto ok = tmp.write("ok.csv", "a,b\n1,0\n");
    CHECK(kind_of([&] { (void)load_csv(ok, "zzz", true); }) == DataErrorKind::missing_label_column);
    CHECK(kind_of([&] { (void)load_csv(ok, "5", true); }) == DataErrorKind::missing_label_column);
    CHECK(kind_of([&] { (void)load_csv(tmp.path / "missing.csv"); }) == DataErrorKind::io);
}

TEST_CASE("hand-built IDX fixture parses to the exact pixel values") {
    const auto images = idx_images(0x803, 1, 2, 2, {0, 255, 128, 64});
    const auto labels = idx_labels(0x801, 1, {7});
    const auto d = parse_idx(images, labels);
    REQUIRE(d.size() == 1);
    CHECK(d.dim() == 4);
    CHECK(d.features(0, 0) == 0.0);
    CHECK(d.features(0, 1) == 1.0);
    CHECK(d.features(0, 2) == 128.0 / 255.0);
    CHECK(d.features(0, 3) == 64.0 / 255.0);
    CHECK(d.features(0, 2) == doctest::Approx(0.50196).epsilon(1e-5));
    CHECK(d.features(0, 3) == doctest::Approx(0.25098).epsilon(1e-5));
    CHECK(d.labels[0] == 7);

    TempDir tmp;
    tmp.write("img", std::string(images.begin(), images.end()));
    tmp.write("lab", std::string(labels.begin(), labels.end()));
    const auto loaded = load_idx(tmp.path / "img", tmp.path / "lab");
    CHECK(loaded.features == d.features);
}

TEST_CASE("malformed IDX inputs have distinct diagnostics") {
    const auto good_labels = idx_labels(0x801, 2, {1, 0});
    const auto bad_magic = idx_images(0x802, 2, 1, 1, {1, 2});
    CHECK(kind_of([&] { (void)parse_idx(bad_magic, good_labels); }) == DataErrorKind::unsupported_magic);
    try {
        (void)parse_idx(bad_magic, good_labels);
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("unsupported magic") != std::string::npos);
    }
    const auto two = idx_images(0x803, 2, 1, 1, {1, 2});
    const auto three = idx_labels(0x801, 3, {0, 1, 0});
    CHECK(kind_of([&] { (void)parse_idx(two, three); }) == DataErrorKind::count_mismatch);
    const auto short_payload = idx_images(0x803, 2, 2, 2, {1, 2, 3});
    CHECK(kind_of([&] { (void)parse_idx(short_payload, good_labels); }) == DataErrorKind::truncated_payload);
    const std::vector<std::uint8_t> stub = {0, 0, 8};
    CHECK(kind_of([&] { (void)parse_idx(stub, good_labels); }) == DataErrorKind::truncated_payload);
    const auto bad_label_magic = idx_labels(0x803, 2, {0, 1});
    CHECK(kind_of([&] { (void)parse_idx(two, bad_label_magic); }) == DataErrorKind::unsupported_magic);
}
