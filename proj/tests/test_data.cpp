#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "domadapt/data.hpp"
#include "testutil.hpp"

using namespace domadapt;

namespace {

LabeledDataset tiny_dataset(int n, int classes, int genes, uint64_t seed) {
    auto rng = make_rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    LabeledDataset ds;
    ds.matrix.n = n;
    ds.matrix.g = genes;
    ds.matrix.values.resize(size_t(n) * genes);
    for (auto& v : ds.matrix.values) v = unit(rng);
    for (int i = 0; i < n; ++i) ds.matrix.sample_ids.push_back("s" + std::to_string(i));
    for (int j = 0; j < genes; ++j) ds.matrix.gene_ids.push_back("g" + std::to_string(j));
    for (int c = 0; c < classes; ++c) ds.class_names.push_back("c" + std::to_string(c));
    for (int i = 0; i < n; ++i) ds.labels.push_back(i % classes);
    return ds;
}

}  // namespace

TEST_CASE("matrix round-trip preserves values, ids and order") {
    testutil::TempDir tmp("data_rt");
    LabeledDataset ds;
    ds.matrix.n = 2;
    ds.matrix.g = 3;
    ds.matrix.values = {1.25, -0.5, 1e-3, 3.14159265358979, 0.0, 42.0};
    ds.matrix.sample_ids = {"a", "b"};
    ds.matrix.gene_ids = {"g1", "g2", "g3"};
    ds.labels = {0, 1};
    ds.class_names = {"x", "y"};

    save_matrix(ds, tmp.file("m.csv"), tmp.file("l.csv"));
    LabeledDataset back = load_matrix(tmp.file("m.csv"), tmp.file("l.csv"));

    CHECK(back.matrix.values == ds.matrix.values);  // exact, %.17g round-trip
    CHECK(back.matrix.sample_ids == ds.matrix.sample_ids);
    CHECK(back.matrix.gene_ids == ds.matrix.gene_ids);
    CHECK(back.labels == ds.labels);
    CHECK(back.class_names == ds.class_names);
}

TEST_CASE("load_matrix parses scientific notation") {
    testutil::TempDir tmp("data_sci");
    {
        std::ofstream m(tmp.file("m.csv"));
        m << "sample_id,g1\na,1e-3\n";
        std::ofstream l(tmp.file("l.csv"));
        l << "sample_id,label\na,k\n";
    }
    LabeledDataset ds = load_matrix(tmp.file("m.csv"), tmp.file("l.csv"));
    CHECK(ds.matrix.values[0] == doctest::Approx(0.001));
}

TEST_CASE("load_matrix reports missing labels, bad cells and duplicates") {
    testutil::TempDir tmp("data_err");
    {
        std::ofstream m(tmp.file("m.csv"));
        m << "sample_id,g1,g2\naa,1,2\nbb,3,4\n";
        std::ofstream l(tmp.file("l.csv"));
        l << "sample_id,label\naa,x\n";
    }
    CHECK_THROWS_WITH_AS(load_matrix(tmp.file("m.csv"), tmp.file("l.csv")),
                         doctest::Contains("bb"), DataError);

    {
        std::ofstream m(tmp.file("bad.csv"));
        m << "sample_id,g1,g2\naa,1,oops\n";
        std::ofstream l(tmp.file("l2.csv"));
        l << "sample_id,label\naa,x\n";
    }
    try {
        load_matrix(tmp.file("bad.csv"), tmp.file("l2.csv"));
        FAIL("expected DataError");
    } catch (const DataError& e) {
        std::string msg = e.what();
        CHECK(msg.find("row 2") != std::string::npos);
        CHECK(msg.find("column 3") != std::string::npos);
    }

    {
        std::ofstream m(tmp.file("dup.csv"));
        m << "sample_id,g1\naa,1\naa,2\n";
        std::ofstream l(tmp.file("l3.csv"));
        l << "sample_id,label\naa,x\n";
    }
    CHECK_THROWS_AS(load_matrix(tmp.file("dup.csv"), tmp.file("l3.csv")), DataError);
}

TEST_CASE("load_matrix accepts tab-separated files") {
    testutil::TempDir tmp("data_tsv");
    {
        std::ofstream m(tmp.file("m.tsv"));
        m << "sample_id\tg1\tg2\na\t1.5\t2.5\n";
        std::ofstream l(tmp.file("l.tsv"));
        l << "sample_id\tlabel\na\tx\n";
    }
    LabeledDataset ds = load_matrix(tmp.file("m.tsv"), tmp.file("l.tsv"));
    CHECK(ds.matrix.at(0, 1) == doctest::Approx(2.5));
}

TEST_CASE("align_genes reduces to the sorted intersection") {
    LabeledDataset a = tiny_dataset(4, 2, 3, 1);
    a.matrix.gene_ids = {"g1", "g2", "g3"};
    LabeledDataset b = tiny_dataset(4, 2, 3, 2);
    b.matrix.gene_ids = {"g2", "g3", "g4"};

    auto [ra, rb] = align_genes(a, b);
    CHECK(ra.matrix.gene_ids == std::vector<std::string>{"g2", "g3"});
    CHECK(rb.matrix.gene_ids == std::vector<std::string>{"g2", "g3"});

    // values follow their gene ids
    CHECK(ra.matrix.at(1, 0) == a.matrix.at(1, 1));
    CHECK(ra.matrix.at(2, 1) == a.matrix.at(2, 2));
    CHECK(rb.matrix.at(3, 0) == b.matrix.at(3, 0));

    // identical sets: order-normalized identity
    LabeledDataset c = a;
    auto [rc, rd] = align_genes(a, c);
    CHECK(rc.matrix.gene_ids == a.matrix.gene_ids);
    CHECK(rc.matrix.values == a.matrix.values);

    LabeledDataset e = tiny_dataset(4, 2, 2, 3);
    e.matrix.gene_ids = {"h1", "h2"};
    CHECK_THROWS_AS((void)align_genes(a, e), DataError);
}

TEST_CASE("preprocess log2 and standardization") {
    LabeledDataset ds = tiny_dataset(50, 2, 4, 7);
    for (auto& v : ds.matrix.values) v = std::abs(v);  // log needs x >= 0
    ds.matrix.values[0] = 0.0;

    auto [out, stats] = preprocess(ds);
    CHECK(stats.log_transform);
    for (int j = 0; j < 4; ++j) {
        double m = 0, s = 0;
        for (int i = 0; i < 50; ++i) m += out.matrix.at(i, j);
        m /= 50;
        for (int i = 0; i < 50; ++i) s += (out.matrix.at(i, j) - m) * (out.matrix.at(i, j) - m);
        s = std::sqrt(s / 50);
        CHECK(std::abs(m) < 1e-9);
        CHECK(std::abs(s - 1.0) < 1e-9);
    }

    LabeledDataset neg = tiny_dataset(5, 2, 2, 8);
    neg.matrix.values[0] = -1.0;
    CHECK_THROWS_AS((void)preprocess(neg), DataError);
}

TEST_CASE("preprocess: x=0 maps to 0 and zero-variance genes map to 0") {
    LabeledDataset ds = tiny_dataset(10, 2, 2, 9);
    for (int i = 0; i < 10; ++i) {
        ds.matrix.at(i, 0) = 0.0;  // constant zero column
        ds.matrix.at(i, 1) = std::abs(ds.matrix.at(i, 1)) + 0.1;
    }
    auto [out, stats] = preprocess(ds);
    for (int i = 0; i < 10; ++i) CHECK(out.matrix.at(i, 0) == 0.0);
    CHECK(stats.stdev[0] == 1e-8);  // floored
}

TEST_CASE("preprocess with reference stats is the exact affine map") {
    LabeledDataset ds = tiny_dataset(20, 2, 3, 10);
    for (auto& v : ds.matrix.values) v = std::abs(v);
    auto [once, stats] = preprocess(ds);

    // documented non-idempotence: a second application with the same stats
    // (log disabled, values already transformed) is the plain affine map
    PreprocessStats no_log = stats;
    no_log.log_transform = false;
    auto twice = preprocess(once, no_log).first;
    for (int i = 0; i < 20; ++i) {
        for (int j = 0; j < 3; ++j) {
            const double want =
                (once.matrix.at(i, j) - stats.mean[size_t(j)]) / stats.stdev[size_t(j)];
            CHECK(twice.matrix.at(i, j) == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("stratified_split: exact divisibility case") {
    LabeledDataset ds = tiny_dataset(100, 2, 3, 11);
    SplitResult r = stratified_split(ds, {0.8, 0.1, 0.1}, 5);
    CHECK(r.train.num_samples() == 80);
    CHECK(r.val.num_samples() == 10);
    CHECK(r.test.num_samples() == 10);
    for (const auto* part : {&r.train, &r.val, &r.test}) {
        int c0 = 0;
        for (int y : part->labels) c0 += y == 0;
        CHECK(c0 * 2 == part->num_samples());  // balanced halves
    }

    SplitResult r2 = stratified_split(ds, {0.8, 0.1, 0.1}, 5);
    CHECK(r2.train.matrix.sample_ids == r.train.matrix.sample_ids);  // deterministic
}

TEST_CASE("stratified_split: imbalanced proportions stay within 1/|split|") {
    // 3 classes at 60/30/10 of 500 samples
    LabeledDataset ds = tiny_dataset(500, 3, 2, 13);
    ds.labels.clear();
    for (int i = 0; i < 500; ++i) ds.labels.push_back(i < 300 ? 0 : (i < 450 ? 1 : 2));

    SplitResult r = stratified_split(ds, {0.6, 0.2, 0.2}, 3);
    const double want[3] = {0.6, 0.3, 0.1};
    for (const auto* part : {&r.train, &r.val, &r.test}) {
        int counts[3] = {0, 0, 0};
        for (int y : part->labels) counts[y]++;
        for (int c = 0; c < 3; ++c) {
            const double frac = double(counts[c]) / part->num_samples();
            CHECK(std::abs(frac - want[c]) <= 1.0 / part->num_samples() + 1e-12);
        }
    }
}

TEST_CASE("stratified_split rejects tiny classes and bad fractions") {
    LabeledDataset ds = tiny_dataset(10, 2, 2, 14);
    ds.labels = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1};  // class 1 has 2 < 3 samples
    CHECK_THROWS_AS((void)stratified_split(ds, {0.8, 0.1, 0.1}, 1), DataError);

    LabeledDataset ok = tiny_dataset(30, 2, 2, 15);
    CHECK_THROWS_AS((void)stratified_split(ok, {0.8, 0.1, 0.2}, 1), ConfigError);
}

TEST_CASE("splits partition the input for random configurations") {
    auto rng = make_rng(777);
    for (int trial = 0; trial < 1000; ++trial) {
        const int classes = 2 + int(rng() % 3);
        const int n = classes * (3 + int(rng() % 20));
        LabeledDataset ds = tiny_dataset(n, classes, 2, rng());
        const double a = 0.5 + double(rng() % 30) / 100.0;
        const double b = (1.0 - a) * 0.5;
        SplitResult r = stratified_split(ds, {a, b, 1.0 - a - b}, rng());

        std::set<std::string> seen;
        int total = 0;
        for (const auto* part : {&r.train, &r.val, &r.test}) {
            total += part->num_samples();
            for (const auto& id : part->matrix.sample_ids) {
                CHECK(seen.insert(id).second);  // pairwise disjoint
            }
            // every class present at least once
            std::set<int> cls(part->labels.begin(), part->labels.end());
            CHECK(int(cls.size()) == classes);
        }
        CHECK(total == n);
    }
}

TEST_CASE("subsample_fraction: identity, nesting and sizing") {
    LabeledDataset ds = tiny_dataset(200, 4, 2, 17);

    LabeledDataset full = subsample_fraction(ds, 1.0, 9);
    CHECK(full.matrix.sample_ids == ds.matrix.sample_ids);

    auto ids = [](const LabeledDataset& d) {
        return std::set<std::string>(d.matrix.sample_ids.begin(), d.matrix.sample_ids.end());
    };
    auto s05 = ids(subsample_fraction(ds, 0.05, 9));
    auto s10 = ids(subsample_fraction(ds, 0.10, 9));
    auto s20 = ids(subsample_fraction(ds, 0.20, 9));
    CHECK(std::includes(s10.begin(), s10.end(), s05.begin(), s05.end()));
    CHECK(std::includes(s20.begin(), s20.end(), s10.begin(), s10.end()));

    CHECK_THROWS_AS((void)subsample_fraction(ds, 0.0, 1), ConfigError);
    CHECK_THROWS_AS((void)subsample_fraction(ds, 1.5, 1), ConfigError);

    // ~73 samples at p=0.01 from a 7291-sample target, up to per-class ceil
    LabeledDataset big = tiny_dataset(7291, 19, 1, 23);
    LabeledDataset sub = subsample_fraction(big, 0.01, 3);
    CHECK(sub.num_samples() >= 73);
    CHECK(sub.num_samples() <= 73 + 19);
    std::set<int> cls(sub.labels.begin(), sub.labels.end());
    CHECK(cls.size() == 19);  // stratified: every class kept
}

TEST_CASE("synthetic generator: determinism and shared class proportions") {
    SyntheticConfig cfg;
    cfg.num_genes = 30;
    cfg.samples_per_domain = 400;
    cfg.seed = 5;

    auto [s1, t1] = generate_synthetic(cfg);
    auto [s2, t2] = generate_synthetic(cfg);
    CHECK(s1.matrix.values == s2.matrix.values);  // bitwise
    CHECK(t1.matrix.values == t2.matrix.values);

    CHECK(s1.num_samples() == 400);
    CHECK(t1.num_genes() == 30);
    for (int c = 0; c < cfg.num_classes; ++c) {
        int ns = 0, nt = 0;
        for (int y : s1.labels) ns += y == c;
        for (int y : t1.labels) nt += y == c;
        CHECK(ns == nt);
    }
}

TEST_CASE("synthetic generator: null shift vs injected offset") {
    SyntheticConfig null_cfg;
    null_cfg.num_genes = 40;
    null_cfg.samples_per_domain = 2000;
    null_cfg.additive_shift = 0;
    null_cfg.multiplicative_shift = 0;
    null_cfg.warp_fraction = 0;
    null_cfg.seed = 8;
    auto [s0, t0] = generate_synthetic(null_cfg);

    auto gene_mean = [](const LabeledDataset& d, int j) {
        double m = 0;
        for (int i = 0; i < d.num_samples(); ++i) m += d.matrix.at(i, j);
        return m / d.num_samples();
    };
    // no injected shift: per-gene domain gaps are sampling noise only
    for (int j = 0; j < 40; ++j) {
        CHECK(std::abs(gene_mean(s0, j) - gene_mean(t0, j)) < 0.5);
    }

    SyntheticConfig shifted = null_cfg;
    shifted.additive_shift = 2.0;
    auto [s1, t1] = generate_synthetic(shifted);
    double gap_sq = 0;
    for (int j = 0; j < 40; ++j) {
        const double gap = gene_mean(t1, j) - gene_mean(s1, j);
        gap_sq += gap * gap;
    }
    gap_sq /= 40;
    // E[offset^2] = add^2 = 4, averaged over 40 genes
    CHECK(gap_sq > 2.0);
    CHECK(gap_sq < 7.0);
}

TEST_CASE("synthetic config validation") {
    SyntheticConfig bad;
    bad.warp_fraction = 1.5;
    CHECK_THROWS_AS((void)generate_synthetic(bad), ConfigError);
    bad = SyntheticConfig{};
    bad.additive_shift = -1;
    CHECK_THROWS_AS((void)generate_synthetic(bad), ConfigError);
}
