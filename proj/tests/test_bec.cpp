#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <algorithm>
#include <numeric>

#include "domadapt/bec.hpp"
#include "testutil.hpp"

using namespace domadapt;

namespace {

// two batches, class signal + per-batch offset/scale on batch 1
struct SyntheticBatches {
    DenseMatrix X;
    BatchDesign design;
    std::vector<int> labels;
    std::vector<double> offsets;  // per gene, applied to batch 1
    std::vector<double> scales;
};

SyntheticBatches make_batch_data(int n_per_batch, int genes, double offset_sd, double scale_sd,
                                 uint64_t seed, bool with_covariates) {
    auto rng = make_rng(seed);
    std::normal_distribution<double> unit(0, 1);
    SyntheticBatches out;
    const int n = 2 * n_per_batch;
    out.X = DenseMatrix(n, genes);
    out.design.num_batches = 2;

    out.offsets.resize(size_t(genes));
    out.scales.resize(size_t(genes));
    std::vector<double> class_effect(size_t(genes), 0.0);
    // batch 1 scales the noise by a batch-level factor with mild per-gene
    // jitter; the class signal itself is additive and batch-independent
    const double batch_scale = scale_sd > 0 ? 1.6 : 1.0;
    for (int j = 0; j < genes; ++j) {
        out.offsets[size_t(j)] = offset_sd * unit(rng);
        out.scales[size_t(j)] = batch_scale * std::exp(scale_sd * unit(rng));
        class_effect[size_t(j)] = unit(rng);
    }

    for (int i = 0; i < n; ++i) {
        const int batch = i < n_per_batch ? 0 : 1;
        const int label = i % 2;
        out.design.batch.push_back(batch);
        out.labels.push_back(label);
        for (int j = 0; j < genes; ++j) {
            const double noise = unit(rng);
            double v = class_effect[size_t(j)] * label + noise;
            if (batch == 1) {
                v = class_effect[size_t(j)] * label + out.scales[size_t(j)] * noise +
                    out.offsets[size_t(j)];
            }
            out.X.at(i, j) = v;
        }
    }
    if (with_covariates) {
        DenseMatrix cov(n, 1);
        for (int i = 0; i < n; ++i) cov.at(i, 0) = out.labels[size_t(i)];
        out.design.covariates = std::move(cov);
    }
    return out;
}

double batch_mean_gap(const DenseMatrix& X, const BatchDesign& d, int j) {
    double m0 = 0, m1 = 0;
    int n0 = 0, n1 = 0;
    for (int i = 0; i < X.rows; ++i) {
        if (d.batch[size_t(i)] == 0) {
            m0 += X.at(i, j);
            ++n0;
        } else {
            m1 += X.at(i, j);
            ++n1;
        }
    }
    return m1 / n1 - m0 / n0;
}

double batch_var(const DenseMatrix& X, const BatchDesign& d, int j, int which) {
    double m = 0;
    int n = 0;
    for (int i = 0; i < X.rows; ++i) {
        if (d.batch[size_t(i)] == which) {
            m += X.at(i, j);
            ++n;
        }
    }
    m /= n;
    double v = 0;
    for (int i = 0; i < X.rows; ++i) {
        if (d.batch[size_t(i)] == which) v += (X.at(i, j) - m) * (X.at(i, j) - m);
    }
    return v / (n - 1);
}

}  // namespace

TEST_CASE("limma: single batch is the identity") {
    auto data = make_batch_data(20, 10, 1.0, 0.2, 1, false);
    BatchDesign one;
    one.num_batches = 1;
    one.batch.assign(size_t(data.X.rows), 0);
    LimmaResult r = limma_remove_batch(data.X, one);
    for (size_t i = 0; i < data.X.v.size(); ++i) {
        CHECK(std::abs(r.corrected.v[i] - data.X.v[i]) < 1e-12);
    }
}

TEST_CASE("limma: pure additive offsets are removed exactly") {
    auto data = make_batch_data(50, 20, 2.0, 0.0, 2, false);
    LimmaResult r = limma_remove_batch(data.X, data.design);
    for (int j = 0; j < 20; ++j) {
        CHECK(std::abs(batch_mean_gap(r.corrected, data.design, j)) < 1e-9);
    }
}

TEST_CASE("limma coefficients match a brute-force normal-equations solve") {
    auto data = make_batch_data(30, 8, 1.5, 0.3, 3, true);
    LimmaResult r = limma_remove_batch(data.X, data.design);

    const int n = data.X.rows;
    Eigen::MatrixXd D(n, 3);  // intercept | batch (sum-to-zero) | class covariate
    for (int i = 0; i < n; ++i) {
        D(i, 0) = 1.0;
        D(i, 1) = data.design.batch[size_t(i)] == 0 ? 1.0 : -1.0;
        D(i, 2) = data.labels[size_t(i)];
    }
    Eigen::MatrixXd DtD = D.transpose() * D;
    for (int j = 0; j < 8; ++j) {
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) y(i) = data.X.at(i, j);
        Eigen::VectorXd beta = DtD.inverse() * D.transpose() * y;
        for (int k = 0; k < 3; ++k) {
            CHECK(std::abs(r.coefficients.at(j, k) - beta(k)) < 1e-9);
        }
    }
}

TEST_CASE("limma is idempotent") {
    auto data = make_batch_data(40, 12, 1.0, 0.2, 4, false);
    LimmaResult once = limma_remove_batch(data.X, data.design);
    LimmaResult twice = limma_remove_batch(once.corrected, data.design);
    for (size_t i = 0; i < once.corrected.v.size(); ++i) {
        CHECK(std::abs(once.corrected.v[i] - twice.corrected.v[i]) < 1e-9);
    }
}

TEST_CASE("limma with covariates preserves class contrasts") {
    auto data = make_batch_data(60, 10, 1.5, 0.0, 5, true);
    LimmaResult r = limma_remove_batch(data.X, data.design);

    auto class_gap = [&](const DenseMatrix& X, int j) {
        double m0 = 0, m1 = 0;
        int n0 = 0, n1 = 0;
        for (int i = 0; i < X.rows; ++i) {
            if (data.labels[size_t(i)] == 0) {
                m0 += X.at(i, j);
                ++n0;
            } else {
                m1 += X.at(i, j);
                ++n1;
            }
        }
        return m1 / n1 - m0 / n0;
    };
    for (int j = 0; j < 10; ++j) {
        CHECK(std::abs(class_gap(r.corrected, j) - class_gap(data.X, j)) < 1e-6);
    }
}

TEST_CASE("limma names collinear columns") {
    auto data = make_batch_data(20, 5, 1.0, 0.0, 6, false);
    DenseMatrix cov(data.X.rows, 1);
    for (int i = 0; i < data.X.rows; ++i) {
        cov.at(i, 0) = data.design.batch[size_t(i)] == 0 ? 1.0 : -1.0;  // duplicates batch coding
    }
    data.design.covariates = std::move(cov);
    CHECK_THROWS_WITH_AS(limma_remove_batch(data.X, data.design),
                         doctest::Contains("rank deficient"), DataError);
}

TEST_CASE("combat: single batch short-circuits to the identity") {
    auto data = make_batch_data(25, 10, 1.5, 0.3, 7, false);
    BatchDesign one;
    one.num_batches = 1;
    one.batch.assign(size_t(data.X.rows), 0);
    CombatResult r = combat_fit_adjust(data.X, one);
    for (size_t i = 0; i < data.X.v.size(); ++i) {
        CHECK(std::abs(r.corrected.v[i] - data.X.v[i]) < 1e-10);
    }
}

TEST_CASE("combat rejects singleton batches") {
    auto data = make_batch_data(10, 5, 1.0, 0.1, 8, false);
    for (size_t i = 0; i + 1 < data.design.batch.size(); ++i) data.design.batch[i] = 0;
    data.design.batch.back() = 1;
    CHECK_THROWS_WITH_AS(combat_fit_adjust(data.X, data.design),
                         doctest::Contains("singleton"), DataError);
}

TEST_CASE("combat attenuates additive and multiplicative batch effects") {
    auto data = make_batch_data(100, 50, 2.0, 0.1, 9, true);
    CombatResult r = combat_fit_adjust(data.X, data.design);

    double gap_before = 0, gap_after = 0;
    for (int j = 0; j < 50; ++j) {
        gap_before += std::abs(batch_mean_gap(data.X, data.design, j));
        gap_after += std::abs(batch_mean_gap(r.corrected, data.design, j));
    }
    CHECK(gap_after < 0.1 * gap_before);  // >= 90% shrink in the mean

    // variance balance: batch-aggregate ratio plus the per-gene median.
    // EB shrinkage deliberately leaves some per-gene spread, so the band
    // applies to the aggregates, not every single gene.
    double var0 = 0, var1 = 0, raw0 = 0, raw1 = 0;
    std::vector<double> ratios;
    for (int j = 0; j < 50; ++j) {
        const double v0 = batch_var(r.corrected, data.design, j, 0);
        const double v1 = batch_var(r.corrected, data.design, j, 1);
        var0 += v0;
        var1 += v1;
        ratios.push_back(v1 / v0);
        raw0 += batch_var(data.X, data.design, j, 0);
        raw1 += batch_var(data.X, data.design, j, 1);
    }
    CHECK(raw1 / raw0 > 1.5);  // the injected imbalance is real
    CHECK(var1 / var0 > 0.8);
    CHECK(var1 / var0 < 1.25);
    std::nth_element(ratios.begin(), ratios.begin() + 25, ratios.end());
    CHECK(ratios[25] > 0.8);
    CHECK(ratios[25] < 1.25);
}

TEST_CASE("combat shrinks extreme batch locations toward the prior mean") {
    auto data = make_batch_data(80, 40, 1.5, 0.3, 10, false);
    CombatResult r = combat_fit_adjust(data.X, data.design);
    const auto& M = r.model;
    for (int b = 0; b < 2; ++b) {
        int extreme = 0;
        for (int j = 1; j < 40; ++j) {
            if (std::abs(M.gamma_hat.at(b, j)) > std::abs(M.gamma_hat.at(b, extreme))) extreme = j;
        }
        CHECK(std::abs(M.gamma_star.at(b, extreme)) <= std::abs(M.gamma_hat.at(b, extreme)));
    }
}

TEST_CASE("combat moments match an independent oracle") {
    auto data = make_batch_data(60, 30, 1.5, 0.3, 11, true);
    CombatResult r = combat_fit_adjust(data.X, data.design);
    const auto& M = r.model;
    const int n = data.X.rows, g = data.X.cols;

    // independent standardization via explicit normal equations
    Eigen::MatrixXd D(n, 3);  // batch0 | batch1 | class covariate
    for (int i = 0; i < n; ++i) {
        D(i, 0) = data.design.batch[size_t(i)] == 0 ? 1.0 : 0.0;
        D(i, 1) = data.design.batch[size_t(i)] == 1 ? 1.0 : 0.0;
        D(i, 2) = data.labels[size_t(i)];
    }
    Eigen::MatrixXd X(n, g);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < g; ++j) X(i, j) = data.X.at(i, j);
    Eigen::MatrixXd bhat = (D.transpose() * D).inverse() * D.transpose() * X;

    int n1 = 0;
    for (int b : data.design.batch) n1 += b == 1;
    const double w0 = double(n - n1) / n, w1 = double(n1) / n;

    Eigen::MatrixXd resid = X - D * bhat;
    for (int j = 0; j < g; ++j) {
        const double pooled = resid.col(j).squaredNorm() / n;
        CHECK(std::abs(M.pooled_var[size_t(j)] - pooled) < 1e-6);

        const double grand = w0 * bhat(0, j) + w1 * bhat(1, j);
        for (int i = 0; i < std::min(n, 5); ++i) {
            const double sm = grand + D(i, 2) * bhat(2, j);
            CHECK(std::abs(M.stand_mean.at(i, j) - sm) < 1e-6);
        }
    }

    // standardized data and per-batch moments
    Eigen::MatrixXd Z(n, g);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < g; ++j) {
            const double sm = w0 * bhat(0, j) + w1 * bhat(1, j) + D(i, 2) * bhat(2, j);
            Z(i, j) = (X(i, j) - sm) / std::sqrt(M.pooled_var[size_t(j)]);
        }
    }
    for (int b = 0; b < 2; ++b) {
        std::vector<double> ghat(size_t(g), 0.0);
        std::vector<double> dhat(size_t(g), 0.0);
        for (int j = 0; j < g; ++j) {
            double m = 0;
            int cnt = 0;
            for (int i = 0; i < n; ++i) {
                if (data.design.batch[size_t(i)] == b) {
                    m += Z(i, j);
                    ++cnt;
                }
            }
            m /= cnt;
            double v = 0;
            for (int i = 0; i < n; ++i) {
                if (data.design.batch[size_t(i)] == b) v += (Z(i, j) - m) * (Z(i, j) - m);
            }
            v /= (cnt - 1);
            ghat[size_t(j)] = m;
            dhat[size_t(j)] = v;
            CHECK(std::abs(M.gamma_hat.at(b, j) - m) < 1e-6);
            CHECK(std::abs(M.delta_hat_sq.at(b, j) - v) < 1e-6);
        }
        const double gbar = std::accumulate(ghat.begin(), ghat.end(), 0.0) / g;
        double tau = 0;
        for (double v : ghat) tau += (v - gbar) * (v - gbar);
        tau /= (g - 1);
        CHECK(std::abs(M.gamma_bar[size_t(b)] - gbar) < 1e-6);
        CHECK(std::abs(M.tau_sq[size_t(b)] - tau) < 1e-6);

        const double dm = std::accumulate(dhat.begin(), dhat.end(), 0.0) / g;
        double dv = 0;
        for (double v : dhat) dv += (v - dm) * (v - dm);
        dv /= (g - 1);
        CHECK(std::abs(M.a_prior[size_t(b)] - (2 * dv + dm * dm) / dv) < 1e-6);
        CHECK(std::abs(M.b_prior[size_t(b)] - (dm * dv + dm * dm * dm) / dv) < 1e-6);
    }
}

TEST_CASE("combat is equivariant to sample permutation") {
    auto data = make_batch_data(30, 12, 1.5, 0.3, 12, false);
    CombatResult base = combat_fit_adjust(data.X, data.design);

    // reversed sample order
    DenseMatrix Xp(data.X.rows, data.X.cols);
    BatchDesign dp;
    dp.num_batches = 2;
    dp.batch.resize(data.design.batch.size());
    const int n = data.X.rows;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < data.X.cols; ++j) Xp.at(i, j) = data.X.at(n - 1 - i, j);
        dp.batch[size_t(i)] = data.design.batch[size_t(n - 1 - i)];
    }
    CombatResult perm = combat_fit_adjust(Xp, dp);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < data.X.cols; ++j) {
            CHECK(perm.corrected.at(i, j) ==
                  doctest::Approx(base.corrected.at(n - 1 - i, j)).epsilon(1e-10));
        }
    }
}

TEST_CASE("corrections commute with gene reordering") {
    auto data = make_batch_data(30, 6, 1.5, 0.3, 13, false);

    DenseMatrix Xr(data.X.rows, data.X.cols);
    for (int i = 0; i < data.X.rows; ++i) {
        for (int j = 0; j < 6; ++j) Xr.at(i, j) = data.X.at(i, 5 - j);
    }

    CombatResult ca = combat_fit_adjust(data.X, data.design);
    CombatResult cb = combat_fit_adjust(Xr, data.design);
    LimmaResult la = limma_remove_batch(data.X, data.design);
    LimmaResult lb = limma_remove_batch(Xr, data.design);
    for (int i = 0; i < data.X.rows; ++i) {
        for (int j = 0; j < 6; ++j) {
            CHECK(cb.corrected.at(i, j) == doctest::Approx(ca.corrected.at(i, 5 - j)).epsilon(1e-10));
            CHECK(lb.corrected.at(i, j) == doctest::Approx(la.corrected.at(i, 5 - j)).epsilon(1e-10));
        }
    }
}

TEST_CASE("combat passes zero-variance genes through with a warning record") {
    auto data = make_batch_data(25, 8, 1.5, 0.3, 14, false);
    for (int i = 0; i < data.X.rows; ++i) data.X.at(i, 3) = 7.0;  // constant gene
    CombatResult r = combat_fit_adjust(data.X, data.design);
    CHECK(r.model.skipped_genes == std::vector<int>{3});
    for (int i = 0; i < data.X.rows; ++i) CHECK(r.corrected.at(i, 3) == 7.0);
}

namespace {

LabeledDataset clustered(int n, int classes, int genes, double sep, uint64_t seed, Domain dom,
                         double shift = 0.0) {
    auto rng = make_rng(seed);
    std::normal_distribution<double> unit(0, 1);
    LabeledDataset ds;
    ds.domain_tag = dom;
    ds.matrix.n = n;
    ds.matrix.g = genes;
    ds.matrix.values.resize(size_t(n) * genes);
    for (int j = 0; j < genes; ++j) ds.matrix.gene_ids.push_back("g" + std::to_string(j));
    for (int c = 0; c < classes; ++c) ds.class_names.push_back("c" + std::to_string(c));
    for (int i = 0; i < n; ++i) {
        const int cls = i % classes;
        ds.labels.push_back(cls);
        ds.matrix.sample_ids.push_back(to_string(dom) + std::to_string(i));
        for (int j = 0; j < genes; ++j) {
            ds.matrix.at(i, j) = sep * (cls == j % classes ? 1.0 : 0.0) + 0.4 * unit(rng) + shift;
        }
    }
    return ds;
}

}  // namespace

TEST_CASE("bec_correct_parts hands back corrected parts in order") {
    LabeledDataset src = clustered(40, 2, 8, 2.0, 21, Domain::source);
    LabeledDataset tgt = clustered(30, 2, 8, 2.0, 22, Domain::target, 3.0);
    auto parts = bec_correct_parts(BecMethod::limma, {&src, &tgt}, false);
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].num_samples() == 40);
    CHECK(parts[1].num_samples() == 30);
    CHECK(parts[0].matrix.sample_ids == src.matrix.sample_ids);

    // additive shift mostly gone
    double gap = 0;
    for (int j = 0; j < 8; ++j) {
        double ms = 0, mt = 0;
        for (int i = 0; i < 40; ++i) ms += parts[0].matrix.at(i, j);
        for (int i = 0; i < 30; ++i) mt += parts[1].matrix.at(i, j);
        gap += std::abs(mt / 30 - ms / 40);
    }
    CHECK(gap / 8 < 0.2);

    // same-domain parts: single batch, identity
    auto same = bec_correct_parts(BecMethod::combat, {&src, &src}, false);
    CHECK(same[0].matrix.values == src.matrix.values);
}

TEST_CASE("train_no_adaptation matches a lambda-0 DANN run without critic updates") {
    LabeledDataset src = clustered(24, 2, 6, 2.0, 31, Domain::source);
    LabeledDataset tgt = clustered(20, 2, 6, 2.0, 32, Domain::target, 1.0);

    TrainConfig cfg;
    cfg.encoder_hidden = {16, 8};
    cfg.classifier_hidden = {8};
    cfg.discriminator_hidden = {8};
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 33;

    FitResult a = train_no_adaptation(src, tgt, cfg);

    TrainConfig manual = cfg;
    manual.lambda = 0.0;
    manual.discriminator_updates = false;
    FitResult b = fit(Variant::dann_sup, src, tgt, manual);

    auto pa = a.model.encoder_params();
    auto pb = b.model.encoder_params();
    for (size_t i = 0; i < pa.size(); ++i) {
        auto da = pa[i]->value().data();
        auto db = pb[i]->value().data();
        for (size_t j = 0; j < da.size(); ++j) CHECK(da[j] == db[j]);  // identical trajectory
    }
}

TEST_CASE("target-only training is deterministic and learns the easy problem") {
    LabeledDataset train = clustered(120, 3, 9, 2.5, 41, Domain::target);
    LabeledDataset test = clustered(60, 3, 9, 2.5, 42, Domain::target);

    TrainConfig cfg;
    cfg.encoder_hidden = {32, 16};
    cfg.classifier_hidden = {16};
    cfg.discriminator_hidden = {8};
    cfg.epochs = 20;
    cfg.batch_size = 16;
    cfg.adam.lr = 1e-3;
    cfg.seed = 43;

    FitResult a = train_target_only(train, cfg);
    CHECK(evaluate_accuracy(a.model, test) >= 0.9);

    FitResult b = train_target_only(train, cfg);
    CHECK(a.history.records.back().cls_loss == b.history.records.back().cls_loss);

    // less data, averaged over seeds: strictly worse than the full run
    double full = 0, small = 0;
    for (uint64_t s : {1, 2, 3}) {
        TrainConfig c2 = cfg;
        c2.seed = s;
        FitResult rf = train_target_only(train, c2);
        full += evaluate_accuracy(rf.model, test);
        LabeledDataset sub = subsample_fraction(train, 0.05, s);
        FitResult rs = train_target_only(sub, c2);
        small += evaluate_accuracy(rs.model, test);
    }
    CHECK(small / 3 < full / 3);
}
