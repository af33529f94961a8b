#include "domadapt/bec.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace domadapt {

namespace {

using EMat = Eigen::MatrixXd;
using EVec = Eigen::VectorXd;
using MapConst =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

std::vector<std::vector<int>> rows_by_batch(const BatchDesign& d) {
    std::vector<std::vector<int>> out(size_t(d.num_batches));
    for (size_t i = 0; i < d.batch.size(); ++i) out[size_t(d.batch[i])].push_back(int(i));
    return out;
}

}  // namespace

void BatchDesign::validate(int n) const {
    if (int(batch.size()) != n) throw DataError("batch design: label count mismatch");
    if (num_batches < 1) throw DataError("batch design: need at least one batch");
    std::vector<int> counts(size_t(num_batches), 0);
    for (int b : batch) {
        if (b < 0 || b >= num_batches) throw DataError("batch design: batch index out of range");
        counts[size_t(b)] += 1;
    }
    for (int b = 0; b < num_batches; ++b) {
        if (counts[size_t(b)] == 0) throw DataError("batch design: empty batch " + std::to_string(b));
    }
    if (covariates && covariates->rows != n) {
        throw DataError("batch design: covariate rows mismatch");
    }
}

// ---- limma-style removal ------------------------------------------------------------

LimmaResult limma_remove_batch(const DenseMatrix& X, const BatchDesign& design) {
    design.validate(X.rows);
    const int n = X.rows, g = X.cols, nb = design.num_batches;
    const int p_cov = design.covariates ? design.covariates->cols : 0;
    const int p = 1 + (nb - 1) + p_cov;

    // [intercept | batch indicators, sum-to-zero coding | covariates]
    EMat D = EMat::Zero(n, p);
    for (int i = 0; i < n; ++i) {
        D(i, 0) = 1.0;
        const int b = design.batch[size_t(i)];
        if (b < nb - 1) {
            D(i, 1 + b) = 1.0;
        } else {
            for (int j = 0; j < nb - 1; ++j) D(i, 1 + j) = -1.0;
        }
        for (int j = 0; j < p_cov; ++j) D(i, 1 + (nb - 1) + j) = design.covariates->at(i, j);
    }

    Eigen::ColPivHouseholderQR<EMat> qr(D);
    if (qr.rank() < p) {
        const auto& perm = qr.colsPermutation().indices();
        std::string cols;
        for (int k = qr.rank(); k < p; ++k) {
            const int c = perm[k];
            if (!cols.empty()) cols += ", ";
            if (c == 0) {
                cols += "intercept";
            } else if (c <= nb - 1) {
                cols += "batch[" + std::to_string(c - 1) + "]";
            } else {
                cols += "covariate[" + std::to_string(c - nb) + "]";
            }
        }
        throw DataError("limma_remove_batch: design matrix is rank deficient (" + cols + ")");
    }

    MapConst Xm(X.v.data(), n, g);
    EMat coef = qr.solve(Xm);  // p x g

    LimmaResult res;
    res.corrected = X;
    res.coefficients = DenseMatrix(g, p);
    for (int j = 0; j < g; ++j)
        for (int k = 0; k < p; ++k) res.coefficients.at(j, k) = coef(k, j);

    if (nb > 1) {
        EMat batch_part = D.middleCols(1, nb - 1) * coef.middleRows(1, nb - 1);  // n x g
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < g; ++j) res.corrected.at(i, j) -= batch_part(i, j);
    }
    return res;
}

// ---- parametric ComBat --------------------------------------------------------------

CombatResult combat_fit_adjust(const DenseMatrix& X, const BatchDesign& design, double tol,
                               int max_iter) {
    design.validate(X.rows);
    const int n = X.rows, g = X.cols, nb = design.num_batches;
    auto batches = rows_by_batch(design);
    for (int b = 0; b < nb; ++b) {
        if (batches[size_t(b)].size() < 2) {
            throw DataError("combat: batch " + std::to_string(b) +
                            " has fewer than 2 samples (singleton batch)");
        }
    }
    if (nb == 1) {
        // nothing to correct
        CombatResult identity;
        identity.corrected = X;
        return identity;
    }

    const int p_cov = design.covariates ? design.covariates->cols : 0;
    const int p = nb + p_cov;

    EMat D = EMat::Zero(n, p);
    for (int i = 0; i < n; ++i) {
        D(i, design.batch[size_t(i)]) = 1.0;
        for (int j = 0; j < p_cov; ++j) D(i, nb + j) = design.covariates->at(i, j);
    }
    Eigen::ColPivHouseholderQR<EMat> qr(D);
    if (qr.rank() < p) {
        throw DataError("combat: design matrix is rank deficient (confounded covariates)");
    }

    MapConst Xm(X.v.data(), n, g);
    EMat bhat = qr.solve(Xm);  // p x g

    CombatResult res;
    auto& M = res.model;
    res.corrected = X;

    // pooled variance of the residuals around the full fit
    EMat fitted = D * bhat;
    M.pooled_var.assign(size_t(g), 0.0);
    for (int j = 0; j < g; ++j) {
        double s = 0;
        for (int i = 0; i < n; ++i) {
            const double r = Xm(i, j) - fitted(i, j);
            s += r * r;
        }
        M.pooled_var[size_t(j)] = s / n;
    }

    // grand mean: batch-size-weighted batch effects, plus covariate part
    EVec weights(nb);
    for (int b = 0; b < nb; ++b) weights(b) = double(batches[size_t(b)].size()) / n;
    EVec grand = bhat.topRows(nb).transpose() * weights;  // g

    M.stand_mean = DenseMatrix(n, g);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < g; ++j) {
            double v = grand(j);
            for (int k = 0; k < p_cov; ++k) v += D(i, nb + k) * bhat(nb + k, j);
            M.stand_mean.at(i, j) = v;
        }
    }

    std::vector<bool> skip(size_t(g), false);
    for (int j = 0; j < g; ++j) {
        if (M.pooled_var[size_t(j)] < 1e-12) {
            skip[size_t(j)] = true;
            M.skipped_genes.push_back(j);
        }
    }

    // standardized data
    EMat Z = EMat::Zero(n, g);
    for (int j = 0; j < g; ++j) {
        if (skip[size_t(j)]) continue;
        const double sd = std::sqrt(M.pooled_var[size_t(j)]);
        for (int i = 0; i < n; ++i) Z(i, j) = (Xm(i, j) - M.stand_mean.at(i, j)) / sd;
    }

    // per-batch location/scale estimates on the standardized data
    M.gamma_hat = DenseMatrix(nb, g);
    M.delta_hat_sq = DenseMatrix(nb, g);
    for (int b = 0; b < nb; ++b) {
        const auto& rows = batches[size_t(b)];
        const double m = double(rows.size());
        for (int j = 0; j < g; ++j) {
            double mean = 0;
            for (int i : rows) mean += Z(i, j);
            mean /= m;
            double var = 0;
            for (int i : rows) var += (Z(i, j) - mean) * (Z(i, j) - mean);
            var /= (m - 1.0);
            M.gamma_hat.at(b, j) = mean;
            M.delta_hat_sq.at(b, j) = var;
        }
    }

    // moment-matched hyperpriors: normal on locations, inverse-gamma on scales
    M.gamma_bar.assign(size_t(nb), 0.0);
    M.tau_sq.assign(size_t(nb), 0.0);
    M.a_prior.assign(size_t(nb), 0.0);
    M.b_prior.assign(size_t(nb), 0.0);
    const int g_used = g - int(M.skipped_genes.size());
    if (g_used < 2) throw DataError("combat: not enough non-degenerate genes");
    std::vector<bool> scale_shrink(size_t(nb), true);
    for (int b = 0; b < nb; ++b) {
        double gm = 0, dm = 0;
        for (int j = 0; j < g; ++j) {
            if (skip[size_t(j)]) continue;
            gm += M.gamma_hat.at(b, j);
            dm += M.delta_hat_sq.at(b, j);
        }
        gm /= g_used;
        dm /= g_used;
        double gv = 0, dv = 0;
        for (int j = 0; j < g; ++j) {
            if (skip[size_t(j)]) continue;
            gv += (M.gamma_hat.at(b, j) - gm) * (M.gamma_hat.at(b, j) - gm);
            dv += (M.delta_hat_sq.at(b, j) - dm) * (M.delta_hat_sq.at(b, j) - dm);
        }
        gv /= (g_used - 1);
        dv /= (g_used - 1);
        M.gamma_bar[size_t(b)] = gm;
        M.tau_sq[size_t(b)] = gv;
        if (dv > 1e-12 * std::max(dm * dm, 1e-300)) {
            M.a_prior[size_t(b)] = (2.0 * dv + dm * dm) / dv;
            M.b_prior[size_t(b)] = (dm * dv + dm * dm * dm) / dv;
        } else {
            // all scale estimates identical: no inverse-gamma shrinkage
            scale_shrink[size_t(b)] = false;
            M.a_prior[size_t(b)] = 0.0;
            M.b_prior[size_t(b)] = 0.0;
        }
    }

    // iterative posterior solve per batch
    M.gamma_star = DenseMatrix(nb, g);
    M.delta_star_sq = DenseMatrix(nb, g);
    for (int b = 0; b < nb; ++b) {
        const auto& rows = batches[size_t(b)];
        const double m = double(rows.size());
        std::vector<double> gam(static_cast<size_t>(g), 0.0);
        std::vector<double> del(static_cast<size_t>(g), 0.0);
        for (int j = 0; j < g; ++j) {
            gam[size_t(j)] = M.gamma_hat.at(b, j);
            del[size_t(j)] = M.delta_hat_sq.at(b, j);
        }
        int it = 0;
        double change = tol + 1;
        while (change > tol && it < max_iter) {
            change = 0;
            for (int j = 0; j < g; ++j) {
                if (skip[size_t(j)]) continue;
                const double gnew = (m * M.tau_sq[size_t(b)] * M.gamma_hat.at(b, j) +
                                     del[size_t(j)] * M.gamma_bar[size_t(b)]) /
                                    (m * M.tau_sq[size_t(b)] + del[size_t(j)]);
                double dnew = del[size_t(j)];
                if (scale_shrink[size_t(b)]) {
                    double ss = 0;
                    for (int i : rows) ss += (Z(i, j) - gnew) * (Z(i, j) - gnew);
                    dnew = (0.5 * ss + M.b_prior[size_t(b)]) /
                           (m / 2.0 + M.a_prior[size_t(b)] - 1.0);
                }
                change = std::max(change, std::abs(gnew - gam[size_t(j)]) /
                                              std::max(std::abs(gam[size_t(j)]), 1e-12));
                change = std::max(change, std::abs(dnew - del[size_t(j)]) /
                                              std::max(std::abs(del[size_t(j)]), 1e-12));
                gam[size_t(j)] = gnew;
                del[size_t(j)] = dnew;
            }
            ++it;
        }
        M.iterations = std::max(M.iterations, it);
        for (int j = 0; j < g; ++j) {
            M.gamma_star.at(b, j) = gam[size_t(j)];
            M.delta_star_sq.at(b, j) = del[size_t(j)];
            if (!skip[size_t(j)] && M.delta_star_sq.at(b, j) <= 0) {
                throw NumericError("combat: non-positive posterior scale");
            }
        }
    }

    // adjust and restore scale/location
    for (int b = 0; b < nb; ++b) {
        for (int i : batches[size_t(b)]) {
            for (int j = 0; j < g; ++j) {
                if (skip[size_t(j)]) continue;  // passed through unadjusted
                const double zstar = (Z(i, j) - M.gamma_star.at(b, j)) /
                                     std::sqrt(M.delta_star_sq.at(b, j));
                res.corrected.at(i, j) =
                    zstar * std::sqrt(M.pooled_var[size_t(j)]) + M.stand_mean.at(i, j);
            }
        }
    }
    return res;
}

// ---- dataset wrappers ---------------------------------------------------------------

LabeledDataset pool_datasets(const std::vector<const LabeledDataset*>& parts) {
    if (parts.empty()) throw DataError("pool_datasets: no parts");
    LabeledDataset out;
    out.matrix.g = parts[0]->matrix.g;
    out.matrix.gene_ids = parts[0]->matrix.gene_ids;
    out.class_names = parts[0]->class_names;
    out.domain_tag = parts[0]->domain_tag;
    for (const LabeledDataset* p : parts) {
        if (p->matrix.gene_ids != out.matrix.gene_ids) {
            throw DataError("pool_datasets: gene sets differ");
        }
        if (p->class_names != out.class_names) {
            throw DataError("pool_datasets: class vocabulary differs");
        }
        out.matrix.values.insert(out.matrix.values.end(), p->matrix.values.begin(),
                                 p->matrix.values.end());
        out.matrix.sample_ids.insert(out.matrix.sample_ids.end(), p->matrix.sample_ids.begin(),
                                     p->matrix.sample_ids.end());
        out.labels.insert(out.labels.end(), p->labels.begin(), p->labels.end());
        out.matrix.n += p->matrix.n;
    }
    out.validate();
    return out;
}

std::vector<LabeledDataset> bec_correct_parts(BecMethod method,
                                              const std::vector<const LabeledDataset*>& parts,
                                              bool use_class_covariates) {
    if (parts.empty()) throw DataError("bec_correct_parts: no parts");
    const int g = parts[0]->matrix.g;
    const int c = parts[0]->num_classes();

    int n = 0;
    for (const auto* p : parts) n += p->matrix.n;

    DenseMatrix X(n, g);
    BatchDesign design;
    design.num_batches = 2;
    design.batch.reserve(size_t(n));
    int row = 0;
    for (const auto* p : parts) {
        if (p->matrix.g != g) throw DataError("bec_correct_parts: gene count differs");
        for (int i = 0; i < p->matrix.n; ++i, ++row) {
            std::copy_n(p->matrix.values.begin() + size_t(i) * g, g, X.v.begin() + size_t(row) * g);
            design.batch.push_back(p->domain_tag == Domain::source ? 0 : 1);
        }
    }
    bool has0 = false, has1 = false;
    for (int b : design.batch) (b == 0 ? has0 : has1) = true;
    if (!has0 || !has1) design.num_batches = 1;

    if (use_class_covariates && c > 1) {
        // c-1 dummy columns; the full one-hot would be collinear with the
        // batch indicators
        DenseMatrix cov(n, c - 1);
        row = 0;
        for (const auto* p : parts) {
            for (int i = 0; i < p->matrix.n; ++i, ++row) {
                const int y = p->labels[size_t(i)];
                if (y < c - 1) cov.at(row, y) = 1.0;
            }
        }
        design.covariates = std::move(cov);
    }

    DenseMatrix corrected;
    if (design.num_batches < 2) {
        corrected = X;  // nothing to correct
    } else if (method == BecMethod::combat) {
        corrected = combat_fit_adjust(X, design).corrected;
    } else {
        corrected = limma_remove_batch(X, design).corrected;
    }

    std::vector<LabeledDataset> out;
    out.reserve(parts.size());
    row = 0;
    for (const auto* p : parts) {
        LabeledDataset ds = *p;
        for (int i = 0; i < p->matrix.n; ++i, ++row) {
            std::copy_n(corrected.v.begin() + size_t(row) * g, g,
                        ds.matrix.values.begin() + size_t(i) * g);
        }
        out.push_back(std::move(ds));
    }
    return out;
}

// ---- baseline trainers ----------------------------------------------------------------

FitResult train_target_only(const LabeledDataset& target_train, const TrainConfig& cfg,
                            const LabeledDataset* target_val) {
    return fit_classifier(target_train, cfg, target_val);
}

FitResult train_no_adaptation(const LabeledDataset& source_train,
                              const LabeledDataset& target_train, const TrainConfig& cfg,
                              const LabeledDataset* source_val, const LabeledDataset* target_val) {
    if (source_train.class_names != target_train.class_names) {
        throw DataError("train_no_adaptation: class vocabulary mismatch");
    }
    TrainConfig plain = cfg;
    plain.lambda = 0.0;
    plain.discriminator_updates = false;
    return fit(Variant::dann_sup, source_train, target_train, plain, source_val, target_val);
}

}  // namespace domadapt
