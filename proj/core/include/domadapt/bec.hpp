#pragma once

#include <optional>
#include <string>
#include <vector>

#include "domadapt/adapt.hpp"
#include "domadapt/data.hpp"

namespace domadapt {

// Row-major dense matrix for the statistical corrections.
struct DenseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    DenseMatrix() = default;
    DenseMatrix(int r, int c) : rows(r), cols(c), v(size_t(r) * c, 0.0) {}

    double at(int i, int j) const { return v[size_t(i) * cols + j]; }
    double& at(int i, int j) { return v[size_t(i) * cols + j]; }
};

struct BatchDesign {
    std::vector<int> batch;  // per-sample batch index, 0-based contiguous
    int num_batches = 0;
    // optional covariates to preserve (n x p), e.g. class one-hot
    std::optional<DenseMatrix> covariates;

    void validate(int n) const;
};

// Parametric empirical-Bayes estimates, exposed so oracles can check the
// moment computations directly.
struct CombatModel {
    std::vector<double> pooled_var;               // per gene
    DenseMatrix stand_mean;                       // n x g, grand mean + covariate effects
    DenseMatrix gamma_hat, delta_hat_sq;          // batch x gene
    DenseMatrix gamma_star, delta_star_sq;        // batch x gene
    std::vector<double> gamma_bar, tau_sq;        // per batch
    std::vector<double> a_prior, b_prior;         // per batch
    std::vector<int> skipped_genes;               // zero-variance genes passed through
    int iterations = 0;
};

struct CombatResult {
    DenseMatrix corrected;
    CombatModel model;
};

// Parametric ComBat: standardize per gene, estimate per-batch location and
// scale, shrink both with empirical-Bayes priors (normal / inverse-gamma,
// moment-matched), adjust and restore the standardization.
CombatResult combat_fit_adjust(const DenseMatrix& X, const BatchDesign& design,
                               double tol = 1e-4, int max_iter = 100);

struct LimmaResult {
    DenseMatrix corrected;
    // per-gene coefficients for [intercept | batch (sum-to-zero) | covariates]
    DenseMatrix coefficients;  // g x p
};

// Per-gene OLS on [intercept | batch indicators (sum-to-zero) | covariates],
// then subtraction of the fitted batch component only.
LimmaResult limma_remove_batch(const DenseMatrix& X, const BatchDesign& design);

enum class BecMethod { combat, limma };

// Pools the parts (domain index as batch, optional class dummies as
// protected covariates), corrects once, and hands each part back corrected.
std::vector<LabeledDataset> bec_correct_parts(BecMethod method,
                                              const std::vector<const LabeledDataset*>& parts,
                                              bool use_class_covariates);

// Baseline trainers. target-only trains E+C on the target alone;
// no-adaptation trains on the labeled union of both domains with the domain
// loss disabled.
FitResult train_target_only(const LabeledDataset& target_train, const TrainConfig& cfg,
                            const LabeledDataset* target_val = nullptr);
FitResult train_no_adaptation(const LabeledDataset& source_train,
                              const LabeledDataset& target_train, const TrainConfig& cfg,
                              const LabeledDataset* source_val = nullptr,
                              const LabeledDataset* target_val = nullptr);

// Concatenate datasets sharing gene ids and class vocabulary.
LabeledDataset pool_datasets(const std::vector<const LabeledDataset*>& parts);

}  // namespace domadapt
