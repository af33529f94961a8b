#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "domadapt/data.hpp"
#include "domadapt/nn.hpp"
#include "domadapt/tensor.hpp"

namespace domadapt {

struct TrainConfig {
    double lambda = 1.0;      // domain-alignment weight
    double sigma = 10.0;      // gradient-penalty weight
    int epochs = 200;
    int batch_size = 64;
    int critic_steps = 5;     // Wasserstein only
    AdamConfig adam;          // lr 1e-4, betas (0.9, 0.999), eps 1e-8
    uint64_t seed = 1;

    std::vector<int> encoder_hidden{256, 256, 256, 256};
    bool use_batchnorm = true;
    std::vector<int> classifier_hidden{128, 64};
    std::vector<int> discriminator_hidden{256, 128, 64};
    double leaky_slope = 0.2;

    // disabled by the no-adaptation baseline, which is exactly a lambda=0
    // supervised run without discriminator steps
    bool discriminator_updates = true;

    // cap on rows used for the per-epoch history accuracies when no
    // validation split is supplied
    int history_eval_cap = 512;

    void validate() const;
};

struct DomainBatch {
    Tensor x_s;
    std::vector<int> y_s;
    Tensor x_t;
    std::optional<std::vector<int>> y_t;  // present iff supervised
};

struct EpochRecord {
    int epoch = 0;
    double cls_loss = 0;
    double dom_loss = 0;
    double gp = 0;
    double critic_grad_norm = 0;
    double src_val_acc = 0;
    double tgt_val_acc = 0;
};

struct TrainHistory {
    std::vector<EpochRecord> records;

    void to_csv(const std::string& path) const;
};

Tensor classification_loss(AdaptationModel& model, const Tensor& x, const std::vector<int>& y,
                           bool training = true);

// Binary cross-entropy with sigmoid on raw critic scores; source scored as
// the positive class. All-zero scores give ln 2.
Tensor dann_domain_loss(const Tensor& scores_s, const Tensor& scores_t);

// Per-row convex combination with eps ~ U[0,1].
Tensor interpolate(const Tensor& z_s, const Tensor& z_t, std::mt19937_64& rng);
Tensor interpolate(const Tensor& z_s, const Tensor& z_t, const Tensor& eps);  // eps: m x 1

// sigma * mean over rows of (||d D/d z_hat||_2 - 1)^2, differentiable w.r.t.
// critic parameters via double backprop.
Tensor gradient_penalty(AdaptationModel& critic, const Tensor& z_hat, double sigma,
                        double* mean_grad_norm = nullptr);

struct WassersteinLoss {
    Tensor critic_objective;  // -(E_S[D] - E_T[D]) + penalty; the critic minimizes this
    Tensor encoder_signal;    //   E_S[D] - E_T[D];  the encoder minimizes this
    Tensor penalty;
    double mean_grad_norm = 0;
};

WassersteinLoss wasserstein_domain_loss(AdaptationModel& critic, const Tensor& z_s,
                                        const Tensor& z_t, double sigma, std::mt19937_64& rng);

struct StepMetrics {
    double cls_loss = 0;
    double dom_loss = 0;
    double gp = 0;
    double critic_grad_norm = 0;
};

StepMetrics train_step(AdaptationModel& model, const DomainBatch& batch, const TrainConfig& cfg,
                       std::mt19937_64& rng);

struct FitResult {
    AdaptationModel model;
    TrainHistory history;
};

// Adversarial training of one variant. Deterministic given cfg.seed. When a
// target validation set is supplied the returned model is the epoch with the
// best target validation accuracy (ties resolved toward later epochs),
// otherwise the final-epoch model.
FitResult fit(Variant variant, const LabeledDataset& source, const LabeledDataset& target,
              const TrainConfig& cfg, const LabeledDataset* source_val = nullptr,
              const LabeledDataset* target_val = nullptr);

// Plain supervised encoder+classifier training on one labeled dataset; the
// shared loop behind the non-adaptive baselines.
FitResult fit_classifier(const LabeledDataset& train, const TrainConfig& cfg,
                         const LabeledDataset* val = nullptr);

// Fraction of correctly classified samples under eval-mode forward.
double evaluate_accuracy(AdaptationModel& model, const LabeledDataset& ds);

}  // namespace domadapt
