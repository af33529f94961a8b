#include "domadapt/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace domadapt {

void TrainConfig::validate() const {
    if (lambda < 0) throw ConfigError("train: lambda must be >= 0");
    if (sigma < 0) throw ConfigError("train: sigma must be >= 0");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (critic_steps < 1) throw ConfigError("train: critic_steps must be >= 1");
    if (encoder_hidden.empty()) throw ConfigError("train: encoder_hidden must be non-empty");
}

void TrainHistory::to_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("history: cannot open " + path);
    out << "epoch,cls_loss,dom_loss,gp,critic_grad_norm,src_val_acc,tgt_val_acc\n";
    char buf[256];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                      r.cls_loss, r.dom_loss, r.gp, r.critic_grad_norm, r.src_val_acc,
                      r.tgt_val_acc);
        out << buf;
    }
    if (!out) throw DataError("history: write failed for " + path);
}

Tensor classification_loss(AdaptationModel& model, const Tensor& x, const std::vector<int>& y,
                           bool training) {
    Tensor z = model.encode(x, training);
    Tensor logits = model.classify(z, training);
    return softmax_cross_entropy(logits, y);
}

Tensor dann_domain_loss(const Tensor& scores_s, const Tensor& scores_t) {
    if (scores_s.cols() != 1 || scores_t.cols() != 1) {
        throw DimensionError("dann_domain_loss: scores must be m x 1");
    }
    // source scored as the positive class: -log sigma(s) = softplus(-s),
    // -log(1 - sigma(t)) = softplus(t)
    const double inv_n = 1.0 / double(scores_s.rows() + scores_t.rows());
    Tensor total = add(sum(softplus(neg(scores_s))), sum(softplus(scores_t)));
    return mul_scalar(total, inv_n);
}

Tensor interpolate(const Tensor& z_s, const Tensor& z_t, std::mt19937_64& rng) {
    Tensor eps = Tensor::rand_uniform({z_s.rows(), 1}, rng, 0.0, 1.0);
    return interpolate(z_s, z_t, eps);
}

Tensor interpolate(const Tensor& z_s, const Tensor& z_t, const Tensor& eps) {
    if (!(z_s.shape() == z_t.shape())) {
        throw DimensionError("interpolate: shape mismatch " + to_string(z_s.shape()) + " vs " +
                             to_string(z_t.shape()));
    }
    if (eps.rows() != z_s.rows() || eps.cols() != 1) {
        throw DimensionError("interpolate: eps must be m x 1");
    }
    const int k = z_s.cols();
    Tensor one_minus = add_scalar(neg(eps), 1.0);
    return add(mul(broadcast_cols(eps, k), z_s), mul(broadcast_cols(one_minus, k), z_t));
}

Tensor gradient_penalty(AdaptationModel& critic, const Tensor& z_hat, double sigma,
                        double* mean_grad_norm) {
    if (critic.config().discriminator.mode != DiscriminatorMode::wasserstein) {
        throw std::invalid_argument("gradient_penalty: critic must be in wasserstein mode");
    }
    if (!z_hat.requires_grad()) {
        throw std::invalid_argument("gradient_penalty: z_hat must require grad");
    }
    Tensor scores = critic.discriminate(z_hat);
    std::vector<Tensor> wrt{z_hat};
    Tensor g = grad(sum(scores), wrt, /*create_graph=*/true)[0];
    Tensor norms = row_l2_norm(g);
    if (mean_grad_norm) {
        double s = 0.0;
        for (double v : norms.data()) s += v;
        *mean_grad_norm = s / norms.rows();
    }
    return mul_scalar(mean(square(add_scalar(norms, -1.0))), sigma);
}

WassersteinLoss wasserstein_domain_loss(AdaptationModel& critic, const Tensor& z_s,
                                        const Tensor& z_t, double sigma, std::mt19937_64& rng) {
    if (z_s.rows() != z_t.rows()) {
        throw DimensionError("wasserstein_domain_loss: batch sizes must match");
    }
    WassersteinLoss out;
    out.encoder_signal = sub(mean(critic.discriminate(z_s)), mean(critic.discriminate(z_t)));
    Tensor z_hat = interpolate(z_s, z_t, rng);
    if (!z_hat.requires_grad()) z_hat.set_requires_grad(true);
    out.penalty = gradient_penalty(critic, z_hat, sigma, &out.mean_grad_norm);
    out.critic_objective = add(neg(out.encoder_signal), out.penalty);
    return out;
}

namespace {

Tensor joint_classification_loss(AdaptationModel& model, const Tensor& z_s,
                                 const std::vector<int>& y_s, const Tensor* z_t,
                                 const std::vector<int>* y_t) {
    Tensor loss = softmax_cross_entropy(model.classify(z_s, true), y_s);
    if (z_t && y_t) {
        Tensor loss_t = softmax_cross_entropy(model.classify(*z_t, true), *y_t);
        loss = mul_scalar(add(loss, loss_t), 0.5);
    }
    return loss;
}

}  // namespace

StepMetrics train_step(AdaptationModel& model, const DomainBatch& batch, const TrainConfig& cfg,
                       std::mt19937_64& rng) {
    if (!model.variant()) {
        throw std::invalid_argument("train_step: model carries no adaptation variant");
    }
    const Variant variant = *model.variant();
    const bool sup = is_supervised(variant);
    if (batch.x_s.rows() != batch.x_t.rows()) {
        throw DimensionError("train_step: source and target batch sizes must match");
    }
    if (sup && !batch.y_t) throw DataError("train_step: supervised variant needs target labels");

    Tape::Checkpoint cp;
    StepMetrics met;

    auto enc_p = model.encoder_params();
    auto cls_p = model.classifier_params();
    auto dis_p = model.discriminator_params();
    std::vector<Parameter*> ec = enc_p;
    ec.insert(ec.end(), cls_p.begin(), cls_p.end());
    std::vector<Parameter*> all = ec;
    all.insert(all.end(), dis_p.begin(), dis_p.end());

    Tensor z_s = model.encode(batch.x_s, true);
    Tensor z_t = model.encode(batch.x_t, true);

    if (!is_wasserstein(variant)) {
        if (cfg.discriminator_updates) {
            Tensor d_loss =
                dann_domain_loss(model.discriminate(z_s.detach()), model.discriminate(z_t.detach()));
            zero_grads(dis_p);
            backward(d_loss);
            adam_step(dis_p, cfg.adam);
            zero_grads(dis_p);
        }

        Tensor cls_loss = joint_classification_loss(model, z_s, batch.y_s, sup ? &z_t : nullptr,
                                                    sup && batch.y_t ? &*batch.y_t : nullptr);
        Tensor dom = dann_domain_loss(model.discriminate(z_s), model.discriminate(z_t));
        Tensor loss = sub(cls_loss, mul_scalar(dom, cfg.lambda));
        zero_grads(all);
        backward(loss);
        adam_step(ec, cfg.adam);
        zero_grads(all);
        met.cls_loss = cls_loss.item();
        met.dom_loss = dom.item();
        return met;
    }

    // Wasserstein: critic_steps updates on detached latents, then one
    // encoder/classifier update against the refreshed critic
    Tensor zd_s = z_s.detach();
    Tensor zd_t = z_t.detach();
    double gp_acc = 0, norm_acc = 0;
    if (cfg.discriminator_updates) {
        for (int t = 0; t < cfg.critic_steps; ++t) {
            Tape::Checkpoint critic_cp;
            WassersteinLoss wl = wasserstein_domain_loss(model, zd_s, zd_t, cfg.sigma, rng);
            zero_grads(dis_p);
            backward(wl.critic_objective);
            adam_step(dis_p, cfg.adam);
            zero_grads(dis_p);
            gp_acc += wl.penalty.item();
            norm_acc += wl.mean_grad_norm;
        }
        gp_acc /= cfg.critic_steps;
        norm_acc /= cfg.critic_steps;
    }

    Tensor cls_loss = joint_classification_loss(model, z_s, batch.y_s, sup ? &z_t : nullptr,
                                                sup && batch.y_t ? &*batch.y_t : nullptr);
    Tensor signal = sub(mean(model.discriminate(z_s)), mean(model.discriminate(z_t)));
    Tensor loss = add(cls_loss, mul_scalar(signal, cfg.lambda));
    zero_grads(all);
    backward(loss);
    adam_step(ec, cfg.adam);
    zero_grads(all);

    met.cls_loss = cls_loss.item();
    met.dom_loss = signal.item();
    met.gp = gp_acc;
    met.critic_grad_norm = norm_acc;
    return met;
}

// ---- training loops ---------------------------------------------------------------

namespace {

// reshuffling cursor over sample indices; used for the smaller domain
class Cycler {
  public:
    Cycler(int n, uint64_t seed) : order_(size_t(n)), rng_(make_rng(seed)) {
        std::iota(order_.begin(), order_.end(), 0);
        std::shuffle(order_.begin(), order_.end(), rng_);
    }

    std::vector<int> next(int m) {
        std::vector<int> out;
        out.reserve(size_t(m));
        for (int i = 0; i < m; ++i) {
            if (pos_ == order_.size()) {
                std::shuffle(order_.begin(), order_.end(), rng_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

  private:
    std::vector<int> order_;
    size_t pos_ = 0;
    std::mt19937_64 rng_;
};

double dataset_accuracy_capped(AdaptationModel& model, const LabeledDataset& ds, int cap) {
    NoGradGuard ng;
    const int n = std::min(ds.num_samples(), cap);
    std::vector<int> rows(static_cast<size_t>(n), 0);
    std::iota(rows.begin(), rows.end(), 0);
    Tensor logits = model.classify(model.encode(ds.features(rows), false), false);
    auto pred = argmax_rows(logits);
    int correct = 0;
    for (int i = 0; i < n; ++i) correct += pred[size_t(i)] == ds.labels[size_t(i)];
    return double(correct) / n;
}

AdaptationModel build_from_train_config(const TrainConfig& cfg, int genes, int classes,
                                        std::optional<Variant> variant) {
    EncoderConfig enc{genes, cfg.encoder_hidden, cfg.use_batchnorm};
    ClassifierConfig cls{cfg.encoder_hidden.back(), cfg.classifier_hidden, classes,
                         cfg.use_batchnorm};
    DiscriminatorMode mode = variant && is_wasserstein(*variant) ? DiscriminatorMode::wasserstein
                                                                 : DiscriminatorMode::dann;
    DiscriminatorConfig dis{cfg.encoder_hidden.back(), cfg.discriminator_hidden, mode,
                            cfg.leaky_slope};
    return build_model(enc, cls, dis, mix_seed(cfg.seed, "model"), variant);
}

std::string describe_last(const TrainHistory& h) {
    if (h.records.empty()) return "no completed epochs";
    const auto& r = h.records.back();
    char buf[160];
    std::snprintf(buf, sizeof buf, "last epoch %d: cls_loss=%g dom_loss=%g gp=%g", r.epoch,
                  r.cls_loss, r.dom_loss, r.gp);
    return buf;
}

void check_finite_record(const EpochRecord& r, const TrainHistory& h) {
    for (double v : {r.cls_loss, r.dom_loss, r.gp, r.critic_grad_norm}) {
        if (!std::isfinite(v)) {
            throw NumericError("fit: non-finite loss at epoch " + std::to_string(r.epoch) + "; " +
                               describe_last(h));
        }
    }
}

}  // namespace

double evaluate_accuracy(AdaptationModel& model, const LabeledDataset& ds) {
    return dataset_accuracy_capped(model, ds, ds.num_samples());
}

FitResult fit(Variant variant, const LabeledDataset& source, const LabeledDataset& target,
              const TrainConfig& cfg, const LabeledDataset* source_val,
              const LabeledDataset* target_val) {
    cfg.validate();
    source.validate();
    target.validate();
    if (source.matrix.gene_ids != target.matrix.gene_ids) {
        throw DataError("fit: source and target feature spaces differ");
    }
    const bool sup = is_supervised(variant);
    if (sup && source.class_names != target.class_names) {
        throw DataError("fit: class vocabulary mismatch between domains");
    }

    FitResult res;
    res.model = build_from_train_config(cfg, source.num_genes(), source.num_classes(), variant);
    auto& model = res.model;

    const int ns = source.num_samples(), nt = target.num_samples();
    const bool source_is_larger = ns >= nt;
    const int n_big = std::max(ns, nt);
    const int bsz = std::min(cfg.batch_size, n_big);
    if (bsz < 2) throw DataError("fit: larger domain must have at least 2 samples");
    const int batches = std::max(1, n_big / bsz);

    auto shuffle_rng = make_rng(mix_seed(cfg.seed, "shuffle"));
    auto step_rng = make_rng(mix_seed(cfg.seed, "step"));
    Cycler small_cycler(source_is_larger ? nt : ns, mix_seed(cfg.seed, "cycler"));

    std::vector<int> big_order(static_cast<size_t>(n_big), 0);
    std::iota(big_order.begin(), big_order.end(), 0);

    ParamSnapshot best;
    double best_acc = -1.0;
    bool selecting = target_val != nullptr && target_val->num_samples() > 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(big_order.begin(), big_order.end(), shuffle_rng);
        StepMetrics acc{};
        for (int b = 0; b < batches; ++b) {
            std::vector<int> big_idx(big_order.begin() + size_t(b) * bsz,
                                     big_order.begin() + size_t(b + 1) * bsz);
            std::vector<int> small_idx = small_cycler.next(bsz);
            const auto& src_idx = source_is_larger ? big_idx : small_idx;
            const auto& tgt_idx = source_is_larger ? small_idx : big_idx;

            DomainBatch batch;
            batch.x_s = source.features(src_idx);
            batch.y_s = source.labels_at(src_idx);
            batch.x_t = target.features(tgt_idx);
            if (sup) batch.y_t = target.labels_at(tgt_idx);

            StepMetrics m = train_step(model, batch, cfg, step_rng);
            acc.cls_loss += m.cls_loss;
            acc.dom_loss += m.dom_loss;
            acc.gp += m.gp;
            acc.critic_grad_norm += m.critic_grad_norm;
        }

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.cls_loss = acc.cls_loss / batches;
        rec.dom_loss = acc.dom_loss / batches;
        rec.gp = acc.gp / batches;
        rec.critic_grad_norm = acc.critic_grad_norm / batches;
        rec.src_val_acc = source_val ? evaluate_accuracy(model, *source_val)
                                     : dataset_accuracy_capped(model, source, cfg.history_eval_cap);
        rec.tgt_val_acc = target_val ? evaluate_accuracy(model, *target_val)
                                     : dataset_accuracy_capped(model, target, cfg.history_eval_cap);
        check_finite_record(rec, res.history);
        res.history.records.push_back(rec);

        if (selecting && rec.tgt_val_acc >= best_acc) {
            best_acc = rec.tgt_val_acc;
            best = snapshot_params(model);
        }
    }

    if (selecting && best_acc >= 0.0) restore_params(model, best);
    return res;
}

FitResult fit_classifier(const LabeledDataset& train, const TrainConfig& cfg,
                         const LabeledDataset* val) {
    cfg.validate();
    train.validate();

    FitResult res;
    res.model = build_from_train_config(cfg, train.num_genes(), train.num_classes(), std::nullopt);
    auto& model = res.model;

    auto enc_p = model.encoder_params();
    auto cls_p = model.classifier_params();
    std::vector<Parameter*> ec = enc_p;
    ec.insert(ec.end(), cls_p.begin(), cls_p.end());

    const int n = train.num_samples();
    const int bsz = std::min(cfg.batch_size, n);
    if (bsz < 2) throw DataError("fit_classifier: needs at least 2 samples");
    const int batches = std::max(1, n / bsz);

    auto shuffle_rng = make_rng(mix_seed(cfg.seed, "shuffle"));
    std::vector<int> order(static_cast<size_t>(n), 0);
    std::iota(order.begin(), order.end(), 0);

    ParamSnapshot best;
    double best_acc = -1.0;
    bool selecting = val != nullptr && val->num_samples() > 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_acc = 0;
        for (int b = 0; b < batches; ++b) {
            std::vector<int> idx(order.begin() + size_t(b) * bsz,
                                 order.begin() + size_t(b + 1) * bsz);
            Tape::Checkpoint cp;
            Tensor loss = classification_loss(model, train.features(idx), train.labels_at(idx));
            zero_grads(ec);
            backward(loss);
            adam_step(ec, cfg.adam);
            zero_grads(ec);
            loss_acc += loss.item();
        }

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.cls_loss = loss_acc / batches;
        rec.tgt_val_acc = val ? evaluate_accuracy(model, *val)
                              : dataset_accuracy_capped(model, train, cfg.history_eval_cap);
        check_finite_record(rec, res.history);
        res.history.records.push_back(rec);

        if (selecting && rec.tgt_val_acc >= best_acc) {
            best_acc = rec.tgt_val_acc;
            best = snapshot_params(model);
        }
    }

    if (selecting && best_acc >= 0.0) restore_params(model, best);
    return res;
}

}  // namespace domadapt
