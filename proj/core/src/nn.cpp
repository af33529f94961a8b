#include "domadapt/nn.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

namespace domadapt {

using nlohmann::json;

bool is_supervised(Variant v) { return v == Variant::dann_sup || v == Variant::wass_sup; }

bool is_wasserstein(Variant v) { return v == Variant::wass_sup || v == Variant::wass_unsup; }

std::string to_string(Variant v) {
    switch (v) {
        case Variant::dann_unsup: return "dann_unsup";
        case Variant::dann_sup: return "dann_sup";
        case Variant::wass_unsup: return "wass_unsup";
        case Variant::wass_sup: return "wass_sup";
    }
    return "?";
}

Variant parse_variant(const std::string& name) {
    if (name == "dann_unsup") return Variant::dann_unsup;
    if (name == "dann_sup") return Variant::dann_sup;
    if (name == "wass_unsup") return Variant::wass_unsup;
    if (name == "wass_sup") return Variant::wass_sup;
    throw ConfigError("unknown variant: " + name);
}

Tensor DenseBlock::forward(const Tensor& x, bool training) {
    Tensor h = affine(x, lin.W.value(), lin.b.value());
    if (bn) h = batch_norm(h, bn->gamma.value(), bn->beta.value(), training, bn->state,
                           bn->momentum, bn->eps);
    switch (act) {
        case Activation::relu: return relu(h);
        case Activation::leaky: return leaky_relu(h, slope);
        case Activation::none: return h;
    }
    return h;
}

Tensor Mlp::forward(const Tensor& x, bool training) {
    Tensor h = x;
    for (auto& b : blocks) h = b.forward(h, training);
    return h;
}

void Mlp::collect_params(std::vector<Parameter*>& out) {
    for (auto& b : blocks) {
        out.push_back(&b.lin.W);
        out.push_back(&b.lin.b);
        if (b.bn) {
            out.push_back(&b.bn->gamma);
            out.push_back(&b.bn->beta);
        }
    }
}

int Mlp::input_dim() const { return blocks.empty() ? 0 : blocks.front().lin.W.shape().rows; }

int Mlp::output_dim() const { return blocks.empty() ? 0 : blocks.back().lin.W.shape().cols; }

namespace {

LinearLayer make_linear(int in, int out, Activation act, std::mt19937_64& rng) {
    // He-uniform for rectified layers; plain 1/sqrt(fan_in) for linear
    // outputs so logits start near zero
    const double limit = act == Activation::none ? 1.0 / std::sqrt(double(in))
                                                 : std::sqrt(6.0 / in);
    return LinearLayer{Parameter(Tensor::rand_uniform({in, out}, rng, -limit, limit)),
                       Parameter(Tensor::zeros({1, out}))};
}

BatchNormLayer make_bn(int n) {
    BatchNormLayer bn{Parameter(Tensor::full({1, n}, 1.0)), Parameter(Tensor::zeros({1, n})),
                      BatchNormState(n)};
    return bn;
}

DenseBlock make_block(int in, int out, Activation act, bool use_bn, double slope,
                      std::mt19937_64& rng) {
    DenseBlock b;
    b.lin = make_linear(in, out, act, rng);
    if (use_bn) b.bn = make_bn(out);
    b.act = act;
    b.slope = slope;
    return b;
}

void check_positive_widths(const std::vector<int>& widths, const char* who, bool allow_empty) {
    if (widths.empty() && !allow_empty) {
        throw DimensionError(std::string(who) + ": hidden widths must be non-empty");
    }
    for (int w : widths) {
        if (w <= 0) throw DimensionError(std::string(who) + ": layer width must be positive");
    }
}

}  // namespace

AdaptationModel build_model(const EncoderConfig& enc, const ClassifierConfig& cls,
                            const DiscriminatorConfig& dis, uint64_t seed,
                            std::optional<Variant> variant) {
    if (enc.input_dim <= 0) throw DimensionError("build_model: encoder input_dim must be positive");
    check_positive_widths(enc.hidden, "encoder", false);
    check_positive_widths(cls.hidden, "classifier", false);
    // an empty critic hidden list is a plain linear critic
    check_positive_widths(dis.hidden, "discriminator", true);
    if (cls.num_classes < 2) {
        throw DimensionError("build_model: num_classes must be >= 2, got " +
                             std::to_string(cls.num_classes));
    }
    const int latent = enc.hidden.back();
    if (cls.latent_dim != latent || dis.latent_dim != latent) {
        throw DimensionError("build_model: latent dims inconsistent (encoder " +
                             std::to_string(latent) + ", classifier " +
                             std::to_string(cls.latent_dim) + ", discriminator " +
                             std::to_string(dis.latent_dim) + ")");
    }

    auto rng = make_rng(seed);
    AdaptationModel m;
    m.cfg_ = ModelConfig{enc, cls, dis, seed, variant};

    int in = enc.input_dim;
    for (int w : enc.hidden) {
        m.encoder.blocks.push_back(make_block(in, w, Activation::relu, enc.use_batchnorm, 0.0, rng));
        in = w;
    }

    in = latent;
    for (int w : cls.hidden) {
        m.classifier.blocks.push_back(make_block(in, w, Activation::relu, cls.use_batchnorm, 0.0, rng));
        in = w;
    }
    m.classifier.blocks.push_back(make_block(in, cls.num_classes, Activation::none, false, 0.0, rng));

    // no batchnorm in the critic: the gradient penalty needs per-sample
    // gradients, which batch-coupled normalization would entangle
    in = latent;
    for (int w : dis.hidden) {
        m.discriminator.blocks.push_back(
            make_block(in, w, Activation::leaky, false, dis.leaky_slope, rng));
        in = w;
    }
    m.discriminator.blocks.push_back(make_block(in, 1, Activation::none, false, 0.0, rng));

    return m;
}

Tensor AdaptationModel::encode(const Tensor& x, bool training) {
    if (x.cols() != cfg_.encoder.input_dim) {
        throw DimensionError("encode: expected " + std::to_string(cfg_.encoder.input_dim) +
                             " genes, got " + std::to_string(x.cols()));
    }
    return encoder.forward(x, training);
}

Tensor AdaptationModel::classify(const Tensor& z, bool training) {
    if (z.cols() != cfg_.classifier.latent_dim) {
        throw DimensionError("classify: latent dim mismatch");
    }
    return classifier.forward(z, training);
}

Tensor AdaptationModel::discriminate(const Tensor& z) {
    if (z.cols() != cfg_.discriminator.latent_dim) {
        throw DimensionError("discriminate: latent dim mismatch");
    }
    return discriminator.forward(z, /*training=*/true);
}

std::vector<Parameter*> AdaptationModel::encoder_params() {
    std::vector<Parameter*> out;
    encoder.collect_params(out);
    return out;
}

std::vector<Parameter*> AdaptationModel::classifier_params() {
    std::vector<Parameter*> out;
    classifier.collect_params(out);
    return out;
}

std::vector<Parameter*> AdaptationModel::discriminator_params() {
    std::vector<Parameter*> out;
    discriminator.collect_params(out);
    return out;
}

std::vector<Parameter*> AdaptationModel::all_params() {
    std::vector<Parameter*> out;
    encoder.collect_params(out);
    classifier.collect_params(out);
    discriminator.collect_params(out);
    return out;
}

int64_t parameter_count(const AdaptationModel& model) {
    auto& m = const_cast<AdaptationModel&>(model);
    int64_t total = 0;
    for (Parameter* p : m.all_params()) total += p->shape().numel();
    return total;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const int m = logits.rows(), c = logits.cols();
    auto v = logits.data();
    std::vector<int> out(static_cast<size_t>(m), 0);
    for (int i = 0; i < m; ++i) {
        const double* row = v.data() + size_t(i) * c;
        int best = 0;
        for (int j = 1; j < c; ++j) {
            if (row[j] > row[best]) best = j;
        }
        out[size_t(i)] = best;
    }
    return out;
}

ParamSnapshot snapshot_params(AdaptationModel& model) {
    ParamSnapshot snap;
    for (Parameter* p : model.all_params()) {
        auto d = p->value().data();
        snap.values.emplace_back(d.begin(), d.end());
    }
    for (Mlp* net : {&model.encoder, &model.classifier, &model.discriminator}) {
        for (auto& b : net->blocks) {
            if (b.bn) {
                snap.running.push_back(b.bn->state.running_mean);
                snap.running.push_back(b.bn->state.running_var);
            }
        }
    }
    return snap;
}

void restore_params(AdaptationModel& model, const ParamSnapshot& snap) {
    auto params = model.all_params();
    if (params.size() != snap.values.size()) {
        throw DimensionError("restore_params: snapshot does not match model");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        auto d = params[i]->value().data_mut();
        std::copy(snap.values[i].begin(), snap.values[i].end(), d.begin());
    }
    size_t k = 0;
    for (Mlp* net : {&model.encoder, &model.classifier, &model.discriminator}) {
        for (auto& b : net->blocks) {
            if (b.bn) {
                b.bn->state.running_mean = snap.running.at(k++);
                b.bn->state.running_var = snap.running.at(k++);
            }
        }
    }
}

// ---- checkpoint io ------------------------------------------------------------

namespace {

constexpr char kMagic[9] = "DADCKPT1";

struct NamedBuffer {
    std::string name;
    const std::vector<double>* data;
};

template <typename Fn>
void walk_buffers(AdaptationModel& m, Fn fn) {
    auto walk_net = [&](Mlp& net, const std::string& prefix) {
        for (size_t i = 0; i < net.blocks.size(); ++i) {
            auto& b = net.blocks[i];
            std::string base = prefix + ".layer" + std::to_string(i) + ".";
            fn(base + "W", b.lin.W.value());
            fn(base + "b", b.lin.b.value());
            if (b.bn) {
                fn(base + "gamma", b.bn->gamma.value());
                fn(base + "beta", b.bn->beta.value());
            }
        }
    };
    walk_net(m.encoder, "encoder");
    walk_net(m.classifier, "classifier");
    walk_net(m.discriminator, "discriminator");
}

template <typename Fn>
void walk_running(AdaptationModel& m, Fn fn) {
    auto walk_net = [&](Mlp& net, const std::string& prefix) {
        for (size_t i = 0; i < net.blocks.size(); ++i) {
            auto& b = net.blocks[i];
            if (!b.bn) continue;
            std::string base = prefix + ".layer" + std::to_string(i) + ".";
            fn(base + "running_mean", b.bn->state.running_mean);
            fn(base + "running_var", b.bn->state.running_var);
        }
    };
    walk_net(m.encoder, "encoder");
    walk_net(m.classifier, "classifier");
    walk_net(m.discriminator, "discriminator");
}

json config_to_json(const ModelConfig& c) {
    json j;
    j["encoder"] = {{"input_dim", c.encoder.input_dim},
                    {"hidden", c.encoder.hidden},
                    {"use_batchnorm", c.encoder.use_batchnorm}};
    j["classifier"] = {{"latent_dim", c.classifier.latent_dim},
                       {"hidden", c.classifier.hidden},
                       {"num_classes", c.classifier.num_classes},
                       {"use_batchnorm", c.classifier.use_batchnorm}};
    j["discriminator"] = {
        {"latent_dim", c.discriminator.latent_dim},
        {"hidden", c.discriminator.hidden},
        {"mode", c.discriminator.mode == DiscriminatorMode::dann ? "dann" : "wasserstein"},
        {"leaky_slope", c.discriminator.leaky_slope}};
    j["seed"] = c.seed;
    if (c.variant) j["variant"] = to_string(*c.variant);
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.encoder.input_dim = j.at("encoder").at("input_dim").get<int>();
    c.encoder.hidden = j.at("encoder").at("hidden").get<std::vector<int>>();
    c.encoder.use_batchnorm = j.at("encoder").at("use_batchnorm").get<bool>();
    c.classifier.latent_dim = j.at("classifier").at("latent_dim").get<int>();
    c.classifier.hidden = j.at("classifier").at("hidden").get<std::vector<int>>();
    c.classifier.num_classes = j.at("classifier").at("num_classes").get<int>();
    c.classifier.use_batchnorm = j.at("classifier").at("use_batchnorm").get<bool>();
    c.discriminator.latent_dim = j.at("discriminator").at("latent_dim").get<int>();
    c.discriminator.hidden = j.at("discriminator").at("hidden").get<std::vector<int>>();
    c.discriminator.mode = j.at("discriminator").at("mode").get<std::string>() == "wasserstein"
                               ? DiscriminatorMode::wasserstein
                               : DiscriminatorMode::dann;
    c.discriminator.leaky_slope = j.at("discriminator").at("leaky_slope").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    return c;
}

}  // namespace

void save_checkpoint(const AdaptationModel& model, const std::string& path,
                     const std::string& method_name) {
    auto& m = const_cast<AdaptationModel&>(model);
    json header;
    header["config"] = config_to_json(m.config());
    if (!method_name.empty()) header["method"] = method_name;
    json index = json::array();
    std::vector<std::pair<const double*, size_t>> payload;
    walk_buffers(m, [&](const std::string& name, const Tensor& t) {
        index.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
        payload.emplace_back(t.data().data(), size_t(t.size()));
    });
    walk_running(m, [&](const std::string& name, const std::vector<double>& v) {
        index.push_back({{"name", name}, {"rows", 1}, {"cols", int(v.size())}});
        payload.emplace_back(v.data(), v.size());
    });
    header["buffers"] = std::move(index);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_checkpoint: cannot open " + path);
    std::string head = header.dump();
    uint64_t len = head.size();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(head.data(), std::streamsize(head.size()));
    for (auto& [ptr, n] : payload) {
        out.write(reinterpret_cast<const char*>(ptr), std::streamsize(n * sizeof(double)));
    }
    if (!out) throw DataError("save_checkpoint: write failed for " + path);
}

AdaptationModel load_checkpoint(const std::string& path, std::string* method_name) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw DataError("load_checkpoint: bad magic in " + path);
    }
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string head(len, '\0');
    in.read(head.data(), std::streamsize(len));
    if (!in) throw DataError("load_checkpoint: truncated header in " + path);
    json header = json::parse(head);
    ModelConfig cfg = config_from_json(header.at("config"));
    if (method_name && header.contains("method")) {
        *method_name = header.at("method").get<std::string>();
    }

    AdaptationModel model = build_model(cfg.encoder, cfg.classifier, cfg.discriminator, cfg.seed,
                                        cfg.variant);

    std::vector<std::pair<double*, size_t>> slots;
    walk_buffers(model, [&](const std::string&, const Tensor& t) {
        slots.emplace_back(const_cast<Tensor&>(t).data_mut().data(), size_t(t.size()));
    });
    walk_running(model, [&](const std::string&, std::vector<double>& v) {
        slots.emplace_back(v.data(), v.size());
    });

    const auto& index = header.at("buffers");
    if (index.size() != slots.size()) {
        throw DataError("load_checkpoint: buffer count mismatch in " + path);
    }
    for (size_t i = 0; i < slots.size(); ++i) {
        const int64_t expect =
            index[i].at("rows").get<int64_t>() * index[i].at("cols").get<int64_t>();
        if (expect != int64_t(slots[i].second)) {
            throw DataError("load_checkpoint: shape mismatch for " +
                            index[i].at("name").get<std::string>());
        }
        in.read(reinterpret_cast<char*>(slots[i].first),
                std::streamsize(slots[i].second * sizeof(double)));
    }
    if (!in) throw DataError("load_checkpoint: truncated payload in " + path);
    return model;
}

}  // namespace domadapt
