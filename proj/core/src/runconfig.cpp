#include "domadapt/runconfig.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace domadapt {

using nlohmann::json;

namespace {

json to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["seeds"] = c.seeds;
    j["paths"] = {{"source_matrix", c.paths.source_matrix},
                  {"source_labels", c.paths.source_labels},
                  {"target_matrix", c.paths.target_matrix},
                  {"target_labels", c.paths.target_labels},
                  {"out_dir", c.paths.out_dir},
                  {"checkpoint", c.paths.checkpoint}};
    j["synthetic"] = {{"num_genes", c.synthetic.num_genes},
                      {"num_classes", c.synthetic.num_classes},
                      {"latent_dim", c.synthetic.latent_dim},
                      {"samples_per_domain", c.synthetic.samples_per_domain},
                      {"class_separation", c.synthetic.class_separation},
                      {"additive_shift", c.synthetic.additive_shift},
                      {"multiplicative_shift", c.synthetic.multiplicative_shift},
                      {"warp_fraction", c.synthetic.warp_fraction},
                      {"warp_strength", c.synthetic.warp_strength},
                      {"noise_std", c.synthetic.noise_std},
                      {"seed", c.synthetic.seed}};
    j["preprocess"] = {{"log_transform", c.preprocess.log_transform}};
    j["split"] = {{"train", c.split.train},
                  {"val", c.split.val},
                  {"test", c.split.test},
                  {"seed", c.split.seed}};
    j["method"] = c.method;
    j["train"] = {{"lambda", c.train.lambda},
                  {"sigma", c.train.sigma},
                  {"epochs", c.train.epochs},
                  {"batch_size", c.train.batch_size},
                  {"critic_steps", c.train.critic_steps},
                  {"lr", c.train.adam.lr},
                  {"beta1", c.train.adam.beta1},
                  {"beta2", c.train.adam.beta2},
                  {"eps", c.train.adam.eps},
                  {"seed", c.train.seed},
                  {"encoder_hidden", c.train.encoder_hidden},
                  {"use_batchnorm", c.train.use_batchnorm},
                  {"classifier_hidden", c.train.classifier_hidden},
                  {"discriminator_hidden", c.train.discriminator_hidden},
                  {"leaky_slope", c.train.leaky_slope},
                  {"history_eval_cap", c.train.history_eval_cap}};
    j["sweep"] = {{"kind", c.sweep.kind},
                  {"methods", c.sweep.methods},
                  {"target_grid", c.sweep.target_grid},
                  {"source_grid", c.sweep.source_grid},
                  {"fixed_target_fraction", c.sweep.fixed_target_fraction},
                  {"jobs", c.sweep.jobs},
                  {"bec_use_class_covariates", c.sweep.bec_use_class_covariates},
                  {"probe_cap", c.sweep.probe_cap},
                  {"mmd_cap", c.sweep.mmd_cap}};
    return j;
}

void check_unknown_keys(const json& file, const json& schema, const std::string& prefix) {
    for (auto it = file.begin(); it != file.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!schema.contains(it.key())) {
            throw ConfigError("config: unknown key '" + path + "'");
        }
        if (it->is_object() && schema.at(it.key()).is_object()) {
            check_unknown_keys(*it, schema.at(it.key()), path);
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

RunConfig from_json(const json& j) {
    RunConfig c = default_run_config();
    check_unknown_keys(j, to_json(c), "");

    read(j, "seed", c.seed);
    read(j, "seeds", c.seeds);
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        read(p, "source_matrix", c.paths.source_matrix);
        read(p, "source_labels", c.paths.source_labels);
        read(p, "target_matrix", c.paths.target_matrix);
        read(p, "target_labels", c.paths.target_labels);
        read(p, "out_dir", c.paths.out_dir);
        read(p, "checkpoint", c.paths.checkpoint);
    }
    if (j.contains("synthetic")) {
        const auto& s = j.at("synthetic");
        read(s, "num_genes", c.synthetic.num_genes);
        read(s, "num_classes", c.synthetic.num_classes);
        read(s, "latent_dim", c.synthetic.latent_dim);
        read(s, "samples_per_domain", c.synthetic.samples_per_domain);
        read(s, "class_separation", c.synthetic.class_separation);
        read(s, "additive_shift", c.synthetic.additive_shift);
        read(s, "multiplicative_shift", c.synthetic.multiplicative_shift);
        read(s, "warp_fraction", c.synthetic.warp_fraction);
        read(s, "warp_strength", c.synthetic.warp_strength);
        read(s, "noise_std", c.synthetic.noise_std);
        read(s, "seed", c.synthetic.seed);
    }
    if (j.contains("preprocess")) {
        read(j.at("preprocess"), "log_transform", c.preprocess.log_transform);
    }
    if (j.contains("split")) {
        const auto& s = j.at("split");
        read(s, "train", c.split.train);
        read(s, "val", c.split.val);
        read(s, "test", c.split.test);
        read(s, "seed", c.split.seed);
    }
    read(j, "method", c.method);
    if (j.contains("train")) {
        const auto& t = j.at("train");
        read(t, "lambda", c.train.lambda);
        read(t, "sigma", c.train.sigma);
        read(t, "epochs", c.train.epochs);
        read(t, "batch_size", c.train.batch_size);
        read(t, "critic_steps", c.train.critic_steps);
        read(t, "lr", c.train.adam.lr);
        read(t, "beta1", c.train.adam.beta1);
        read(t, "beta2", c.train.adam.beta2);
        read(t, "eps", c.train.adam.eps);
        read(t, "seed", c.train.seed);
        read(t, "encoder_hidden", c.train.encoder_hidden);
        read(t, "use_batchnorm", c.train.use_batchnorm);
        read(t, "classifier_hidden", c.train.classifier_hidden);
        read(t, "discriminator_hidden", c.train.discriminator_hidden);
        read(t, "leaky_slope", c.train.leaky_slope);
        read(t, "history_eval_cap", c.train.history_eval_cap);
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        read(s, "kind", c.sweep.kind);
        read(s, "methods", c.sweep.methods);
        read(s, "target_grid", c.sweep.target_grid);
        read(s, "source_grid", c.sweep.source_grid);
        read(s, "fixed_target_fraction", c.sweep.fixed_target_fraction);
        read(s, "jobs", c.sweep.jobs);
        read(s, "bec_use_class_covariates", c.sweep.bec_use_class_covariates);
        read(s, "probe_cap", c.sweep.probe_cap);
        read(s, "mmd_cap", c.sweep.mmd_cap);
    }
    return c;
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

RunConfig run_config_from_json_text(const std::string& text) {
    json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw ConfigError("config: invalid JSON");
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    return from_json(j);
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return run_config_from_json_text(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& key_eq_value) {
    const size_t eq = key_eq_value.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("--set expects key=value, got '" + key_eq_value + "'");
    }
    const std::string key = key_eq_value.substr(0, eq);
    const std::string value = key_eq_value.substr(eq + 1);

    json j = to_json(cfg);
    json* node = &j;
    size_t start = 0;
    std::string leaf;
    while (true) {
        const size_t dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
        if (!node->contains(part)) throw ConfigError("config: unknown key '" + key + "'");
        if (dot == std::string::npos) {
            leaf = part;
            break;
        }
        node = &node->at(part);
        start = dot + 1;
    }

    json& slot = node->at(leaf);
    json parsed = json::parse(value, nullptr, false);
    if (slot.is_string()) {
        slot = value;
    } else if (!parsed.is_discarded()) {
        slot = parsed;
    } else {
        throw ConfigError("config: cannot parse value '" + value + "' for key '" + key + "'");
    }
    cfg = from_json(j);
}

std::string run_config_to_json_text(const RunConfig& cfg) { return to_json(cfg).dump(2); }

HarnessConfig harness_config_from(const RunConfig& cfg) {
    HarnessConfig h;
    h.train = cfg.train;
    h.seeds = cfg.seeds;
    if (!cfg.sweep.target_grid.empty()) h.target_grid = cfg.sweep.target_grid;
    if (!cfg.sweep.source_grid.empty()) h.source_grid = cfg.sweep.source_grid;
    h.fixed_target_fraction = cfg.sweep.fixed_target_fraction;
    h.jobs = cfg.sweep.jobs;
    h.bec_use_class_covariates = cfg.sweep.bec_use_class_covariates;
    h.probe_cap = cfg.sweep.probe_cap;
    h.mmd_cap = cfg.sweep.mmd_cap;
    h.out_dir = cfg.paths.out_dir;
    return h;
}

std::vector<MethodId> sweep_methods_from(const RunConfig& cfg) {
    if (cfg.sweep.methods.empty()) return all_methods();
    std::vector<MethodId> out;
    for (const auto& name : cfg.sweep.methods) out.push_back(parse_method(name));
    return out;
}

}  // namespace domadapt
