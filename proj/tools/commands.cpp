#include "commands.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "domadapt/bec.hpp"
#include "domadapt/eval.hpp"

namespace domadapt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

RunConfig resolve_config(const CommonOpts& opts) {
    RunConfig cfg =
        opts.config_path.empty() ? default_run_config() : load_run_config(opts.config_path);
    for (const auto& kv : opts.sets) apply_override(cfg, kv);
    return cfg;
}

namespace {

struct LoadedPair {
    LabeledDataset source;
    LabeledDataset target;
};

bool has_source_paths(const RunConfig& cfg) {
    return !cfg.paths.source_matrix.empty() && !cfg.paths.source_labels.empty();
}

bool has_target_paths(const RunConfig& cfg) {
    return !cfg.paths.target_matrix.empty() && !cfg.paths.target_labels.empty();
}

// Datasets from the configured paths, or the synthetic generator when no
// paths are given. Synthetic values are signed, so the log step is forced
// off for them.
LoadedPair load_domains(RunConfig& cfg) {
    if (has_source_paths(cfg) != has_target_paths(cfg)) {
        throw ConfigError("need both source and target paths (or neither, for synthetic data)");
    }
    if (!has_source_paths(cfg)) {
        if (cfg.preprocess.log_transform) {
            std::cerr << "note: synthetic data is signed, disabling preprocess.log_transform\n";
            cfg.preprocess.log_transform = false;
        }
        auto [src, tgt] = generate_synthetic(cfg.synthetic);
        return {std::move(src), std::move(tgt)};
    }
    LoadedPair out;
    out.source = load_matrix(cfg.paths.source_matrix, cfg.paths.source_labels);
    out.source.domain_tag = Domain::source;
    out.target = load_matrix(cfg.paths.target_matrix, cfg.paths.target_labels);
    out.target.domain_tag = Domain::target;
    return out;
}

std::array<double, 3> split_fractions(const RunConfig& cfg) {
    return {cfg.split.train, cfg.split.val, cfg.split.test};
}

std::string require_out_dir(const RunConfig& cfg) {
    if (cfg.paths.out_dir.empty()) throw ConfigError("paths.out_dir must be set");
    return cfg.paths.out_dir;
}

void write_stats_sidecar(const PreprocessStats& stats, const std::string& path) {
    json j;
    j["log_transform"] = stats.log_transform;
    j["mean"] = stats.mean;
    j["stdev"] = stats.stdev;
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path);
    out << j.dump() << '\n';
}

std::optional<PreprocessStats> read_stats_sidecar(const std::string& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    PreprocessStats stats;
    stats.log_transform = j.at("log_transform").get<bool>();
    stats.mean = j.at("mean").get<std::vector<double>>();
    stats.stdev = j.at("stdev").get<std::vector<double>>();
    return stats;
}

}  // namespace

void cmd_synth(const RunConfig& cfg, const std::string& out_dir, bool force) {
    fs::path dir(out_dir.empty() ? require_out_dir(cfg) : out_dir);
    if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
        throw ConfigError("synth: output directory " + dir.string() +
                          " is not empty (use --force to overwrite)");
    }
    fs::create_directories(dir);

    auto [source, target] = generate_synthetic(cfg.synthetic);
    save_matrix(source, (dir / "source_matrix.csv").string(), (dir / "source_labels.csv").string());
    save_matrix(target, (dir / "target_matrix.csv").string(), (dir / "target_labels.csv").string());

    json manifest;
    manifest["generator"] = "synthetic";
    manifest["config"] = json::parse(run_config_to_json_text(cfg)).at("synthetic");
    manifest["files"] = {"source_matrix.csv", "source_labels.csv", "target_matrix.csv",
                         "target_labels.csv"};
    std::ofstream mf(dir / "manifest.json");
    mf << manifest.dump(2) << '\n';
    std::cout << "synth: wrote 4 data files + manifest to " << dir.string() << "\n";
}

void cmd_train(const RunConfig& cfg_in) {
    RunConfig cfg = cfg_in;
    fs::path dir(require_out_dir(cfg));
    fs::create_directories(dir);
    const MethodId method = parse_method(cfg.method);

    if (method == MethodId::target_only && has_source_paths(cfg)) {
        std::cerr << "warning: method=target_only ignores source paths\n";
    }

    FitResult result;
    PreprocessStats stats;

    if (method == MethodId::target_only && !has_source_paths(cfg) && has_target_paths(cfg)) {
        // no source domain involved: standardize with target-train statistics
        LabeledDataset target = load_matrix(cfg.paths.target_matrix, cfg.paths.target_labels);
        target.domain_tag = Domain::target;
        SplitResult split = stratified_split(target, split_fractions(cfg),
                                             mix_seed(cfg.split.seed, "target"));
        auto [train_ds, st] = preprocess(split.train, std::nullopt, cfg.preprocess);
        stats = st;
        LabeledDataset val = preprocess(split.val, stats).first;
        LabeledDataset test = preprocess(split.test, stats).first;
        result = train_target_only(train_ds, cfg.train, &val);
        std::cout << "train: target test accuracy "
                  << evaluate_accuracy(result.model, test) << "\n";
    } else {
        LoadedPair pair = load_domains(cfg);
        DataSplits data = prepare_splits(pair.source, pair.target, split_fractions(cfg),
                                         cfg.split.seed, cfg.preprocess);
        // keep the sidecar consistent with what prepare_splits applied
        stats = preprocess(stratified_split(align_genes(pair.source, pair.target).first,
                                            split_fractions(cfg), mix_seed(cfg.split.seed, "source"))
                               .train,
                           std::nullopt, cfg.preprocess)
                    .second;

        switch (method) {
            case MethodId::target_only:
                result = train_target_only(data.target.train, cfg.train, &data.target.val);
                break;
            case MethodId::no_adaptation:
                result = train_no_adaptation(data.source.train, data.target.train, cfg.train,
                                             &data.source.val, &data.target.val);
                break;
            case MethodId::combat:
            case MethodId::limma: {
                std::vector<const LabeledDataset*> parts{
                    &data.source.train, &data.source.val, &data.source.test,
                    &data.target.train, &data.target.val, &data.target.test};
                auto corrected = bec_correct_parts(
                    method == MethodId::combat ? BecMethod::combat : BecMethod::limma, parts,
                    cfg.sweep.bec_use_class_covariates);
                LabeledDataset pooled = pool_datasets({&corrected[0], &corrected[3]});
                result = fit_classifier(pooled, cfg.train, &corrected[4]);
                break;
            }
            default: {
                Variant variant = parse_variant(cfg.method);
                result = fit(variant, data.source.train, data.target.train, cfg.train,
                             &data.source.val, &data.target.val);
                break;
            }
        }
        std::cout << "train: target test accuracy "
                  << evaluate_accuracy(result.model, data.target.test) << "\n";
    }

    save_checkpoint(result.model, (dir / "model.ckpt").string(), cfg.method);
    result.history.to_csv((dir / "history.csv").string());
    write_stats_sidecar(stats, (dir / "preprocess_stats.json").string());
    std::cout << "train: wrote model.ckpt, history.csv (" << result.history.records.size()
              << " epochs), preprocess_stats.json to " << dir.string() << "\n";
}

void cmd_sweep(const RunConfig& cfg_in, const std::string& kind, bool resume) {
    RunConfig cfg = cfg_in;
    const std::string out_dir = require_out_dir(cfg);
    LoadedPair pair = load_domains(cfg);
    DataSplits data =
        prepare_splits(pair.source, pair.target, split_fractions(cfg), cfg.split.seed,
                       cfg.preprocess);

    HarnessConfig harness = harness_config_from(cfg);
    harness.resume = resume;
    std::vector<MethodId> methods = sweep_methods_from(cfg);

    SweepResult result;
    if (kind == "full") {
        result = run_full_data(methods, data, harness);
    } else if (kind == "target") {
        result = run_target_sweep(methods, data, harness);
    } else if (kind == "source") {
        result = run_source_sweep(methods, data, harness);
    } else {
        throw ConfigError("sweep: kind must be one of target|source|full, got '" + kind + "'");
    }

    write_report(result, out_dir, run_config_to_json_text(cfg));
    int failed = 0;
    for (const auto& c : result.cells) failed += !c.error.empty();
    std::cout << "sweep: " << result.cells.size() << " cells (" << failed
              << " failed) -> " << out_dir << "/results.csv\n";
}

void cmd_embed(const RunConfig& cfg, const std::string& checkpoint,
               const std::vector<std::string>& data_pairs, const std::string& out_path, bool pca) {
    std::string method;
    AdaptationModel model = load_checkpoint(checkpoint, &method);

    auto stats = read_stats_sidecar(
        (fs::path(checkpoint).parent_path() / "preprocess_stats.json").string());

    std::vector<LabeledDataset> datasets;
    for (const auto& pair : data_pairs) {
        const size_t comma = pair.find(',');
        if (comma == std::string::npos) {
            throw ConfigError("embed: --data expects matrix.csv,labels.csv");
        }
        LabeledDataset ds = load_matrix(pair.substr(0, comma), pair.substr(comma + 1));
        if (datasets.size() == 1) ds.domain_tag = Domain::target;
        if (ds.num_genes() != model.config().encoder.input_dim) {
            throw DataError("embed: dataset has " + std::to_string(ds.num_genes()) +
                            " genes but checkpoint expects " +
                            std::to_string(model.config().encoder.input_dim));
        }
        if (stats) ds = preprocess(ds, stats).first;
        datasets.push_back(std::move(ds));
    }
    if (datasets.empty()) throw ConfigError("embed: at least one --data pair required");

    std::vector<const LabeledDataset*> ptrs;
    for (const auto& ds : datasets) ptrs.push_back(&ds);
    export_embeddings(model, ptrs, out_path, pca);
    std::cout << "embed: wrote " << out_path << " (method " << method << ")\n";
}

void cmd_bec(const RunConfig& cfg, const std::string& method,
             const std::vector<std::string>& data_pairs, const std::string& out_dir) {
    BecMethod bec;
    if (method == "combat") {
        bec = BecMethod::combat;
    } else if (method == "limma") {
        bec = BecMethod::limma;
    } else {
        throw ConfigError("bec: method must be combat or limma, got '" + method + "'");
    }
    if (data_pairs.empty()) throw ConfigError("bec: at least one --data pair required");

    std::vector<LabeledDataset> inputs;
    for (const auto& pair : data_pairs) {
        const size_t comma = pair.find(',');
        if (comma == std::string::npos) throw ConfigError("bec: --data expects matrix.csv,labels.csv");
        inputs.push_back(load_matrix(pair.substr(0, comma), pair.substr(comma + 1)));
    }

    // each input file is one batch
    const int g = inputs[0].num_genes();
    int n = 0;
    for (const auto& ds : inputs) {
        if (ds.num_genes() != g) throw DataError("bec: inputs have different gene counts");
        n += ds.num_samples();
    }
    DenseMatrix X(n, g);
    BatchDesign design;
    design.num_batches = int(inputs.size());
    int row = 0;
    for (size_t b = 0; b < inputs.size(); ++b) {
        for (int i = 0; i < inputs[b].num_samples(); ++i, ++row) {
            std::copy_n(inputs[b].matrix.values.begin() + size_t(i) * g, g,
                        X.v.begin() + size_t(row) * g);
            design.batch.push_back(int(b));
        }
    }

    DenseMatrix corrected;
    if (inputs.size() == 1) {
        corrected = X;  // single batch: nothing to correct
    } else if (bec == BecMethod::combat) {
        corrected = combat_fit_adjust(X, design).corrected;
    } else {
        corrected = limma_remove_batch(X, design).corrected;
    }

    fs::path dir(out_dir);
    fs::create_directories(dir);
    row = 0;
    for (size_t b = 0; b < inputs.size(); ++b) {
        LabeledDataset out = inputs[b];
        for (int i = 0; i < out.num_samples(); ++i, ++row) {
            std::copy_n(corrected.v.begin() + size_t(row) * g, g,
                        out.matrix.values.begin() + size_t(i) * g);
        }
        const std::string stem = "corrected_" + std::to_string(b);
        save_matrix(out, (dir / (stem + "_matrix.csv")).string(),
                    (dir / (stem + "_labels.csv")).string());
    }
    std::cout << "bec: wrote " << inputs.size() << " corrected matrices to " << dir.string()
              << "\n";
}

void cmd_report(const std::string& results_path, const std::string& out_dir) {
    SweepResult result = load_results_csv(results_path);
    write_report(result, out_dir);
    std::cout << "report: regenerated results.csv + summary.csv in " << out_dir << "\n";
}

}  // namespace domadapt::cli
