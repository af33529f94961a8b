#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "commands.hpp"
#include "domadapt/common.hpp"

using namespace domadapt;

int main(int argc, char** argv) {
    CLI::App app{"domadapt: adversarial domain adaptation for tabular expression data"};
    app.require_subcommand(1);

    cli::CommonOpts common;
    std::string out_dir, kind = "target", checkpoint, method, results_path, out_path;
    std::vector<std::string> data_pairs;
    bool force = false, pca = false, resume = true;
    std::string methods_csv, seeds_csv;
    int jobs = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", common.config_path, "JSON config file");
        cmd->add_option("--set", common.sets,
                        "override a config key, e.g. --set train.epochs=50")
            ->take_all();
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic source/target pair");
    add_common(synth);
    synth->add_option("--out", out_dir, "output directory (defaults to paths.out_dir)");
    synth->add_flag("--force", force, "overwrite a non-empty output directory")
        ->capture_default_str();

    CLI::App* train = app.add_subcommand("train", "train one method, write checkpoint + history");
    add_common(train);
    train->add_option("--method", method, "method to train (defaults to config 'method')");

    CLI::App* sweep = app.add_subcommand("sweep", "run an experiment protocol");
    add_common(sweep);
    sweep->add_option("--kind", kind, "target|source|full")->capture_default_str();
    sweep->add_option("--methods", methods_csv, "comma-separated method subset");
    sweep->add_option("--seeds", seeds_csv, "comma-separated seed list");
    sweep->add_option("--jobs", jobs, "parallel cells (default from config)");
    sweep->add_flag("--resume,!--no-resume", resume, "reuse completed cell markers")
        ->capture_default_str();

    CLI::App* embed = app.add_subcommand("embed", "export latent embeddings for a checkpoint");
    add_common(embed);
    embed->add_option("--checkpoint", checkpoint, "model checkpoint path")->required();
    embed->add_option("--data", data_pairs, "matrix.csv,labels.csv (repeatable)")
        ->required()
        ->take_all();
    embed->add_option("--out", out_path, "output CSV path")->required();
    embed->add_flag("--pca", pca, "append pc_1, pc_2 columns")->capture_default_str();

    CLI::App* bec = app.add_subcommand("bec", "apply a batch-effect correction to input files");
    add_common(bec);
    bec->add_option("--method", method, "combat|limma")->required();
    bec->add_option("--data", data_pairs, "matrix.csv,labels.csv per batch (repeatable)")
        ->required()
        ->take_all();
    bec->add_option("--out", out_dir, "output directory")->required();

    CLI::App* report = app.add_subcommand("report", "recompute summary.csv from a results.csv");
    report->add_option("--results", results_path, "results.csv path")->required();
    report->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;  // usage error
    }

    try {
        RunConfig cfg = cli::resolve_config(common);
        if (sweep->parsed()) {
            if (!methods_csv.empty()) {
                cfg.sweep.methods.clear();
                std::stringstream ss(methods_csv);
                std::string tok;
                while (std::getline(ss, tok, ',')) cfg.sweep.methods.push_back(tok);
            }
            if (!seeds_csv.empty()) {
                cfg.seeds.clear();
                std::stringstream ss(seeds_csv);
                std::string tok;
                while (std::getline(ss, tok, ',')) cfg.seeds.push_back(std::stoull(tok));
            }
            if (jobs > 0) cfg.sweep.jobs = jobs;
        }
        if (!method.empty() && (train->parsed())) cfg.method = method;

        if (synth->parsed()) {
            cli::cmd_synth(cfg, out_dir, force);
        } else if (train->parsed()) {
            cli::cmd_train(cfg);
        } else if (sweep->parsed()) {
            cli::cmd_sweep(cfg, kind, resume);
        } else if (embed->parsed()) {
            cli::cmd_embed(cfg, checkpoint, data_pairs, out_path, pca);
        } else if (bec->parsed()) {
            cli::cmd_bec(cfg, method, data_pairs, out_dir);
        } else if (report->parsed()) {
            cli::cmd_report(results_path, out_dir);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
