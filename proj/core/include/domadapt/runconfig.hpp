#pragma once

#include <string>
#include <vector>

#include "domadapt/adapt.hpp"
#include "domadapt/data.hpp"
#include "domadapt/eval.hpp"

namespace domadapt {

// Everything a command needs, mirrored one-to-one by the JSON config file.
// Unknown keys are rejected; precedence is CLI --set > file > defaults.
struct RunConfig {
    uint64_t seed = 1;
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};

    struct Paths {
        std::string source_matrix;
        std::string source_labels;
        std::string target_matrix;
        std::string target_labels;
        std::string out_dir;
        std::string checkpoint;
    } paths;

    SyntheticConfig synthetic;
    PreprocessOptions preprocess;

    struct Split {
        double train = 0.8;
        double val = 0.1;
        double test = 0.1;
        uint64_t seed = 11;
    } split;

    std::string method = "dann_sup";
    TrainConfig train;

    struct Sweep {
        std::string kind = "target";
        std::vector<std::string> methods;  // empty = all eight
        std::vector<double> target_grid;   // empty = paper grid
        std::vector<double> source_grid;
        double fixed_target_fraction = 0.01;
        int jobs = 1;
        bool bec_use_class_covariates = false;
        int probe_cap = 1000;
        int mmd_cap = 512;
    } sweep;
};

RunConfig default_run_config();

// Parses the JSON file; any key not in the schema is an error naming it.
RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_json_text(const std::string& text);

// "train.lambda=0.5" style dotted override.
void apply_override(RunConfig& cfg, const std::string& key_eq_value);

std::string run_config_to_json_text(const RunConfig& cfg);

HarnessConfig harness_config_from(const RunConfig& cfg);
std::vector<MethodId> sweep_methods_from(const RunConfig& cfg);

}  // namespace domadapt
