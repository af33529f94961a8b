#pragma once

#include <string>
#include <vector>

#include "domadapt/runconfig.hpp"

namespace domadapt::cli {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;  // key=value overrides
};

RunConfig resolve_config(const CommonOpts& opts);

void cmd_synth(const RunConfig& cfg, const std::string& out_dir, bool force);
void cmd_train(const RunConfig& cfg);
void cmd_sweep(const RunConfig& cfg, const std::string& kind, bool resume);
void cmd_embed(const RunConfig& cfg, const std::string& checkpoint,
               const std::vector<std::string>& data_pairs, const std::string& out_path, bool pca);
void cmd_bec(const RunConfig& cfg, const std::string& method,
             const std::vector<std::string>& data_pairs, const std::string& out_dir);
void cmd_report(const std::string& results_path, const std::string& out_dir);

}  // namespace domadapt::cli
