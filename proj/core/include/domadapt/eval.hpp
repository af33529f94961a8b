#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "domadapt/adapt.hpp"
#include "domadapt/bec.hpp"
#include "domadapt/data.hpp"

namespace domadapt {

enum class MethodId {
    target_only,
    no_adaptation,
    combat,
    limma,
    dann_unsup,
    dann_sup,
    wass_unsup,
    wass_sup,
};

std::string to_string(MethodId m);
MethodId parse_method(const std::string& name);
const std::vector<MethodId>& all_methods();

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

struct ProbeConfig {
    int hidden = 64;
    int steps = 200;
    double train_fraction = 0.7;
    double lr = 1e-2;
};

// Trains a fresh 2-layer probe to tell domains apart from representations;
// returns held-out accuracy (0.5 ~ aligned, 1.0 ~ separable).
double domain_probe(const Tensor& z_s, const Tensor& z_t, uint64_t seed,
                    const ProbeConfig& cfg = {});

// Unbiased MMD^2 with a Gaussian kernel; default bandwidth is the median
// pairwise distance of the pooled sample (floored at 1e-6).
double mmd_rbf(const Tensor& z_s, const Tensor& z_t,
               std::optional<double> bandwidth = std::nullopt);

struct Pca2d {
    Tensor projection;  // n x 2
    Tensor components;  // d x 2, orthonormal columns
};
Pca2d pca2d(const Tensor& z);

// CSV with columns sample_id, domain, class, z_1..z_k (+ pc_1, pc_2).
void export_embeddings(AdaptationModel& model, const std::vector<const LabeledDataset*>& datasets,
                       const std::string& path, bool with_pca = false);

// Latents under the dataset's own batch statistics (the representation the
// adversarial alignment operates on); running stats are restored afterwards.
Tensor encode_with_batch_stats(AdaptationModel& model, const LabeledDataset& ds);

// ---- experiment harness -------------------------------------------------------

struct HarnessConfig {
    TrainConfig train;
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    // target proportions p: 0.01..0.20 step 0.01
    std::vector<double> target_grid;
    // source proportions q: 0.001..0.01 step 0.001, then 0.02
    std::vector<double> source_grid;
    double fixed_target_fraction = 0.01;  // p during the source sweep
    int jobs = 1;
    bool bec_use_class_covariates = false;
    int probe_cap = 1000;  // samples per domain fed to the probe
    int mmd_cap = 512;
    std::string out_dir;   // when set, per-cell markers enable resume
    bool resume = true;

    HarnessConfig();
};

std::vector<double> default_target_grid();
std::vector<double> default_source_grid();
std::vector<double> extended_source_grid();

struct CellResult {
    std::string experiment;
    MethodId method = MethodId::target_only;
    double grid_value = 1.0;
    uint64_t seed = 0;
    double accuracy = 0;
    double domain_probe = 0;
    double mmd = 0;
    double seconds = 0;
    std::string error;  // empty on success
};

struct SweepResult {
    std::string experiment;
    std::vector<MethodId> methods;
    std::vector<double> grid;
    std::vector<uint64_t> seeds;
    std::vector<CellResult> cells;  // sorted by (method, grid, seed)
};

// Prepared, standardized splits for both domains. Source-train statistics
// are frozen and applied everywhere.
struct DataSplits {
    SplitResult source;
    SplitResult target;
};

DataSplits prepare_splits(const LabeledDataset& source, const LabeledDataset& target,
                          std::array<double, 3> fractions, uint64_t split_seed,
                          const PreprocessOptions& pre = {});

// Number of cells each protocol will run (methods x grid x seeds).
int64_t planned_cells(const std::vector<MethodId>& methods, const std::vector<double>& grid,
                      const std::vector<uint64_t>& seeds);

SweepResult run_full_data(const std::vector<MethodId>& methods, const DataSplits& data,
                          const HarnessConfig& cfg);
SweepResult run_target_sweep(const std::vector<MethodId>& methods, const DataSplits& data,
                             const HarnessConfig& cfg);
SweepResult run_source_sweep(const std::vector<MethodId>& methods, const DataSplits& data,
                             const HarnessConfig& cfg);

// Single harness cell, exposed for tests and the train command.
CellResult run_cell(const std::string& experiment, MethodId method, double grid_value,
                    uint64_t seed, const DataSplits& data, const HarnessConfig& cfg);

// results.csv + summary.csv + manifest.json under dir.
void write_report(const SweepResult& result, const std::string& dir,
                  const std::string& manifest_extra_json = "");

SweepResult load_results_csv(const std::string& path);

}  // namespace domadapt
