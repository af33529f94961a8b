#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "domadapt/common.hpp"
#include "domadapt/tensor.hpp"

namespace domadapt {

enum class Domain { source, target };
std::string to_string(Domain d);

struct ExpressionMatrix {
    int n = 0;  // samples
    int g = 0;  // genes
    std::vector<double> values;  // row-major n x g
    std::vector<std::string> sample_ids;
    std::vector<std::string> gene_ids;

    double at(int i, int j) const { return values[size_t(i) * g + j]; }
    double& at(int i, int j) { return values[size_t(i) * g + j]; }
};

struct LabeledDataset {
    ExpressionMatrix matrix;
    std::vector<int> labels;
    std::vector<std::string> class_names;
    Domain domain_tag = Domain::source;

    int num_samples() const { return matrix.n; }
    int num_genes() const { return matrix.g; }
    int num_classes() const { return int(class_names.size()); }

    // ids unique, labels in range, every class present, all values finite
    void validate() const;

    LabeledDataset subset(const std::vector<int>& rows) const;
    Tensor features() const;
    Tensor features(const std::vector<int>& rows) const;
    std::vector<int> labels_at(const std::vector<int>& rows) const;
};

// Desk-scale stand-in for the real cohorts: latent Gaussian class clusters
// mapped through a shared linear map, with the target domain shifted by
// per-gene offset/scale and a cubic warp on a subset of genes.
struct SyntheticConfig {
    int num_genes = 200;
    int num_classes = 5;
    int latent_dim = 10;
    int samples_per_domain = 2000;
    double class_separation = 1.3;
    double additive_shift = 1.0;
    double multiplicative_shift = 0.3;
    double warp_fraction = 0.3;
    double warp_strength = 0.1;
    double noise_std = 0.5;
    uint64_t seed = 7;

    void validate() const;
};

// Matrix file: first row "sample_id,<gene ids...>", one row per sample;
// comma- or tab-separated. Label file: header "sample_id,label".
LabeledDataset load_matrix(const std::string& matrix_path, const std::string& label_path);
void save_matrix(const LabeledDataset& ds, const std::string& matrix_path,
                 const std::string& label_path);

// Restrict both datasets to the sorted intersection of their gene ids.
std::pair<LabeledDataset, LabeledDataset> align_genes(const LabeledDataset& a,
                                                      const LabeledDataset& b);

struct PreprocessStats {
    std::vector<double> mean;
    std::vector<double> stdev;  // floored at 1e-8
    bool log_transform = true;
};

struct PreprocessOptions {
    bool log_transform = true;
};

// log2(x+1) (optional) then per-gene z-score. With reference stats the
// stored means/stds are reused instead of recomputed.
std::pair<LabeledDataset, PreprocessStats> preprocess(
    const LabeledDataset& ds, const std::optional<PreprocessStats>& reference = std::nullopt,
    const PreprocessOptions& opts = {});

struct SplitResult {
    LabeledDataset train, val, test;
};

// Per-class counts within +-1 of proportional allocation; every class lands
// in every split at least once.
SplitResult stratified_split(const LabeledDataset& ds, std::array<double, 3> fractions,
                             uint64_t seed);

// Stratified, per-class ceil rounding; prefixes of a seed-fixed permutation,
// so smaller fractions are subsets of larger ones under the same seed.
LabeledDataset subsample_fraction(const LabeledDataset& ds, double fraction, uint64_t seed);

std::pair<LabeledDataset, LabeledDataset> generate_synthetic(const SyntheticConfig& cfg);

}  // namespace domadapt
