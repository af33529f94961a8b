#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "domadapt/tensor.hpp"

namespace domadapt {

struct EncoderConfig {
    int input_dim = 0;
    std::vector<int> hidden{256, 256, 256, 256};
    bool use_batchnorm = true;
};

struct ClassifierConfig {
    int latent_dim = 256;
    std::vector<int> hidden{128, 64};
    int num_classes = 0;
    bool use_batchnorm = true;
};

enum class DiscriminatorMode { dann, wasserstein };

struct DiscriminatorConfig {
    int latent_dim = 256;
    std::vector<int> hidden{256, 128, 64};
    DiscriminatorMode mode = DiscriminatorMode::dann;
    double leaky_slope = 0.2;
};

enum class Variant { dann_unsup, dann_sup, wass_unsup, wass_sup };

bool is_supervised(Variant v);
bool is_wasserstein(Variant v);
std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

enum class Activation { none, relu, leaky };

struct LinearLayer {
    Parameter W;  // in x out
    Parameter b;  // 1 x out
};

struct BatchNormLayer {
    Parameter gamma;  // 1 x n
    Parameter beta;   // 1 x n
    BatchNormState state;
    double momentum = 0.1;
    double eps = 1e-5;
};

struct DenseBlock {
    LinearLayer lin;
    std::optional<BatchNormLayer> bn;
    Activation act = Activation::none;
    double slope = 0.2;

    Tensor forward(const Tensor& x, bool training);
};

struct Mlp {
    std::vector<DenseBlock> blocks;

    Tensor forward(const Tensor& x, bool training);
    void collect_params(std::vector<Parameter*>& out);
    int input_dim() const;
    int output_dim() const;
};

struct ModelConfig {
    EncoderConfig encoder;
    ClassifierConfig classifier;
    DiscriminatorConfig discriminator;
    uint64_t seed = 0;
    std::optional<Variant> variant;
};

// The (E, C, D) triple. The discriminator emits a raw scalar per sample in
// both modes; the DANN loss applies the sigmoid itself.
class AdaptationModel {
  public:
    AdaptationModel() = default;

    Tensor encode(const Tensor& x, bool training);
    Tensor classify(const Tensor& z, bool training);
    Tensor discriminate(const Tensor& z);

    std::vector<Parameter*> encoder_params();
    std::vector<Parameter*> classifier_params();
    std::vector<Parameter*> discriminator_params();
    std::vector<Parameter*> all_params();

    const ModelConfig& config() const { return cfg_; }
    std::optional<Variant> variant() const { return cfg_.variant; }

    Mlp encoder;
    Mlp classifier;
    Mlp discriminator;

  private:
    friend AdaptationModel build_model(const EncoderConfig&, const ClassifierConfig&,
                                       const DiscriminatorConfig&, uint64_t,
                                       std::optional<Variant>);
    ModelConfig cfg_;
};

// Deterministic in seed: He-uniform weights, zero biases, gamma=1/beta=0.
AdaptationModel build_model(const EncoderConfig& enc, const ClassifierConfig& cls,
                            const DiscriminatorConfig& dis, uint64_t seed,
                            std::optional<Variant> variant = std::nullopt);

int64_t parameter_count(const AdaptationModel& model);

std::vector<int> argmax_rows(const Tensor& logits);

// Flat copies of every parameter and batch-norm running stat, for epoch
// snapshots during model selection.
struct ParamSnapshot {
    std::vector<std::vector<double>> values;
    std::vector<std::vector<double>> running;
};
ParamSnapshot snapshot_params(AdaptationModel& model);
void restore_params(AdaptationModel& model, const ParamSnapshot& snap);

// Checkpoint file: magic + JSON header (configs + named buffer index) +
// raw little-endian doubles. Keys look like "encoder.layer0.W".
void save_checkpoint(const AdaptationModel& model, const std::string& path,
                     const std::string& method_name = "");
AdaptationModel load_checkpoint(const std::string& path, std::string* method_name = nullptr);

}  // namespace domadapt
