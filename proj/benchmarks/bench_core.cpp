#include <benchmark/benchmark.h>

#include "domadapt/adapt.hpp"
#include "domadapt/bec.hpp"
#include "domadapt/data.hpp"

using namespace domadapt;

namespace {

Tensor random_tensor(int m, int n, uint64_t seed) {
    auto rng = make_rng(seed);
    return Tensor::randn({m, n}, rng);
}

LabeledDataset clustered(int n, int classes, int genes, uint64_t seed) {
    auto rng = make_rng(seed);
    std::normal_distribution<double> unit(0, 1);
    LabeledDataset ds;
    ds.matrix.n = n;
    ds.matrix.g = genes;
    ds.matrix.values.resize(size_t(n) * genes);
    for (int j = 0; j < genes; ++j) ds.matrix.gene_ids.push_back("g" + std::to_string(j));
    for (int c = 0; c < classes; ++c) ds.class_names.push_back("c" + std::to_string(c));
    for (int i = 0; i < n; ++i) {
        const int cls = i % classes;
        ds.labels.push_back(cls);
        ds.matrix.sample_ids.push_back("s" + std::to_string(i));
        for (int j = 0; j < genes; ++j) {
            ds.matrix.at(i, j) = 2.0 * (cls == j % classes ? 1.0 : 0.0) + unit(rng);
        }
    }
    return ds;
}

}  // namespace

static void BM_matmul(benchmark::State& state) {
    const int n = int(state.range(0));
    Tensor a = random_tensor(64, n, 1);
    Tensor b = random_tensor(n, n, 2);
    for (auto _ : state) {
        NoGradGuard ng;
        Tensor c = matmul(a, b);
        benchmark::DoNotOptimize(const_cast<double*>(c.data().data()));
    }
    state.SetItemsProcessed(int64_t(state.iterations()) * 64 * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_affine_relu_backward(benchmark::State& state) {
    const int n = int(state.range(0));
    Tensor x = random_tensor(64, n, 3);
    Parameter w(random_tensor(n, n, 4));
    Parameter b(random_tensor(1, n, 5));
    std::vector<Parameter*> ps{&w, &b};
    for (auto _ : state) {
        Tape::Checkpoint cp;
        Tensor loss = mean(square(relu(affine(x, w.value(), b.value()))));
        zero_grads(ps);
        backward(loss);
        benchmark::DoNotOptimize(w.grad().data());
    }
}
BENCHMARK(BM_affine_relu_backward)->Arg(128)->Arg(256);

static void BM_train_step(benchmark::State& state) {
    const bool wasserstein = state.range(0) == 1;
    TrainConfig cfg;
    cfg.batch_size = 64;
    EncoderConfig enc{200, cfg.encoder_hidden, true};
    ClassifierConfig cls{256, cfg.classifier_hidden, 5, true};
    DiscriminatorConfig dis{256, cfg.discriminator_hidden,
                            wasserstein ? DiscriminatorMode::wasserstein : DiscriminatorMode::dann,
                            0.2};
    AdaptationModel model = build_model(enc, cls, dis, 1,
                                        wasserstein ? Variant::wass_sup : Variant::dann_sup);

    auto rng = make_rng(7);
    DomainBatch batch;
    batch.x_s = Tensor::randn({64, 200}, rng);
    batch.x_t = Tensor::randn({64, 200}, rng);
    std::vector<int> labels(64, 0);
    for (int i = 0; i < 64; ++i) labels[size_t(i)] = i % 5;
    batch.y_s = labels;
    batch.y_t = labels;

    auto step_rng = make_rng(8);
    for (auto _ : state) {
        StepMetrics m = train_step(model, batch, cfg, step_rng);
        benchmark::DoNotOptimize(m.cls_loss);
    }
}
BENCHMARK(BM_train_step)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_combat(benchmark::State& state) {
    const int n = int(state.range(0));
    LabeledDataset a = clustered(n / 2, 3, 100, 11);
    LabeledDataset b = clustered(n / 2, 3, 100, 12);
    b.domain_tag = Domain::target;
    for (auto& v : b.matrix.values) v += 1.5;
    for (auto _ : state) {
        auto parts = bec_correct_parts(BecMethod::combat, {&a, &b}, false);
        benchmark::DoNotOptimize(parts[0].matrix.values.data());
    }
}
BENCHMARK(BM_combat)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

static void BM_synthetic(benchmark::State& state) {
    SyntheticConfig cfg;
    cfg.samples_per_domain = int(state.range(0));
    for (auto _ : state) {
        auto pair = generate_synthetic(cfg);
        benchmark::DoNotOptimize(pair.first.matrix.values.data());
    }
}
BENCHMARK(BM_synthetic)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
    ::benchmark::Initialize(&argc, argv);
    if (::benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    ::benchmark::RunSpecifiedBenchmarks();
    ::benchmark::Shutdown();
    return 0;
}
