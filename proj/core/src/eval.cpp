#include "domadapt/eval.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace domadapt {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(MethodId m) {
    switch (m) {
        case MethodId::target_only: return "target_only";
        case MethodId::no_adaptation: return "no_adaptation";
        case MethodId::combat: return "combat";
        case MethodId::limma: return "limma";
        case MethodId::dann_unsup: return "dann_unsup";
        case MethodId::dann_sup: return "dann_sup";
        case MethodId::wass_unsup: return "wass_unsup";
        case MethodId::wass_sup: return "wass_sup";
    }
    return "?";
}

MethodId parse_method(const std::string& name) {
    for (MethodId m : all_methods()) {
        if (to_string(m) == name) return m;
    }
    throw ConfigError("unknown method: " + name);
}

const std::vector<MethodId>& all_methods() {
    static const std::vector<MethodId> methods{
        MethodId::target_only, MethodId::no_adaptation, MethodId::combat,  MethodId::limma,
        MethodId::dann_unsup,  MethodId::dann_sup,      MethodId::wass_unsup, MethodId::wass_sup};
    return methods;
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.empty()) throw DataError("accuracy: empty input");
    if (predictions.size() != labels.size()) throw DimensionError("accuracy: length mismatch");
    int correct = 0;
    for (size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == labels[i];
    return double(correct) / double(predictions.size());
}

// ---- domain probe -------------------------------------------------------------------

double domain_probe(const Tensor& z_s, const Tensor& z_t, uint64_t seed,
                    const ProbeConfig& cfg) {
    const int ns = z_s.rows(), nt = z_t.rows();
    if (ns < 20 || nt < 20) throw DataError("domain_probe: need at least 20 samples per domain");
    if (z_s.cols() != z_t.cols()) throw DimensionError("domain_probe: feature dims differ");
    const int k = z_s.cols();
    const int n = ns + nt;

    std::vector<int> order(size_t(n), 0);
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng(mix_seed(seed, "domain_probe"));
    std::shuffle(order.begin(), order.end(), rng);

    const int n_train = std::max(1, int(std::lround(cfg.train_fraction * n)));
    if (n_train >= n) throw DataError("domain_probe: no held-out samples");

    auto slice = [&](int from, int to, Tensor& X, std::vector<int>& y) {
        std::vector<double> buf(size_t(to - from) * k);
        y.clear();
        for (int r = from; r < to; ++r) {
            const int idx = order[size_t(r)];
            const bool is_target = idx >= ns;
            const auto src = is_target ? z_t.data().subspan(size_t(idx - ns) * k, size_t(k))
                                       : z_s.data().subspan(size_t(idx) * k, size_t(k));
            std::copy(src.begin(), src.end(), buf.begin() + size_t(r - from) * k);
            y.push_back(is_target ? 1 : 0);
        }
        X = Tensor::from_data({to - from, k}, std::move(buf));
    };

    Tensor x_train, x_test;
    std::vector<int> y_train, y_test;
    slice(0, n_train, x_train, y_train);
    slice(n_train, n, x_test, y_test);

    const double limit1 = std::sqrt(6.0 / k), limit2 = std::sqrt(6.0 / cfg.hidden);
    Parameter w1(Tensor::rand_uniform({k, cfg.hidden}, rng, -limit1, limit1));
    Parameter b1(Tensor::zeros({1, cfg.hidden}));
    Parameter w2(Tensor::rand_uniform({cfg.hidden, 2}, rng, -limit2, limit2));
    Parameter b2(Tensor::zeros({1, 2}));
    std::vector<Parameter*> params{&w1, &b1, &w2, &b2};

    AdamConfig adam;
    adam.lr = cfg.lr;
    for (int step = 0; step < cfg.steps; ++step) {
        Tape::Checkpoint cp;
        Tensor h = relu(affine(x_train, w1.value(), b1.value()));
        Tensor loss = softmax_cross_entropy(affine(h, w2.value(), b2.value()), y_train);
        zero_grads(params);
        backward(loss);
        adam_step(params, adam);
        zero_grads(params);
    }

    NoGradGuard ng;
    Tensor h = relu(affine(x_test, w1.value(), b1.value()));
    auto pred = argmax_rows(affine(h, w2.value(), b2.value()));
    return accuracy(pred, y_test);
}

// ---- MMD ------------------------------------------------------------------------------

double mmd_rbf(const Tensor& z_s, const Tensor& z_t, std::optional<double> bandwidth) {
    const int m = z_s.rows(), n = z_t.rows(), k = z_s.cols();
    if (m < 2 || n < 2) throw DataError("mmd_rbf: need at least 2 samples per set");
    if (z_t.cols() != k) throw DimensionError("mmd_rbf: feature dims differ");

    auto sqdist = [k](std::span<const double> a, size_t i, std::span<const double> b, size_t j) {
        double s = 0;
        for (int d = 0; d < k; ++d) {
            const double diff = a[i * size_t(k) + size_t(d)] - b[j * size_t(k) + size_t(d)];
            s += diff * diff;
        }
        return s;
    };
    auto sv = z_s.data();
    auto tv = z_t.data();

    double beta;
    if (bandwidth) {
        beta = *bandwidth;
    } else {
        // median pairwise distance of the pooled sample
        std::vector<double> d2;
        d2.reserve(size_t(m + n) * size_t(m + n - 1) / 2);
        auto get = [&](size_t i) {
            return i < size_t(m) ? std::pair{sv, i} : std::pair{tv, i - size_t(m)};
        };
        for (size_t i = 0; i < size_t(m + n); ++i) {
            for (size_t j = i + 1; j < size_t(m + n); ++j) {
                auto [a, ia] = get(i);
                auto [b, jb] = get(j);
                d2.push_back(sqdist(a, ia, b, jb));
            }
        }
        std::nth_element(d2.begin(), d2.begin() + d2.size() / 2, d2.end());
        beta = std::sqrt(d2[d2.size() / 2]);
    }
    beta = std::max(beta, 1e-6);
    const double denom = 2.0 * beta * beta;

    double kss = 0, ktt = 0, kst = 0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            if (i != j) kss += std::exp(-sqdist(sv, size_t(i), sv, size_t(j)) / denom);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) ktt += std::exp(-sqdist(tv, size_t(i), tv, size_t(j)) / denom);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) kst += std::exp(-sqdist(sv, size_t(i), tv, size_t(j)) / denom);

    return kss / (double(m) * (m - 1)) + ktt / (double(n) * (n - 1)) -
           2.0 * kst / (double(m) * n);
}

// ---- PCA ------------------------------------------------------------------------------

Pca2d pca2d(const Tensor& z) {
    const int n = z.rows(), d = z.cols();
    if (n < 2 || d < 2) throw DimensionError("pca2d: need at least 2 samples and 2 dims");

    Eigen::MatrixXd X(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) X(i, j) = z.at(i, j);
    Eigen::RowVectorXd mu = X.colwise().mean();
    X.rowwise() -= mu;

    Eigen::MatrixXd comps(d, 2);
    if (d <= n) {
        Eigen::MatrixXd C = X.transpose() * X / double(n - 1);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
        comps.col(0) = es.eigenvectors().col(d - 1);
        comps.col(1) = es.eigenvectors().col(d - 2);
    } else {
        Eigen::MatrixXd G = X * X.transpose() / double(n - 1);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
        for (int c = 0; c < 2; ++c) {
            Eigen::VectorXd v = X.transpose() * es.eigenvectors().col(n - 1 - c);
            comps.col(c) = v.normalized();
        }
    }
    // deterministic sign: largest-magnitude entry positive
    for (int c = 0; c < 2; ++c) {
        int arg = 0;
        for (int j = 1; j < d; ++j)
            if (std::abs(comps(j, c)) > std::abs(comps(arg, c))) arg = j;
        if (comps(arg, c) < 0) comps.col(c) = -comps.col(c);
    }

    Eigen::MatrixXd proj = X * comps;
    std::vector<double> pv(size_t(n) * 2), cv(size_t(d) * 2);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 2; ++c) pv[size_t(i) * 2 + size_t(c)] = proj(i, c);
    for (int j = 0; j < d; ++j)
        for (int c = 0; c < 2; ++c) cv[size_t(j) * 2 + size_t(c)] = comps(j, c);
    return {Tensor::from_data({n, 2}, std::move(pv)), Tensor::from_data({d, 2}, std::move(cv))};
}

// ---- embedding export -------------------------------------------------------------------

void export_embeddings(AdaptationModel& model, const std::vector<const LabeledDataset*>& datasets,
                       const std::string& path, bool with_pca) {
    if (datasets.empty()) throw DataError("export_embeddings: no datasets");
    NoGradGuard ng;

    std::vector<Tensor> zs;
    int total = 0;
    for (const auto* ds : datasets) {
        zs.push_back(model.encode(ds->features(), false));
        total += ds->num_samples();
    }
    const int k = zs[0].cols();

    std::optional<Pca2d> pca;
    if (with_pca) {
        std::vector<double> all;
        all.reserve(size_t(total) * k);
        for (const auto& z : zs) all.insert(all.end(), z.data().begin(), z.data().end());
        pca = pca2d(Tensor::from_data({total, k}, std::move(all)));
    }

    std::ofstream out(path);
    if (!out) throw DataError("export_embeddings: cannot open " + path);
    out << "sample_id,domain,class";
    for (int j = 1; j <= k; ++j) out << ",z_" << j;
    if (with_pca) out << ",pc_1,pc_2";
    out << '\n';

    char buf[32];
    int row = 0;
    for (size_t di = 0; di < datasets.size(); ++di) {
        const auto* ds = datasets[di];
        const auto& z = zs[di];
        for (int i = 0; i < ds->num_samples(); ++i, ++row) {
            out << ds->matrix.sample_ids[size_t(i)] << ',' << to_string(ds->domain_tag) << ','
                << ds->class_names[size_t(ds->labels[size_t(i)])];
            for (int j = 0; j < k; ++j) {
                std::snprintf(buf, sizeof buf, "%.10g", z.at(i, j));
                out << ',' << buf;
            }
            if (with_pca) {
                std::snprintf(buf, sizeof buf, "%.10g", pca->projection.at(row, 0));
                out << ',' << buf;
                std::snprintf(buf, sizeof buf, "%.10g", pca->projection.at(row, 1));
                out << ',' << buf;
            }
            out << '\n';
        }
    }
    if (!out) throw DataError("export_embeddings: write failed for " + path);
}

Tensor encode_with_batch_stats(AdaptationModel& model, const LabeledDataset& ds) {
    NoGradGuard ng;
    ParamSnapshot snap = snapshot_params(model);
    Tensor z = model.encode(ds.features(), true).detach();
    restore_params(model, snap);
    return z;
}

// ---- harness ------------------------------------------------------------------------------

HarnessConfig::HarnessConfig()
    : target_grid(default_target_grid()), source_grid(default_source_grid()) {}

std::vector<double> default_target_grid() {
    std::vector<double> g;
    for (int i = 1; i <= 20; ++i) g.push_back(i / 100.0);
    return g;
}

std::vector<double> default_source_grid() {
    std::vector<double> g;
    for (int i = 1; i <= 10; ++i) g.push_back(i / 1000.0);
    g.push_back(0.02);
    return g;
}

std::vector<double> extended_source_grid() {
    std::vector<double> g = default_source_grid();
    for (double q : {0.05, 0.1, 0.2, 0.5, 0.7, 1.0}) g.push_back(q);
    return g;
}

DataSplits prepare_splits(const LabeledDataset& source, const LabeledDataset& target,
                          std::array<double, 3> fractions, uint64_t split_seed,
                          const PreprocessOptions& pre) {
    auto [src_aligned, tgt_aligned] = align_genes(source, target);
    SplitResult src = stratified_split(src_aligned, fractions, mix_seed(split_seed, "source"));
    SplitResult tgt = stratified_split(tgt_aligned, fractions, mix_seed(split_seed, "target"));

    // source-train statistics, frozen for every other split and domain
    auto [src_train, stats] = preprocess(src.train, std::nullopt, pre);
    DataSplits out;
    out.source.train = std::move(src_train);
    out.source.val = preprocess(src.val, stats).first;
    out.source.test = preprocess(src.test, stats).first;
    out.target.train = preprocess(tgt.train, stats).first;
    out.target.val = preprocess(tgt.val, stats).first;
    out.target.test = preprocess(tgt.test, stats).first;
    return out;
}

int64_t planned_cells(const std::vector<MethodId>& methods, const std::vector<double>& grid,
                      const std::vector<uint64_t>& seeds) {
    return int64_t(methods.size()) * int64_t(grid.size()) * int64_t(seeds.size());
}

namespace {

std::string format_grid(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// deterministic class-interleaved cap: evenly strided row selection
std::vector<int> strided_rows(int n, int cap) {
    const int take = std::min(n, cap);
    std::vector<int> rows;
    rows.reserve(size_t(take));
    for (int i = 0; i < take; ++i) rows.push_back(int(int64_t(i) * n / take));
    return rows;
}

Variant method_variant(MethodId m) {
    switch (m) {
        case MethodId::dann_unsup: return Variant::dann_unsup;
        case MethodId::dann_sup: return Variant::dann_sup;
        case MethodId::wass_unsup: return Variant::wass_unsup;
        case MethodId::wass_sup: return Variant::wass_sup;
        default: throw ConfigError("method has no adversarial variant");
    }
}

struct CellKey {
    std::string experiment;
    MethodId method;
    double grid_value;
    uint64_t seed;

    std::string file_stem() const {
        std::string grid = format_grid(grid_value);
        for (auto& ch : grid) {
            if (ch == '.') ch = 'd';
        }
        return experiment + "__" + to_string(method) + "__" + grid + "__s" + std::to_string(seed);
    }
};

json cell_to_json(const CellResult& c) {
    return json{{"experiment", c.experiment}, {"method", to_string(c.method)},
                {"grid_value", c.grid_value}, {"seed", c.seed},
                {"accuracy", c.accuracy},     {"domain_probe", c.domain_probe},
                {"mmd", c.mmd},               {"seconds", c.seconds},
                {"error", c.error}};
}

CellResult cell_from_json(const json& j) {
    CellResult c;
    c.experiment = j.at("experiment").get<std::string>();
    c.method = parse_method(j.at("method").get<std::string>());
    c.grid_value = j.at("grid_value").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    c.accuracy = j.at("accuracy").get<double>();
    c.domain_probe = j.at("domain_probe").get<double>();
    c.mmd = j.at("mmd").get<double>();
    c.seconds = j.at("seconds").get<double>();
    c.error = j.at("error").get<std::string>();
    return c;
}

}  // namespace

CellResult run_cell(const std::string& experiment, MethodId method, double grid_value,
                    uint64_t seed, const DataSplits& data, const HarnessConfig& cfg) {
    CellResult cell;
    cell.experiment = experiment;
    cell.method = method;
    cell.grid_value = grid_value;
    cell.seed = seed;

    const auto t0 = std::chrono::steady_clock::now();
    try {
        LabeledDataset src_train = data.source.train;
        LabeledDataset src_val = data.source.val;
        LabeledDataset tgt_train = data.target.train;
        LabeledDataset tgt_val = data.target.val;
        std::string salt = to_string(method);

        if (experiment == "target_sweep") {
            tgt_train = subsample_fraction(data.target.train, grid_value, seed);
            tgt_val = subsample_fraction(data.target.val, grid_value, seed);
            salt += "|p=" + format_grid(grid_value);
        } else if (experiment == "source_sweep") {
            const double p = cfg.fixed_target_fraction;
            tgt_train = subsample_fraction(data.target.train, p, seed);
            tgt_val = subsample_fraction(data.target.val, p, seed);
            salt += "|p=" + format_grid(p);
            if (method != MethodId::target_only) {
                // target-only ignores the source, so q must not enter its seed
                src_train = subsample_fraction(data.source.train, grid_value, seed);
                src_val = subsample_fraction(data.source.val, grid_value, seed);
                salt += "|q=" + format_grid(grid_value);
            }
        }

        TrainConfig tc = cfg.train;
        tc.seed = mix_seed(seed, salt);

        FitResult fitres;
        LabeledDataset test_s = data.source.test;
        LabeledDataset test_t = data.target.test;

        switch (method) {
            case MethodId::target_only:
                fitres = train_target_only(tgt_train, tc, &tgt_val);
                break;
            case MethodId::no_adaptation:
                fitres = train_no_adaptation(src_train, tgt_train, tc, &src_val, &tgt_val);
                break;
            case MethodId::combat:
            case MethodId::limma: {
                std::vector<const LabeledDataset*> parts{&src_train, &src_val, &test_s,
                                                         &tgt_train, &tgt_val, &test_t};
                auto corrected =
                    bec_correct_parts(method == MethodId::combat ? BecMethod::combat
                                                                 : BecMethod::limma,
                                      parts, cfg.bec_use_class_covariates);
                LabeledDataset pooled = pool_datasets({&corrected[0], &corrected[3]});
                fitres = fit_classifier(pooled, tc, &corrected[4]);
                test_s = std::move(corrected[2]);
                test_t = std::move(corrected[5]);
                break;
            }
            default:
                fitres = fit(method_variant(method), src_train, tgt_train, tc, &src_val, &tgt_val);
                break;
        }

        cell.accuracy = evaluate_accuracy(fitres.model, test_t);

        NoGradGuard ng;
        Tensor z_s = fitres.model.encode(
            test_s.features(strided_rows(test_s.num_samples(), cfg.probe_cap)), false);
        Tensor z_t = fitres.model.encode(
            test_t.features(strided_rows(test_t.num_samples(), cfg.probe_cap)), false);
        cell.domain_probe = domain_probe(z_s, z_t, mix_seed(seed, salt + "|probe"));

        Tensor m_s = fitres.model.encode(
            test_s.features(strided_rows(test_s.num_samples(), cfg.mmd_cap)), false);
        Tensor m_t = fitres.model.encode(
            test_t.features(strided_rows(test_t.num_samples(), cfg.mmd_cap)), false);
        cell.mmd = mmd_rbf(m_s, m_t);
    } catch (const std::exception& e) {
        cell.error = e.what();
    }
    cell.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return cell;
}

namespace {

SweepResult run_experiment(const std::string& experiment, const std::vector<MethodId>& methods,
                           const std::vector<double>& grid, const DataSplits& data,
                           const HarnessConfig& cfg) {
    SweepResult result;
    result.experiment = experiment;
    result.methods = methods;
    result.grid = grid;
    result.seeds = cfg.seeds;

    std::vector<CellKey> keys;
    for (MethodId m : methods)
        for (double gv : grid)
            for (uint64_t s : cfg.seeds) keys.push_back({experiment, m, gv, s});

    fs::path cells_dir;
    const bool persist = !cfg.out_dir.empty();
    if (persist) {
        cells_dir = fs::path(cfg.out_dir) / "cells";
        fs::create_directories(cells_dir);
    }

    std::vector<std::optional<CellResult>> done(keys.size());
    std::vector<size_t> pending;
    for (size_t i = 0; i < keys.size(); ++i) {
        if (persist && cfg.resume) {
            fs::path marker = cells_dir / (keys[i].file_stem() + ".json");
            if (fs::exists(marker)) {
                std::ifstream in(marker);
                json j = json::parse(in, nullptr, /*allow_exceptions=*/false);
                if (!j.is_discarded()) {
                    done[i] = cell_from_json(j);
                    continue;
                }
            }
        }
        pending.push_back(i);
    }

    std::atomic<size_t> next{0};
    std::mutex mu;
    auto worker = [&] {
        while (true) {
            const size_t slot = next.fetch_add(1);
            if (slot >= pending.size()) return;
            const size_t i = pending[slot];
            const CellKey& k = keys[i];
            CellResult cell = run_cell(k.experiment, k.method, k.grid_value, k.seed, data, cfg);
            if (persist) {
                fs::path marker = cells_dir / (k.file_stem() + ".json");
                fs::path tmp = cells_dir / (k.file_stem() + ".tmp");
                {
                    std::ofstream out(tmp);
                    out << cell_to_json(cell).dump(2) << '\n';
                }
                fs::rename(tmp, marker);
            }
            std::lock_guard<std::mutex> lock(mu);
            done[i] = std::move(cell);
        }
    };

    const int jobs = std::max(1, cfg.jobs);
    if (jobs == 1 || pending.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < jobs; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    for (size_t i = 0; i < keys.size(); ++i) result.cells.push_back(std::move(*done[i]));
    return result;
}

}  // namespace

SweepResult run_full_data(const std::vector<MethodId>& methods, const DataSplits& data,
                          const HarnessConfig& cfg) {
    return run_experiment("full_data", methods, {1.0}, data, cfg);
}

SweepResult run_target_sweep(const std::vector<MethodId>& methods, const DataSplits& data,
                             const HarnessConfig& cfg) {
    return run_experiment("target_sweep", methods, cfg.target_grid, data, cfg);
}

SweepResult run_source_sweep(const std::vector<MethodId>& methods, const DataSplits& data,
                             const HarnessConfig& cfg) {
    return run_experiment("source_sweep", methods, cfg.source_grid, data, cfg);
}

// ---- reports ---------------------------------------------------------------------------

void write_report(const SweepResult& result, const std::string& dir,
                  const std::string& manifest_extra_json) {
    fs::create_directories(dir);
    char buf[64];

    {
        std::ofstream out(fs::path(dir) / "results.csv");
        if (!out) throw DataError("write_report: cannot open results.csv");
        out << "experiment,method,grid_value,seed,accuracy,domain_probe,mmd,seconds,error\n";
        for (const auto& c : result.cells) {
            out << c.experiment << ',' << to_string(c.method) << ',';
            std::snprintf(buf, sizeof buf, "%.17g", c.grid_value);
            out << buf << ',' << c.seed << ',';
            std::snprintf(buf, sizeof buf, "%.17g", c.accuracy);
            out << buf << ',';
            std::snprintf(buf, sizeof buf, "%.17g", c.domain_probe);
            out << buf << ',';
            std::snprintf(buf, sizeof buf, "%.17g", c.mmd);
            out << buf << ',';
            std::snprintf(buf, sizeof buf, "%.17g", c.seconds);
            out << buf << ',' << c.error << '\n';
        }
    }

    {
        std::ofstream out(fs::path(dir) / "summary.csv");
        if (!out) throw DataError("write_report: cannot open summary.csv");
        out << "experiment,method,grid_value,seeds,acc_mean,acc_std,probe_mean,mmd_mean\n";
        for (MethodId m : result.methods) {
            for (double gv : result.grid) {
                std::vector<const CellResult*> ok;
                for (const auto& c : result.cells) {
                    if (c.method == m && c.grid_value == gv && c.error.empty()) ok.push_back(&c);
                }
                if (ok.empty()) continue;
                double acc_mean = 0, probe_mean = 0, mmd_mean = 0;
                for (const auto* c : ok) {
                    acc_mean += c->accuracy;
                    probe_mean += c->domain_probe;
                    mmd_mean += c->mmd;
                }
                const double n = double(ok.size());
                acc_mean /= n;
                probe_mean /= n;
                mmd_mean /= n;
                double acc_std = 0;
                for (const auto* c : ok) acc_std += (c->accuracy - acc_mean) * (c->accuracy - acc_mean);
                acc_std = ok.size() > 1 ? std::sqrt(acc_std / (n - 1)) : 0.0;

                out << result.experiment << ',' << to_string(m) << ',';
                std::snprintf(buf, sizeof buf, "%.17g", gv);
                out << buf << ',' << ok.size() << ',';
                std::snprintf(buf, sizeof buf, "%.17g", acc_mean);
                out << buf << ',';
                std::snprintf(buf, sizeof buf, "%.17g", acc_std);
                out << buf << ',';
                std::snprintf(buf, sizeof buf, "%.17g", probe_mean);
                out << buf << ',';
                std::snprintf(buf, sizeof buf, "%.17g", mmd_mean);
                out << buf << '\n';
            }
        }
    }

    {
        json manifest;
        manifest["experiment"] = result.experiment;
        manifest["version"] = "0.1.0";
        json methods = json::array();
        for (MethodId m : result.methods) methods.push_back(to_string(m));
        manifest["methods"] = methods;
        manifest["grid"] = result.grid;
        manifest["seeds"] = result.seeds;
        if (!manifest_extra_json.empty()) manifest["config"] = json::parse(manifest_extra_json);
        std::ofstream out(fs::path(dir) / "manifest.json");
        if (!out) throw DataError("write_report: cannot open manifest.json");
        out << manifest.dump(2) << '\n';
    }
}

SweepResult load_results_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("load_results_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("load_results_csv: empty file");

    SweepResult result;
    std::vector<MethodId> methods;
    std::vector<double> grid;
    std::vector<uint64_t> seeds;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        size_t start = 0;
        for (int i = 0; i < 8; ++i) {
            const size_t pos = line.find(',', start);
            if (pos == std::string::npos) throw DataError("load_results_csv: malformed row");
            f.push_back(line.substr(start, pos - start));
            start = pos + 1;
        }
        f.push_back(line.substr(start));  // error column, may be empty

        CellResult c;
        c.experiment = f[0];
        c.method = parse_method(f[1]);
        c.grid_value = std::stod(f[2]);
        c.seed = std::stoull(f[3]);
        c.accuracy = std::stod(f[4]);
        c.domain_probe = std::stod(f[5]);
        c.mmd = std::stod(f[6]);
        c.seconds = std::stod(f[7]);
        c.error = f[8];
        result.cells.push_back(c);

        if (result.experiment.empty()) result.experiment = c.experiment;
        if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) {
            methods.push_back(c.method);
        }
        if (std::find(grid.begin(), grid.end(), c.grid_value) == grid.end()) {
            grid.push_back(c.grid_value);
        }
        if (std::find(seeds.begin(), seeds.end(), c.seed) == seeds.end()) seeds.push_back(c.seed);
    }
    result.methods = std::move(methods);
    result.grid = std::move(grid);
    result.seeds = std::move(seeds);
    return result;
}

}  // namespace domadapt
