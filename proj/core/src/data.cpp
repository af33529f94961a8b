#include "domadapt/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace domadapt {

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

void LabeledDataset::validate() const {
    if (matrix.n < 1 || matrix.g < 1) throw DataError("dataset: empty matrix");
    if (int(matrix.sample_ids.size()) != matrix.n || int(matrix.gene_ids.size()) != matrix.g) {
        throw DataError("dataset: id count does not match matrix dims");
    }
    if (int64_t(matrix.values.size()) != int64_t(matrix.n) * matrix.g) {
        throw DataError("dataset: value buffer size mismatch");
    }
    std::unordered_set<std::string> seen;
    for (const auto& id : matrix.sample_ids) {
        if (!seen.insert(id).second) throw DataError("dataset: duplicate sample id '" + id + "'");
    }
    seen.clear();
    for (const auto& id : matrix.gene_ids) {
        if (!seen.insert(id).second) throw DataError("dataset: duplicate gene id '" + id + "'");
    }
    if (int(labels.size()) != matrix.n) throw DataError("dataset: label count mismatch");
    std::vector<bool> present(class_names.size(), false);
    for (int y : labels) {
        if (y < 0 || y >= int(class_names.size())) {
            throw DataError("dataset: label index " + std::to_string(y) + " out of range");
        }
        present[size_t(y)] = true;
    }
    for (size_t c = 0; c < present.size(); ++c) {
        if (!present[c]) throw DataError("dataset: class '" + class_names[c] + "' has no samples");
    }
    for (double v : matrix.values) {
        if (!std::isfinite(v)) throw DataError("dataset: non-finite value");
    }
}

LabeledDataset LabeledDataset::subset(const std::vector<int>& rows) const {
    LabeledDataset out;
    out.matrix.n = int(rows.size());
    out.matrix.g = matrix.g;
    out.matrix.gene_ids = matrix.gene_ids;
    out.matrix.values.resize(rows.size() * size_t(matrix.g));
    out.matrix.sample_ids.reserve(rows.size());
    out.labels.reserve(rows.size());
    for (size_t k = 0; k < rows.size(); ++k) {
        int i = rows[k];
        std::copy_n(matrix.values.begin() + size_t(i) * matrix.g, matrix.g,
                    out.matrix.values.begin() + k * size_t(matrix.g));
        out.matrix.sample_ids.push_back(matrix.sample_ids[size_t(i)]);
        out.labels.push_back(labels[size_t(i)]);
    }
    out.class_names = class_names;
    out.domain_tag = domain_tag;
    return out;
}

Tensor LabeledDataset::features() const {
    return Tensor::from_data({matrix.n, matrix.g}, matrix.values);
}

Tensor LabeledDataset::features(const std::vector<int>& rows) const {
    std::vector<double> v(rows.size() * size_t(matrix.g));
    for (size_t k = 0; k < rows.size(); ++k) {
        std::copy_n(matrix.values.begin() + size_t(rows[k]) * matrix.g, matrix.g,
                    v.begin() + k * size_t(matrix.g));
    }
    return Tensor::from_data({int(rows.size()), matrix.g}, std::move(v));
}

std::vector<int> LabeledDataset::labels_at(const std::vector<int>& rows) const {
    std::vector<int> out;
    out.reserve(rows.size());
    for (int i : rows) out.push_back(labels[size_t(i)]);
    return out;
}

void SyntheticConfig::validate() const {
    if (num_genes < 1 || num_classes < 2 || latent_dim < 1 || samples_per_domain < num_classes) {
        throw ConfigError("synthetic: dims must be positive and samples >= classes");
    }
    if (class_separation < 0 || additive_shift < 0 || multiplicative_shift < 0 ||
        warp_strength < 0 || noise_std < 0) {
        throw ConfigError("synthetic: magnitudes must be >= 0");
    }
    if (warp_fraction < 0 || warp_fraction > 1) {
        throw ConfigError("synthetic: warp_fraction must be in [0, 1]");
    }
}

// ---- file io -------------------------------------------------------------------

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t pos = line.find(delim, start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
    return out;
}

double parse_cell(const std::string& s, int row, int col) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || p != last || !std::isfinite(v)) {
        throw DataError("matrix: non-numeric cell '" + s + "' at row " + std::to_string(row) +
                        ", column " + std::to_string(col));
    }
    return v;
}

}  // namespace

LabeledDataset load_matrix(const std::string& matrix_path, const std::string& label_path) {
    std::ifstream in(matrix_path);
    if (!in) throw DataError("load_matrix: cannot open " + matrix_path);

    std::string line;
    if (!std::getline(in, line)) throw DataError("load_matrix: empty file " + matrix_path);
    char delim = line.find('\t') != std::string::npos ? '\t' : ',';
    auto header = split_line(line, delim);
    if (header.empty() || header[0] != "sample_id") {
        throw DataError("load_matrix: header must start with 'sample_id' in " + matrix_path);
    }

    LabeledDataset ds;
    ds.matrix.g = int(header.size()) - 1;
    if (ds.matrix.g < 1) throw DataError("load_matrix: no gene columns in " + matrix_path);
    ds.matrix.gene_ids.assign(header.begin() + 1, header.end());

    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        auto fields = split_line(line, delim);
        if (int(fields.size()) != ds.matrix.g + 1) {
            throw DataError("load_matrix: row " + std::to_string(row) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(ds.matrix.g + 1));
        }
        ds.matrix.sample_ids.push_back(fields[0]);
        for (int j = 0; j < ds.matrix.g; ++j) {
            ds.matrix.values.push_back(parse_cell(fields[size_t(j) + 1], row, j + 2));
        }
    }
    ds.matrix.n = int(ds.matrix.sample_ids.size());
    if (ds.matrix.n < 1) throw DataError("load_matrix: no sample rows in " + matrix_path);

    // labels joined by sample id
    std::ifstream lin(label_path);
    if (!lin) throw DataError("load_matrix: cannot open " + label_path);
    if (!std::getline(lin, line)) throw DataError("load_matrix: empty label file " + label_path);
    char ldelim = line.find('\t') != std::string::npos ? '\t' : ',';
    std::unordered_map<std::string, std::string> by_id;
    int lrow = 1;
    while (std::getline(lin, line)) {
        ++lrow;
        if (line.empty() || line == "\r") continue;
        auto fields = split_line(line, ldelim);
        if (fields.size() != 2) {
            throw DataError("labels: row " + std::to_string(lrow) + " must have 2 fields");
        }
        if (!by_id.emplace(fields[0], fields[1]).second) {
            throw DataError("labels: duplicate sample id '" + fields[0] + "'");
        }
    }

    std::set<std::string> class_set;
    std::vector<std::string> raw;
    raw.reserve(size_t(ds.matrix.n));
    for (const auto& id : ds.matrix.sample_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw DataError("labels: missing label for sample '" + id + "'");
        raw.push_back(it->second);
        class_set.insert(it->second);
    }
    ds.class_names.assign(class_set.begin(), class_set.end());
    std::unordered_map<std::string, int> class_index;
    for (size_t i = 0; i < ds.class_names.size(); ++i) class_index[ds.class_names[i]] = int(i);
    for (const auto& r : raw) ds.labels.push_back(class_index[r]);

    ds.validate();
    return ds;
}

void save_matrix(const LabeledDataset& ds, const std::string& matrix_path,
                 const std::string& label_path) {
    std::ofstream out(matrix_path);
    if (!out) throw DataError("save_matrix: cannot open " + matrix_path);
    out << "sample_id";
    for (const auto& gid : ds.matrix.gene_ids) out << ',' << gid;
    out << '\n';
    char buf[32];
    for (int i = 0; i < ds.matrix.n; ++i) {
        out << ds.matrix.sample_ids[size_t(i)];
        for (int j = 0; j < ds.matrix.g; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", ds.matrix.at(i, j));
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw DataError("save_matrix: write failed for " + matrix_path);

    std::ofstream lout(label_path);
    if (!lout) throw DataError("save_matrix: cannot open " + label_path);
    lout << "sample_id,label\n";
    for (int i = 0; i < ds.matrix.n; ++i) {
        lout << ds.matrix.sample_ids[size_t(i)] << ',' << ds.class_names[size_t(ds.labels[size_t(i)])]
             << '\n';
    }
    if (!lout) throw DataError("save_matrix: write failed for " + label_path);
}

// ---- gene alignment --------------------------------------------------------------

std::pair<LabeledDataset, LabeledDataset> align_genes(const LabeledDataset& a,
                                                      const LabeledDataset& b) {
    std::set<std::string> sa(a.matrix.gene_ids.begin(), a.matrix.gene_ids.end());
    std::vector<std::string> common;
    for (const auto& gid : std::set<std::string>(b.matrix.gene_ids.begin(), b.matrix.gene_ids.end())) {
        if (sa.count(gid)) common.push_back(gid);
    }
    if (common.empty()) throw DataError("align_genes: empty gene intersection");

    auto project = [&common](const LabeledDataset& ds) {
        std::unordered_map<std::string, int> col;
        for (int j = 0; j < ds.matrix.g; ++j) col[ds.matrix.gene_ids[size_t(j)]] = j;
        LabeledDataset out;
        out.matrix.n = ds.matrix.n;
        out.matrix.g = int(common.size());
        out.matrix.gene_ids = common;
        out.matrix.sample_ids = ds.matrix.sample_ids;
        out.labels = ds.labels;
        out.class_names = ds.class_names;
        out.domain_tag = ds.domain_tag;
        out.matrix.values.resize(size_t(out.matrix.n) * common.size());
        for (int i = 0; i < out.matrix.n; ++i) {
            for (size_t j = 0; j < common.size(); ++j) {
                out.matrix.values[size_t(i) * common.size() + j] = ds.matrix.at(i, col[common[j]]);
            }
        }
        return out;
    };
    return {project(a), project(b)};
}

// ---- preprocessing ----------------------------------------------------------------

std::pair<LabeledDataset, PreprocessStats> preprocess(
    const LabeledDataset& ds, const std::optional<PreprocessStats>& reference,
    const PreprocessOptions& opts) {
    LabeledDataset out = ds;
    const int n = ds.matrix.n, g = ds.matrix.g;
    const bool log_transform = reference ? reference->log_transform : opts.log_transform;

    if (log_transform) {
        for (auto& v : out.matrix.values) {
            if (v < 0) throw DataError("preprocess: negative value, log2(x+1) needs x >= 0");
            v = std::log2(v + 1.0);
        }
    }

    PreprocessStats stats;
    stats.log_transform = log_transform;
    if (reference) {
        if (int(reference->mean.size()) != g) {
            throw DataError("preprocess: reference stats have wrong gene count");
        }
        stats = *reference;
    } else {
        stats.mean.assign(size_t(g), 0.0);
        stats.stdev.assign(size_t(g), 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < g; ++j) stats.mean[size_t(j)] += out.matrix.at(i, j);
        for (int j = 0; j < g; ++j) stats.mean[size_t(j)] /= n;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < g; ++j) {
                const double d = out.matrix.at(i, j) - stats.mean[size_t(j)];
                stats.stdev[size_t(j)] += d * d;
            }
        }
        for (int j = 0; j < g; ++j) {
            stats.stdev[size_t(j)] = std::max(std::sqrt(stats.stdev[size_t(j)] / n), 1e-8);
        }
    }

    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < g; ++j) {
            out.matrix.at(i, j) = (out.matrix.at(i, j) - stats.mean[size_t(j)]) / stats.stdev[size_t(j)];
        }
    }
    return {std::move(out), std::move(stats)};
}

// ---- splitting / subsampling -------------------------------------------------------

namespace {

std::vector<std::vector<int>> indices_by_class(const LabeledDataset& ds) {
    std::vector<std::vector<int>> by_class(size_t(ds.num_classes()));
    for (int i = 0; i < ds.num_samples(); ++i) by_class[size_t(ds.labels[size_t(i)])].push_back(i);
    return by_class;
}

}  // namespace

SplitResult stratified_split(const LabeledDataset& ds, std::array<double, 3> fractions,
                             uint64_t seed) {
    double sum = fractions[0] + fractions[1] + fractions[2];
    for (double f : fractions) {
        if (f <= 0) throw ConfigError("stratified_split: fractions must be positive");
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("stratified_split: fractions must sum to 1");

    auto by_class = indices_by_class(ds);
    std::array<std::vector<int>, 3> parts;
    auto rng = make_rng(mix_seed(seed, "stratified_split"));

    for (size_t c = 0; c < by_class.size(); ++c) {
        auto& idx = by_class[c];
        if (int(idx.size()) < 3) {
            throw DataError("stratified_split: class '" + ds.class_names[c] +
                            "' has fewer than 3 samples");
        }
        std::shuffle(idx.begin(), idx.end(), rng);

        const int nc = int(idx.size());
        std::array<int, 3> take{};
        std::array<double, 3> frac{};
        int assigned = 0;
        for (int s = 0; s < 3; ++s) {
            double exact = fractions[size_t(s)] * nc;
            take[size_t(s)] = int(std::floor(exact));
            frac[size_t(s)] = exact - take[size_t(s)];
            assigned += take[size_t(s)];
        }
        // largest remainder, then make sure every split sees the class
        while (assigned < nc) {
            int best = 0;
            for (int s = 1; s < 3; ++s) {
                if (frac[size_t(s)] > frac[size_t(best)]) best = s;
            }
            frac[size_t(best)] = -1.0;
            take[size_t(best)] += 1;
            ++assigned;
        }
        for (int s = 0; s < 3; ++s) {
            if (take[size_t(s)] == 0) {
                int donor = 0;
                for (int d = 1; d < 3; ++d) {
                    if (take[size_t(d)] > take[size_t(donor)]) donor = d;
                }
                take[size_t(donor)] -= 1;
                take[size_t(s)] += 1;
            }
        }

        int cursor = 0;
        for (int s = 0; s < 3; ++s) {
            for (int k = 0; k < take[size_t(s)]; ++k) parts[size_t(s)].push_back(idx[size_t(cursor++)]);
        }
    }

    for (auto& p : parts) std::sort(p.begin(), p.end());
    return {ds.subset(parts[0]), ds.subset(parts[1]), ds.subset(parts[2])};
}

LabeledDataset subsample_fraction(const LabeledDataset& ds, double fraction, uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ConfigError("subsample_fraction: fraction must be in (0, 1]");
    }
    auto by_class = indices_by_class(ds);
    std::vector<int> chosen;
    for (size_t c = 0; c < by_class.size(); ++c) {
        auto& idx = by_class[c];
        // permutation depends on (seed, class) only, so smaller fractions
        // are prefixes of larger ones
        auto rng = make_rng(mix_seed(seed, "subsample_class_" + std::to_string(c)));
        std::shuffle(idx.begin(), idx.end(), rng);
        const int k = int(std::ceil(fraction * double(idx.size())));
        for (int i = 0; i < k; ++i) chosen.push_back(idx[size_t(i)]);
    }
    std::sort(chosen.begin(), chosen.end());
    return ds.subset(chosen);
}

// ---- synthetic generator ------------------------------------------------------------

std::pair<LabeledDataset, LabeledDataset> generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    auto rng = make_rng(mix_seed(cfg.seed, "synthetic"));
    std::normal_distribution<double> unit(0.0, 1.0);

    const int g = cfg.num_genes, c = cfg.num_classes, k = cfg.latent_dim;
    const int n = cfg.samples_per_domain;

    std::vector<double> centers(size_t(c) * size_t(k), 0.0);
    for (auto& v : centers) v = cfg.class_separation * unit(rng);

    // shared latent-to-gene map, scaled to keep unit-ish gene variance
    std::vector<double> map(size_t(k) * size_t(g), 0.0);
    const double map_scale = 1.0;  // unnormalized: the cubic warp then bites at feature scale
    for (auto& v : map) v = map_scale * unit(rng);

    std::vector<double> offset(static_cast<size_t>(g), 0.0);
    std::vector<double> scale(static_cast<size_t>(g), 0.0);
    for (auto& v : offset) v = cfg.additive_shift * unit(rng);
    for (auto& v : scale) v = std::exp(cfg.multiplicative_shift * unit(rng));

    std::vector<int> gene_perm(static_cast<size_t>(g), 0);
    std::iota(gene_perm.begin(), gene_perm.end(), 0);
    std::shuffle(gene_perm.begin(), gene_perm.end(), rng);
    const int n_warp = int(std::lround(cfg.warp_fraction * g));
    std::vector<bool> warped(size_t(g), false);
    for (int j = 0; j < n_warp; ++j) warped[size_t(gene_perm[size_t(j)])] = true;

    // identical class proportions in both domains
    std::vector<int> class_of(static_cast<size_t>(n), 0);
    {
        const int base = n / c, extra = n % c;
        int pos = 0;
        for (int j = 0; j < c; ++j) {
            int count = base + (j < extra ? 1 : 0);
            for (int s = 0; s < count; ++s) class_of[size_t(pos++)] = j;
        }
    }

    auto sample_domain = [&](Domain dom, const char* prefix) {
        LabeledDataset ds;
        ds.domain_tag = dom;
        ds.matrix.n = n;
        ds.matrix.g = g;
        ds.matrix.values.resize(size_t(n) * g);
        for (int j = 0; j < c; ++j) ds.class_names.push_back("class_" + std::to_string(j));
        for (int j = 0; j < g; ++j) {
            char buf[24];
            std::snprintf(buf, sizeof buf, "g%05d", j + 1);
            ds.matrix.gene_ids.emplace_back(buf);
        }
        std::vector<double> z(static_cast<size_t>(k), 0.0);
        for (int i = 0; i < n; ++i) {
            const int cls = class_of[size_t(i)];
            ds.labels.push_back(cls);
            char buf[24];
            std::snprintf(buf, sizeof buf, "%s%06d", prefix, i + 1);
            ds.matrix.sample_ids.emplace_back(buf);
            for (int d = 0; d < k; ++d) z[size_t(d)] = centers[size_t(cls) * k + d] + unit(rng);
            for (int j = 0; j < g; ++j) {
                double x = 0.0;
                for (int d = 0; d < k; ++d) x += z[size_t(d)] * map[size_t(d) * g + j];
                x += cfg.noise_std * unit(rng);
                if (dom == Domain::target) {
                    x = scale[size_t(j)] * x + offset[size_t(j)];
                    if (warped[size_t(j)]) x += cfg.warp_strength * x * x * x;
                }
                ds.matrix.at(i, j) = x;
            }
        }
        ds.validate();
        return ds;
    };

    LabeledDataset source = sample_domain(Domain::source, "S");
    LabeledDataset target = sample_domain(Domain::target, "T");
    return {std::move(source), std::move(target)};
}

}  // namespace domadapt
