#include "domadapt/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>
#include <unordered_set>

namespace domadapt {

namespace {

thread_local bool g_grad_enabled = true;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapConst = Eigen::Map<const EMat>;
using Map = Eigen::Map<EMat>;

void check_finite(const detail::Node& n) {
    for (double v : n.value) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(n.op) + ": non-finite value in output (node " +
                               std::to_string(n.id) + ")");
        }
    }
}

std::shared_ptr<detail::Node> new_node(Shape s, std::vector<double> v, const char* op) {
    auto n = std::make_shared<detail::Node>();
    n->shape = s;
    n->value = std::move(v);
    n->op = op;
    if (int64_t(n->value.size()) != s.numel()) {
        throw DimensionError(std::string(op) + ": data length does not match shape " +
                             to_string(s));
    }
    return n;
}

Tensor make_leaf(Shape s, std::vector<double> v, const char* op = "leaf") {
    auto n = new_node(s, std::move(v), op);
    check_finite(*n);
    return Tensor(std::move(n));
}

// Records the op on the current tape iff grad mode is on and any input
// requires grad; otherwise the result is a plain constant.
Tensor make_op(const char* op, Shape s, std::vector<double> v,
               std::initializer_list<Tensor> parents, detail::BackwardFn fn) {
    auto n = new_node(s, std::move(v), op);
    bool track = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) track = track || p.requires_grad();
    }
    if (track) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.shared_node());
        n->backward_fn = std::move(fn);
        n->id = Tape::current().register_node(n);
    }
    check_finite(*n);
    return Tensor(std::move(n));
}

enum class BinKind { Same, ScalarLeft, ScalarRight };

BinKind resolve_binary(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return BinKind::Same;
    if (a.size() == 1) return BinKind::ScalarLeft;
    if (b.size() == 1) return BinKind::ScalarRight;
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
}

template <typename F>
std::vector<double> binary_values(BinKind k, const Tensor& a, const Tensor& b, F f) {
    auto av = a.data();
    auto bv = b.data();
    std::vector<double> out;
    switch (k) {
        case BinKind::Same:
            out.resize(av.size());
            for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
            break;
        case BinKind::ScalarLeft:
            out.resize(bv.size());
            for (size_t i = 0; i < bv.size(); ++i) out[i] = f(av[0], bv[i]);
            break;
        case BinKind::ScalarRight:
            out.resize(av.size());
            for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[0]);
            break;
    }
    return out;
}

Shape binary_shape(BinKind k, const Tensor& a, const Tensor& b) {
    return k == BinKind::ScalarLeft ? b.shape() : a.shape();
}

}  // namespace

std::string to_string(const Shape& s) {
    return std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

// ---- Tape / GradMode ---------------------------------------------------------

Tape& Tape::current() {
    thread_local Tape tape;
    return tape;
}

uint64_t Tape::register_node(const std::shared_ptr<detail::Node>& n) {
    nodes_.push_back(n);
    return next_id_++;
}

void Tape::truncate(size_t mark) {
    if (mark < nodes_.size()) nodes_.resize(mark);
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set(bool on) { g_grad_enabled = on; }

// ---- Tensor ------------------------------------------------------------------

const Shape& Tensor::shape() const {
    if (!node_) throw DimensionError("shape(): undefined tensor");
    return node_->shape;
}

std::span<const double> Tensor::data() const {
    if (!node_) throw DimensionError("data(): undefined tensor");
    return node_->value;
}

std::span<double> Tensor::data_mut() {
    if (!node_) throw DimensionError("data_mut(): undefined tensor");
    return node_->value;
}

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item(): tensor is not scalar, shape " + to_string(shape()));
    return node_->value[0];
}

double Tensor::at(int r, int c) const {
    const auto& s = shape();
    if (r < 0 || r >= s.rows || c < 0 || c >= s.cols) {
        throw DimensionError("at(): index out of range");
    }
    return node_->value[size_t(r) * s.cols + c];
}

Tensor& Tensor::set_requires_grad(bool on) {
    if (!node_) throw DimensionError("set_requires_grad(): undefined tensor");
    node_->requires_grad = on;
    if (on && node_->id == 0) node_->id = Tape::current().register_node(node_);
    return *this;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor Tensor::detach() const {
    if (!node_) return Tensor();
    return make_leaf(node_->shape, node_->value, "detach");
}

bool Tensor::has_grad() const { return node_ && node_->grad_buf != nullptr; }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw DimensionError("grad(): no gradient accumulated");
    return *node_->grad_buf;
}

std::span<double> Tensor::grad_mut() {
    if (!node_) throw DimensionError("grad_mut(): undefined tensor");
    if (!node_->grad_buf) {
        node_->grad_buf = std::make_shared<std::vector<double>>(size_t(size()), 0.0);
    }
    return *node_->grad_buf;
}

void Tensor::zero_grad() {
    if (node_ && node_->grad_buf) std::fill(node_->grad_buf->begin(), node_->grad_buf->end(), 0.0);
}

uint64_t Tensor::node_id() const { return node_ ? node_->id : 0; }

Tensor Tensor::zeros(Shape s) { return make_leaf(s, std::vector<double>(size_t(s.numel()), 0.0)); }

Tensor Tensor::full(Shape s, double v) {
    return make_leaf(s, std::vector<double>(size_t(s.numel()), v));
}

Tensor Tensor::scalar(double v) { return make_leaf({1, 1}, {v}); }

Tensor Tensor::from_data(Shape s, std::vector<double> data) {
    return make_leaf(s, std::move(data));
}

Tensor Tensor::randn(Shape s, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    std::vector<double> v(size_t(s.numel()));
    for (auto& x : v) x = d(rng);
    return make_leaf(s, std::move(v));
}

Tensor Tensor::rand_uniform(Shape s, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(size_t(s.numel()));
    for (auto& x : v) x = d(rng);
    return make_leaf(s, std::move(v));
}

// ---- elementwise ops -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    BinKind k = resolve_binary("add", a, b);
    auto out = binary_values(k, a, b, [](double x, double y) { return x + y; });
    return make_op("add", binary_shape(k, a, b), std::move(out), {a, b},
                   [k](const Tensor& up) -> std::vector<Tensor> {
                       Tensor ga = k == BinKind::ScalarLeft ? sum(up) : up;
                       Tensor gb = k == BinKind::ScalarRight ? sum(up) : up;
                       return {ga, gb};
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    BinKind k = resolve_binary("sub", a, b);
    auto out = binary_values(k, a, b, [](double x, double y) { return x - y; });
    return make_op("sub", binary_shape(k, a, b), std::move(out), {a, b},
                   [k](const Tensor& up) -> std::vector<Tensor> {
                       Tensor ga = k == BinKind::ScalarLeft ? sum(up) : up;
                       Tensor gb = neg(k == BinKind::ScalarRight ? sum(up) : up);
                       return {ga, gb};
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    BinKind k = resolve_binary("mul", a, b);
    auto out = binary_values(k, a, b, [](double x, double y) { return x * y; });
    return make_op("mul", binary_shape(k, a, b), std::move(out), {a, b},
                   [k, a, b](const Tensor& up) -> std::vector<Tensor> {
                       Tensor ga = mul(up, b);
                       if (k == BinKind::ScalarLeft) ga = sum(ga);
                       Tensor gb = mul(up, a);
                       if (k == BinKind::ScalarRight) gb = sum(gb);
                       return {ga, gb};
                   });
}

Tensor div(const Tensor& a, const Tensor& b) {
    BinKind k = resolve_binary("div", a, b);
    auto out = binary_values(k, a, b, [](double x, double y) { return x / y; });
    Tensor res = make_op("div", binary_shape(k, a, b), std::move(out), {a, b},
                         [k, a, b](const Tensor& up) -> std::vector<Tensor> {
                             Tensor ga = div(up, b);
                             if (k == BinKind::ScalarLeft) ga = sum(ga);
                             Tensor gb = neg(div(mul(up, div(a, b)), b));
                             if (k == BinKind::ScalarRight) gb = sum(gb);
                             return {ga, gb};
                         });
    return res;
}

Tensor neg(const Tensor& a) {
    auto av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = -av[i];
    return make_op("neg", a.shape(), std::move(out), {a},
                   [](const Tensor& up) -> std::vector<Tensor> { return {neg(up)}; });
}

Tensor add_scalar(const Tensor& a, double c) {
    auto av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + c;
    return make_op("add_scalar", a.shape(), std::move(out), {a},
                   [](const Tensor& up) -> std::vector<Tensor> { return {up}; });
}

Tensor mul_scalar(const Tensor& a, double c) {
    auto av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
    return make_op("mul_scalar", a.shape(), std::move(out), {a},
                   [c](const Tensor& up) -> std::vector<Tensor> { return {mul_scalar(up, c)}; });
}

// ---- matrix ops ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(size_t(m) * n);
    Map(out.data(), m, n).noalias() =
        MapConst(a.data().data(), m, k) * MapConst(b.data().data(), k, n);
    return make_op("matmul", {m, n}, std::move(out), {a, b},
                   [a, b](const Tensor& up) -> std::vector<Tensor> {
                       return {matmul(up, transpose(b)), matmul(transpose(a), up)};
                   });
}

Tensor transpose(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    std::vector<double> out(size_t(m) * n);
    Map(out.data(), n, m).noalias() = MapConst(a.data().data(), m, n).transpose();
    return make_op("transpose", {n, m}, std::move(out), {a},
                   [](const Tensor& up) -> std::vector<Tensor> { return {transpose(up)}; });
}

// ---- nonlinearities ---------------------------------------------------------------

Tensor relu(const Tensor& a) {
    auto av = a.data();
    std::vector<double> out(av.size()), mask(av.size());
    for (size_t i = 0; i < av.size(); ++i) {
        mask[i] = av[i] > 0.0 ? 1.0 : 0.0;
        out[i] = av[i] > 0.0 ? av[i] : 0.0;
    }
    Tensor mask_t = make_leaf(a.shape(), std::move(mask), "relu_mask");
    return make_op("relu", a.shape(), std::move(out), {a},
                   [mask_t](const Tensor& up) -> std::vector<Tensor> {
                       return {mul(up, mask_t)};
                   });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    if (!(slope > 0.0 && slope < 1.0)) {
        throw std::invalid_argument("leaky_relu: slope must be in (0, 1)");
    }
    auto av = a.data();
    std::vector<double> out(av.size()), mask(av.size());
    for (size_t i = 0; i < av.size(); ++i) {
        // subgradient at 0 takes the positive branch
        mask[i] = av[i] >= 0.0 ? 1.0 : slope;
        out[i] = av[i] >= 0.0 ? av[i] : slope * av[i];
    }
    Tensor mask_t = make_leaf(a.shape(), std::move(mask), "leaky_relu_mask");
    return make_op("leaky_relu", a.shape(), std::move(out), {a},
                   [mask_t](const Tensor& up) -> std::vector<Tensor> {
                       return {mul(up, mask_t)};
                   });
}

Tensor exp_(const Tensor& a) {
    auto av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::exp(av[i]);
    // backward recomputes exp(a) from the input so the derivative itself
    // stays differentiable (and no node holds a handle to itself)
    return make_op("exp", a.shape(), std::move(out), {a},
                   [a](const Tensor& up) -> std::vector<Tensor> {
                       return {mul(up, exp_(a))};
                   });
}

Tensor log_(const Tensor& a) {
    auto av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::log(av[i]);
    return make_op("log", a.shape(), std::move(out), {a},
                   [a](const Tensor& up) -> std::vector<Tensor> { return {div(up, a)}; });
}

Tensor sqrt_(const Tensor& a) {
    auto av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::sqrt(av[i]);
    return make_op("sqrt", a.shape(), std::move(out), {a},
                   [a](const Tensor& up) -> std::vector<Tensor> {
                       return {mul_scalar(div(up, sqrt_(a)), 0.5)};
                   });
}

Tensor square(const Tensor& a) {
    auto av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * av[i];
    return make_op("square", a.shape(), std::move(out), {a},
                   [a](const Tensor& up) -> std::vector<Tensor> {
                       return {mul_scalar(mul(up, a), 2.0)};
                   });
}

Tensor sigmoid(const Tensor& a) {
    auto av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) {
        double x = av[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                          : std::exp(x) / (1.0 + std::exp(x));
    }
    return make_op("sigmoid", a.shape(), std::move(out), {a},
                   [a](const Tensor& up) -> std::vector<Tensor> {
                       Tensor s = sigmoid(a);
                       return {mul(up, mul(s, add_scalar(neg(s), 1.0)))};
                   });
}

Tensor softplus(const Tensor& a) {
    auto av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) {
        double x = av[i];
        out[i] = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    }
    return make_op("softplus", a.shape(), std::move(out), {a},
                   [a](const Tensor& up) -> std::vector<Tensor> {
                       return {mul(up, sigmoid(a))};
                   });
}

// ---- reductions / broadcasts -------------------------------------------------------

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    Shape in = a.shape();
    return make_op("sum", {1, 1}, {s}, {a},
                   [in](const Tensor& up) -> std::vector<Tensor> {
                       return {mul(Tensor::full(in, 1.0), up)};
                   });
}

Tensor mean(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    const double n = double(a.size());
    Shape in = a.shape();
    return make_op("mean", {1, 1}, {s / n}, {a},
                   [in, n](const Tensor& up) -> std::vector<Tensor> {
                       return {mul(Tensor::full(in, 1.0 / n), up)};
                   });
}

Tensor sum_rows(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    std::vector<double> out(size_t(n), 0.0);
    auto av = a.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[j] += av[size_t(i) * n + j];
    return make_op("sum_rows", {1, n}, std::move(out), {a},
                   [m](const Tensor& up) -> std::vector<Tensor> {
                       return {broadcast_rows(up, m)};
                   });
}

Tensor sum_cols(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    std::vector<double> out(size_t(m), 0.0);
    auto av = a.data();
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += av[size_t(i) * n + j];
        out[size_t(i)] = s;
    }
    return make_op("sum_cols", {m, 1}, std::move(out), {a},
                   [n](const Tensor& up) -> std::vector<Tensor> {
                       return {broadcast_cols(up, n)};
                   });
}

Tensor broadcast_rows(const Tensor& a, int m) {
    if (a.rows() != 1) throw DimensionError("broadcast_rows: input must be 1 x n");
    const int n = a.cols();
    std::vector<double> out(size_t(m) * n);
    auto av = a.data();
    for (int i = 0; i < m; ++i)
        std::copy(av.begin(), av.end(), out.begin() + size_t(i) * n);
    return make_op("broadcast_rows", {m, n}, std::move(out), {a},
                   [](const Tensor& up) -> std::vector<Tensor> { return {sum_rows(up)}; });
}

Tensor broadcast_cols(const Tensor& a, int n) {
    if (a.cols() != 1) throw DimensionError("broadcast_cols: input must be m x 1");
    const int m = a.rows();
    std::vector<double> out(size_t(m) * n);
    auto av = a.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[size_t(i) * n + j] = av[size_t(i)];
    return make_op("broadcast_cols", {m, n}, std::move(out), {a},
                   [](const Tensor& up) -> std::vector<Tensor> { return {sum_cols(up)}; });
}

// ---- composites ----------------------------------------------------------------

Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
    if (b.rows() != 1 || b.cols() != W.cols()) {
        throw DimensionError("affine: bias must be 1 x " + std::to_string(W.cols()));
    }
    return add(matmul(x, W), broadcast_rows(b, x.rows()));
}

Tensor row_l2_norm(const Tensor& a, double floor) {
    return sqrt_(add_scalar(sum_cols(square(a)), floor * floor));
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  bool training, BatchNormState& state, double momentum, double eps) {
    const int m = x.rows(), n = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
        throw DimensionError("batch_norm: gamma/beta must be 1 x " + std::to_string(n));
    }
    if (int(state.running_mean.size()) != n) {
        throw DimensionError("batch_norm: running stats size mismatch");
    }
    if (training) {
        if (m < 2) throw DimensionError("batch_norm: degenerate batch, train mode needs m >= 2");
        Tensor mu = mul_scalar(sum_rows(x), 1.0 / m);
        Tensor xc = sub(x, broadcast_rows(mu, m));
        Tensor var = mul_scalar(sum_rows(square(xc)), 1.0 / m);
        Tensor denom = sqrt_(add_scalar(var, eps));
        Tensor xhat = div(xc, broadcast_rows(denom, m));
        Tensor out = add(mul(xhat, broadcast_rows(gamma, m)), broadcast_rows(beta, m));
        // running stats track the unbiased batch variance
        auto mu_v = mu.data();
        auto var_v = var.data();
        const double unbias = double(m) / double(m - 1);
        for (int j = 0; j < n; ++j) {
            state.running_mean[j] = (1.0 - momentum) * state.running_mean[j] + momentum * mu_v[j];
            state.running_var[j] =
                (1.0 - momentum) * state.running_var[j] + momentum * var_v[j] * unbias;
        }
        return out;
    }
    std::vector<double> inv(static_cast<size_t>(n), 0.0);
    std::vector<double> mu(static_cast<size_t>(n), 0.0);
    for (int j = 0; j < n; ++j) {
        mu[j] = state.running_mean[j];
        inv[j] = 1.0 / std::sqrt(state.running_var[j] + eps);
    }
    Tensor mu_t = Tensor::from_data({1, n}, std::move(mu));
    Tensor inv_t = Tensor::from_data({1, n}, std::move(inv));
    Tensor xhat = mul(sub(x, broadcast_rows(mu_t, m)), broadcast_rows(inv_t, m));
    return add(mul(xhat, broadcast_rows(gamma, m)), broadcast_rows(beta, m));
}

Tensor softmax_probs(const Tensor& logits) {
    const int m = logits.rows(), c = logits.cols();
    auto lv = logits.data();
    std::vector<double> probs(size_t(m) * c);
    for (int i = 0; i < m; ++i) {
        const double* row = lv.data() + size_t(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        for (int j = 0; j < c; ++j) probs[size_t(i) * c + j] = std::exp(row[j] - mx) / z;
    }
    return Tensor::from_data({m, c}, std::move(probs));
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    const int m = logits.rows(), c = logits.cols();
    if (int(labels.size()) != m) {
        throw DimensionError("softmax_cross_entropy: labels length " +
                             std::to_string(labels.size()) + " vs batch " + std::to_string(m));
    }
    for (int y : labels) {
        if (y < 0 || y >= c) {
            throw DataError("softmax_cross_entropy: label " + std::to_string(y) +
                            " out of range [0, " + std::to_string(c) + ")");
        }
    }
    auto lv = logits.data();
    std::vector<double> probs(size_t(m) * c);
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
        const double* row = lv.data() + size_t(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        for (int j = 0; j < c; ++j) probs[size_t(i) * c + j] = std::exp(row[j] - mx) / z;
        total += lse - row[labels[i]];
    }
    std::vector<double> delta = std::move(probs);
    for (int i = 0; i < m; ++i) delta[size_t(i) * c + labels[i]] -= 1.0;
    Tensor delta_t = Tensor::from_data({m, c}, std::move(delta));
    return make_op("softmax_cross_entropy", {1, 1}, {total / m}, {logits},
                   [delta_t, m](const Tensor& up) -> std::vector<Tensor> {
                       // d/dlogits = (softmax - onehot)/m, scaled by upstream
                       return {mul(delta_t, mul_scalar(up, 1.0 / m))};
                   });
}

// ---- autodiff engine ------------------------------------------------------------

namespace {

struct GradRun {
    std::unordered_map<detail::Node*, Tensor> gmap;
};

void run_autograd(const Tensor& root, std::span<const Tensor> wrt, bool create_graph,
                  bool accumulate_leaves, std::vector<Tensor>* wrt_grads) {
    if (root.size() != 1) {
        throw DimensionError("backward: loss must be scalar, got " + to_string(root.shape()));
    }
    auto zeros_for = [](const Tensor& w) { return Tensor::zeros(w.shape()); };
    if (!root.requires_grad()) {
        if (wrt_grads) {
            wrt_grads->clear();
            for (const auto& w : wrt) wrt_grads->push_back(zeros_for(w));
        }
        return;
    }

    // Ancestors of the root that require grad, via iterative DFS.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{root.node()};
    seen.insert(root.node());
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](auto* a, auto* b) { return a->id < b->id; });

    // Restrict work to nodes that can reach a requested target (everything,
    // when accumulating into leaves). Parents always precede children in id
    // order, so one ascending pass settles reachability.
    std::unordered_set<detail::Node*> wrt_set;
    for (const auto& w : wrt) wrt_set.insert(w.node());
    std::unordered_map<detail::Node*, bool> needed;
    for (detail::Node* n : order) {
        bool need = accumulate_leaves || wrt_set.count(n) > 0;
        if (!need) {
            for (const auto& p : n->parents) {
                auto it = needed.find(p.get());
                if (it != needed.end() && it->second) {
                    need = true;
                    break;
                }
            }
        }
        needed[n] = need;
    }

    GradRun run;
    run.gmap.emplace(root.node(), Tensor::scalar(1.0));

    const bool prev_mode = GradMode::enabled();
    GradMode::set(create_graph);
    try {
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node* n = *it;
            auto git = run.gmap.find(n);
            if (git == run.gmap.end() || !needed[n]) continue;
            Tensor up = git->second;

            if (accumulate_leaves && !n->backward_fn && n->requires_grad) {
                if (!n->grad_buf) {
                    n->grad_buf = std::make_shared<std::vector<double>>(n->value.size(), 0.0);
                }
                auto uv = up.data();
                for (size_t i = 0; i < uv.size(); ++i) {
                    double g = uv[i];
                    if (!std::isfinite(g)) {
                        throw NumericError("backward: non-finite gradient at node " +
                                           std::to_string(n->id) + " (" + n->op + ")");
                    }
                    (*n->grad_buf)[i] += g;
                }
            }

            if (!n->backward_fn) continue;
            auto pgrads = n->backward_fn(up);
            if (pgrads.size() != n->parents.size()) {
                throw NumericError(std::string("backward of ") + n->op +
                                   ": wrong number of parent gradients");
            }
            for (size_t i = 0; i < n->parents.size(); ++i) {
                detail::Node* p = n->parents[i].get();
                if (!p->requires_grad || !pgrads[i].defined()) continue;
                auto pit = run.gmap.find(p);
                if (pit == run.gmap.end()) {
                    run.gmap.emplace(p, pgrads[i]);
                } else {
                    pit->second = add(pit->second, pgrads[i]);
                }
            }
        }
    } catch (...) {
        GradMode::set(prev_mode);
        throw;
    }
    GradMode::set(prev_mode);

    if (wrt_grads) {
        wrt_grads->clear();
        for (const auto& w : wrt) {
            auto it = run.gmap.find(w.node());
            wrt_grads->push_back(it != run.gmap.end() ? it->second : zeros_for(w));
        }
    }
}

}  // namespace

void backward(const Tensor& loss, bool create_graph) {
    run_autograd(loss, {}, create_graph, /*accumulate_leaves=*/true, nullptr);
}

std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt, bool create_graph) {
    std::vector<Tensor> out;
    run_autograd(output, wrt, create_graph, /*accumulate_leaves=*/false, &out);
    return out;
}

// ---- parameters & optimizers -------------------------------------------------------

Parameter::Parameter(Tensor init) : value_(std::move(init)) {
    value_.set_requires_grad(true);
}

void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg) {
    NoGradGuard ng;
    for (Parameter* p : params) {
        auto w = p->value().data_mut();
        auto g = p->grad();
        if (p->m.empty()) {
            p->m.assign(w.size(), 0.0);
            p->v.assign(w.size(), 0.0);
        }
        p->steps += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, double(p->steps));
        const double bc2 = 1.0 - std::pow(cfg.beta2, double(p->steps));
        for (size_t i = 0; i < w.size(); ++i) {
            p->m[i] = cfg.beta1 * p->m[i] + (1.0 - cfg.beta1) * g[i];
            p->v[i] = cfg.beta2 * p->v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = p->m[i] / bc1;
            const double vhat = p->v[i] / bc2;
            w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

void sgd_step(std::span<Parameter* const> params, double lr) {
    NoGradGuard ng;
    for (Parameter* p : params) {
        auto w = p->value().data_mut();
        auto g = p->grad();
        for (size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
    }
}

void zero_grads(std::span<Parameter* const> params) {
    for (Parameter* p : params) p->zero_grad();
}

}  // namespace domadapt
