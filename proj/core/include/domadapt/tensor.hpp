#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "domadapt/common.hpp"

namespace domadapt {

// Dense rank-<=2 tensor of doubles. Scalars are 1x1, row vectors 1xn.
struct Shape {
    int rows = 0;
    int cols = 0;

    int64_t numel() const { return int64_t(rows) * cols; }
    bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

class Tensor;

namespace detail {

using BackwardFn = std::function<std::vector<Tensor>(const Tensor& upstream)>;

struct Node {
    Shape shape;
    std::vector<double> value;
    bool requires_grad = false;
    uint64_t id = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward_fn;
    // Leaf gradient accumulator, allocated on first use. Kept as a plain
    // buffer so optimizer state never retains graph history.
    std::shared_ptr<std::vector<double>> grad_buf;
};

}  // namespace detail

// Records nodes in creation order (creation order is topological by
// construction). One tape per thread; Checkpoint truncates back to a mark
// so per-step graphs are released after each optimizer update.
class Tape {
  public:
    static Tape& current();

    uint64_t register_node(const std::shared_ptr<detail::Node>& n);
    size_t size() const { return nodes_.size(); }
    void truncate(size_t mark);

    class Checkpoint {
      public:
        Checkpoint() : mark_(Tape::current().size()) {}
        ~Checkpoint() { Tape::current().truncate(mark_); }
        Checkpoint(const Checkpoint&) = delete;
        Checkpoint& operator=(const Checkpoint&) = delete;

      private:
        size_t mark_;
    };

  private:
    std::vector<std::shared_ptr<detail::Node>> nodes_;
    uint64_t next_id_ = 1;
};

// Scoped control of graph recording. Ops record backward edges only while
// grad mode is enabled (the default).
class GradMode {
  public:
    static bool enabled();
    static void set(bool on);
};

class NoGradGuard {
  public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradGuard() { GradMode::set(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);
    static Tensor scalar(double v);
    static Tensor from_data(Shape s, std::vector<double> data);
    static Tensor randn(Shape s, std::mt19937_64& rng, double stddev = 1.0);
    static Tensor rand_uniform(Shape s, std::mt19937_64& rng, double lo, double hi);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rows() const { return shape().rows; }
    int cols() const { return shape().cols; }
    int64_t size() const { return shape().numel(); }

    std::span<const double> data() const;
    // Mutable access to a leaf's storage (graph inputs, parameters).
    std::span<double> data_mut();

    double item() const;  // scalar tensors only
    double at(int r, int c) const;

    Tensor& set_requires_grad(bool on);
    bool requires_grad() const;
    // Same values, no graph history, never requires grad.
    Tensor detach() const;

    // Leaf gradient accumulated by backward().
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> grad_mut();
    void zero_grad();

    uint64_t node_id() const;
    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& shared_node() const { return node_; }

    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  private:
    std::shared_ptr<detail::Node> node_;
};

// ---- primitive elementwise / matrix ops ------------------------------------
// Binary elementwise ops accept equal shapes, or a 1x1 scalar on either side.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor sqrt_(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);  // log(1 + e^x), numerically stable

Tensor sum(const Tensor& a);       // -> 1x1
Tensor mean(const Tensor& a);      // -> 1x1
Tensor sum_rows(const Tensor& a);  // column sums: m x n -> 1 x n
Tensor sum_cols(const Tensor& a);  // row sums:    m x n -> m x 1
Tensor broadcast_rows(const Tensor& a, int m);  // 1 x n -> m x n
Tensor broadcast_cols(const Tensor& a, int n);  // m x 1 -> m x n

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }

// ---- composites -------------------------------------------------------------
// x[m x k] * W[k x n] + b[1 x n] broadcast over rows.
Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b);

// Per-row L2 norm, m x n -> m x 1. A tiny floor inside the sqrt keeps the
// derivative finite at exactly-zero rows.
Tensor row_l2_norm(const Tensor& a, double floor = 1e-12);

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;

    explicit BatchNormState(int n = 0)
        : running_mean(n, 0.0), running_var(n, 1.0) {}
};

// Train mode normalizes by batch statistics (biased variance + eps) and
// updates running stats in place; eval mode applies the running stats.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  bool training, BatchNormState& state,
                  double momentum = 0.1, double eps = 1e-5);

// Mean over the batch of -log softmax(logits)[label], max-stabilized.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Row-wise softmax probabilities as a plain (detached) tensor.
Tensor softmax_probs(const Tensor& logits);

// ---- autodiff drivers -------------------------------------------------------
// Accumulates gradients of a scalar loss into every reachable leaf that
// requires grad. With create_graph the backward computation itself is
// recorded, so gradients obtained through grad() stay differentiable.
void backward(const Tensor& loss, bool create_graph = false);

// Gradients of a scalar output w.r.t. selected tensors, without touching
// leaf accumulators. The double-backprop entry point.
std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt,
                         bool create_graph);

// ---- parameters & optimizers -------------------------------------------------
class Parameter {
  public:
    Parameter() = default;
    explicit Parameter(Tensor init);

    Tensor& value() { return value_; }
    const Tensor& value() const { return value_; }
    Shape shape() const { return value_.shape(); }

    std::span<double> grad() { return value_.grad_mut(); }
    void zero_grad() { value_.zero_grad(); }

    // Adam moment buffers, lazily sized on first step.
    std::vector<double> m, v;
    int64_t steps = 0;

  private:
    Tensor value_;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg);
void sgd_step(std::span<Parameter* const> params, double lr);
void zero_grads(std::span<Parameter* const> params);

}  // namespace domadapt
