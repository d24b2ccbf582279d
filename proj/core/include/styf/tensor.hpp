#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace styf {

// Error taxonomy shared across the library. All map onto std::runtime_error
// so callers can catch broadly; the CLI maps UsageError/ConfigError to
// distinct exit codes.
struct DimError : std::runtime_error {
    explicit DimError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// uniform/normal mappings are hand-rolled so results are identical across
// standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Unbiased integer in [0, n) via rejection sampling.
    std::uint64_t uniform_u64(std::uint64_t n);
    std::size_t uniform_index(std::size_t n) { return static_cast<std::size_t>(uniform_u64(n)); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0);
    }
    float uniform_f32() { return static_cast<float>(uniform()); }

    // Standard normal via Box-Muller (cached second draw).
    float normal();

    // Derive an independent stream seed from (seed, stream id).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    float spare_ = 0.0f;
};

class Tape;

struct TensorImpl {
    std::vector<int> shape;     // row-major; library ops work on rank-2 {rows, cols}
    std::vector<float> data;
    std::vector<float> grad;    // allocated iff requires_grad
    bool requires_grad = false;
};

// Value-semantics handle over shared storage. Copying a Tensor aliases the
// same buffer, matching how graphs reference activations.
class Tensor {
public:
    Tensor() : impl_(std::make_shared<TensorImpl>()) {}

    static Tensor zeros(int rows, int cols);
    static Tensor full(int rows, int cols, float value);
    static Tensor from_data(int rows, int cols, std::vector<float> values);
    static Tensor randn(int rows, int cols, Rng& rng, float stddev);
    // Trainable leaf: grad buffer allocated up front.
    static Tensor param(int rows, int cols, Rng& rng, float stddev);
    static Tensor param_zeros(int rows, int cols);
    static Tensor param_full(int rows, int cols, float value);
    static Tensor scalar(float value) { return from_data(1, 1, {value}); }

    int rows() const { return impl_->shape[0]; }
    int cols() const { return impl_->shape[1]; }
    std::size_t numel() const { return impl_->data.size(); }
    const std::vector<int>& shape() const { return impl_->shape; }

    float* data() { return impl_->data.data(); }
    const float* data() const { return impl_->data.data(); }
    std::vector<float>& vec() { return impl_->data; }
    const std::vector<float>& vec() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v);
    float* grad() { return impl_->grad.data(); }
    const float* grad() const { return impl_->grad.data(); }
    const std::vector<float>& grad_vec() const { return impl_->grad; }
    void zero_grad();

    float at(int i, int j) const { return impl_->data[static_cast<std::size_t>(i) * cols() + j]; }
    float& at(int i, int j) { return impl_->data[static_cast<std::size_t>(i) * cols() + j]; }
    float item() const;

    bool all_finite() const;
    // Value copy detached from any graph.
    Tensor detach() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape. Ops append themselves in execution order, so walking
// backwards is a valid topological order; gradients accumulate additively
// across fan-out. A tape may be replayed backwards exactly once.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_fn,
                std::vector<std::shared_ptr<TensorImpl>> refs);
    // Seeds loss grad with 1 and replays all recorded ops in reverse.
    void backward(Tensor& loss);

    std::size_t size() const { return ops_.size(); }
    bool consumed() const { return used_; }

    static Tape* active();

private:
    friend class TapeScope;
    friend class NoGradScope;
    struct Op {
        std::function<void()> back;
        std::vector<std::shared_ptr<TensorImpl>> refs;  // keeps activations alive
    };
    std::vector<Op> ops_;
    bool used_ = false;
};

// RAII: makes a tape ambient for the current scope. Scopes nest.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();

private:
    Tape* prev_;
};

// RAII: disables recording inside the scope (inference / frozen passes).
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();

private:
    Tape* prev_;
};

// ---- differentiable ops ------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor add_const(const Tensor& a, float c);
// x: [m x n], bias: [1 x n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor matmul(const Tensor& a, const Tensor& b);
// a: [m x k], b: [n x k]  ->  a * b^T : [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Embedding lookup: stacks table rows by id. Backward scatter-adds.
Tensor rows_select(const Tensor& table, const std::vector<int>& ids);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, int offset, int count);
Tensor slice_cols(const Tensor& x, int offset, int count);
Tensor concat_cols(const std::vector<Tensor>& parts);
// v: [1 x n] replicated to [rows x n].
Tensor broadcast_row(const Tensor& v, int rows);
// Column means: [m x n] -> [1 x n].
Tensor mean_rows(const Tensor& x);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log_t(const Tensor& x);
Tensor clamp_min(const Tensor& x, float floor);
// Row-wise softmax with max-subtraction.
Tensor softmax(const Tensor& x);
// Row i is a softmax over columns 0..i; upper triangle is exactly zero and
// never enters the arithmetic of earlier rows.
Tensor causal_masked_softmax(const Tensor& scores);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);
// Teacher rows must sum to 1 (tol 1e-4). Gradients flow to the student only.
Tensor soft_cross_entropy(const Tensor& teacher_probs, const Tensor& student_logits);
// gamma/beta: [1 x cols]; may be parameters or graph outputs (adaptive case).
Tensor layer_norm_affine(const Tensor& h, const Tensor& gamma, const Tensor& beta, float eps);
Tensor dropout(const Tensor& x, float rate, Rng& rng);
Tensor weighted_sum_scalars(const std::vector<Tensor>& terms, const std::vector<float>& weights);

// Runs tape.backward(loss); kept as a free function to mirror the op set.
void backward(Tensor& loss, Tape& tape);

}  // namespace styf
