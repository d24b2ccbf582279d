#include "styf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace styf {

// ---- rng -----------------------------------------------------------------

std::uint64_t Rng::uniform_u64(std::uint64_t n) {
    if (n == 0) throw ContractError("Rng::uniform_u64: n must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return x % n;
}

float Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586 * u2;
    spare_ = static_cast<float>(r * std::sin(theta));
    has_spare_ = true;
    return static_cast<float>(r * std::cos(theta));
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 over the combined value
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// ---- tensor --------------------------------------------------------------

namespace {

std::shared_ptr<TensorImpl> make_impl(int rows, int cols) {
    if (rows <= 0 || cols <= 0) throw DimError("Tensor: dims must be positive");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = {rows, cols};
    impl->data.assign(static_cast<std::size_t>(rows) * cols, 0.0f);
    return impl;
}

struct TensorAccess {
    static Tensor wrap(std::shared_ptr<TensorImpl> impl);
};

}  // namespace

Tensor Tensor::zeros(int rows, int cols) {
    Tensor t;
    t.impl_ = make_impl(rows, cols);
    return t;
}

Tensor Tensor::full(int rows, int cols, float value) {
    Tensor t = zeros(rows, cols);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
}

Tensor Tensor::from_data(int rows, int cols, std::vector<float> values) {
    Tensor t;
    t.impl_ = make_impl(rows, cols);
    if (values.size() != t.numel()) throw DimError("Tensor::from_data: size mismatch");
    t.impl_->data = std::move(values);
    return t;
}

Tensor Tensor::randn(int rows, int cols, Rng& rng, float stddev) {
    Tensor t = zeros(rows, cols);
    for (auto& v : t.impl_->data) v = rng.normal() * stddev;
    return t;
}

Tensor Tensor::param(int rows, int cols, Rng& rng, float stddev) {
    Tensor t = randn(rows, cols, rng, stddev);
    t.set_requires_grad(true);
    return t;
}

Tensor Tensor::param_zeros(int rows, int cols) {
    Tensor t = zeros(rows, cols);
    t.set_requires_grad(true);
    return t;
}

Tensor Tensor::param_full(int rows, int cols, float value) {
    Tensor t = full(rows, cols, value);
    t.set_requires_grad(true);
    return t;
}

void Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    if (v) {
        if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0f);
    } else {
        impl_->grad.clear();
        impl_->grad.shrink_to_fit();
    }
}

void Tensor::zero_grad() {
    if (impl_->requires_grad) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

float Tensor::item() const {
    if (numel() != 1) throw DimError("Tensor::item: not a scalar");
    return impl_->data[0];
}

bool Tensor::all_finite() const {
    for (float v : impl_->data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::detach() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
}

// ---- tape ----------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() = default;
Tape::~Tape() = default;

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn, std::vector<std::shared_ptr<TensorImpl>> refs) {
    if (used_) throw UsageError("Tape: recording after backward");
    ops_.push_back(Op{std::move(backward_fn), std::move(refs)});
}

void Tape::backward(Tensor& loss) {
    if (used_) throw UsageError("Tape: backward called twice");
    if (loss.numel() != 1) throw ContractError("Tape::backward: loss must be scalar");
    if (!loss.requires_grad()) throw ContractError("Tape::backward: loss does not require grad");
    used_ = true;
    loss.impl()->grad.assign(1, 1.0f);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->back();
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

NoGradScope::NoGradScope() : prev_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = prev_; }

void backward(Tensor& loss, Tape& tape) { tape.backward(loss); }

// ---- kernels ---------------------------------------------------------------

namespace {

// C[m x n] (+)= A[m x k] * B[k x n]; axpy inner loop vectorizes on j.
void mm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(float) * static_cast<std::size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<std::size_t>(i) * k;
        float* crow = c + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const float av = arow[l];
            if (av == 0.0f) continue;
            const float* brow = b + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] (+)= A[m x k] * B[n x k]^T. B is transposed into scratch so the
// inner loop stays an axpy (plain dot loops do not vectorize without
// reassociation).
void mm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    static thread_local std::vector<float> scratch;
    scratch.resize(static_cast<std::size_t>(k) * n);
    for (int j = 0; j < n; ++j)
        for (int l = 0; l < k; ++l) scratch[static_cast<std::size_t>(l) * n + j] = b[static_cast<std::size_t>(j) * k + l];
    mm_nn(a, scratch.data(), c, m, k, n, accumulate);
}

// C[m x n] (+)= A[k x m]^T * B[k x n].
void mm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(float) * static_cast<std::size_t>(m) * n);
    for (int l = 0; l < k; ++l) {
        const float* arow = a + static_cast<std::size_t>(l) * m;
        const float* brow = b + static_cast<std::size_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            const float av = arow[i];
            if (av == 0.0f) continue;
            float* crow = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

bool grad_wanted(const Tensor& t) { return t.requires_grad(); }

// Marks `out` as a graph node and records the backward closure when a tape
// is active and any input needs gradients.
template <typename Fn>
void record_op(Tensor& out, std::initializer_list<Tensor> inputs, Fn&& backward_fn) {
    Tape* tape = Tape::active();
    if (tape == nullptr) return;
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.requires_grad();
    if (!any) return;
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorImpl>> refs;
    refs.reserve(inputs.size() + 1);
    for (const Tensor& t : inputs) refs.push_back(t.impl());
    refs.push_back(out.impl());
    tape->record(std::forward<Fn>(backward_fn), std::move(refs));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) throw DimError(std::string(op) + ": shape mismatch");
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    record_op(out, {a, b}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
        if (ai->requires_grad)
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
        if (bi->requires_grad)
            for (std::size_t i = 0; i < n; ++i) bi->grad[i] += oi->grad[i];
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    record_op(out, {a, b}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
        if (ai->requires_grad)
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
        if (bi->requires_grad)
            for (std::size_t i = 0; i < n; ++i) bi->grad[i] -= oi->grad[i];
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    record_op(out, {a, b}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
        if (ai->requires_grad)
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * bi->data[i];
        if (bi->requires_grad)
            for (std::size_t i = 0; i < n; ++i) bi->grad[i] += oi->grad[i] * ai->data[i];
    });
    return out;
}

Tensor scale(const Tensor& a, float c) {
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
    record_op(out, {a}, [ai = a.impl(), oi = out.impl(), n, c] {
        if (ai->requires_grad)
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * c;
    });
    return out;
}

Tensor add_const(const Tensor& a, float c) {
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
    record_op(out, {a}, [ai = a.impl(), oi = out.impl(), n] {
        if (ai->requires_grad)
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
    });
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (bias.rows() != 1 || bias.cols() != x.cols()) throw DimError("add_bias: bias must be [1 x cols]");
    const int m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros(m, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + bias.data()[j];
    record_op(out, {x, bias}, [xi = x.impl(), bi = bias.impl(), oi = out.impl(), m, n] {
        if (xi->requires_grad)
            for (std::size_t i = 0; i < static_cast<std::size_t>(m) * n; ++i) xi->grad[i] += oi->grad[i];
        if (bi->requires_grad)
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) bi->grad[j] += oi->grad[static_cast<std::size_t>(i) * n + j];
    });
    return out;
}

// ---- matmul family ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw DimError("matmul: inner dims disagree");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros(m, n);
    mm_nn(a.data(), b.data(), out.data(), m, k, n, false);
    record_op(out, {a, b}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
        // dA += dC * B^T, dB += A^T * dC
        if (ai->requires_grad) mm_nt(oi->grad.data(), bi->data.data(), ai->grad.data(), m, n, k, true);
        if (bi->requires_grad) mm_tn(ai->data.data(), oi->grad.data(), bi->grad.data(), k, m, n, true);
    });
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw DimError("matmul_nt: inner dims disagree");
    const int m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out = Tensor::zeros(m, n);
    mm_nt(a.data(), b.data(), out.data(), m, k, n, false);
    record_op(out, {a, b}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
        // dA += dC * B, dB += dC^T * A
        if (ai->requires_grad) mm_nn(oi->grad.data(), bi->data.data(), ai->grad.data(), m, n, k, true);
        if (bi->requires_grad) mm_tn(oi->grad.data(), ai->data.data(), bi->grad.data(), n, m, k, true);
    });
    return out;
}

Tensor transpose(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    Tensor out = Tensor::zeros(n, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    record_op(out, {a}, [ai = a.impl(), oi = out.impl(), m, n] {
        if (!ai->requires_grad) return;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                ai->grad[static_cast<std::size_t>(i) * n + j] += oi->grad[static_cast<std::size_t>(j) * m + i];
    });
    return out;
}

// ---- structural ------------------------------------------------------------

Tensor rows_select(const Tensor& table, const std::vector<int>& ids) {
    if (ids.empty()) throw ContractError("rows_select: empty id list");
    const int n = table.cols();
    for (int id : ids)
        if (id < 0 || id >= table.rows()) throw ContractError("rows_select: id out of range");
    Tensor out = Tensor::zeros(static_cast<int>(ids.size()), n);
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::memcpy(out.data() + i * n, table.data() + static_cast<std::size_t>(ids[i]) * n, sizeof(float) * n);
    record_op(out, {table}, [ti = table.impl(), oi = out.impl(), ids, n] {
        if (!ti->requires_grad) return;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            float* dst = ti->grad.data() + static_cast<std::size_t>(ids[i]) * n;
            const float* src = oi->grad.data() + i * n;
            for (int j = 0; j < n; ++j) dst[j] += src[j];
        }
    });
    return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw DimError("concat_rows: col mismatch");
    const int ma = a.rows(), mb = b.rows(), n = a.cols();
    Tensor out = Tensor::zeros(ma + mb, n);
    std::memcpy(out.data(), a.data(), sizeof(float) * a.numel());
    std::memcpy(out.data() + a.numel(), b.data(), sizeof(float) * b.numel());
    record_op(out, {a, b}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), ma, mb, n] {
        const std::size_t na = static_cast<std::size_t>(ma) * n;
        if (ai->requires_grad)
            for (std::size_t i = 0; i < na; ++i) ai->grad[i] += oi->grad[i];
        if (bi->requires_grad)
            for (std::size_t i = 0; i < static_cast<std::size_t>(mb) * n; ++i) bi->grad[i] += oi->grad[na + i];
    });
    return out;
}

Tensor slice_rows(const Tensor& x, int offset, int count) {
    if (offset < 0 || count <= 0 || offset + count > x.rows()) throw DimError("slice_rows: bad range");
    const int n = x.cols();
    Tensor out = Tensor::zeros(count, n);
    std::memcpy(out.data(), x.data() + static_cast<std::size_t>(offset) * n, sizeof(float) * out.numel());
    record_op(out, {x}, [xi = x.impl(), oi = out.impl(), offset, count, n] {
        if (!xi->requires_grad) return;
        float* dst = xi->grad.data() + static_cast<std::size_t>(offset) * n;
        for (std::size_t i = 0; i < static_cast<std::size_t>(count) * n; ++i) dst[i] += oi->grad[i];
    });
    return out;
}

Tensor slice_cols(const Tensor& x, int offset, int count) {
    if (offset < 0 || count <= 0 || offset + count > x.cols()) throw DimError("slice_cols: bad range");
    const int m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros(m, count);
    for (int i = 0; i < m; ++i)
        std::memcpy(out.data() + static_cast<std::size_t>(i) * count,
                    x.data() + static_cast<std::size_t>(i) * n + offset, sizeof(float) * count);
    record_op(out, {x}, [xi = x.impl(), oi = out.impl(), offset, count, m, n] {
        if (!xi->requires_grad) return;
        for (int i = 0; i < m; ++i) {
            float* dst = xi->grad.data() + static_cast<std::size_t>(i) * n + offset;
            const float* src = oi->grad.data() + static_cast<std::size_t>(i) * count;
            for (int j = 0; j < count; ++j) dst[j] += src[j];
        }
    });
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimError("concat_cols: no parts");
    const int m = parts[0].rows();
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != m) throw DimError("concat_cols: row mismatch");
        total += p.cols();
    }
    Tensor out = Tensor::zeros(m, total);
    int off = 0;
    for (const Tensor& p : parts) {
        for (int i = 0; i < m; ++i)
            std::memcpy(out.data() + static_cast<std::size_t>(i) * total + off,
                        p.data() + static_cast<std::size_t>(i) * p.cols(), sizeof(float) * p.cols());
        off += p.cols();
    }
    Tape* tape = Tape::active();
    if (tape != nullptr) {
        bool any = false;
        for (const Tensor& p : parts) any = any || p.requires_grad();
        if (any) {
            out.set_requires_grad(true);
            std::vector<std::shared_ptr<TensorImpl>> impls;
            impls.reserve(parts.size());
            for (const Tensor& p : parts) impls.push_back(p.impl());
            auto refs = impls;
            refs.push_back(out.impl());
            tape->record(
                [impls, oi = out.impl(), m, total] {
                    int off2 = 0;
                    for (const auto& pi : impls) {
                        const int pc = pi->shape[1];
                        if (pi->requires_grad)
                            for (int i = 0; i < m; ++i) {
                                float* dst = pi->grad.data() + static_cast<std::size_t>(i) * pc;
                                const float* src = oi->grad.data() + static_cast<std::size_t>(i) * total + off2;
                                for (int j = 0; j < pc; ++j) dst[j] += src[j];
                            }
                        off2 += pc;
                    }
                },
                std::move(refs));
        }
    }
    return out;
}

Tensor broadcast_row(const Tensor& v, int rows) {
    if (v.rows() != 1) throw DimError("broadcast_row: input must be [1 x n]");
    const int n = v.cols();
    Tensor out = Tensor::zeros(rows, n);
    for (int i = 0; i < rows; ++i) std::memcpy(out.data() + static_cast<std::size_t>(i) * n, v.data(), sizeof(float) * n);
    record_op(out, {v}, [vi = v.impl(), oi = out.impl(), rows, n] {
        if (!vi->requires_grad) return;
        for (int i = 0; i < rows; ++i) {
            const float* src = oi->grad.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) vi->grad[j] += src[j];
        }
    });
    return out;
}

Tensor mean_rows(const Tensor& x) {
    const int m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros(1, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data()[j] += x.at(i, j);
    const float inv = 1.0f / static_cast<float>(m);
    for (int j = 0; j < n; ++j) out.data()[j] *= inv;
    record_op(out, {x}, [xi = x.impl(), oi = out.impl(), m, n, inv] {
        if (!xi->requires_grad) return;
        for (int i = 0; i < m; ++i) {
            float* dst = xi->grad.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) dst[j] += oi->grad[j] * inv;
        }
    });
    return out;
}

Tensor sum_all(const Tensor& x) {
    Tensor out = Tensor::zeros(1, 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
    out.data()[0] = static_cast<float>(acc);
    record_op(out, {x}, [xi = x.impl(), oi = out.impl()] {
        if (!xi->requires_grad) return;
        const float g = oi->grad[0];
        for (auto& v : xi->grad) v += g;
    });
    return out;
}

Tensor mean_all(const Tensor& x) {
    Tensor out = Tensor::zeros(1, 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
    const float inv = 1.0f / static_cast<float>(x.numel());
    out.data()[0] = static_cast<float>(acc) * inv;
    record_op(out, {x}, [xi = x.impl(), oi = out.impl(), inv] {
        if (!xi->requires_grad) return;
        const float g = oi->grad[0] * inv;
        for (auto& v : xi->grad) v += g;
    });
    return out;
}

// ---- nonlinearities ----------------------------------------------------------

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
}

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.rows(), x.cols());
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const float v = x.data()[i];
        const float u = kGeluC * (v + 0.044715f * v * v * v);
        out.data()[i] = 0.5f * v * (1.0f + std::tanh(u));
    }
    record_op(out, {x}, [xi = x.impl(), oi = out.impl(), n] {
        if (!xi->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i) {
            const float v = xi->data[i];
            const float u = kGeluC * (v + 0.044715f * v * v * v);
            const float t = std::tanh(u);
            const float du = kGeluC * (1.0f + 3.0f * 0.044715f * v * v);
            const float d = 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du;
            xi->grad[i] += oi->grad[i] * d;
        }
    });
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = Tensor::zeros(x.rows(), x.cols());
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = 1.0f / (1.0f + std::exp(-x.data()[i]));
    record_op(out, {x}, [xi = x.impl(), oi = out.impl(), n] {
        if (!xi->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i) {
            const float s = oi->data[i];
            xi->grad[i] += oi->grad[i] * s * (1.0f - s);
        }
    });
    return out;
}

Tensor log_t(const Tensor& x) {
    Tensor out = Tensor::zeros(x.rows(), x.cols());
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) {
        if (x.data()[i] <= 0.0f) throw ContractError("log_t: nonpositive input");
        out.data()[i] = std::log(x.data()[i]);
    }
    record_op(out, {x}, [xi = x.impl(), oi = out.impl(), n] {
        if (!xi->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[i] / xi->data[i];
    });
    return out;
}

Tensor clamp_min(const Tensor& x, float floor) {
    Tensor out = Tensor::zeros(x.rows(), x.cols());
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::max(x.data()[i], floor);
    record_op(out, {x}, [xi = x.impl(), oi = out.impl(), n, floor] {
        if (!xi->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i)
            if (xi->data[i] > floor) xi->grad[i] += oi->grad[i];
    });
    return out;
}

// ---- softmax family ----------------------------------------------------------

namespace {

void softmax_row(const float* in, float* out, int n) {
    float mx = in[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
        out[j] = std::exp(in[j] - mx);
        sum += out[j];
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (int j = 0; j < n; ++j) out[j] *= inv;
}

}  // namespace

Tensor softmax(const Tensor& x) {
    const int m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros(m, n);
    for (int i = 0; i < m; ++i)
        softmax_row(x.data() + static_cast<std::size_t>(i) * n, out.data() + static_cast<std::size_t>(i) * n, n);
    record_op(out, {x}, [xi = x.impl(), oi = out.impl(), m, n] {
        if (!xi->requires_grad) return;
        for (int i = 0; i < m; ++i) {
            const float* y = oi->data.data() + static_cast<std::size_t>(i) * n;
            const float* gy = oi->grad.data() + static_cast<std::size_t>(i) * n;
            float* gx = xi->grad.data() + static_cast<std::size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += static_cast<double>(gy[j]) * y[j];
            const float d = static_cast<float>(dot);
            for (int j = 0; j < n; ++j) gx[j] += (gy[j] - d) * y[j];
        }
    });
    return out;
}

Tensor causal_masked_softmax(const Tensor& scores) {
    if (scores.rows() != scores.cols()) throw DimError("causal_masked_softmax: matrix must be square");
    const int n = scores.rows();
    Tensor out = Tensor::zeros(n, n);
    // Row i only ever reads columns 0..i, so later positions cannot leak
    // into earlier rows even at the bit level.
    for (int i = 0; i < n; ++i) {
        const float* in = scores.data() + static_cast<std::size_t>(i) * n;
        float* o = out.data() + static_cast<std::size_t>(i) * n;
        softmax_row(in, o, i + 1);
    }
    record_op(out, {scores}, [si = scores.impl(), oi = out.impl(), n] {
        if (!si->requires_grad) return;
        for (int i = 0; i < n; ++i) {
            const float* y = oi->data.data() + static_cast<std::size_t>(i) * n;
            const float* gy = oi->grad.data() + static_cast<std::size_t>(i) * n;
            float* gx = si->grad.data() + static_cast<std::size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j <= i; ++j) dot += static_cast<double>(gy[j]) * y[j];
            const float d = static_cast<float>(dot);
            for (int j = 0; j <= i; ++j) gx[j] += (gy[j] - d) * y[j];
        }
    });
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    const int t = logits.rows(), v = logits.cols();
    if (static_cast<int>(targets.size()) != t) throw DimError("cross_entropy: target count mismatch");
    for (int id : targets)
        if (id < 0 || id >= v) throw ContractError("cross_entropy: target out of vocabulary");
    std::vector<float> probs(static_cast<std::size_t>(t) * v);
    double loss = 0.0;
    for (int i = 0; i < t; ++i) {
        const float* row = logits.data() + static_cast<std::size_t>(i) * v;
        float* p = probs.data() + static_cast<std::size_t>(i) * v;
        softmax_row(row, p, v);
        loss -= std::log(std::max(static_cast<double>(p[targets[i]]), 1e-30));
    }
    Tensor out = Tensor::scalar(static_cast<float>(loss / t));
    record_op(out, {logits}, [li = logits.impl(), oi = out.impl(), probs = std::move(probs), targets, t, v] {
        if (!li->requires_grad) return;
        const float g = oi->grad[0] / static_cast<float>(t);
        for (int i = 0; i < t; ++i) {
            const float* p = probs.data() + static_cast<std::size_t>(i) * v;
            float* gl = li->grad.data() + static_cast<std::size_t>(i) * v;
            for (int j = 0; j < v; ++j) gl[j] += g * p[j];
            gl[targets[i]] -= g;
        }
    });
    return out;
}

Tensor soft_cross_entropy(const Tensor& teacher_probs, const Tensor& student_logits) {
    check_same_shape(teacher_probs, student_logits, "soft_cross_entropy");
    const int t = teacher_probs.rows(), v = teacher_probs.cols();
    for (int i = 0; i < t; ++i) {
        double rowsum = 0.0;
        for (int j = 0; j < v; ++j) rowsum += teacher_probs.at(i, j);
        if (std::abs(rowsum - 1.0) > 1e-4) throw ContractError("soft_cross_entropy: teacher row not normalized");
    }
    std::vector<float> probs(static_cast<std::size_t>(t) * v);
    double loss = 0.0;
    for (int i = 0; i < t; ++i) {
        const float* row = student_logits.data() + static_cast<std::size_t>(i) * v;
        float* p = probs.data() + static_cast<std::size_t>(i) * v;
        softmax_row(row, p, v);
        for (int j = 0; j < v; ++j) {
            const float pt = teacher_probs.at(i, j);
            if (pt != 0.0f) loss -= static_cast<double>(pt) * std::log(std::max(static_cast<double>(p[j]), 1e-30));
        }
    }
    Tensor out = Tensor::scalar(static_cast<float>(loss / t));
    // Teacher is a stop-gradient input by definition.
    record_op(out, {student_logits},
              [si = student_logits.impl(), ti = teacher_probs.impl(), oi = out.impl(), probs = std::move(probs), t, v] {
                  if (!si->requires_grad) return;
                  const float g = oi->grad[0] / static_cast<float>(t);
                  for (int i = 0; i < t; ++i) {
                      const float* p = probs.data() + static_cast<std::size_t>(i) * v;
                      const float* pt = ti->data.data() + static_cast<std::size_t>(i) * v;
                      float* gl = si->grad.data() + static_cast<std::size_t>(i) * v;
                      for (int j = 0; j < v; ++j) gl[j] += g * (p[j] - pt[j]);
                  }
              });
    return out;
}

Tensor layer_norm_affine(const Tensor& h, const Tensor& gamma, const Tensor& beta, float eps) {
    const int m = h.rows(), n = h.cols();
    if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n)
        throw DimError("layer_norm_affine: gamma/beta must be [1 x cols]");
    Tensor out = Tensor::zeros(m, n);
    std::vector<float> xhat(static_cast<std::size_t>(m) * n);
    std::vector<float> inv_std(m);
    for (int i = 0; i < m; ++i) {
        const float* row = h.data() + static_cast<std::size_t>(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += row[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= n;
        const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        inv_std[i] = is;
        float* xh = xhat.data() + static_cast<std::size_t>(i) * n;
        float* o = out.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            xh[j] = (row[j] - static_cast<float>(mean)) * is;
            o[j] = gamma.data()[j] * xh[j] + beta.data()[j];
        }
    }
    record_op(out, {h, gamma, beta},
              [hi = h.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(),
               xhat = std::move(xhat), inv_std = std::move(inv_std), m, n] {
                  for (int i = 0; i < m; ++i) {
                      const float* xh = xhat.data() + static_cast<std::size_t>(i) * n;
                      const float* go = oi->grad.data() + static_cast<std::size_t>(i) * n;
                      if (bi->requires_grad)
                          for (int j = 0; j < n; ++j) bi->grad[j] += go[j];
                      if (gi->requires_grad)
                          for (int j = 0; j < n; ++j) gi->grad[j] += go[j] * xh[j];
                      if (hi->requires_grad) {
                          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                          for (int j = 0; j < n; ++j) {
                              const double dxh = static_cast<double>(go[j]) * gi->data[j];
                              sum_dxhat += dxh;
                              sum_dxhat_xhat += dxh * xh[j];
                          }
                          const float mean_dxhat = static_cast<float>(sum_dxhat / n);
                          const float mean_dxhat_xhat = static_cast<float>(sum_dxhat_xhat / n);
                          float* gh = hi->grad.data() + static_cast<std::size_t>(i) * n;
                          for (int j = 0; j < n; ++j) {
                              const float dxh = go[j] * gi->data[j];
                              gh[j] += inv_std[i] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                          }
                      }
                  }
              });
    return out;
}

Tensor dropout(const Tensor& x, float rate, Rng& rng) {
    if (rate < 0.0f || rate >= 1.0f) throw ContractError("dropout: rate must be in [0, 1)");
    if (rate == 0.0f) return x;
    const std::size_t n = x.numel();
    std::vector<float> mask(n);
    const float keep = 1.0f - rate;
    for (std::size_t i = 0; i < n; ++i) mask[i] = rng.uniform_f32() < rate ? 0.0f : 1.0f / keep;
    Tensor out = Tensor::zeros(x.rows(), x.cols());
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * mask[i];
    record_op(out, {x}, [xi = x.impl(), oi = out.impl(), mask = std::move(mask), n] {
        if (!xi->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[i] * mask[i];
    });
    return out;
}

Tensor weighted_sum_scalars(const std::vector<Tensor>& terms, const std::vector<float>& weights) {
    if (terms.empty() || terms.size() != weights.size())
        throw DimError("weighted_sum_scalars: term/weight count mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (terms[i].numel() != 1) throw DimError("weighted_sum_scalars: non-scalar term");
        acc += static_cast<double>(weights[i]) * terms[i].item();
    }
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    Tape* tape = Tape::active();
    if (tape != nullptr) {
        bool any = false;
        for (const Tensor& t : terms) any = any || t.requires_grad();
        if (any) {
            out.set_requires_grad(true);
            std::vector<std::shared_ptr<TensorImpl>> impls;
            for (const Tensor& t : terms) impls.push_back(t.impl());
            auto refs = impls;
            refs.push_back(out.impl());
            tape->record(
                [impls, weights, oi = out.impl()] {
                    for (std::size_t i = 0; i < impls.size(); ++i)
                        if (impls[i]->requires_grad) impls[i]->grad[0] += weights[i] * oi->grad[0];
                },
                std::move(refs));
        }
    }
    return out;
}

}  // namespace styf
