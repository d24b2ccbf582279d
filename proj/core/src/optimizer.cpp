#include "styf/optimizer.hpp"

#include <cmath>

namespace styf {

float cosine_lr_factor(long step, long total) {
    if (total <= 0) throw ConfigError("cosine_lr_factor: total steps must be positive");
    if (step < 0) throw ConfigError("cosine_lr_factor: negative step");
    if (step >= total) return 0.0f;
    return 0.5f * (1.0f + std::cos(3.14159265358979323846 * static_cast<double>(step) / static_cast<double>(total)));
}

void adam_step(std::vector<Tensor>& params, OptimizerState& state) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t p = 0; p < params.size(); ++p) {
            state.m[p].assign(params[p].numel(), 0.0f);
            state.v[p].assign(params[p].numel(), 0.0f);
        }
    }
    if (state.m.size() != params.size()) throw ContractError("adam_step: parameter list changed");

    state.step += 1;
    const AdamConfig& cfg = state.config;
    float lr = cfg.lr;
    if (cfg.schedule == LrSchedule::Cosine) lr *= cosine_lr_factor(state.step, cfg.total_steps);

    const float bc1 = 1.0f - std::pow(cfg.beta1, static_cast<float>(state.step));
    const float bc2 = 1.0f - std::pow(cfg.beta2, static_cast<float>(state.step));

    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = params[p];
        if (!t.requires_grad()) throw ContractError("adam_step: parameter without grad buffer");
        if (state.m[p].size() != t.numel()) throw ContractError("adam_step: moment shape mismatch");
        float* w = t.data();
        const float* g = t.grad();
        float* m = state.m[p].data();
        float* v = state.v[p].data();
        for (std::size_t i = 0; i < t.numel(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * g[i] * g[i];
            const float mhat = m[i] / bc1;
            const float vhat = v[i] / bc2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w[i]);
        }
    }
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (Tensor& t : params) {
        const float* g = t.grad();
        for (std::size_t i = 0; i < t.numel(); ++i) sq += static_cast<double>(g[i]) * g[i];
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const float s = static_cast<float>(max_norm / norm);
        for (Tensor& t : params) {
            float* g = t.grad();
            for (std::size_t i = 0; i < t.numel(); ++i) g[i] *= s;
        }
    }
    return norm;
}

void zero_grads(std::vector<Tensor>& params) {
    for (Tensor& t : params) t.zero_grad();
}

}  // namespace styf
