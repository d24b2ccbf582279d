#pragma once

#include <vector>

#include "styf/tensor.hpp"

namespace styf {

enum class LrSchedule { Constant, Cosine };

struct AdamConfig {
    float lr = 0.00025f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
    LrSchedule schedule = LrSchedule::Cosine;
    long total_steps = 0;  // required for cosine decay
};

// Per-parameter first/second moments plus a shared step counter.
struct OptimizerState {
    AdamConfig config;
    long step = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;

    explicit OptimizerState(AdamConfig cfg) : config(cfg) {}
};

// Cosine factor at a given step; reaches exactly 0 at step == total.
float cosine_lr_factor(long step, long total);

// One decoupled-weight-decay Adam update over the parameter list. Gradients
// are read from each tensor's grad buffer; call zero_grad afterwards.
void adam_step(std::vector<Tensor>& params, OptimizerState& state);

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

void zero_grads(std::vector<Tensor>& params);

}  // namespace styf
