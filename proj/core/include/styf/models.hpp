#pragma once

#include <string>
#include <utility>
#include <vector>

#include "styf/transformer.hpp"

namespace styf {

// Frozen reference language model H (plain decoder, no style machinery).
struct LmModel {
    TransformerParams tp;

    static LmModel init(ModelConfig cfg, Rng& rng);
    std::vector<Tensor> trainable_params() const { return tp.trainable_params(); }
    std::vector<std::pair<std::string, Tensor>> named_params() const { return tp.named_params("lm."); }
    void set_trainable(bool trainable) { tp.set_trainable(trainable); }
};

// Generator F: style encoder (plain stack + style head) and styled decoder.
struct GeneratorBundle {
    TransformerParams style_encoder;  // variant None
    StyleHeadParams style_head_params;
    TransformerParams decoder;        // carries the injection variant
    Variant variant = Variant::None;

    static GeneratorBundle init(ModelConfig decoder_cfg, Rng& rng);
    std::vector<Tensor> trainable_params() const;
    std::vector<std::pair<std::string, Tensor>> named_params() const;
    void set_trainable(bool trainable);
};

// Binary style comparator: mean-pool both feature sequences, concatenate,
// two-layer head ending in a sigmoid.
struct ComparatorNet {
    int dim = 0;
    Tensor w1, b1, w2, b2;

    static ComparatorNet init(int dim, Rng& rng);
    std::vector<Tensor> trainable_params() const { return {w1, b1, w2, b2}; }
    std::vector<std::pair<std::string, Tensor>> named_params() const;
    void set_trainable(bool trainable);
};

// Latent GAN discriminator: small causal transformer over feature
// sequences, mean pool, linear, sigmoid.
struct DiscriminatorNet {
    ModelConfig config;  // dim/heads/layers/max_seq; vocab unused
    Tensor pos;
    std::vector<LayerParams> layers;
    Tensor lnf_gamma, lnf_beta;
    Tensor head_w, head_b;

    static DiscriminatorNet init(int dim, int heads, int layers, int max_seq, Rng& rng);
    Tensor forward(const Tensor& features) const;  // [L x dim] -> probability [1 x 1]
    std::vector<Tensor> trainable_params() const;
    std::vector<std::pair<std::string, Tensor>> named_params() const;
    void set_trainable(bool trainable);
};

// z = style_head(encoder features). Deterministic for fixed weights.
Tensor style_encode(const std::vector<int>& reference_tokens, const GeneratorBundle& bundle);

struct TeacherForcedResult {
    Tensor logits;             // [T-1 x V]: row t predicts tokens[t+1]
    Tensor features;           // [T x dim] content rows (variant-B slot removed)
    std::vector<int> targets;  // tokens[1..T-1]
};

// One decoder pass over the full sequence (context is its prefix), with the
// style code taken from the reference.
TeacherForcedResult teacher_forced_forward(const std::vector<int>& tokens,
                                           const std::vector<int>& reference_tokens,
                                           const GeneratorBundle& bundle);

struct SamplingConfig {
    int top_k = 1;  // 1 == greedy
    float temperature = 1.0f;
};

struct GenerationResult {
    std::vector<int> tokens;  // exactly n_gen ids
    Tensor features;          // [n_gen x dim] decoder states at generated positions
};

// Autoregressive decoding. Sampling runs without gradient tracking; when a
// tape is active the returned features come from one taped pass over
// context + generation with the sampled ids held fixed.
GenerationResult free_running_generate(const std::vector<int>& context_tokens,
                                       const std::vector<int>& reference_tokens,
                                       const GeneratorBundle& bundle, int n_gen,
                                       const SamplingConfig& sampling, Rng& rng,
                                       bool want_features = true);

Tensor comparator_score(const Tensor& features_a, const Tensor& features_b, const ComparatorNet& comparator);

// Copies shared-architecture weights from H; variant-specific pieces stay
// at their identity-preserving init (variant D norm biases take H's
// layer-norm parameters so the styled decoder starts exactly at H).
void init_generator_from_lm(const LmModel& lm, GeneratorBundle& bundle);

}  // namespace styf
