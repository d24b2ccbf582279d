#pragma once

#include <string>
#include <utility>
#include <vector>

#include "styf/tensor.hpp"

namespace styf {

// Style-injection variants. None is the plain language model used for the
// frozen reference net; A..D inject the style code at different points.
enum class Variant { None, A, B, C, D };

Variant variant_from_string(const std::string& s);
std::string variant_to_string(Variant v);

struct ModelConfig {
    int dim = 64;        // hidden width, divisible by heads
    int heads = 4;
    int layers = 4;
    int max_seq = 64;    // content positions; the position table carries one extra row
    int vocab = 260;     // 256 byte values + BOS/EOS/PAD/UNK
    Variant variant = Variant::None;
    float ln_eps = 1e-5f;
    float dropout_rate = 0.0f;

    int head_dim() const { return dim / heads; }
    void validate() const;
};

// One attention + MLP block. Base layer-norm affines exist for every
// variant; the style-modulation nets are allocated only when the variant
// uses them.
struct LayerParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    // Variant D: affine maps z -> per-channel scale / bias, one pair per norm site.
    Tensor gamma1_w, gamma1_b, beta1_w, beta1_b;
    Tensor gamma2_w, gamma2_b, beta2_w, beta2_b;
    // Variant C: affine map z -> shared query.
    Tensor style_q_w, style_q_b;
};

struct Embeddings {
    Tensor token;     // [vocab x dim]
    Tensor position;  // [(max_seq + 1) x dim]; row 0 is the variant-B style slot,
                      // content position t uses row t + 1 for every variant
};

struct TransformerParams {
    ModelConfig config;
    Embeddings emb;
    std::vector<LayerParams> layers;
    Tensor lnf_gamma, lnf_beta;

    static TransformerParams init(const ModelConfig& cfg, Rng& rng);

    std::vector<Tensor> trainable_params() const;
    std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
    void set_trainable(bool trainable);
};

// 3-layer position-wise MLP applied per token, mean-pooled to a single code.
// The last layer starts at zero so a fresh encoder emits z = 0.
struct StyleHeadParams {
    Tensor w1, b1, w2, b2, w3, b3;

    static StyleHeadParams init(int dim, Rng& rng);
    std::vector<Tensor> trainable_params() const;
    std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
    void set_trainable(bool trainable);
};

struct ForwardResult {
    Tensor features;  // [L' x dim], post final layer norm
    Tensor logits;    // [L' x vocab] (empty tensor when not requested)
};

// Multi-head causal self-attention over pre-normalized activations,
// including the qkv/output projections. Variant C swaps every content query
// for the broadcast style query.
Tensor causal_attention(const Tensor& x, const LayerParams& p, const ModelConfig& cfg,
                        const Tensor* style_code);

// Eq-style adaptive norm: per-token statistics over channels, affine from z.
Tensor adaptive_layer_norm(const Tensor& h, const Tensor& z, const Tensor& gamma_w,
                           const Tensor& gamma_b, const Tensor& beta_w, const Tensor& beta_b,
                           float eps);

// Full decoder pass. z is required for variants A-D. Variant B prepends the
// style slot, so the output length is tokens.size() + 1; callers drop the
// slot row when aligning logits. Logits share the token embedding.
ForwardResult transformer_forward(const std::vector<int>& tokens, const TransformerParams& params,
                                  const Tensor* z, bool want_logits = true,
                                  Rng* dropout_rng = nullptr);

// Runs a stack of blocks over an already-embedded input (used by nets that
// consume feature sequences instead of tokens).
Tensor transformer_layers_forward(const Tensor& x, const std::vector<LayerParams>& layers,
                                  const ModelConfig& cfg, const Tensor* z,
                                  Rng* dropout_rng = nullptr);

Tensor style_head(const Tensor& per_token_feats, const StyleHeadParams& p);

}  // namespace styf
