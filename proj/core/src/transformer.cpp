#include "styf/transformer.hpp"

#include <cmath>

namespace styf {

Variant variant_from_string(const std::string& s) {
    if (s == "none") return Variant::None;
    if (s == "A" || s == "a") return Variant::A;
    if (s == "B" || s == "b") return Variant::B;
    if (s == "C" || s == "c") return Variant::C;
    if (s == "D" || s == "d") return Variant::D;
    throw ConfigError("unknown variant: " + s);
}

std::string variant_to_string(Variant v) {
    switch (v) {
        case Variant::None: return "none";
        case Variant::A: return "A";
        case Variant::B: return "B";
        case Variant::C: return "C";
        case Variant::D: return "D";
    }
    return "none";
}

void ModelConfig::validate() const {
    if (dim <= 0 || heads <= 0 || layers <= 0) throw ConfigError("ModelConfig: dims must be positive");
    if (dim % heads != 0) throw ConfigError("ModelConfig: dim not divisible by heads");
    if (max_seq < 2) throw ConfigError("ModelConfig: max_seq must be >= 2");
    if (vocab < 4) throw ConfigError("ModelConfig: vocab too small for special tokens");
    if (ln_eps <= 0.0f) throw ConfigError("ModelConfig: ln_eps must be positive");
}

namespace {

constexpr float kInitStd = 0.02f;

Tensor affine_row(const Tensor& z, const Tensor& w, const Tensor& b) {
    return add_bias(matmul(z, w), b);
}

}  // namespace

TransformerParams TransformerParams::init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    TransformerParams p;
    p.config = cfg;
    const int d = cfg.dim;
    p.emb.token = Tensor::param(cfg.vocab, d, rng, kInitStd);
    p.emb.position = Tensor::param(cfg.max_seq + 1, d, rng, kInitStd);
    p.layers.resize(cfg.layers);
    for (LayerParams& lp : p.layers) {
        lp.wq = Tensor::param(d, d, rng, kInitStd);
        lp.bq = Tensor::param_zeros(1, d);
        lp.wk = Tensor::param(d, d, rng, kInitStd);
        lp.bk = Tensor::param_zeros(1, d);
        lp.wv = Tensor::param(d, d, rng, kInitStd);
        lp.bv = Tensor::param_zeros(1, d);
        lp.wo = Tensor::param(d, d, rng, kInitStd);
        lp.bo = Tensor::param_zeros(1, d);
        lp.mlp_w1 = Tensor::param(d, 4 * d, rng, kInitStd);
        lp.mlp_b1 = Tensor::param_zeros(1, 4 * d);
        lp.mlp_w2 = Tensor::param(4 * d, d, rng, kInitStd);
        lp.mlp_b2 = Tensor::param_zeros(1, d);
        lp.ln1_gamma = Tensor::param_full(1, d, 1.0f);
        lp.ln1_beta = Tensor::param_zeros(1, d);
        lp.ln2_gamma = Tensor::param_full(1, d, 1.0f);
        lp.ln2_beta = Tensor::param_zeros(1, d);
        if (cfg.variant == Variant::D) {
            // Identity start: gamma(z) = 1, beta(z) = 0 for any z.
            lp.gamma1_w = Tensor::param_zeros(d, d);
            lp.gamma1_b = Tensor::param_full(1, d, 1.0f);
            lp.beta1_w = Tensor::param_zeros(d, d);
            lp.beta1_b = Tensor::param_zeros(1, d);
            lp.gamma2_w = Tensor::param_zeros(d, d);
            lp.gamma2_b = Tensor::param_full(1, d, 1.0f);
            lp.beta2_w = Tensor::param_zeros(d, d);
            lp.beta2_b = Tensor::param_zeros(1, d);
        }
        if (cfg.variant == Variant::C) {
            lp.style_q_w = Tensor::param(d, d, rng, kInitStd);
            lp.style_q_b = Tensor::param_zeros(1, d);
        }
    }
    p.lnf_gamma = Tensor::param_full(1, d, 1.0f);
    p.lnf_beta = Tensor::param_zeros(1, d);
    return p;
}

std::vector<Tensor> TransformerParams::trainable_params() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params("")) out.push_back(t);
    return out;
}

std::vector<std::pair<std::string, Tensor>> TransformerParams::named_params(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto push = [&](const std::string& name, const Tensor& t) { out.emplace_back(prefix + name, t); };
    push("emb.token", emb.token);
    push("emb.position", emb.position);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerParams& lp = layers[i];
        const std::string base = "layer" + std::to_string(i) + ".";
        push(base + "wq", lp.wq);
        push(base + "bq", lp.bq);
        push(base + "wk", lp.wk);
        push(base + "bk", lp.bk);
        push(base + "wv", lp.wv);
        push(base + "bv", lp.bv);
        push(base + "wo", lp.wo);
        push(base + "bo", lp.bo);
        push(base + "mlp_w1", lp.mlp_w1);
        push(base + "mlp_b1", lp.mlp_b1);
        push(base + "mlp_w2", lp.mlp_w2);
        push(base + "mlp_b2", lp.mlp_b2);
        push(base + "ln1_gamma", lp.ln1_gamma);
        push(base + "ln1_beta", lp.ln1_beta);
        push(base + "ln2_gamma", lp.ln2_gamma);
        push(base + "ln2_beta", lp.ln2_beta);
        if (config.variant == Variant::D) {
            push(base + "gamma1_w", lp.gamma1_w);
            push(base + "gamma1_b", lp.gamma1_b);
            push(base + "beta1_w", lp.beta1_w);
            push(base + "beta1_b", lp.beta1_b);
            push(base + "gamma2_w", lp.gamma2_w);
            push(base + "gamma2_b", lp.gamma2_b);
            push(base + "beta2_w", lp.beta2_w);
            push(base + "beta2_b", lp.beta2_b);
        }
        if (config.variant == Variant::C) {
            push(base + "style_q_w", lp.style_q_w);
            push(base + "style_q_b", lp.style_q_b);
        }
    }
    push("lnf_gamma", lnf_gamma);
    push("lnf_beta", lnf_beta);
    return out;
}

void TransformerParams::set_trainable(bool trainable) {
    for (auto& [name, t] : named_params("")) const_cast<Tensor&>(t).set_requires_grad(trainable);
}

StyleHeadParams StyleHeadParams::init(int dim, Rng& rng) {
    StyleHeadParams p;
    p.w1 = Tensor::param(dim, dim, rng, kInitStd);
    p.b1 = Tensor::param_zeros(1, dim);
    p.w2 = Tensor::param(dim, dim, rng, kInitStd);
    p.b2 = Tensor::param_zeros(1, dim);
    // Zero last layer: a freshly initialized encoder emits z = 0, so styled
    // decoders start exactly at the plain language model.
    p.w3 = Tensor::param_zeros(dim, dim);
    p.b3 = Tensor::param_zeros(1, dim);
    return p;
}

std::vector<Tensor> StyleHeadParams::trainable_params() const {
    return {w1, b1, w2, b2, w3, b3};
}

std::vector<std::pair<std::string, Tensor>> StyleHeadParams::named_params(const std::string& prefix) const {
    return {{prefix + "w1", w1}, {prefix + "b1", b1}, {prefix + "w2", w2},
            {prefix + "b2", b2}, {prefix + "w3", w3}, {prefix + "b3", b3}};
}

void StyleHeadParams::set_trainable(bool trainable) {
    for (Tensor t : trainable_params()) t.set_requires_grad(trainable);
}

Tensor causal_attention(const Tensor& x, const LayerParams& p, const ModelConfig& cfg,
                        const Tensor* style_code) {
    const int len = x.rows();
    const int hd = cfg.head_dim();
    Tensor q;
    if (cfg.variant == Variant::C) {
        if (style_code == nullptr) throw ContractError("causal_attention: variant C requires a style code");
        // The same style-derived query is used at every position.
        q = broadcast_row(affine_row(*style_code, p.style_q_w, p.style_q_b), len);
    } else {
        q = affine_row(x, p.wq, p.bq);
    }
    Tensor k = affine_row(x, p.wk, p.bk);
    Tensor v = affine_row(x, p.wv, p.bv);
    const float sc = 1.0f / std::sqrt(static_cast<float>(hd));
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(cfg.heads);
    for (int h = 0; h < cfg.heads; ++h) {
        const int off = h * hd;
        Tensor qh = slice_cols(q, off, hd);
        Tensor kh = slice_cols(k, off, hd);
        Tensor vh = slice_cols(v, off, hd);
        Tensor scores = scale(matmul_nt(qh, kh), sc);
        Tensor weights = causal_masked_softmax(scores);
        head_outputs.push_back(matmul(weights, vh));
    }
    Tensor merged = concat_cols(head_outputs);
    return affine_row(merged, p.wo, p.bo);
}

Tensor adaptive_layer_norm(const Tensor& h, const Tensor& z, const Tensor& gamma_w,
                           const Tensor& gamma_b, const Tensor& beta_w, const Tensor& beta_b,
                           float eps) {
    Tensor gamma = affine_row(z, gamma_w, gamma_b);
    Tensor beta = affine_row(z, beta_w, beta_b);
    return layer_norm_affine(h, gamma, beta, eps);
}

namespace {

Tensor norm_site(const Tensor& h, const LayerParams& p, const ModelConfig& cfg, int site,
                 const Tensor* z) {
    if (cfg.variant == Variant::D) {
        if (z == nullptr) throw ContractError("transformer: variant D requires a style code");
        if (site == 1) return adaptive_layer_norm(h, *z, p.gamma1_w, p.gamma1_b, p.beta1_w, p.beta1_b, cfg.ln_eps);
        return adaptive_layer_norm(h, *z, p.gamma2_w, p.gamma2_b, p.beta2_w, p.beta2_b, cfg.ln_eps);
    }
    if (site == 1) return layer_norm_affine(h, p.ln1_gamma, p.ln1_beta, cfg.ln_eps);
    return layer_norm_affine(h, p.ln2_gamma, p.ln2_beta, cfg.ln_eps);
}

Tensor layer_forward(const Tensor& h, const LayerParams& p, const ModelConfig& cfg, const Tensor* z,
                     Rng* dropout_rng) {
    Tensor att = causal_attention(norm_site(h, p, cfg, 1, z), p, cfg, z);
    if (cfg.dropout_rate > 0.0f && dropout_rng != nullptr) att = dropout(att, cfg.dropout_rate, *dropout_rng);
    Tensor h1 = add(h, att);
    Tensor x2 = norm_site(h1, p, cfg, 2, z);
    Tensor ff = add_bias(matmul(gelu(add_bias(matmul(x2, p.mlp_w1), p.mlp_b1)), p.mlp_w2), p.mlp_b2);
    if (cfg.dropout_rate > 0.0f && dropout_rng != nullptr) ff = dropout(ff, cfg.dropout_rate, *dropout_rng);
    return add(h1, ff);
}

}  // namespace

Tensor transformer_layers_forward(const Tensor& x, const std::vector<LayerParams>& layers,
                                  const ModelConfig& cfg, const Tensor* z, Rng* dropout_rng) {
    Tensor h = x;
    for (const LayerParams& lp : layers) h = layer_forward(h, lp, cfg, z, dropout_rng);
    return h;
}

ForwardResult transformer_forward(const std::vector<int>& tokens, const TransformerParams& params,
                                  const Tensor* z, bool want_logits, Rng* dropout_rng) {
    const ModelConfig& cfg = params.config;
    const int len = static_cast<int>(tokens.size());
    if (len < 1) throw ContractError("transformer_forward: empty token sequence");
    if (len > cfg.max_seq) throw ContractError("transformer_forward: sequence exceeds max length");
    if (cfg.variant != Variant::None && z == nullptr)
        throw ContractError("transformer_forward: style code required for variant " + variant_to_string(cfg.variant));
    for (int id : tokens)
        if (id < 0 || id >= cfg.vocab) throw ContractError("transformer_forward: token id out of vocabulary");

    std::vector<int> pos_ids(len);
    for (int i = 0; i < len; ++i) pos_ids[i] = i + 1;
    Tensor x = add(rows_select(params.emb.token, tokens), rows_select(params.emb.position, pos_ids));

    if (cfg.variant == Variant::A) {
        x = add(x, broadcast_row(*z, len));
    } else if (cfg.variant == Variant::B) {
        // Style slot occupies position row 0; content keeps its usual rows.
        Tensor slot = add(*z, rows_select(params.emb.position, {0}));
        x = concat_rows(slot, x);
    }
    if (cfg.dropout_rate > 0.0f && dropout_rng != nullptr) x = dropout(x, cfg.dropout_rate, *dropout_rng);

    for (const LayerParams& lp : params.layers) x = layer_forward(x, lp, cfg, z, dropout_rng);

    ForwardResult result;
    result.features = layer_norm_affine(x, params.lnf_gamma, params.lnf_beta, cfg.ln_eps);
    if (want_logits) result.logits = matmul_nt(result.features, params.emb.token);
    return result;
}

Tensor style_head(const Tensor& per_token_feats, const StyleHeadParams& p) {
    if (per_token_feats.rows() < 1) throw ContractError("style_head: empty feature sequence");
    Tensor x = gelu(affine_row(per_token_feats, p.w1, p.b1));
    x = gelu(affine_row(x, p.w2, p.b2));
    x = affine_row(x, p.w3, p.b3);
    return mean_rows(x);
}

}  // namespace styf
