#include "styf/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace styf {

LmModel LmModel::init(ModelConfig cfg, Rng& rng) {
    cfg.variant = Variant::None;
    LmModel m;
    m.tp = TransformerParams::init(cfg, rng);
    return m;
}

GeneratorBundle GeneratorBundle::init(ModelConfig decoder_cfg, Rng& rng) {
    decoder_cfg.validate();
    if (decoder_cfg.variant == Variant::None)
        throw ConfigError("GeneratorBundle: decoder needs an injection variant (A/B/C/D)");
    GeneratorBundle b;
    ModelConfig enc_cfg = decoder_cfg;
    enc_cfg.variant = Variant::None;
    b.style_encoder = TransformerParams::init(enc_cfg, rng);
    b.style_head_params = StyleHeadParams::init(decoder_cfg.dim, rng);
    b.decoder = TransformerParams::init(decoder_cfg, rng);
    b.variant = decoder_cfg.variant;
    return b;
}

std::vector<Tensor> GeneratorBundle::trainable_params() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
}

std::vector<std::pair<std::string, Tensor>> GeneratorBundle::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& nt : style_encoder.named_params("style_encoder.")) out.push_back(nt);
    for (auto& nt : style_head_params.named_params("style_head.")) out.push_back(nt);
    for (auto& nt : decoder.named_params("decoder.")) out.push_back(nt);
    return out;
}

void GeneratorBundle::set_trainable(bool trainable) {
    style_encoder.set_trainable(trainable);
    style_head_params.set_trainable(trainable);
    decoder.set_trainable(trainable);
}

ComparatorNet ComparatorNet::init(int dim, Rng& rng) {
    ComparatorNet c;
    c.dim = dim;
    c.w1 = Tensor::param(2 * dim, dim, rng, 0.02f);
    c.b1 = Tensor::param_zeros(1, dim);
    c.w2 = Tensor::param(dim, 1, rng, 0.02f);
    c.b2 = Tensor::param_zeros(1, 1);
    return c;
}

std::vector<std::pair<std::string, Tensor>> ComparatorNet::named_params() const {
    return {{"comparator.w1", w1}, {"comparator.b1", b1}, {"comparator.w2", w2}, {"comparator.b2", b2}};
}

void ComparatorNet::set_trainable(bool trainable) {
    for (Tensor t : trainable_params()) t.set_requires_grad(trainable);
}

DiscriminatorNet DiscriminatorNet::init(int dim, int heads, int layer_count, int max_seq, Rng& rng) {
    DiscriminatorNet d;
    d.config.dim = dim;
    d.config.heads = heads;
    d.config.layers = layer_count;
    d.config.max_seq = max_seq;
    d.config.vocab = 4;  // unused; keeps validate() happy
    d.config.variant = Variant::None;
    d.config.validate();
    // Reuse a throwaway full stack to build identically-shaped blocks.
    TransformerParams tmp = TransformerParams::init(d.config, rng);
    d.pos = tmp.emb.position;
    d.layers = std::move(tmp.layers);
    d.lnf_gamma = tmp.lnf_gamma;
    d.lnf_beta = tmp.lnf_beta;
    d.head_w = Tensor::param(dim, 1, rng, 0.02f);
    d.head_b = Tensor::param_zeros(1, 1);
    return d;
}

Tensor DiscriminatorNet::forward(const Tensor& features) const {
    if (features.cols() != config.dim) throw ContractError("discriminator: feature dim mismatch");
    const int len = features.rows();
    if (len < 1) throw ContractError("discriminator: empty feature sequence");
    if (len > config.max_seq + 1) throw ContractError("discriminator: sequence exceeds max length");
    std::vector<int> pos_ids(len);
    for (int i = 0; i < len; ++i) pos_ids[i] = i;
    Tensor x = add(features, rows_select(pos, pos_ids));
    x = transformer_layers_forward(x, layers, config, nullptr);
    x = layer_norm_affine(x, lnf_gamma, lnf_beta, config.ln_eps);
    Tensor pooled = mean_rows(x);
    return sigmoid(add_bias(matmul(pooled, head_w), head_b));
}

std::vector<Tensor> DiscriminatorNet::trainable_params() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
}

std::vector<std::pair<std::string, Tensor>> DiscriminatorNet::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto push = [&](const std::string& name, const Tensor& t) { out.emplace_back("discriminator." + name, t); };
    push("pos", pos);
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
    }
    push("lnf_gamma", lnf_gamma);
    push("lnf_beta", lnf_beta);
    push("head_w", head_w);
    push("head_b", head_b);
    return out;
}

void DiscriminatorNet::set_trainable(bool trainable) {
    for (auto& [name, t] : named_params()) const_cast<Tensor&>(t).set_requires_grad(trainable);
}

Tensor style_encode(const std::vector<int>& reference_tokens, const GeneratorBundle& bundle) {
    if (reference_tokens.empty()) throw ContractError("style_encode: empty reference");
    ForwardResult enc = transformer_forward(reference_tokens, bundle.style_encoder, nullptr, false);
    return style_head(enc.features, bundle.style_head_params);
}

TeacherForcedResult teacher_forced_forward(const std::vector<int>& tokens,
                                           const std::vector<int>& reference_tokens,
                                           const GeneratorBundle& bundle) {
    if (tokens.size() < 2) throw ContractError("teacher_forced_forward: need at least 2 tokens");
    Tensor z = style_encode(reference_tokens, bundle);
    ForwardResult fwd = transformer_forward(tokens, bundle.decoder, &z);
    const int t = static_cast<int>(tokens.size());
    // Variant B emits one extra leading row for the style slot; drop it so
    // row t always predicts tokens[t + 1].
    const int slot = bundle.variant == Variant::B ? 1 : 0;
    TeacherForcedResult out;
    out.logits = slice_rows(fwd.logits, slot, t - 1);
    out.features = slot == 0 ? fwd.features : slice_rows(fwd.features, 1, t);
    out.targets.assign(tokens.begin() + 1, tokens.end());
    return out;
}

namespace {

int sample_from_logits(const float* logits, int vocab, const SamplingConfig& sampling, Rng& rng) {
    if (sampling.top_k < 1) throw ContractError("sampling: top_k must be >= 1");
    if (sampling.temperature <= 0.0f) throw ContractError("sampling: temperature must be positive");
    const int k = std::min(sampling.top_k, vocab);
    // Greedy: lowest index wins ties, deterministic.
    if (k == 1) {
        int best = 0;
        for (int j = 1; j < vocab; ++j)
            if (logits[j] > logits[best]) best = j;
        return best;
    }
    std::vector<int> order(vocab);
    for (int j = 0; j < vocab; ++j) order[j] = j;
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
        if (logits[a] != logits[b]) return logits[a] > logits[b];
        return a < b;
    });
    double mx = logits[order[0]];
    std::vector<double> probs(k);
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        probs[i] = std::exp((static_cast<double>(logits[order[i]]) - mx) / sampling.temperature);
        sum += probs[i];
    }
    double r = rng.uniform() * sum;
    for (int i = 0; i < k; ++i) {
        r -= probs[i];
        if (r <= 0.0) return order[i];
    }
    return order[k - 1];
}

}  // namespace

GenerationResult free_running_generate(const std::vector<int>& context_tokens,
                                       const std::vector<int>& reference_tokens,
                                       const GeneratorBundle& bundle, int n_gen,
                                       const SamplingConfig& sampling, Rng& rng,
                                       bool want_features) {
    if (n_gen < 1) throw ContractError("free_running_generate: n_gen must be >= 1");
    if (context_tokens.empty()) throw ContractError("free_running_generate: empty context");
    const int max_seq = bundle.decoder.config.max_seq;
    if (static_cast<int>(context_tokens.size()) + n_gen > max_seq)
        throw ContractError("free_running_generate: context + n_gen exceeds max length");

    Tensor z = style_encode(reference_tokens, bundle);

    GenerationResult out;
    {
        // The sampling loop treats token identities as constants; gradients
        // only flow through the feature pass below.
        NoGradScope no_grad;
        std::vector<int> seq = context_tokens;
        seq.reserve(context_tokens.size() + n_gen);
        for (int i = 0; i < n_gen; ++i) {
            ForwardResult fwd = transformer_forward(seq, bundle.decoder, &z);
            const int last = fwd.logits.rows() - 1;
            const int next = sample_from_logits(fwd.logits.data() + static_cast<std::size_t>(last) * fwd.logits.cols(),
                                                fwd.logits.cols(), sampling, rng);
            seq.push_back(next);
            out.tokens.push_back(next);
        }
    }

    if (want_features) {
        std::vector<int> full = context_tokens;
        full.insert(full.end(), out.tokens.begin(), out.tokens.end());
        ForwardResult fwd = transformer_forward(full, bundle.decoder, &z, false);
        const int slot = bundle.variant == Variant::B ? 1 : 0;
        out.features = slice_rows(fwd.features, slot + static_cast<int>(context_tokens.size()), n_gen);
    }
    return out;
}

Tensor comparator_score(const Tensor& features_a, const Tensor& features_b, const ComparatorNet& comparator) {
    if (features_a.rows() < 1 || features_b.rows() < 1) throw ContractError("comparator_score: empty feature sequence");
    if (features_a.cols() != comparator.dim || features_b.cols() != comparator.dim)
        throw ContractError("comparator_score: feature dim mismatch");
    Tensor joint = concat_cols({mean_rows(features_a), mean_rows(features_b)});
    Tensor h = gelu(add_bias(matmul(joint, comparator.w1), comparator.b1));
    return sigmoid(add_bias(matmul(h, comparator.w2), comparator.b2));
}

namespace {

void copy_tensor(const Tensor& src, Tensor& dst, const char* what) {
    if (src.shape() != dst.shape()) throw ContractError(std::string("init_generator_from_lm: shape mismatch on ") + what);
    std::memcpy(dst.data(), src.data(), sizeof(float) * src.numel());
}

void copy_base_layer(const LayerParams& src, LayerParams& dst) {
    copy_tensor(src.wq, dst.wq, "wq");
    copy_tensor(src.bq, dst.bq, "bq");
    copy_tensor(src.wk, dst.wk, "wk");
    copy_tensor(src.bk, dst.bk, "bk");
    copy_tensor(src.wv, dst.wv, "wv");
    copy_tensor(src.bv, dst.bv, "bv");
    copy_tensor(src.wo, dst.wo, "wo");
    copy_tensor(src.bo, dst.bo, "bo");
    copy_tensor(src.mlp_w1, dst.mlp_w1, "mlp_w1");
    copy_tensor(src.mlp_b1, dst.mlp_b1, "mlp_b1");
    copy_tensor(src.mlp_w2, dst.mlp_w2, "mlp_w2");
    copy_tensor(src.mlp_b2, dst.mlp_b2, "mlp_b2");
    copy_tensor(src.ln1_gamma, dst.ln1_gamma, "ln1_gamma");
    copy_tensor(src.ln1_beta, dst.ln1_beta, "ln1_beta");
    copy_tensor(src.ln2_gamma, dst.ln2_gamma, "ln2_gamma");
    copy_tensor(src.ln2_beta, dst.ln2_beta, "ln2_beta");
}

}  // namespace

void init_generator_from_lm(const LmModel& lm, GeneratorBundle& bundle) {
    const ModelConfig& hc = lm.tp.config;
    const ModelConfig& dc = bundle.decoder.config;
    if (hc.dim != dc.dim || hc.heads != dc.heads || hc.layers != dc.layers || hc.max_seq != dc.max_seq ||
        hc.vocab != dc.vocab)
        throw ContractError("init_generator_from_lm: model configs disagree");

    for (TransformerParams* dst : {&bundle.style_encoder, &bundle.decoder}) {
        copy_tensor(lm.tp.emb.token, dst->emb.token, "emb.token");
        copy_tensor(lm.tp.emb.position, dst->emb.position, "emb.position");
        for (std::size_t i = 0; i < lm.tp.layers.size(); ++i) copy_base_layer(lm.tp.layers[i], dst->layers[i]);
        copy_tensor(lm.tp.lnf_gamma, dst->lnf_gamma, "lnf_gamma");
        copy_tensor(lm.tp.lnf_beta, dst->lnf_beta, "lnf_beta");
    }
    if (bundle.variant == Variant::D) {
        // Zero-weight modulation nets whose biases carry H's norm affines:
        // gamma(z)/beta(z) reproduce H for every z until training moves them.
        for (std::size_t i = 0; i < lm.tp.layers.size(); ++i) {
            const LayerParams& src = lm.tp.layers[i];
            LayerParams& dst = bundle.decoder.layers[i];
            std::fill(dst.gamma1_w.vec().begin(), dst.gamma1_w.vec().end(), 0.0f);
            std::fill(dst.beta1_w.vec().begin(), dst.beta1_w.vec().end(), 0.0f);
            std::fill(dst.gamma2_w.vec().begin(), dst.gamma2_w.vec().end(), 0.0f);
            std::fill(dst.beta2_w.vec().begin(), dst.beta2_w.vec().end(), 0.0f);
            copy_tensor(src.ln1_gamma, dst.gamma1_b, "gamma1_b");
            copy_tensor(src.ln1_beta, dst.beta1_b, "beta1_b");
            copy_tensor(src.ln2_gamma, dst.gamma2_b, "gamma2_b");
            copy_tensor(src.ln2_beta, dst.beta2_b, "beta2_b");
        }
    }
}

}  // namespace styf
