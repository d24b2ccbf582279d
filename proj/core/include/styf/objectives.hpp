#pragma once

#include "styf/corpus.hpp"
#include "styf/models.hpp"

namespace styf {

struct LossWeights {
    float dist = 1.0f;
    float style = 0.01f;
    float gan = 0.01f;

    static LossWeights defaults() { return {1.0f, 0.01f, 0.01f}; }
    // Model B ships with a heavier GAN weight.
    static LossWeights defaults_for(Variant v) {
        LossWeights w = defaults();
        if (v == Variant::B) w.gan = 0.1f;
        return w;
    }
    void validate() const;
};

struct LossBreakdown {
    double lm = 0.0;
    double dist = 0.0;
    double style = 0.0;
    double gan_generator = 0.0;
    double total = 0.0;
    double gan_discriminator = 0.0;  // logged separately, not part of total
};

constexpr float kProbFloor = 1e-7f;

// Reconstruction NLL of the RS target conditioned on the RS reference.
Tensor loss_lm(const StreamBatch& rs_batch, const GeneratorBundle& bundle);

// Soft cross entropy between the frozen teacher's next-token distribution
// and the styled decoder's, aligned position by position.
Tensor loss_dist(const StreamBatch& rs_batch, const GeneratorBundle& bundle, const LmModel& lm);

// Shared continuation computation for the CS losses: one taped generation
// pass plus the frozen reference features.
struct CsForward {
    GenerationResult gen;   // features carry gradients when a tape is active
    Tensor real_features;   // H_f(reference), computed without gradients
    bool comparator_clamped = false;
    double comparator_score_value = 0.0;
};

CsForward cs_forward(const StreamBatch& cs_batch, const GeneratorBundle& bundle, const LmModel& lm,
                     int n_gen, const SamplingConfig& sampling, Rng& rng);

Tensor loss_style_from(CsForward& fwd, const ComparatorNet& comparator);
Tensor loss_gan_generator_from(const CsForward& fwd, const DiscriminatorNet& discriminator);
// Both inputs detached: the discriminator trains against fixed features.
Tensor loss_gan_discriminator_from(const Tensor& real_features, const Tensor& fake_features,
                                   const DiscriminatorNet& discriminator);

// Spec-shaped one-shot wrappers around the shared computation.
Tensor loss_style(const StreamBatch& cs_batch, const GeneratorBundle& bundle, const LmModel& lm,
                  const ComparatorNet& comparator, int n_gen, const SamplingConfig& sampling, Rng& rng);
Tensor loss_gan_generator(const StreamBatch& cs_batch, const GeneratorBundle& bundle, const LmModel& lm,
                          const DiscriminatorNet& discriminator, int n_gen, const SamplingConfig& sampling,
                          Rng& rng);
Tensor loss_gan_discriminator(const StreamBatch& cs_batch, const GeneratorBundle& bundle, const LmModel& lm,
                              const DiscriminatorNet& discriminator, int n_gen, const SamplingConfig& sampling,
                              Rng& rng);

struct TotalLossResult {
    Tensor total;
    LossBreakdown breakdown;
};

TotalLossResult total_loss(const StreamBatch& rs_batch, const StreamBatch& cs_batch,
                           const GeneratorBundle& bundle, const LmModel& lm,
                           const ComparatorNet& comparator, const DiscriminatorNet& discriminator,
                           const LossWeights& weights, int n_gen, const SamplingConfig& sampling, Rng& rng);

// BCE between the comparator score of two feature sequences and a 0/1 label.
Tensor comparator_pretrain_loss(const Tensor& features_a, const Tensor& features_b, bool same_style,
                                const ComparatorNet& comparator);

// Frechet distance between Gaussian fits of two pooled-feature sets
// (rows are samples). Requires more samples than the feature dimension.
double fed(const Tensor& set_a, const Tensor& set_b);

}  // namespace styf
