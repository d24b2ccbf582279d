#pragma once

#include <map>
#include <string>
#include <vector>

#include "styf/corpus.hpp"
#include "styf/models.hpp"

namespace styf {

struct CostMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;  // row-major, finite, nonnegative

    double at(int i, int j) const { return values[static_cast<std::size_t>(i) * cols + j]; }
    double& at(int i, int j) { return values[static_cast<std::size_t>(i) * cols + j]; }
    static CostMatrix zeros(int rows, int cols);
};

struct Assignment {
    // col_of_row[i] = column matched to row i (rows <= cols after internal
    // orientation; with more rows than columns the unmatched rows get -1).
    std::vector<int> col_of_row;
    double total = 0.0;
};

// Exact minimum-cost assignment of the smaller side (augmenting-path
// algorithm with potentials, O(n^2 m)).
Assignment hungarian(const CostMatrix& cost);

// Mean-pooled final-layer features of the frozen LM: [1 x dim].
Tensor pooled_lm_features(const std::vector<int>& tokens, const LmModel& lm);
// Per-token final-layer features: [T x dim].
Tensor token_lm_features(const std::vector<int>& tokens, const LmModel& lm);

// ln(vocab) - ln(perplexity) under the evaluation LM; 0 for a chance-level
// predictor, approaching ln(vocab) as perplexity -> 1.
double fluency_score(const std::vector<int>& text_tokens, const LmModel& lm_eval);
double fluency_upper_bound(int vocab);

// One frozen-feature linear probe per style.
struct StyleClassifier {
    Tensor w, b;
};

struct StyleClassifierSet {
    int feature_dim = 0;
    std::vector<StyleClassifier> per_style;

    bool predict(int style, const Tensor& pooled_features) const;
    double probability(int style, const Tensor& pooled_features) const;
};

StyleClassifierSet train_style_classifiers(const Corpus& train_corpus, const LmModel& lm, int samples_per_style,
                                           int train_steps, int window, std::uint64_t seed);
double style_classifier_accuracy(const StyleClassifierSet& cls, const Corpus& corpus, const LmModel& lm,
                                 int samples_per_style, int window, std::uint64_t seed);

struct GeneratedSample {
    std::vector<int> tokens;
    int target_style = -1;
};

// Fraction of generations whose target-style classifier fires.
double style_score(const std::vector<GeneratedSample>& generated, const StyleClassifierSet& classifiers,
                   const LmModel& lm);

// L2 distance between mean-pooled paragraph representations.
double style_diversity(const std::vector<int>& gen_a, const std::vector<int>& gen_b, const LmModel& lm_eval);

struct Bounds {
    double lower = 0.0;
    double upper = 0.0;
};

// Upper: max entry of the style-by-style mean pairwise-distance matrix.
// Lower: average over styles of the mean within-document paragraph distance.
Bounds diversity_bounds(const Corpus& corpus, const LmModel& lm_eval, int n_per_style, int window,
                        std::uint64_t seed);

// Matching-based distance between two token sequences (optimal assignment
// cost over pairwise token-feature L2 distances, per matched pair).
double content_novelty(const std::vector<int>& gen_tokens, const std::vector<int>& reference_tokens,
                       const LmModel& lm_eval);

Bounds novelty_bounds(const Corpus& corpus, const LmModel& lm_eval, int n_per_style, int window,
                      std::uint64_t seed);

struct BoundedScore {
    double value = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

struct MetricsReport {
    double fluency = 0.0;
    double style = 0.0;
    BoundedScore diversity;
    BoundedScore novelty;
    std::map<std::string, double> per_style;
    int n = 0;
};

std::string metrics_report_to_json(const MetricsReport& report);

struct ScatterRow {
    int sample = 0;
    std::string target_style;
    double fluency = 0.0;
    int style_hit = 0;
};

std::string scatter_to_csv(const std::vector<ScatterRow>& rows);

struct EvalConfig {
    int n_samples = 120;
    int n_gen = 32;
    int n_ctx = 16;
    int window = 64;
    int top_k = 4;
    float temperature = 1.0f;
    int diversity_pairs = 40;
    int diversity_bound_samples = 200;
    int novelty_bound_samples = 32;
    std::uint64_t seed = 42;
};

struct EvalOutput {
    MetricsReport report;
    std::vector<ScatterRow> scatter;
};

// Full metric pipeline over a corpus: cross-style generation trials scored
// by the classifier set, diversity pairs, novelty against references, and
// freshly recomputed bounds.
EvalOutput run_evaluation(const Corpus& eval_corpus, const Corpus& bounds_corpus,
                          const GeneratorBundle& bundle, const LmModel& lm,
                          const StyleClassifierSet& classifiers, const EvalConfig& cfg);

}  // namespace styf
