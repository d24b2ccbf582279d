#include "styf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "styf/optimizer.hpp"

namespace styf {

CostMatrix CostMatrix::zeros(int rows, int cols) {
    CostMatrix m;
    m.rows = rows;
    m.cols = cols;
    m.values.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    return m;
}

namespace {

// Shortest-augmenting-path assignment for n <= m (1-based internals).
Assignment solve_rect(const CostMatrix& a) {
    const int n = a.rows, m = a.cols;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> match(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = match[j0];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = a.at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    Assignment result;
    result.col_of_row.assign(n, -1);
    for (int j = 1; j <= m; ++j)
        if (match[j] != 0) result.col_of_row[match[j] - 1] = j - 1;
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += a.at(i, result.col_of_row[i]);
    result.total = total;
    return result;
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
    if (cost.rows <= 0 || cost.cols <= 0) throw ContractError("hungarian: empty cost matrix");
    for (double val : cost.values)
        if (!std::isfinite(val) || val < 0.0) throw ContractError("hungarian: costs must be finite and nonnegative");
    if (cost.rows <= cost.cols) return solve_rect(cost);
    // More rows than columns: orient so the smaller side is fully assigned.
    CostMatrix t = CostMatrix::zeros(cost.cols, cost.rows);
    for (int i = 0; i < cost.rows; ++i)
        for (int j = 0; j < cost.cols; ++j) t.at(j, i) = cost.at(i, j);
    Assignment at = solve_rect(t);
    Assignment result;
    result.col_of_row.assign(cost.rows, -1);
    for (int j = 0; j < cost.cols; ++j)
        if (at.col_of_row[j] >= 0) result.col_of_row[at.col_of_row[j]] = j;
    double total = 0.0;
    for (int i = 0; i < cost.rows; ++i)
        if (result.col_of_row[i] >= 0) total += cost.at(i, result.col_of_row[i]);
    result.total = total;
    return result;
}

Tensor pooled_lm_features(const std::vector<int>& tokens, const LmModel& lm) {
    NoGradScope no_grad;
    return mean_rows(transformer_forward(tokens, lm.tp, nullptr, false).features);
}

Tensor token_lm_features(const std::vector<int>& tokens, const LmModel& lm) {
    NoGradScope no_grad;
    return transformer_forward(tokens, lm.tp, nullptr, false).features;
}

double fluency_score(const std::vector<int>& text_tokens, const LmModel& lm_eval) {
    if (text_tokens.size() < 2) throw ContractError("fluency_score: need at least 2 tokens");
    NoGradScope no_grad;
    ForwardResult fwd = transformer_forward(text_tokens, lm_eval.tp, nullptr);
    const int t = static_cast<int>(text_tokens.size());
    Tensor logits = slice_rows(fwd.logits, 0, t - 1);
    std::vector<int> targets(text_tokens.begin() + 1, text_tokens.end());
    const double nll = cross_entropy(logits, targets).item();
    return fluency_upper_bound(lm_eval.tp.config.vocab) - nll;
}

double fluency_upper_bound(int vocab) {
    if (vocab < 2) throw ContractError("fluency_upper_bound: vocab too small");
    return std::log(static_cast<double>(vocab));
}

// ---- style classifiers -----------------------------------------------------

bool StyleClassifierSet::predict(int style, const Tensor& pooled_features) const {
    return probability(style, pooled_features) >= 0.5;
}

double StyleClassifierSet::probability(int style, const Tensor& pooled_features) const {
    if (style < 0 || style >= static_cast<int>(per_style.size()))
        throw ConfigError("style classifier: no classifier for style " + std::to_string(style));
    const StyleClassifier& c = per_style[style];
    double acc = c.b.item();
    for (int j = 0; j < feature_dim; ++j) acc += static_cast<double>(pooled_features.data()[j]) * c.w.data()[j];
    return 1.0 / (1.0 + std::exp(-acc));
}

namespace {

struct FeatureBank {
    // features[s] holds pooled windows sampled from style s.
    std::vector<std::vector<Tensor>> features;
};

FeatureBank build_feature_bank(const Corpus& corpus, const LmModel& lm, int samples_per_style, int window,
                               Rng& rng) {
    const auto by_style = corpus.docs_by_style();
    FeatureBank bank;
    bank.features.resize(by_style.size());
    for (std::size_t s = 0; s < by_style.size(); ++s) {
        if (by_style[s].empty()) throw ConfigError("feature bank: style without documents");
        for (int i = 0; i < samples_per_style; ++i) {
            const Document& doc = corpus.docs[by_style[s][rng.uniform_index(by_style[s].size())]];
            bank.features[s].push_back(pooled_lm_features(sample_paragraph(doc, window, rng), lm));
        }
    }
    return bank;
}

}  // namespace

StyleClassifierSet train_style_classifiers(const Corpus& train_corpus, const LmModel& lm, int samples_per_style,
                                           int train_steps, int window, std::uint64_t seed) {
    if (train_corpus.style_count() < 2) throw ConfigError("train_style_classifiers: need >= 2 styles");
    Rng rng(Rng::derive(seed, 0x636c7366));
    const FeatureBank bank = build_feature_bank(train_corpus, lm, samples_per_style, window, rng);
    const int dim = lm.tp.config.dim;
    const int styles = train_corpus.style_count();

    StyleClassifierSet set;
    set.feature_dim = dim;
    for (int s = 0; s < styles; ++s) {
        StyleClassifier c;
        c.w = Tensor::param(1, dim, rng, 0.02f);
        c.b = Tensor::param_zeros(1, 1);
        std::vector<Tensor> params = {c.w, c.b};
        AdamConfig acfg;
        acfg.lr = 0.05f;
        acfg.weight_decay = 0.0f;
        acfg.schedule = LrSchedule::Constant;
        OptimizerState opt(acfg);
        // Balanced full-batch logistic regression on frozen features.
        for (int step = 0; step < train_steps; ++step) {
            Tape tape;
            TapeScope scope(tape);
            std::vector<Tensor> losses;
            for (int os = 0; os < styles; ++os) {
                for (const Tensor& f : bank.features[os]) {
                    Tensor logit = add_bias(matmul_nt(f, c.w), c.b);
                    Tensor p = sigmoid(logit);
                    Tensor target_term = os == s ? p : add_const(scale(p, -1.0f), 1.0f);
                    losses.push_back(scale(log_t(clamp_min(target_term, 1e-7f)), -1.0f));
                }
            }
            const float w_each = 1.0f / static_cast<float>(losses.size());
            Tensor loss = weighted_sum_scalars(losses, std::vector<float>(losses.size(), w_each));
            tape.backward(loss);
            adam_step(params, opt);
            zero_grads(params);
        }
        set.per_style.push_back(std::move(c));
    }
    return set;
}

double style_classifier_accuracy(const StyleClassifierSet& cls, const Corpus& corpus, const LmModel& lm,
                                 int samples_per_style, int window, std::uint64_t seed) {
    Rng rng(Rng::derive(seed, 0x636c6163));
    const FeatureBank bank = build_feature_bank(corpus, lm, samples_per_style, window, rng);
    long correct = 0, total = 0;
    for (std::size_t s = 0; s < bank.features.size(); ++s) {
        for (const Tensor& f : bank.features[s]) {
            for (std::size_t c = 0; c < bank.features.size(); ++c) {
                const bool hit = cls.predict(static_cast<int>(c), f);
                const bool want = c == s;
                correct += (hit == want) ? 1 : 0;
                ++total;
            }
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

double style_score(const std::vector<GeneratedSample>& generated, const StyleClassifierSet& classifiers,
                   const LmModel& lm) {
    if (generated.empty()) throw ConfigError("style_score: no samples");
    long hits = 0;
    for (const GeneratedSample& g : generated) {
        Tensor f = pooled_lm_features(g.tokens, lm);
        if (classifiers.predict(g.target_style, f)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(generated.size());
}

// ---- distances ---------------------------------------------------------------

namespace {

double l2_distance(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double matching_distance(const Tensor& feats_a, const Tensor& feats_b) {
    CostMatrix cost = CostMatrix::zeros(feats_a.rows(), feats_b.rows());
    const int d = feats_a.cols();
    for (int i = 0; i < feats_a.rows(); ++i)
        for (int j = 0; j < feats_b.rows(); ++j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k) {
                const double diff = static_cast<double>(feats_a.at(i, k)) - feats_b.at(j, k);
                acc += diff * diff;
            }
            cost.at(i, j) = std::sqrt(acc);
        }
    Assignment assignment = hungarian(cost);
    const int matched = std::min(cost.rows, cost.cols);
    return assignment.total / matched;
}

}  // namespace

double style_diversity(const std::vector<int>& gen_a, const std::vector<int>& gen_b, const LmModel& lm_eval) {
    return l2_distance(pooled_lm_features(gen_a, lm_eval), pooled_lm_features(gen_b, lm_eval));
}

double content_novelty(const std::vector<int>& gen_tokens, const std::vector<int>& reference_tokens,
                       const LmModel& lm_eval) {
    if (gen_tokens.empty() || reference_tokens.empty()) throw ContractError("content_novelty: empty input");
    return matching_distance(token_lm_features(gen_tokens, lm_eval), token_lm_features(reference_tokens, lm_eval));
}

namespace {

// Shared scaffolding for the two bound estimators: per-style sample pools
// for the upper bound, within-document pairs for the lower bound.
Bounds estimate_bounds(const Corpus& corpus, const LmModel& lm_eval, int n_per_style, int window,
                       std::uint64_t seed, bool matching) {
    if (corpus.style_count() < 2) throw ConfigError("bounds: need >= 2 styles");
    if (n_per_style < 2) throw ConfigError("bounds: n_per_style must be >= 2");
    Rng rng(Rng::derive(seed, matching ? 0x6e6f7662 : 0x64697662));
    const auto by_style = corpus.docs_by_style();
    const int styles = corpus.style_count();

    std::vector<std::vector<Tensor>> pools(styles);
    for (int s = 0; s < styles; ++s) {
        if (by_style[s].empty()) throw ConfigError("bounds: style without documents");
        for (int i = 0; i < n_per_style; ++i) {
            const Document& doc = corpus.docs[by_style[s][rng.uniform_index(by_style[s].size())]];
            const std::vector<int> window_tokens = sample_paragraph(doc, window, rng);
            pools[s].push_back(matching ? token_lm_features(window_tokens, lm_eval)
                                        : pooled_lm_features(window_tokens, lm_eval));
        }
    }

    auto pair_distance = [&](const Tensor& a, const Tensor& b) {
        return matching ? matching_distance(a, b) : l2_distance(a, b);
    };

    double upper = 0.0;
    for (int r = 0; r < styles; ++r)
        for (int c = 0; c < styles; ++c) {
            double sum = 0.0;
            long count = 0;
            for (int i = 0; i < n_per_style; ++i)
                for (int j = 0; j < n_per_style; ++j) {
                    if (r == c && i == j) continue;
                    sum += pair_distance(pools[r][i], pools[c][j]);
                    ++count;
                }
            upper = std::max(upper, sum / static_cast<double>(count));
        }

    // Lower bound: two distinct windows of the same document.
    double lower_sum = 0.0;
    for (int s = 0; s < styles; ++s) {
        double style_sum = 0.0;
        long style_count = 0;
        const int doc_trials = std::max(4, n_per_style / 2);
        for (int i = 0; i < doc_trials; ++i) {
            const Document& doc = corpus.docs[by_style[s][rng.uniform_index(by_style[s].size())]];
            if (static_cast<int>(doc.tokens.size()) <= window)
                throw ConfigError("bounds: document too short for two distinct windows");
            const std::vector<int> wa = sample_paragraph(doc, window, rng);
            const std::vector<int> wb = sample_paragraph(doc, window, rng);
            const Tensor fa = matching ? token_lm_features(wa, lm_eval) : pooled_lm_features(wa, lm_eval);
            const Tensor fb = matching ? token_lm_features(wb, lm_eval) : pooled_lm_features(wb, lm_eval);
            style_sum += pair_distance(fa, fb);
            ++style_count;
        }
        lower_sum += style_sum / static_cast<double>(style_count);
    }
    Bounds bounds;
    bounds.lower = lower_sum / styles;
    bounds.upper = upper;
    return bounds;
}

}  // namespace

Bounds diversity_bounds(const Corpus& corpus, const LmModel& lm_eval, int n_per_style, int window,
                        std::uint64_t seed) {
    return estimate_bounds(corpus, lm_eval, n_per_style, window, seed, false);
}

Bounds novelty_bounds(const Corpus& corpus, const LmModel& lm_eval, int n_per_style, int window,
                      std::uint64_t seed) {
    return estimate_bounds(corpus, lm_eval, n_per_style, window, seed, true);
}

// ---- report ------------------------------------------------------------------

std::string metrics_report_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["fluency"] = report.fluency;
    j["style_score"] = report.style;
    j["diversity"] = {{"value", report.diversity.value}, {"lower", report.diversity.lower}, {"upper", report.diversity.upper}};
    j["novelty"] = {{"value", report.novelty.value}, {"lower", report.novelty.lower}, {"upper", report.novelty.upper}};
    j["per_style"] = report.per_style;
    j["n"] = report.n;
    return j.dump(2);
}

std::string scatter_to_csv(const std::vector<ScatterRow>& rows) {
    std::ostringstream out;
    out << "sample,target_style,fluency,style_hit\n";
    for (const ScatterRow& r : rows)
        out << r.sample << "," << r.target_style << "," << r.fluency << "," << r.style_hit << "\n";
    return out.str();
}

EvalOutput run_evaluation(const Corpus& eval_corpus, const Corpus& bounds_corpus,
                          const GeneratorBundle& bundle, const LmModel& lm,
                          const StyleClassifierSet& classifiers, const EvalConfig& cfg) {
    if (eval_corpus.docs.empty()) throw ConfigError("run_evaluation: empty evaluation corpus");
    if (eval_corpus.style_count() < 2) throw ConfigError("run_evaluation: need >= 2 styles");
    Rng rng(Rng::derive(cfg.seed, 0x6576616c));
    const auto by_style = eval_corpus.docs_by_style();
    const int styles = eval_corpus.style_count();
    SamplingConfig sampling{cfg.top_k, cfg.temperature};

    EvalOutput out;
    std::vector<GeneratedSample> generated;
    std::vector<double> fluencies, novelties;
    std::map<std::string, std::pair<long, long>> per_style_counts;

    for (int i = 0; i < cfg.n_samples; ++i) {
        const int ctx_style = static_cast<int>(rng.uniform_index(styles));
        int target = ctx_style;
        while (target == ctx_style) target = static_cast<int>(rng.uniform_index(styles));
        const Document& ctx_doc = eval_corpus.docs[by_style[ctx_style][rng.uniform_index(by_style[ctx_style].size())]];
        const Document& ref_doc = eval_corpus.docs[by_style[target][rng.uniform_index(by_style[target].size())]];
        const std::vector<int> context = extract_context(sample_paragraph(ctx_doc, cfg.window, rng), cfg.n_ctx);
        const std::vector<int> reference = sample_paragraph(ref_doc, cfg.window, rng);

        NoGradScope no_grad;
        GenerationResult gen =
            free_running_generate(context, reference, bundle, cfg.n_gen, sampling, rng, false);

        GeneratedSample sample;
        sample.tokens = gen.tokens;
        sample.target_style = target;
        const double fl = fluency_score(gen.tokens, lm);
        const bool hit = classifiers.predict(target, pooled_lm_features(gen.tokens, lm));
        fluencies.push_back(fl);
        novelties.push_back(content_novelty(gen.tokens, reference, lm));
        generated.push_back(sample);
        auto& counts = per_style_counts[eval_corpus.style_names[target]];
        counts.first += hit ? 1 : 0;
        counts.second += 1;

        ScatterRow row;
        row.sample = i;
        row.target_style = eval_corpus.style_names[target];
        row.fluency = fl;
        row.style_hit = hit ? 1 : 0;
        out.scatter.push_back(row);
    }

    // Diversity: same context, two same-style references.
    std::vector<double> diversities;
    for (int i = 0; i < cfg.diversity_pairs; ++i) {
        const int ctx_style = static_cast<int>(rng.uniform_index(styles));
        int target = ctx_style;
        while (target == ctx_style) target = static_cast<int>(rng.uniform_index(styles));
        const Document& ctx_doc = eval_corpus.docs[by_style[ctx_style][rng.uniform_index(by_style[ctx_style].size())]];
        const std::vector<int> context = extract_context(sample_paragraph(ctx_doc, cfg.window, rng), cfg.n_ctx);
        const auto& peers = by_style[target];
        const Document& ref_a = eval_corpus.docs[peers[rng.uniform_index(peers.size())]];
        const Document& ref_b = eval_corpus.docs[peers[rng.uniform_index(peers.size())]];
        NoGradScope no_grad;
        GenerationResult gen_a = free_running_generate(context, sample_paragraph(ref_a, cfg.window, rng), bundle,
                                                       cfg.n_gen, sampling, rng, false);
        GenerationResult gen_b = free_running_generate(context, sample_paragraph(ref_b, cfg.window, rng), bundle,
                                                       cfg.n_gen, sampling, rng, false);
        diversities.push_back(style_diversity(gen_a.tokens, gen_b.tokens, lm));
    }

    auto mean_of = [](const std::vector<double>& xs) {
        double acc = 0.0;
        for (double x : xs) acc += x;
        return xs.empty() ? 0.0 : acc / static_cast<double>(xs.size());
    };

    MetricsReport report;
    report.fluency = mean_of(fluencies);
    report.style = style_score(generated, classifiers, lm);
    report.diversity.value = mean_of(diversities);
    const Bounds db = diversity_bounds(bounds_corpus, lm, cfg.diversity_bound_samples, cfg.window, cfg.seed);
    report.diversity.lower = db.lower;
    report.diversity.upper = db.upper;
    report.novelty.value = mean_of(novelties);
    const Bounds nb = novelty_bounds(bounds_corpus, lm, cfg.novelty_bound_samples, cfg.window, cfg.seed);
    report.novelty.lower = nb.lower;
    report.novelty.upper = nb.upper;
    for (const auto& [name, counts] : per_style_counts)
        report.per_style[name] = static_cast<double>(counts.first) / static_cast<double>(counts.second);
    report.n = cfg.n_samples;
    out.report = report;
    return out;
}

}  // namespace styf
