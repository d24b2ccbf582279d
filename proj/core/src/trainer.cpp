#include "styf/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "styf/metrics.hpp"
#include "styf/optimizer.hpp"

namespace styf {

using nlohmann::json;

namespace {

// Independent RNG stream ids per purpose; keeps sampling identical across
// configurations that consume different stream subsets.
enum Stream : std::uint64_t {
    kInitLm = 1,
    kInitGen = 2,
    kInitDisc = 3,
    kInitComp = 4,
    kRs = 5,
    kCs = 6,
    kGen = 7,
    kLmSample = 8,
    kPairs = 9,
    kVal = 10,
};

double now_ms() {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void check_finite(double loss, long step, const char* phase) {
    if (!std::isfinite(loss))
        throw std::runtime_error(std::string(phase) + ": loss diverged to NaN/Inf at step " + std::to_string(step));
}

std::vector<int> sample_window(const Corpus& corpus, int window, Rng& rng) {
    const Document& doc = corpus.docs[rng.uniform_index(corpus.docs.size())];
    return sample_paragraph(doc, window, rng);
}

}  // namespace

void TrainLog::append(TrainLogRecord record) {
    if (!records.empty() && record.step <= records.back().step)
        throw ContractError("TrainLog: step numbers must strictly increase");
    records.push_back(std::move(record));
}

void TrainLog::save_jsonl(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("TrainLog: cannot write " + path);
    for (const TrainLogRecord& r : records) {
        json j;
        j["step"] = r.step;
        j["lm"] = r.losses.lm;
        j["dist"] = r.losses.dist;
        j["style"] = r.losses.style;
        j["gan_g"] = r.losses.gan_generator;
        j["gan_d"] = r.losses.gan_discriminator;
        j["total"] = r.losses.total;
        j["lr"] = r.lr;
        j["wall_ms"] = r.wall_ms;
        if (r.style_clamped > 0) j["style_clamped"] = r.style_clamped;
        if (r.val_fed) j["val_fed"] = *r.val_fed;
        if (r.val_nll) j["val_nll"] = *r.val_nll;
        if (r.val_accuracy) j["val_accuracy"] = *r.val_accuracy;
        out << j.dump() << "\n";
    }
}

TrainLog TrainLog::load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("TrainLog: cannot open " + path);
    TrainLog log;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        TrainLogRecord r;
        r.step = j.at("step").get<long>();
        r.losses.lm = j.value("lm", 0.0);
        r.losses.dist = j.value("dist", 0.0);
        r.losses.style = j.value("style", 0.0);
        r.losses.gan_generator = j.value("gan_g", 0.0);
        r.losses.gan_discriminator = j.value("gan_d", 0.0);
        r.losses.total = j.value("total", 0.0);
        r.lr = j.value("lr", 0.0);
        r.wall_ms = j.value("wall_ms", 0.0);
        r.style_clamped = j.value("style_clamped", 0);
        if (j.contains("val_fed")) r.val_fed = j["val_fed"].get<double>();
        if (j.contains("val_nll")) r.val_nll = j["val_nll"].get<double>();
        if (j.contains("val_accuracy")) r.val_accuracy = j["val_accuracy"].get<double>();
        log.append(std::move(r));
    }
    return log;
}

// ---- phase 1: language model -------------------------------------------------

namespace {

double lm_nll(const std::vector<int>& tokens, const TransformerParams& tp) {
    ForwardResult fwd = transformer_forward(tokens, tp, nullptr);
    const int t = static_cast<int>(tokens.size());
    Tensor logits = slice_rows(fwd.logits, 0, t - 1);
    std::vector<int> targets(tokens.begin() + 1, tokens.end());
    return cross_entropy(logits, targets).item();
}

Tensor lm_loss_taped(const std::vector<int>& tokens, const TransformerParams& tp) {
    ForwardResult fwd = transformer_forward(tokens, tp, nullptr);
    const int t = static_cast<int>(tokens.size());
    Tensor logits = slice_rows(fwd.logits, 0, t - 1);
    std::vector<int> targets(tokens.begin() + 1, tokens.end());
    return cross_entropy(logits, targets);
}

double eval_lm_nll(const Corpus& val, const TransformerParams& tp, int items, int window, std::uint64_t seed) {
    NoGradScope no_grad;
    Rng rng(seed);
    double acc = 0.0;
    for (int i = 0; i < items; ++i) acc += lm_nll(sample_window(val, window, rng), tp);
    return acc / items;
}

}  // namespace

PretrainLmResult pretrain_lm(const Corpus& train, const Corpus& val, const TrainConfig& cfg) {
    cfg.validate();
    if (train.docs.empty()) throw ConfigError("pretrain_lm: empty training corpus");
    Rng init_rng(Rng::derive(cfg.seed, kInitLm));
    Rng sample_rng(Rng::derive(cfg.seed, kLmSample));

    ModelConfig mc = cfg.model;
    mc.variant = Variant::None;
    PretrainLmResult result;
    result.model = LmModel::init(mc, init_rng);
    std::vector<Tensor> params = result.model.trainable_params();
    AdamConfig acfg = cfg.adam;
    acfg.total_steps = cfg.total_steps;
    OptimizerState opt(acfg);

    for (long step = 1; step <= cfg.total_steps; ++step) {
        const double t0 = now_ms();
        Tape tape;
        TapeScope scope(tape);
        std::vector<Tensor> item_losses;
        for (int b = 0; b < cfg.batch_size; ++b)
            item_losses.push_back(lm_loss_taped(sample_window(train, cfg.window, sample_rng), result.model.tp));
        Tensor loss = weighted_sum_scalars(item_losses,
                                           std::vector<float>(item_losses.size(), 1.0f / item_losses.size()));
        check_finite(loss.item(), step, "pretrain_lm");
        tape.backward(loss);
        clip_grad_norm(params, cfg.grad_clip);
        adam_step(params, opt);
        zero_grads(params);

        if (step % cfg.log_interval == 0 || step == cfg.total_steps) {
            TrainLogRecord rec;
            rec.step = step;
            rec.losses.lm = loss.item();
            rec.losses.total = loss.item();
            rec.lr = acfg.lr * (acfg.schedule == LrSchedule::Cosine ? cosine_lr_factor(step, acfg.total_steps) : 1.0f);
            rec.wall_ms = now_ms() - t0;
            if (step % cfg.eval_interval == 0 || step == cfg.total_steps)
                rec.val_nll = eval_lm_nll(val, result.model.tp, cfg.eval_items, cfg.window,
                                          Rng::derive(cfg.seed, kVal + static_cast<std::uint64_t>(step)));
            result.log.append(std::move(rec));
        }
    }
    result.final_val_nll = eval_lm_nll(val, result.model.tp, cfg.eval_items, cfg.window, Rng::derive(cfg.seed, kVal));
    return result;
}

// ---- phase 2: comparator -------------------------------------------------------

namespace {

struct FeaturePair {
    Tensor a, b;
    bool same = false;
};

FeaturePair sample_feature_pair(const Corpus& corpus, const LmModel& lm, int window, bool same, Rng& rng) {
    const auto by_style = corpus.docs_by_style();
    FeaturePair pair;
    pair.same = same;
    const int style_a = static_cast<int>(rng.uniform_index(corpus.style_count()));
    int style_b = style_a;
    if (!same) {
        while (style_b == style_a) style_b = static_cast<int>(rng.uniform_index(corpus.style_count()));
    }
    const auto& pool_a = by_style[style_a];
    const auto& pool_b = by_style[style_b];
    if (pool_a.empty() || pool_b.empty()) throw ConfigError("comparator pairs: style without documents");
    const Document& da = corpus.docs[pool_a[rng.uniform_index(pool_a.size())]];
    const Document& db = corpus.docs[pool_b[rng.uniform_index(pool_b.size())]];
    pair.a = token_lm_features(sample_paragraph(da, window, rng), lm);
    pair.b = token_lm_features(sample_paragraph(db, window, rng), lm);
    return pair;
}

double comparator_accuracy(const Corpus& corpus, const LmModel& lm, const ComparatorNet& comparator, int pairs,
                           int window, std::uint64_t seed) {
    NoGradScope no_grad;
    Rng rng(seed);
    long correct = 0;
    for (int i = 0; i < pairs; ++i) {
        const bool same = i % 2 == 0;
        FeaturePair pair = sample_feature_pair(corpus, lm, window, same, rng);
        const double score = comparator_score(pair.a, pair.b, comparator).item();
        if ((score >= 0.5) == same) ++correct;
    }
    return static_cast<double>(correct) / pairs;
}

}  // namespace

PretrainComparatorResult pretrain_comparator(const Corpus& train, const Corpus& val, const LmModel& lm,
                                             const TrainConfig& cfg) {
    cfg.validate();
    if (train.style_count() < 2) throw ConfigError("pretrain_comparator: need >= 2 styles");
    Rng init_rng(Rng::derive(cfg.seed, kInitComp));
    Rng pair_rng(Rng::derive(cfg.seed, kPairs));

    PretrainComparatorResult result;
    result.comparator = ComparatorNet::init(cfg.model.dim, init_rng);
    std::vector<Tensor> params = result.comparator.trainable_params();
    AdamConfig acfg = cfg.adam;
    acfg.total_steps = cfg.total_steps;
    OptimizerState opt(acfg);

    double best_acc = 0.0;
    int stale_evals = 0;
    long evals_done = 0;

    for (long step = 1; step <= cfg.total_steps; ++step) {
        const double t0 = now_ms();
        // Feature extraction stays outside the tape: H is frozen.
        std::vector<FeaturePair> pairs;
        {
            NoGradScope no_grad;
            for (int b = 0; b < cfg.comparator_batch; ++b)
                pairs.push_back(sample_feature_pair(train, lm, cfg.window, b % 2 == 0, pair_rng));
        }
        Tape tape;
        TapeScope scope(tape);
        std::vector<Tensor> item_losses;
        for (const FeaturePair& pair : pairs)
            item_losses.push_back(comparator_pretrain_loss(pair.a, pair.b, pair.same, result.comparator));
        Tensor loss =
            weighted_sum_scalars(item_losses, std::vector<float>(item_losses.size(), 1.0f / item_losses.size()));
        check_finite(loss.item(), step, "pretrain_comparator");
        tape.backward(loss);
        clip_grad_norm(params, cfg.grad_clip);
        adam_step(params, opt);
        zero_grads(params);

        TrainLogRecord rec;
        rec.step = step;
        rec.losses.total = loss.item();
        rec.lr = acfg.lr * (acfg.schedule == LrSchedule::Cosine ? cosine_lr_factor(step, acfg.total_steps) : 1.0f);
        rec.wall_ms = now_ms() - t0;

        bool stop = false;
        if (step % cfg.eval_interval == 0 || step == cfg.total_steps) {
            const double acc = comparator_accuracy(val, lm, result.comparator, 2 * cfg.eval_items, cfg.window,
                                                   Rng::derive(cfg.seed, kVal + static_cast<std::uint64_t>(step)));
            rec.val_accuracy = acc;
            ++evals_done;
            if (acc > best_acc + 1e-3) {
                best_acc = acc;
                stale_evals = 0;
            } else {
                ++stale_evals;
            }
            result.val_accuracy = acc;
            result.stopped_at_step = step;
            if (stale_evals >= cfg.early_stop_patience) {
                result.early_stopped = true;
                stop = true;
            }
            // Chance-level accuracy long after warmup means the pairing
            // signal is broken; bail out loudly rather than spin.
            if (evals_done >= 8 && best_acc < 0.55)
                throw std::runtime_error("pretrain_comparator: validation accuracy stuck at chance");
        }
        if (step % cfg.log_interval == 0 || rec.val_accuracy || step == cfg.total_steps)
            result.log.append(std::move(rec));
        if (stop) break;
    }
    return result;
}

// ---- phase 3: generator --------------------------------------------------------

double validation_fed(const Corpus& val, const GeneratorBundle& bundle, const LmModel& lm, int n_items,
                      int n_ctx, int n_gen, int window, std::uint64_t seed) {
    if (val.style_count() < 2) throw ConfigError("validation_fed: need >= 2 styles");
    NoGradScope no_grad;
    Rng rng(seed);
    const auto by_style = val.docs_by_style();
    const int styles = val.style_count();
    Tensor generated_set = Tensor::zeros(n_items, lm.tp.config.dim);
    Tensor real_set = Tensor::zeros(n_items, lm.tp.config.dim);
    SamplingConfig greedy{1, 1.0f};
    for (int i = 0; i < n_items; ++i) {
        const int style_i = static_cast<int>(rng.uniform_index(styles));
        int style_k = style_i;
        while (style_k == style_i) style_k = static_cast<int>(rng.uniform_index(styles));
        const auto& pool_i = by_style[style_i];
        const auto& pool_k = by_style[style_k];
        if (pool_i.empty() || pool_k.empty()) throw ConfigError("validation_fed: style without documents");
        const Document& di = val.docs[pool_i[rng.uniform_index(pool_i.size())]];
        const Document& dk = val.docs[pool_k[rng.uniform_index(pool_k.size())]];
        const std::vector<int> context = extract_context(sample_paragraph(di, window, rng), n_ctx);
        const std::vector<int> reference = sample_paragraph(dk, window, rng);
        GenerationResult gen = free_running_generate(context, reference, bundle, n_gen, greedy, rng, false);
        Tensor gen_pooled = pooled_lm_features(gen.tokens, lm);
        Tensor real_pooled = pooled_lm_features(sample_paragraph(dk, window, rng), lm);
        for (int j = 0; j < lm.tp.config.dim; ++j) {
            generated_set.at(i, j) = gen_pooled.data()[j];
            real_set.at(i, j) = real_pooled.data()[j];
        }
    }
    return fed(generated_set, real_set);
}

TrainGeneratorResult train_generator(const Corpus& train, const Corpus& val, LmModel& lm,
                                     ComparatorNet& comparator, const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.model.variant == Variant::None)
        throw ConfigError("train_generator: config must select a variant");
    lm.set_trainable(false);
    comparator.set_trainable(false);

    Rng init_gen_rng(Rng::derive(cfg.seed, kInitGen));
    Rng init_disc_rng(Rng::derive(cfg.seed, kInitDisc));
    Rng rs_rng(Rng::derive(cfg.seed, kRs));
    Rng cs_rng(Rng::derive(cfg.seed, kCs));
    Rng gen_rng(Rng::derive(cfg.seed, kGen));

    TrainGeneratorResult result;
    result.bundle = GeneratorBundle::init(cfg.model, init_gen_rng);
    init_generator_from_lm(lm, result.bundle);
    result.discriminator = DiscriminatorNet::init(cfg.model.dim, cfg.model.heads, 2, cfg.model.max_seq, init_disc_rng);

    std::vector<Tensor> gen_params = result.bundle.trainable_params();
    std::vector<Tensor> disc_params = result.discriminator.trainable_params();
    AdamConfig acfg = cfg.adam;
    acfg.total_steps = cfg.total_steps;
    OptimizerState gen_opt(acfg);
    OptimizerState disc_opt(acfg);

    const bool use_style = cfg.weights.style > 0.0f;
    const bool use_gan = cfg.weights.gan > 0.0f;
    const bool use_dist = cfg.weights.dist > 0.0f;
    const SamplingConfig train_decoding{1, 1.0f};  // greedy while training
    const SamplerConfig sampler{cfg.window, cfg.n_ctx};

    long cs_steps_done = 0;
    for (long step = 1; step <= cfg.total_steps; ++step) {
        const double t0 = now_ms();
        // rs_cs_mix < 1 thins the cross-style stream.
        const bool cs_due =
            (use_style || use_gan) && static_cast<long>(static_cast<double>(step) * cfg.rs_cs_mix) > cs_steps_done;
        if (cs_due) ++cs_steps_done;

        std::vector<StreamBatch> rs_items, cs_items;
        for (int b = 0; b < cfg.batch_size; ++b) rs_items.push_back(sample_rs_batch(train, sampler, rs_rng));
        if (cs_due)
            for (int b = 0; b < cfg.batch_size; ++b) cs_items.push_back(sample_cs_batch(train, sampler, cs_rng));

        TrainLogRecord rec;
        rec.step = step;

        Tape f_tape;
        TapeScope f_scope(f_tape);

        std::vector<CsForward> cs_forwards;
        if (cs_due)
            for (const StreamBatch& cs : cs_items)
                cs_forwards.push_back(cs_forward(cs, result.bundle, lm, cfg.n_gen, train_decoding, gen_rng));

        if (cs_due && use_gan) {
            // Discriminator updates see detached generator features.
            for (int du = 0; du < cfg.disc_update_ratio; ++du) {
                Tape d_tape;
                TapeScope d_scope(d_tape);
                std::vector<Tensor> d_losses;
                if (du == 0) {
                    for (const CsForward& fwd : cs_forwards)
                        d_losses.push_back(loss_gan_discriminator_from(fwd.real_features.detach(),
                                                                       fwd.gen.features.detach(),
                                                                       result.discriminator));
                } else {
                    NoGradScope no_grad_features;
                    for (int b = 0; b < cfg.batch_size; ++b) {
                        StreamBatch extra = sample_cs_batch(train, sampler, cs_rng);
                        CsForward fwd = cs_forward(extra, result.bundle, lm, cfg.n_gen, train_decoding, gen_rng);
                        TapeScope back_on_d(d_tape);
                        d_losses.push_back(
                            loss_gan_discriminator_from(fwd.real_features, fwd.gen.features, result.discriminator));
                    }
                }
                Tensor d_loss =
                    weighted_sum_scalars(d_losses, std::vector<float>(d_losses.size(), 1.0f / d_losses.size()));
                check_finite(d_loss.item(), step, "train_generator[D]");
                rec.losses.gan_discriminator = d_loss.item();
                d_tape.backward(d_loss);
                clip_grad_norm(disc_params, cfg.grad_clip);
                adam_step(disc_params, disc_opt);
                zero_grads(disc_params);
            }
        }

        // Generator update: frozen discriminator, frozen comparator.
        result.discriminator.set_trainable(false);

        std::vector<Tensor> lm_losses, dist_losses, style_losses, gan_losses;
        for (const StreamBatch& rs : rs_items) {
            lm_losses.push_back(loss_lm(rs, result.bundle));
            if (use_dist) dist_losses.push_back(loss_dist(rs, result.bundle, lm));
        }
        if (cs_due)
            for (CsForward& fwd : cs_forwards) {
                if (use_style) {
                    style_losses.push_back(loss_style_from(fwd, comparator));
                    if (fwd.comparator_clamped) ++rec.style_clamped;
                }
                if (use_gan) gan_losses.push_back(loss_gan_generator_from(fwd, result.discriminator));
            }

        auto mean_term = [](std::vector<Tensor>& terms) {
            return weighted_sum_scalars(terms, std::vector<float>(terms.size(), 1.0f / terms.size()));
        };
        std::vector<Tensor> totals = {mean_term(lm_losses)};
        std::vector<float> total_weights = {1.0f};
        rec.losses.lm = totals[0].item();
        if (!dist_losses.empty()) {
            totals.push_back(mean_term(dist_losses));
            total_weights.push_back(cfg.weights.dist);
            rec.losses.dist = totals.back().item();
        }
        if (!style_losses.empty()) {
            totals.push_back(mean_term(style_losses));
            total_weights.push_back(cfg.weights.style);
            rec.losses.style = totals.back().item();
        }
        if (!gan_losses.empty()) {
            totals.push_back(mean_term(gan_losses));
            total_weights.push_back(cfg.weights.gan);
            rec.losses.gan_generator = totals.back().item();
        }
        Tensor total = weighted_sum_scalars(totals, total_weights);
        rec.losses.total = total.item();
        check_finite(total.item(), step, "train_generator");
        f_tape.backward(total);
        clip_grad_norm(gen_params, cfg.grad_clip);
        adam_step(gen_params, gen_opt);
        zero_grads(gen_params);

        result.discriminator.set_trainable(true);

        rec.lr = acfg.lr * (acfg.schedule == LrSchedule::Cosine ? cosine_lr_factor(step, acfg.total_steps) : 1.0f);
        rec.wall_ms = now_ms() - t0;
        if (step % cfg.eval_interval == 0 || step == cfg.total_steps)
            rec.val_fed = validation_fed(val, result.bundle, lm, cfg.eval_items, cfg.n_ctx, cfg.n_gen, cfg.window,
                                         Rng::derive(cfg.seed, kVal + static_cast<std::uint64_t>(step)));
        if (step % cfg.log_interval == 0 || rec.val_fed || step == cfg.total_steps) result.log.append(std::move(rec));
    }
    return result;
}

std::vector<LossWeights> default_weight_candidates() {
    return {{1.0f, 0.1f, 0.1f}, {0.1f, 0.1f, 0.1f}, {1.0f, 0.01f, 0.01f}};
}

SelectionResult select_hyperparams(const std::vector<LossWeights>& candidates, const Corpus& pilot_train,
                                   const Corpus& pilot_holdout, LmModel& lm, ComparatorNet& comparator,
                                   const TrainConfig& base_cfg) {
    if (candidates.empty()) throw ConfigError("select_hyperparams: no candidates");
    SelectionResult result;
    for (const LossWeights& w : candidates) {
        TrainConfig cfg = base_cfg;
        cfg.weights = w;
        TrainGeneratorResult trained = train_generator(pilot_train, pilot_holdout, lm, comparator, cfg);
        CandidateScore score;
        score.weights = w;
        score.fed_value = validation_fed(pilot_holdout, trained.bundle, lm, cfg.eval_items, cfg.n_ctx, cfg.n_gen,
                                         cfg.window, Rng::derive(cfg.seed, kVal));
        result.scores.push_back(score);
    }
    int best = 0;
    for (std::size_t i = 1; i < result.scores.size(); ++i)
        if (result.scores[i].fed_value < result.scores[best].fed_value) best = static_cast<int>(i);
    result.best_index = best;
    return result;
}

}  // namespace styf
