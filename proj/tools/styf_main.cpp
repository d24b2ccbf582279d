// styf: style example-guided paragraph generation, end to end.
//
// Subcommands: make-corpus, pretrain-lm, pretrain-comparator, train,
// generate, evaluate. Exit codes: 0 success, 1 runtime failure, 2 usage
// error. STYF_SEED overrides the config/flag seed everywhere.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "styf/checkpoint.hpp"
#include "styf/config.hpp"
#include "styf/corpus.hpp"
#include "styf/metrics.hpp"
#include "styf/trainer.hpp"

namespace fs = std::filesystem;
using namespace styf;

namespace {

std::optional<std::uint64_t> env_seed_override() {
    const char* env = std::getenv("STYF_SEED");
    if (env == nullptr || *env == '\0') return std::nullopt;
    try {
        return static_cast<std::uint64_t>(std::stoull(env));
    } catch (const std::exception&) {
        throw UsageError("STYF_SEED must be an unsigned integer");
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void require_checkpoint(const std::string& path, const std::string& producer) {
    if (path.empty() || !fs::exists(path))
        throw std::runtime_error("missing prerequisite checkpoint '" + path + "'; run `styf " + producer +
                                 "` first");
}

RunManifest start_manifest(const std::string& command, std::uint64_t seed, const std::string& config_json) {
    RunManifest m;
    m.command = command;
    m.config_json = config_json;
    m.seed = seed;
    m.git_describe = git_describe_string();
    m.started_utc = utc_timestamp();
    return m;
}

void finish_manifest(RunManifest& m, const std::string& path) {
    m.finished_utc = utc_timestamp();
    write_manifest(m, path);
}

TrainConfig load_train_config(const std::string& path, Phase expected) {
    TrainConfig cfg = TrainConfig::from_toml(TomlTable::parse_file(path));
    if (cfg.phase != expected)
        throw ConfigError("config phase is '" + phase_to_string(cfg.phase) + "', expected '" +
                          phase_to_string(expected) + "'");
    if (auto s = env_seed_override()) cfg.seed = *s;
    return cfg;
}

int run_make_corpus(const std::string& specs_path, int docs_per_style, std::uint64_t seed,
                    const std::string& out_path) {
    if (auto s = env_seed_override()) seed = *s;
    std::vector<StyleSpec> specs = specs_path.empty() ? default_style_specs() : load_style_specs(specs_path);
    RunManifest manifest = start_manifest("make-corpus", seed, "{}");
    Corpus corpus = synth_corpus(specs, docs_per_style, seed);
    save_corpus_jsonl(corpus, out_path);
    manifest.corpus_sha256 = sha256_file_hex(out_path);
    manifest.outputs = {out_path};
    finish_manifest(manifest, out_path + ".manifest.json");
    std::cout << "wrote " << corpus.docs.size() << " documents (" << corpus.style_count() << " styles) to "
              << out_path << "\n";
    return 0;
}

int run_pretrain_lm(const std::string& config_path, const std::string& corpus_path, const std::string& out_dir) {
    TrainConfig cfg = load_train_config(config_path, Phase::PretrainLm);
    Corpus corpus = load_corpus_jsonl(corpus_path);
    CorpusSplit split = split_corpus(corpus, cfg.seed);
    Corpus train = subset(corpus, split.train);
    Corpus val = subset(corpus, split.val);
    fs::create_directories(out_dir);
    RunManifest manifest = start_manifest("pretrain-lm", cfg.seed, cfg.to_json());
    manifest.corpus_sha256 = sha256_file_hex(corpus_path);

    PretrainLmResult result = pretrain_lm(train, val, cfg);
    const std::string ckpt = (fs::path(out_dir) / "lm.ckpt").string();
    const std::string log_path = (fs::path(out_dir) / "train_log.jsonl").string();
    save_lm(ckpt, result.model);
    result.log.save_jsonl(log_path);
    manifest.outputs = {ckpt, log_path};
    finish_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
    std::cout << "pretrain-lm done: val_nll=" << result.final_val_nll << " checkpoint=" << ckpt << "\n";
    return 0;
}

int run_pretrain_comparator(const std::string& config_path, const std::string& corpus_path,
                            const std::string& out_dir, std::string lm_path) {
    TrainConfig cfg = load_train_config(config_path, Phase::PretrainComparator);
    if (lm_path.empty()) lm_path = cfg.lm_checkpoint;
    require_checkpoint(lm_path, "pretrain-lm");
    Corpus corpus = load_corpus_jsonl(corpus_path);
    CorpusSplit split = split_corpus(corpus, cfg.seed);
    Corpus train = subset(corpus, split.train);
    Corpus val = subset(corpus, split.val);
    fs::create_directories(out_dir);
    RunManifest manifest = start_manifest("pretrain-comparator", cfg.seed, cfg.to_json());
    manifest.corpus_sha256 = sha256_file_hex(corpus_path);

    LmModel lm = load_lm(lm_path);
    lm.set_trainable(false);
    PretrainComparatorResult result = pretrain_comparator(train, val, lm, cfg);
    const std::string ckpt = (fs::path(out_dir) / "comparator.ckpt").string();
    const std::string log_path = (fs::path(out_dir) / "train_log.jsonl").string();
    save_comparator(ckpt, result.comparator);
    result.log.save_jsonl(log_path);
    manifest.outputs = {ckpt, log_path};
    finish_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
    std::cout << "pretrain-comparator done: val_accuracy=" << result.val_accuracy << " stopped_at="
              << result.stopped_at_step << (result.early_stopped ? " (early stop)" : "") << " checkpoint=" << ckpt
              << "\n";
    return 0;
}

int run_train(const std::string& config_path, const std::string& corpus_path, const std::string& out_dir,
              std::string lm_path, std::string comparator_path, const std::string& variant_override) {
    TrainConfig cfg = load_train_config(config_path, Phase::TrainGenerator);
    if (!variant_override.empty()) {
        cfg.model.variant = variant_from_string(variant_override);
        cfg.weights = LossWeights::defaults_for(cfg.model.variant);
    }
    if (lm_path.empty()) lm_path = cfg.lm_checkpoint;
    if (comparator_path.empty()) comparator_path = cfg.comparator_checkpoint;
    require_checkpoint(lm_path, "pretrain-lm");
    require_checkpoint(comparator_path, "pretrain-comparator");

    Corpus corpus = load_corpus_jsonl(corpus_path);
    CorpusSplit split = split_corpus(corpus, cfg.seed);
    Corpus train = subset(corpus, split.train);
    Corpus val = subset(corpus, split.val);
    fs::create_directories(out_dir);
    RunManifest manifest = start_manifest("train", cfg.seed, cfg.to_json());
    manifest.corpus_sha256 = sha256_file_hex(corpus_path);

    LmModel lm = load_lm(lm_path);
    ComparatorNet comparator = load_comparator(comparator_path);
    TrainGeneratorResult result = train_generator(train, val, lm, comparator, cfg);

    const std::string gen_ckpt = (fs::path(out_dir) / "generator.ckpt").string();
    const std::string disc_ckpt = (fs::path(out_dir) / "discriminator.ckpt").string();
    const std::string log_path = (fs::path(out_dir) / "train_log.jsonl").string();
    save_generator(gen_ckpt, result.bundle);
    save_discriminator(disc_ckpt, result.discriminator);
    result.log.save_jsonl(log_path);
    manifest.outputs = {gen_ckpt, disc_ckpt, log_path};
    finish_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
    std::cout << "train done: variant=" << variant_to_string(cfg.model.variant) << " steps=" << cfg.total_steps
              << " checkpoint=" << gen_ckpt << "\n";
    return 0;
}

int run_generate(const std::string& checkpoint, const std::string& context_text, const std::string& context_file,
                 const std::string& reference_file, int n_tokens, int top_k, float temperature,
                 std::uint64_t seed, const std::string& emit_features) {
    if (n_tokens < 1) throw UsageError("--n-tokens must be >= 1");
    if (top_k < 1) throw UsageError("--top-k must be >= 1");
    if (auto s = env_seed_override()) seed = *s;
    std::string context = context_text;
    if (!context_file.empty()) context = read_text_file(context_file);
    if (context.empty()) throw UsageError("context must be nonempty (use --context or --context-file)");
    const std::string reference = read_text_file(reference_file);
    if (reference.empty()) throw UsageError("reference file is empty");

    GeneratorBundle bundle = load_generator(checkpoint);
    const int max_seq = bundle.decoder.config.max_seq;
    std::vector<int> context_tokens = tokenize(context);
    if (static_cast<int>(context_tokens.size()) + n_tokens > max_seq) {
        // Keep the newest context tokens so context + generation fits.
        const int keep = max_seq - n_tokens;
        if (keep < 1) throw UsageError("--n-tokens leaves no room for context at max_seq=" + std::to_string(max_seq));
        context_tokens.assign(context_tokens.end() - keep, context_tokens.end());
    }
    std::vector<int> reference_tokens = tokenize(reference);
    if (static_cast<int>(reference_tokens.size()) > max_seq)
        reference_tokens.resize(max_seq);

    Rng rng(seed);
    SamplingConfig sampling{top_k, temperature};
    GenerationResult result = free_running_generate(context_tokens, reference_tokens, bundle, n_tokens, sampling,
                                                    rng, !emit_features.empty());
    std::cout << detokenize(result.tokens) << "\n";
    if (!emit_features.empty()) {
        nlohmann::json j;
        j["rows"] = result.features.rows();
        j["cols"] = result.features.cols();
        j["data"] = result.features.vec();
        std::ofstream out(emit_features, std::ios::binary);
        if (!out) throw ConfigError("cannot write features to " + emit_features);
        out << j.dump() << "\n";
    }
    return 0;
}

nlohmann::json report_json(const MetricsReport& r) { return nlohmann::json::parse(metrics_report_to_json(r)); }

int run_evaluate(const std::string& checkpoint, const std::string& lm_path, const std::string& corpus_path,
                 int n_samples, const std::string& out_path, std::string scatter_path, int top_k, int n_gen,
                 std::uint64_t split_seed, const std::string& drop_loss, const std::string& train_config,
                 const std::string& comparator_path) {
    if (n_samples < 1) throw UsageError("--n-samples must be >= 1");
    if (auto s = env_seed_override()) split_seed = *s;
    require_checkpoint(lm_path, "pretrain-lm");
    Corpus corpus = load_corpus_jsonl(corpus_path);
    if (corpus.docs.empty()) throw ConfigError("evaluate: empty corpus");
    CorpusSplit split = split_corpus(corpus, split_seed);
    Corpus train = subset(corpus, split.train);
    Corpus test = subset(corpus, split.test);
    if (test.docs.empty()) throw ConfigError("evaluate: empty test split");

    RunManifest manifest = start_manifest("evaluate", split_seed, "{}");
    manifest.corpus_sha256 = sha256_file_hex(corpus_path);

    LmModel lm = load_lm(lm_path);
    lm.set_trainable(false);
    GeneratorBundle bundle = load_generator(checkpoint);

    StyleClassifierSet classifiers = train_style_classifiers(train, lm, 48, 300, 64, split_seed);

    EvalConfig ecfg;
    ecfg.n_samples = n_samples;
    ecfg.n_gen = n_gen;
    ecfg.top_k = top_k;
    ecfg.seed = split_seed;
    EvalOutput out = run_evaluation(test, train, bundle, lm, classifiers, ecfg);

    nlohmann::json j = report_json(out.report);

    if (!drop_loss.empty()) {
        if (train_config.empty() || comparator_path.empty())
            throw UsageError("--drop-loss needs --train-config and --comparator to retrain");
        TrainConfig cfg = load_train_config(train_config, Phase::TrainGenerator);
        LossWeights dropped = cfg.weights;
        if (drop_loss == "dist")
            dropped.dist = 0.0f;
        else if (drop_loss == "style")
            dropped.style = 0.0f;
        else if (drop_loss == "gan")
            dropped.gan = 0.0f;
        else
            throw UsageError("--drop-loss must be one of dist|style|gan");
        cfg.weights = dropped;
        ComparatorNet comparator = load_comparator(comparator_path);
        CorpusSplit tsplit = split_corpus(corpus, cfg.seed);
        Corpus ttrain = subset(corpus, tsplit.train);
        Corpus tval = subset(corpus, tsplit.val);
        TrainGeneratorResult retrained = train_generator(ttrain, tval, lm, comparator, cfg);
        EvalOutput ablation = run_evaluation(test, train, retrained.bundle, lm, classifiers, ecfg);
        nlohmann::json aj;
        aj["dropped"] = drop_loss;
        aj["metrics"] = report_json(ablation.report);
        aj["delta"] = {{"fluency", ablation.report.fluency - out.report.fluency},
                       {"style_score", ablation.report.style - out.report.style},
                       {"diversity", ablation.report.diversity.value - out.report.diversity.value},
                       {"novelty", ablation.report.novelty.value - out.report.novelty.value}};
        j["ablation"] = aj;
    }

    std::ofstream report_out(out_path, std::ios::binary);
    if (!report_out) throw ConfigError("cannot write report to " + out_path);
    report_out << j.dump(2) << "\n";

    if (scatter_path.empty()) scatter_path = out_path + ".scatter.csv";
    std::ofstream scatter_out(scatter_path, std::ios::binary);
    if (!scatter_out) throw ConfigError("cannot write scatter to " + scatter_path);
    scatter_out << scatter_to_csv(out.scatter);

    manifest.outputs = {out_path, scatter_path};
    finish_manifest(manifest, out_path + ".manifest.json");
    std::cout << "evaluate done: fluency=" << out.report.fluency << " style=" << out.report.style
              << " report=" << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"style example-guided paragraph generation"};
    app.require_subcommand(1);

    // make-corpus
    auto* mc = app.add_subcommand("make-corpus", "generate a deterministic synthetic styled corpus");
    std::string mc_specs, mc_out = "corpus.jsonl";
    int mc_docs = 0;
    std::uint64_t mc_seed = 42;
    mc->add_option("--specs", mc_specs, "style spec JSON (default: built-in 3 styles)");
    mc->add_option("--docs-per-style", mc_docs, "documents per style")->required();
    mc->add_option("--seed", mc_seed, "generation seed");
    mc->add_option("--out", mc_out, "output JSONL path")->required();

    // pretrain-lm
    auto* plm = app.add_subcommand("pretrain-lm", "pretrain the reference language model");
    std::string plm_config, plm_corpus, plm_out = "out/lm";
    plm->add_option("--config", plm_config, "TOML config (phase pretrain-lm)")->required();
    plm->add_option("--corpus", plm_corpus, "corpus JSONL")->required();
    plm->add_option("--out", plm_out, "output directory");

    // pretrain-comparator
    auto* pc = app.add_subcommand("pretrain-comparator", "pretrain the style comparator");
    std::string pc_config, pc_corpus, pc_out = "out/comparator", pc_lm;
    pc->add_option("--config", pc_config, "TOML config (phase pretrain-comparator)")->required();
    pc->add_option("--corpus", pc_corpus, "corpus JSONL")->required();
    pc->add_option("--out", pc_out, "output directory");
    pc->add_option("--lm", pc_lm, "language model checkpoint (overrides config)");

    // train
    auto* tr = app.add_subcommand("train", "train the style-conditioned generator");
    std::string tr_config, tr_corpus, tr_out = "out/generator", tr_lm, tr_comp, tr_variant;
    tr->add_option("--config", tr_config, "TOML config (phase train-generator)")->required();
    tr->add_option("--corpus", tr_corpus, "corpus JSONL")->required();
    tr->add_option("--out", tr_out, "output directory");
    tr->add_option("--lm", tr_lm, "language model checkpoint (overrides config)");
    tr->add_option("--comparator", tr_comp, "comparator checkpoint (overrides config)");
    tr->add_option("--variant", tr_variant, "injection model: A, B, C or D (overrides config)");

    // generate
    auto* gen = app.add_subcommand("generate", "generate styled text from a trained checkpoint");
    std::string gen_ckpt, gen_context, gen_context_file, gen_reference, gen_features;
    int gen_n = 0, gen_topk = 1;
    float gen_temp = 1.0f;
    std::uint64_t gen_seed = 42;
    gen->add_option("--checkpoint", gen_ckpt, "generator checkpoint")->required();
    gen->add_option("--context", gen_context, "context text");
    gen->add_option("--context-file", gen_context_file, "context text file");
    gen->add_option("--reference", gen_reference, "style reference text file")->required();
    gen->add_option("--n-tokens", gen_n, "tokens to generate")->required();
    gen->add_option("--top-k", gen_topk, "top-k sampling (1 = greedy)");
    gen->add_option("--temperature", gen_temp, "sampling temperature");
    gen->add_option("--seed", gen_seed, "sampling seed");
    gen->add_option("--emit-features", gen_features, "write decoder features (JSON) for metric pipelines");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "run the auto-evaluation metric suite");
    std::string ev_ckpt, ev_lm, ev_corpus, ev_out = "report.json", ev_scatter, ev_drop, ev_tconfig, ev_comp;
    int ev_samples = 120, ev_topk = 4, ev_ngen = 32;
    std::uint64_t ev_seed = 42;
    ev->add_option("--checkpoint", ev_ckpt, "generator checkpoint")->required();
    ev->add_option("--lm", ev_lm, "evaluation language model checkpoint")->required();
    ev->add_option("--corpus", ev_corpus, "corpus JSONL")->required();
    ev->add_option("--n-samples", ev_samples, "generation trials");
    ev->add_option("--out", ev_out, "report JSON path");
    ev->add_option("--scatter", ev_scatter, "scatter CSV path (default: <out>.scatter.csv)");
    ev->add_option("--top-k", ev_topk, "decoding top-k during evaluation");
    ev->add_option("--n-gen", ev_ngen, "tokens generated per trial");
    ev->add_option("--split-seed", ev_seed, "corpus split seed");
    ev->add_option("--drop-loss", ev_drop, "ablation: retrain with one of dist|style|gan dropped");
    ev->add_option("--train-config", ev_tconfig, "train config used by --drop-loss");
    ev->add_option("--comparator", ev_comp, "comparator checkpoint used by --drop-loss");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*mc) return run_make_corpus(mc_specs, mc_docs, mc_seed, mc_out);
        if (*plm) return run_pretrain_lm(plm_config, plm_corpus, plm_out);
        if (*pc) return run_pretrain_comparator(pc_config, pc_corpus, pc_out, pc_lm);
        if (*tr) return run_train(tr_config, tr_corpus, tr_out, tr_lm, tr_comp, tr_variant);
        if (*gen)
            return run_generate(gen_ckpt, gen_context, gen_context_file, gen_reference, gen_n, gen_topk, gen_temp,
                                gen_seed, gen_features);
        if (*ev)
            return run_evaluate(ev_ckpt, ev_lm, ev_corpus, ev_samples, ev_out, ev_scatter, ev_topk, ev_ngen, ev_seed,
                                ev_drop, ev_tconfig, ev_comp);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
