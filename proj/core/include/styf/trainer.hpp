#pragma once

#include <optional>
#include <string>
#include <vector>

#include "styf/config.hpp"
#include "styf/corpus.hpp"
#include "styf/models.hpp"
#include "styf/objectives.hpp"

namespace styf {

struct TrainLogRecord {
    long step = 0;
    LossBreakdown losses;
    double lr = 0.0;
    double wall_ms = 0.0;
    int style_clamped = 0;                 // comparator saturation events this step
    std::optional<double> val_fed;
    std::optional<double> val_nll;
    std::optional<double> val_accuracy;
};

struct TrainLog {
    std::vector<TrainLogRecord> records;

    void append(TrainLogRecord record);  // enforces strictly increasing steps
    void save_jsonl(const std::string& path) const;
    static TrainLog load_jsonl(const std::string& path);
};

struct PretrainLmResult {
    LmModel model;
    TrainLog log;
    double final_val_nll = 0.0;
};

// Phase 1: plain left-to-right LM training, no style machinery.
PretrainLmResult pretrain_lm(const Corpus& train, const Corpus& val, const TrainConfig& cfg);

struct PretrainComparatorResult {
    ComparatorNet comparator;
    TrainLog log;
    double val_accuracy = 0.0;
    long stopped_at_step = 0;
    bool early_stopped = false;
};

// Phase 2: BCE on balanced same/different-style pairs of frozen LM
// features, early-stopped when validation accuracy plateaus.
PretrainComparatorResult pretrain_comparator(const Corpus& train, const Corpus& val, const LmModel& lm,
                                             const TrainConfig& cfg);

struct TrainGeneratorResult {
    GeneratorBundle bundle;
    DiscriminatorNet discriminator;
    TrainLog log;
};

// Phase 3: two-stream training of the generator against frozen H and C,
// with the discriminator updated ahead of each generator step. H and C are
// frozen in place (their grad buffers are dropped).
TrainGeneratorResult train_generator(const Corpus& train, const Corpus& val, LmModel& lm,
                                     ComparatorNet& comparator, const TrainConfig& cfg);

// FED between generated-continuation features and real reference-style
// features, both embedded by the frozen LM (n_items per side).
double validation_fed(const Corpus& val, const GeneratorBundle& bundle, const LmModel& lm, int n_items,
                      int n_ctx, int n_gen, int window, std::uint64_t seed);

std::vector<LossWeights> default_weight_candidates();

struct CandidateScore {
    LossWeights weights;
    double fed_value = 0.0;
};

struct SelectionResult {
    int best_index = 0;
    std::vector<CandidateScore> scores;
};

// Trains each candidate briefly on the pilot corpus and ranks by hold-out
// FED; ties resolve to the earliest candidate.
SelectionResult select_hyperparams(const std::vector<LossWeights>& candidates, const Corpus& pilot_train,
                                   const Corpus& pilot_holdout, LmModel& lm, ComparatorNet& comparator,
                                   const TrainConfig& base_cfg);

}  // namespace styf
