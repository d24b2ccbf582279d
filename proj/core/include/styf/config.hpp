#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "styf/objectives.hpp"
#include "styf/optimizer.hpp"
#include "styf/transformer.hpp"

namespace styf {

// Minimal TOML reader covering the config surface: [sections], strings,
// integers, floats, booleans and flat arrays.
struct TomlValue {
    enum class Kind { String, Number, Boolean, Array };
    Kind kind = Kind::Number;
    std::string str;
    double number = 0.0;
    bool boolean = false;
    std::vector<TomlValue> array;
};

class TomlTable {
public:
    static TomlTable parse_file(const std::string& path);
    static TomlTable parse_string(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::string get_string(const std::string& key) const;
    std::string get_string_or(const std::string& key, const std::string& fallback) const;
    double get_number(const std::string& key) const;
    double get_number_or(const std::string& key, double fallback) const;
    long get_int_or(const std::string& key, long fallback) const;
    bool get_bool_or(const std::string& key, bool fallback) const;
    std::vector<double> get_numbers(const std::string& key) const;
    const std::map<std::string, TomlValue>& values() const { return values_; }

private:
    std::map<std::string, TomlValue> values_;
};

enum class Phase { PretrainLm, PretrainComparator, TrainGenerator };

Phase phase_from_string(const std::string& s);
std::string phase_to_string(Phase p);

struct TrainConfig {
    Phase phase = Phase::TrainGenerator;
    ModelConfig model;
    LossWeights weights = LossWeights::defaults();
    AdamConfig adam;
    int batch_size = 8;
    long total_steps = 1000;
    double rs_cs_mix = 1.0;       // fraction of steps that run the cross-style stream
    int disc_update_ratio = 1;    // discriminator updates per generator update
    int n_ctx = 16;
    int n_gen = 32;
    int window = 64;
    long eval_interval = 250;
    int eval_items = 96;          // held-out items per FED evaluation
    long log_interval = 1;
    std::uint64_t seed = 42;
    float grad_clip = 1.0f;
    // comparator phase
    int comparator_batch = 16;
    int early_stop_patience = 5;
    // prerequisite checkpoints (resolved by the CLI)
    std::string lm_checkpoint;
    std::string comparator_checkpoint;

    static TrainConfig from_toml(const TomlTable& toml);
    void validate() const;
    std::string to_json() const;  // config snapshot for manifests
};

// Run provenance record, emitted once per CLI run.
struct RunManifest {
    std::string command;
    std::string config_json;   // snapshot (may be "{}" for config-less commands)
    std::string corpus_sha256;
    std::uint64_t seed = 0;
    std::string git_describe;
    std::string started_utc;
    std::string finished_utc;
    std::vector<std::string> outputs;
};

std::string sha256_file_hex(const std::string& path);
std::string git_describe_string();
std::string utc_timestamp();
void write_manifest(const RunManifest& manifest, const std::string& path);

}  // namespace styf
