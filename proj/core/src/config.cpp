#include "styf/config.hpp"

#include <array>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "json.hpp"

namespace styf {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

// Strips a trailing comment that is not inside a string literal.
std::string strip_comment(const std::string& s) {
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') in_str = !in_str;
        if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
}

TomlValue parse_value(const std::string& raw, const std::string& context) {
    const std::string v = trim(raw);
    if (v.empty()) throw ConfigError("toml: empty value for " + context);
    TomlValue out;
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"') throw ConfigError("toml: unterminated string for " + context);
        out.kind = TomlValue::Kind::String;
        std::string s;
        for (std::size_t i = 1; i + 1 < v.size(); ++i) {
            if (v[i] == '\\' && i + 2 < v.size()) {
                ++i;
                switch (v[i]) {
                    case 'n': s.push_back('\n'); break;
                    case 't': s.push_back('\t'); break;
                    case '"': s.push_back('"'); break;
                    case '\\': s.push_back('\\'); break;
                    default: throw ConfigError("toml: bad escape in " + context);
                }
            } else {
                s.push_back(v[i]);
            }
        }
        out.str = s;
        return out;
    }
    if (v.front() == '[') {
        if (v.back() != ']') throw ConfigError("toml: unterminated array for " + context);
        out.kind = TomlValue::Kind::Array;
        std::string inner = v.substr(1, v.size() - 2);
        std::string item;
        bool in_str = false;
        for (char c : inner) {
            if (c == '"') in_str = !in_str;
            if (c == ',' && !in_str) {
                if (!trim(item).empty()) out.array.push_back(parse_value(item, context));
                item.clear();
            } else {
                item.push_back(c);
            }
        }
        if (!trim(item).empty()) out.array.push_back(parse_value(item, context));
        return out;
    }
    if (v == "true" || v == "false") {
        out.kind = TomlValue::Kind::Boolean;
        out.boolean = v == "true";
        return out;
    }
    try {
        std::size_t used = 0;
        out.number = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        out.kind = TomlValue::Kind::Number;
        return out;
    } catch (const std::exception&) {
        throw ConfigError("toml: cannot parse value '" + v + "' for " + context);
    }
}

}  // namespace

TomlTable TomlTable::parse_string(const std::string& text) {
    TomlTable table;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("toml: bad section at line " + std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) throw ConfigError("toml: empty section at line " + std::to_string(lineno));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("toml: expected key = value at line " + std::to_string(lineno));
        std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("toml: empty key at line " + std::to_string(lineno));
        if (!section.empty()) key = section + "." + key;
        table.values_[key] = parse_value(line.substr(eq + 1), key);
    }
    return table;
}

TomlTable TomlTable::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str());
}

std::string TomlTable::get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: missing key " + key);
    if (it->second.kind != TomlValue::Kind::String) throw ConfigError("config: " + key + " must be a string");
    return it->second.str;
}

std::string TomlTable::get_string_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
}

double TomlTable::get_number(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: missing key " + key);
    if (it->second.kind != TomlValue::Kind::Number) throw ConfigError("config: " + key + " must be a number");
    return it->second.number;
}

double TomlTable::get_number_or(const std::string& key, double fallback) const {
    return has(key) ? get_number(key) : fallback;
}

long TomlTable::get_int_or(const std::string& key, long fallback) const {
    return has(key) ? static_cast<long>(get_number(key)) : fallback;
}

bool TomlTable::get_bool_or(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second.kind != TomlValue::Kind::Boolean) throw ConfigError("config: " + key + " must be a boolean");
    return it->second.boolean;
}

std::vector<double> TomlTable::get_numbers(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: missing key " + key);
    if (it->second.kind != TomlValue::Kind::Array) throw ConfigError("config: " + key + " must be an array");
    std::vector<double> out;
    for (const TomlValue& v : it->second.array) {
        if (v.kind != TomlValue::Kind::Number) throw ConfigError("config: " + key + " must hold numbers");
        out.push_back(v.number);
    }
    return out;
}

Phase phase_from_string(const std::string& s) {
    if (s == "pretrain-lm") return Phase::PretrainLm;
    if (s == "pretrain-comparator") return Phase::PretrainComparator;
    if (s == "train-generator") return Phase::TrainGenerator;
    throw ConfigError("unknown phase: " + s);
}

std::string phase_to_string(Phase p) {
    switch (p) {
        case Phase::PretrainLm: return "pretrain-lm";
        case Phase::PretrainComparator: return "pretrain-comparator";
        case Phase::TrainGenerator: return "train-generator";
    }
    return "train-generator";
}

TrainConfig TrainConfig::from_toml(const TomlTable& toml) {
    TrainConfig cfg;
    cfg.phase = phase_from_string(toml.get_string_or("phase", "train-generator"));

    cfg.model.dim = static_cast<int>(toml.get_int_or("model.dim", cfg.model.dim));
    cfg.model.heads = static_cast<int>(toml.get_int_or("model.heads", cfg.model.heads));
    cfg.model.layers = static_cast<int>(toml.get_int_or("model.layers", cfg.model.layers));
    cfg.model.max_seq = static_cast<int>(toml.get_int_or("model.max_seq", cfg.model.max_seq));
    cfg.model.vocab = static_cast<int>(toml.get_int_or("model.vocab", cfg.model.vocab));
    cfg.model.variant = variant_from_string(toml.get_string_or("model.variant", "none"));
    cfg.model.ln_eps = static_cast<float>(toml.get_number_or("model.ln_eps", cfg.model.ln_eps));
    cfg.model.dropout_rate = static_cast<float>(toml.get_number_or("model.dropout", cfg.model.dropout_rate));

    cfg.weights = LossWeights::defaults_for(cfg.model.variant);
    if (toml.has("loss.lambda")) {
        const std::vector<double> lam = toml.get_numbers("loss.lambda");
        if (lam.size() != 3) throw ConfigError("config: loss.lambda must have 3 entries [dist, style, gan]");
        cfg.weights.dist = static_cast<float>(lam[0]);
        cfg.weights.style = static_cast<float>(lam[1]);
        cfg.weights.gan = static_cast<float>(lam[2]);
    }

    cfg.adam.lr = static_cast<float>(toml.get_number_or("optimizer.lr", 0.00025));
    cfg.adam.beta1 = static_cast<float>(toml.get_number_or("optimizer.beta1", 0.9));
    cfg.adam.beta2 = static_cast<float>(toml.get_number_or("optimizer.beta2", 0.999));
    cfg.adam.eps = static_cast<float>(toml.get_number_or("optimizer.eps", 1e-8));
    cfg.adam.weight_decay = static_cast<float>(toml.get_number_or("optimizer.weight_decay", 0.01));
    const std::string sched = toml.get_string_or("optimizer.schedule", "cosine");
    if (sched == "cosine")
        cfg.adam.schedule = LrSchedule::Cosine;
    else if (sched == "constant")
        cfg.adam.schedule = LrSchedule::Constant;
    else
        throw ConfigError("config: optimizer.schedule must be cosine or constant");

    cfg.batch_size = static_cast<int>(toml.get_int_or("train.batch_size", cfg.batch_size));
    cfg.total_steps = toml.get_int_or("train.total_steps", cfg.total_steps);
    cfg.rs_cs_mix = toml.get_number_or("train.rs_cs_mix", cfg.rs_cs_mix);
    cfg.disc_update_ratio = static_cast<int>(toml.get_int_or("train.disc_update_ratio", cfg.disc_update_ratio));
    cfg.n_ctx = static_cast<int>(toml.get_int_or("train.n_ctx", cfg.n_ctx));
    cfg.n_gen = static_cast<int>(toml.get_int_or("train.n_gen", cfg.n_gen));
    cfg.window = static_cast<int>(toml.get_int_or("train.window", cfg.window));
    cfg.eval_interval = toml.get_int_or("train.eval_interval", cfg.eval_interval);
    cfg.eval_items = static_cast<int>(toml.get_int_or("train.eval_items", cfg.eval_items));
    cfg.log_interval = toml.get_int_or("train.log_interval", cfg.log_interval);
    cfg.seed = static_cast<std::uint64_t>(toml.get_int_or("train.seed", static_cast<long>(cfg.seed)));
    cfg.grad_clip = static_cast<float>(toml.get_number_or("train.grad_clip", cfg.grad_clip));
    cfg.comparator_batch = static_cast<int>(toml.get_int_or("train.comparator_batch", cfg.comparator_batch));
    cfg.early_stop_patience = static_cast<int>(toml.get_int_or("train.early_stop_patience", cfg.early_stop_patience));
    cfg.lm_checkpoint = toml.get_string_or("train.lm_checkpoint", "");
    cfg.comparator_checkpoint = toml.get_string_or("train.comparator_checkpoint", "");

    cfg.adam.total_steps = cfg.total_steps;
    cfg.validate();
    return cfg;
}

void TrainConfig::validate() const {
    model.validate();
    weights.validate();
    if (total_steps <= 0) throw ConfigError("config: total_steps must be positive");
    if (batch_size <= 0) throw ConfigError("config: batch_size must be positive");
    if (rs_cs_mix <= 0.0 || rs_cs_mix > 1.0) throw ConfigError("config: rs_cs_mix must lie in (0, 1]");
    if (disc_update_ratio < 1) throw ConfigError("config: disc_update_ratio must be >= 1");
    if (n_ctx < 1 || n_gen < 1) throw ConfigError("config: n_ctx and n_gen must be >= 1");
    if (n_ctx + n_gen > model.max_seq) throw ConfigError("config: n_ctx + n_gen exceeds max_seq");
    if (window < 2 || window > model.max_seq) throw ConfigError("config: window must lie in [2, max_seq]");
    if (eval_interval <= 0 || log_interval <= 0) throw ConfigError("config: intervals must be positive");
    if (phase == Phase::TrainGenerator && model.variant == Variant::None)
        throw ConfigError("config: train-generator needs model.variant in {A, B, C, D}");
}

std::string TrainConfig::to_json() const {
    nlohmann::json j;
    j["phase"] = phase_to_string(phase);
    j["model"] = {{"dim", model.dim},       {"heads", model.heads},   {"layers", model.layers},
                  {"max_seq", model.max_seq}, {"vocab", model.vocab},   {"variant", variant_to_string(model.variant)},
                  {"ln_eps", model.ln_eps}, {"dropout", model.dropout_rate}};
    j["loss"] = {{"lambda", {weights.dist, weights.style, weights.gan}}};
    j["optimizer"] = {{"lr", adam.lr},
                      {"beta1", adam.beta1},
                      {"beta2", adam.beta2},
                      {"eps", adam.eps},
                      {"weight_decay", adam.weight_decay},
                      {"schedule", adam.schedule == LrSchedule::Cosine ? "cosine" : "constant"}};
    j["train"] = {{"batch_size", batch_size},
                  {"total_steps", total_steps},
                  {"rs_cs_mix", rs_cs_mix},
                  {"disc_update_ratio", disc_update_ratio},
                  {"n_ctx", n_ctx},
                  {"n_gen", n_gen},
                  {"window", window},
                  {"eval_interval", eval_interval},
                  {"eval_items", eval_items},
                  {"log_interval", log_interval},
                  {"seed", seed},
                  {"grad_clip", grad_clip},
                  {"comparator_batch", comparator_batch},
                  {"early_stop_patience", early_stop_patience},
                  {"lm_checkpoint", lm_checkpoint},
                  {"comparator_checkpoint", comparator_checkpoint}};
    return j.dump();
}

std::string sha256_file_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("sha256: cannot open " + path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr) throw std::runtime_error("sha256: context allocation failed");
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    std::array<char, 65536> buf;
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const std::streamsize got = in.gcount();
        if (got > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(got));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

std::string git_describe_string() {
    FILE* pipe = popen("git describe --always --dirty 2>/dev/null", "r");
    if (pipe == nullptr) return "unknown";
    std::array<char, 256> buf;
    std::string out;
    while (fgets(buf.data(), static_cast<int>(buf.size()), pipe) != nullptr) out += buf.data();
    pclose(pipe);
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
    return out.empty() ? "unknown" : out;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

void write_manifest(const RunManifest& manifest, const std::string& path) {
    nlohmann::json j;
    j["command"] = manifest.command;
    j["config"] = manifest.config_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(manifest.config_json);
    j["corpus_sha256"] = manifest.corpus_sha256;
    j["seed"] = manifest.seed;
    j["git"] = manifest.git_describe;
    j["started_utc"] = manifest.started_utc;
    j["finished_utc"] = manifest.finished_utc;
    j["outputs"] = manifest.outputs;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("manifest: cannot write " + path);
    out << j.dump(2) << "\n";
}

}  // namespace styf
