#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "styf/tensor.hpp"

namespace styf {

// Byte-level vocabulary: ids 0..255 are raw bytes, then the four specials.
constexpr int kBosId = 256;
constexpr int kEosId = 257;
constexpr int kPadId = 258;
constexpr int kUnkId = 259;
constexpr int kVocabSize = 260;

std::vector<int> tokenize(const std::string& text);
std::string detokenize(const std::vector<int>& ids);

struct Document {
    std::string id;
    int style_label = 0;
    std::string text;
    std::vector<int> tokens;  // cached byte tokenization
};

struct Corpus {
    std::vector<Document> docs;
    std::vector<std::string> style_names;  // label = index (first-appearance order)

    int style_count() const { return static_cast<int>(style_names.size()); }
    std::vector<std::vector<int>> docs_by_style() const;
    void validate() const;
};

Corpus load_corpus_jsonl(const std::string& path);
void save_corpus_jsonl(const Corpus& corpus, const std::string& path);

struct StyleSpec {
    std::string name;
    std::string alphabet;
    std::vector<float> weights;  // one weight per alphabet byte, nonnegative, sum > 0
    int min_len = 200;
    int max_len = 320;
    int line_len = 40;

    void validate() const;
};

// The three shipped styles: caps-prose, digits-report, lowercase-lyrics.
std::vector<StyleSpec> default_style_specs();
std::vector<StyleSpec> load_style_specs(const std::string& path);
void save_style_specs(const std::vector<StyleSpec>& specs, const std::string& path);

// Weight-normalized overlap between two alphabets (sum of per-byte minima).
double alphabet_overlap(const StyleSpec& a, const StyleSpec& b);

Corpus synth_corpus(const std::vector<StyleSpec>& specs, int docs_per_style, std::uint64_t seed);

// Uniform start offset over the positions that leave a full window; short
// documents are returned whole.
std::vector<int> sample_paragraph(const Document& doc, int max_tokens, Rng& rng);

// psi: leading n_ctx tokens of a paragraph.
std::vector<int> extract_context(const std::vector<int>& paragraph, int n_ctx);

enum class StreamKind { RS, CS };

struct StreamBatch {
    StreamKind kind = StreamKind::RS;
    std::vector<int> context;
    std::vector<int> reference;
    std::vector<int> target;  // present iff RS
    int style_label_context = -1;
    int style_label_reference = -1;
};

struct SamplerConfig {
    int window = 64;  // paragraph token window
    int n_ctx = 16;   // context prefix length
};

StreamBatch sample_rs_batch(const Corpus& corpus, const SamplerConfig& cfg, Rng& rng);
StreamBatch sample_cs_batch(const Corpus& corpus, const SamplerConfig& cfg, Rng& rng);

struct CorpusSplit {
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;
};

// 80/10/10 by document with a seeded shuffle.
CorpusSplit split_corpus(const Corpus& corpus, std::uint64_t seed);
Corpus subset(const Corpus& corpus, const std::vector<int>& indices);

}  // namespace styf
