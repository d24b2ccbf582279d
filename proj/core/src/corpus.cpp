#include "styf/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace styf {

using nlohmann::json;

std::vector<int> tokenize(const std::string& text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char b : text) ids.push_back(static_cast<int>(b));
    return ids;
}

std::string detokenize(const std::vector<int>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || id >= kVocabSize) throw ContractError("detokenize: id out of vocabulary");
        if (id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
        // specials render as nothing
    }
    return out;
}

std::vector<std::vector<int>> Corpus::docs_by_style() const {
    std::vector<std::vector<int>> by_style(style_names.size());
    for (std::size_t i = 0; i < docs.size(); ++i) by_style[docs[i].style_label].push_back(static_cast<int>(i));
    return by_style;
}

void Corpus::validate() const {
    for (const Document& d : docs) {
        if (d.text.empty()) throw ContractError("corpus: empty document text: " + d.id);
        if (d.style_label < 0 || d.style_label >= style_count())
            throw ContractError("corpus: style label out of range: " + d.id);
    }
}

Corpus load_corpus_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open corpus file: " + path);
    Corpus corpus;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw ConfigError("corpus line " + std::to_string(lineno) + ": " + e.what());
        }
        Document d;
        d.id = obj.at("id").get<std::string>();
        const std::string style = obj.at("style").get<std::string>();
        d.text = obj.at("text").get<std::string>();
        auto it = std::find(corpus.style_names.begin(), corpus.style_names.end(), style);
        if (it == corpus.style_names.end()) {
            d.style_label = corpus.style_count();
            corpus.style_names.push_back(style);
        } else {
            d.style_label = static_cast<int>(it - corpus.style_names.begin());
        }
        d.tokens = tokenize(d.text);
        corpus.docs.push_back(std::move(d));
    }
    corpus.validate();
    return corpus;
}

void save_corpus_jsonl(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write corpus file: " + path);
    for (const Document& d : corpus.docs) {
        json obj;
        obj["id"] = d.id;
        obj["style"] = corpus.style_names.at(d.style_label);
        obj["text"] = d.text;
        out << obj.dump() << "\n";
    }
}

void StyleSpec::validate() const {
    if (alphabet.empty()) throw ConfigError("style spec '" + name + "': empty alphabet");
    if (weights.size() != alphabet.size())
        throw ConfigError("style spec '" + name + "': weight count must match alphabet size");
    double sum = 0.0;
    for (float w : weights) {
        if (w < 0.0f) throw ConfigError("style spec '" + name + "': negative weight");
        sum += w;
    }
    if (sum <= 0.0) throw ConfigError("style spec '" + name + "': degenerate zero-weight alphabet");
    if (min_len < 2 || max_len < min_len) throw ConfigError("style spec '" + name + "': bad length range");
    if (line_len < 1) throw ConfigError("style spec '" + name + "': line_len must be >= 1");
}

std::vector<StyleSpec> default_style_specs() {
    auto letter_weights = [](std::size_t letters, float space_weight) {
        std::vector<float> w;
        for (std::size_t i = 0; i < letters; ++i) w.push_back(1.0f / (1.0f + 0.15f * static_cast<float>(i)));
        w.push_back(space_weight);
        return w;
    };
    StyleSpec caps;
    caps.name = "caps-prose";
    caps.alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ ";
    caps.weights = letter_weights(26, 4.0f);
    caps.min_len = 220;
    caps.max_len = 340;
    caps.line_len = 48;

    StyleSpec digits;
    digits.name = "digits-report";
    digits.alphabet = "0123456789 .-";
    digits.weights = {1.0f, 1.0f, 0.9f, 0.8f, 0.7f, 0.6f, 0.5f, 0.5f, 0.4f, 0.4f, 2.0f, 0.6f, 0.4f};
    digits.min_len = 220;
    digits.max_len = 340;
    digits.line_len = 24;

    StyleSpec lyrics;
    lyrics.name = "lowercase-lyrics";
    lyrics.alphabet = "abcdefghijklmnopqrstuvwxyz ";
    lyrics.weights = letter_weights(26, 3.5f);
    lyrics.min_len = 200;
    lyrics.max_len = 320;
    lyrics.line_len = 16;

    return {caps, digits, lyrics};
}

std::vector<StyleSpec> load_style_specs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open style spec file: " + path);
    json arr;
    try {
        in >> arr;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("style spec parse error: ") + e.what());
    }
    if (!arr.is_array()) throw ConfigError("style spec file must be a JSON array");
    std::vector<StyleSpec> specs;
    for (const json& obj : arr) {
        StyleSpec s;
        s.name = obj.at("name").get<std::string>();
        s.alphabet = obj.at("alphabet").get<std::string>();
        s.weights = obj.at("weights").get<std::vector<float>>();
        s.min_len = obj.at("min_len").get<int>();
        s.max_len = obj.at("max_len").get<int>();
        s.line_len = obj.at("line_len").get<int>();
        s.validate();
        specs.push_back(std::move(s));
    }
    return specs;
}

void save_style_specs(const std::vector<StyleSpec>& specs, const std::string& path) {
    json arr = json::array();
    for (const StyleSpec& s : specs) {
        json obj;
        obj["name"] = s.name;
        obj["alphabet"] = s.alphabet;
        obj["weights"] = s.weights;
        obj["min_len"] = s.min_len;
        obj["max_len"] = s.max_len;
        obj["line_len"] = s.line_len;
        arr.push_back(obj);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write style spec file: " + path);
    out << arr.dump(2) << "\n";
}

double alphabet_overlap(const StyleSpec& a, const StyleSpec& b) {
    double wa[256] = {0.0}, wb[256] = {0.0};
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < a.alphabet.size(); ++i) {
        wa[static_cast<unsigned char>(a.alphabet[i])] += a.weights[i];
        sa += a.weights[i];
    }
    for (std::size_t i = 0; i < b.alphabet.size(); ++i) {
        wb[static_cast<unsigned char>(b.alphabet[i])] += b.weights[i];
        sb += b.weights[i];
    }
    double overlap = 0.0;
    for (int c = 0; c < 256; ++c) overlap += std::min(wa[c] / sa, wb[c] / sb);
    return overlap;
}

namespace {

char sample_char(const StyleSpec& spec, const std::vector<double>& cumulative, Rng& rng) {
    const double r = rng.uniform() * cumulative.back();
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
    std::size_t idx = static_cast<std::size_t>(it - cumulative.begin());
    if (idx >= spec.alphabet.size()) idx = spec.alphabet.size() - 1;
    return spec.alphabet[idx];
}

}  // namespace

Corpus synth_corpus(const std::vector<StyleSpec>& specs, int docs_per_style, std::uint64_t seed) {
    if (specs.size() < 2) throw ConfigError("synth_corpus: need at least 2 style specs");
    if (docs_per_style < 1) throw ConfigError("synth_corpus: docs_per_style must be >= 1");
    for (const StyleSpec& s : specs) s.validate();
    for (std::size_t i = 0; i < specs.size(); ++i)
        for (std::size_t j = i + 1; j < specs.size(); ++j)
            if (alphabet_overlap(specs[i], specs[j]) > 0.5)
                throw ConfigError("synth_corpus: alphabets of '" + specs[i].name + "' and '" + specs[j].name +
                                  "' overlap more than 50% by weight");

    Corpus corpus;
    Rng rng(Rng::derive(seed, 0x636f7270));
    for (std::size_t s = 0; s < specs.size(); ++s) {
        const StyleSpec& spec = specs[s];
        corpus.style_names.push_back(spec.name);
        std::vector<double> cumulative(spec.weights.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < spec.weights.size(); ++i) {
            acc += spec.weights[i];
            cumulative[i] = acc;
        }
        for (int d = 0; d < docs_per_style; ++d) {
            const int target = spec.min_len + static_cast<int>(rng.uniform_u64(spec.max_len - spec.min_len + 1));
            std::string text;
            text.reserve(target + spec.line_len);
            int col = 0;
            while (static_cast<int>(text.size()) < target) {
                if (col == spec.line_len) {
                    text.push_back('\n');
                    col = 0;
                    continue;
                }
                text.push_back(sample_char(spec, cumulative, rng));
                ++col;
            }
            std::ostringstream id;
            id << spec.name << "-" << std::setw(4) << std::setfill('0') << d;
            Document doc;
            doc.id = id.str();
            doc.style_label = static_cast<int>(s);
            doc.text = std::move(text);
            doc.tokens = tokenize(doc.text);
            corpus.docs.push_back(std::move(doc));
        }
    }
    corpus.validate();
    return corpus;
}

std::vector<int> sample_paragraph(const Document& doc, int max_tokens, Rng& rng) {
    if (doc.tokens.empty()) throw ContractError("sample_paragraph: empty document");
    if (max_tokens < 1) throw ContractError("sample_paragraph: max_tokens must be >= 1");
    const int len = static_cast<int>(doc.tokens.size());
    if (len <= max_tokens) return doc.tokens;
    const int start = static_cast<int>(rng.uniform_u64(static_cast<std::uint64_t>(len - max_tokens) + 1));
    return std::vector<int>(doc.tokens.begin() + start, doc.tokens.begin() + start + max_tokens);
}

std::vector<int> extract_context(const std::vector<int>& paragraph, int n_ctx) {
    if (paragraph.empty()) throw ContractError("extract_context: empty paragraph");
    if (n_ctx < 1) throw ContractError("extract_context: n_ctx must be >= 1");
    const int take = std::min<int>(n_ctx, static_cast<int>(paragraph.size()));
    return std::vector<int>(paragraph.begin(), paragraph.begin() + take);
}

namespace {

int pick_same_style_other(const Corpus& corpus, const std::vector<std::vector<int>>& by_style, int doc_idx,
                          Rng& rng) {
    const int label = corpus.docs[doc_idx].style_label;
    const auto& peers = by_style[label];
    if (peers.size() < 2)
        throw ConfigError("stream sampler: style '" + corpus.style_names[label] + "' needs at least 2 documents");
    int other = doc_idx;
    while (other == doc_idx) other = peers[rng.uniform_index(peers.size())];
    return other;
}

}  // namespace

StreamBatch sample_rs_batch(const Corpus& corpus, const SamplerConfig& cfg, Rng& rng) {
    if (corpus.docs.empty()) throw ConfigError("stream sampler: empty corpus");
    const auto by_style = corpus.docs_by_style();
    const int di = static_cast<int>(rng.uniform_index(corpus.docs.size()));
    const int dj = pick_same_style_other(corpus, by_style, di, rng);
    StreamBatch batch;
    batch.kind = StreamKind::RS;
    batch.target = sample_paragraph(corpus.docs[di], cfg.window, rng);
    batch.reference = sample_paragraph(corpus.docs[dj], cfg.window, rng);
    batch.context = extract_context(batch.target, cfg.n_ctx);
    batch.style_label_context = corpus.docs[di].style_label;
    batch.style_label_reference = corpus.docs[dj].style_label;
    return batch;
}

StreamBatch sample_cs_batch(const Corpus& corpus, const SamplerConfig& cfg, Rng& rng) {
    if (corpus.style_count() < 2) throw ConfigError("stream sampler: cross-style stream needs >= 2 styles");
    const auto by_style = corpus.docs_by_style();
    const int di = static_cast<int>(rng.uniform_index(corpus.docs.size()));
    const int label_i = corpus.docs[di].style_label;
    std::size_t other_count = 0;
    for (std::size_t s = 0; s < by_style.size(); ++s)
        if (static_cast<int>(s) != label_i) other_count += by_style[s].size();
    if (other_count == 0) throw ConfigError("stream sampler: no documents outside style of context");
    int dk = di;
    while (corpus.docs[dk].style_label == label_i) dk = static_cast<int>(rng.uniform_index(corpus.docs.size()));
    StreamBatch batch;
    batch.kind = StreamKind::CS;
    std::vector<int> pi = sample_paragraph(corpus.docs[di], cfg.window, rng);
    batch.reference = sample_paragraph(corpus.docs[dk], cfg.window, rng);
    batch.context = extract_context(pi, cfg.n_ctx);
    batch.style_label_context = label_i;
    batch.style_label_reference = corpus.docs[dk].style_label;
    return batch;
}

CorpusSplit split_corpus(const Corpus& corpus, std::uint64_t seed) {
    const std::size_t n = corpus.docs.size();
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(Rng::derive(seed, 0x73706c69));
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
    CorpusSplit split;
    const std::size_t n_train = n * 8 / 10;
    const std::size_t n_val = n / 10;
    split.train.assign(idx.begin(), idx.begin() + n_train);
    split.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
    split.test.assign(idx.begin() + n_train + n_val, idx.end());
    return split;
}

Corpus subset(const Corpus& corpus, const std::vector<int>& indices) {
    Corpus out;
    out.style_names = corpus.style_names;
    out.docs.reserve(indices.size());
    for (int i : indices) out.docs.push_back(corpus.docs.at(i));
    return out;
}

}  // namespace styf
