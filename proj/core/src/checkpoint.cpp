#include "styf/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <zlib.h>

namespace styf {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'Y', 'F'};

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF), static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF), static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ContractError("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::vector<unsigned char> payload_le(const Tensor& t) {
    std::vector<unsigned char> bytes(t.numel() * 4);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &t.data()[i], 4);
        bytes[i * 4 + 0] = static_cast<unsigned char>(bits & 0xFF);
        bytes[i * 4 + 1] = static_cast<unsigned char>((bits >> 8) & 0xFF);
        bytes[i * 4 + 2] = static_cast<unsigned char>((bits >> 16) & 0xFF);
        bytes[i * 4 + 3] = static_cast<unsigned char>((bits >> 24) & 0xFF);
    }
    return bytes;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::map<std::string, int> seen;
    for (const auto& [name, t] : tensors)
        if (++seen[name] > 1) throw ContractError("checkpoint: duplicate tensor name: " + name);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("checkpoint: cannot write " + path);
    out.write(kMagic, 4);
    write_u32(out, kCheckpointVersion);
    write_u32(out, static_cast<std::uint32_t>(tensors.size()));

    uLong crc = crc32(0L, Z_NULL, 0);
    for (const auto& [name, t] : tensors) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(t.shape().size()));
        for (int d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
        const std::vector<unsigned char> bytes = payload_le(t);
        crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    write_u32(out, static_cast<std::uint32_t>(crc));
    if (!out) throw ConfigError("checkpoint: write failed for " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ContractError("checkpoint: bad magic in " + path);
    const std::uint32_t version = read_u32(in);
    if (version != kCheckpointVersion)
        throw ContractError("checkpoint: unsupported format version " + std::to_string(version));
    const std::uint32_t count = read_u32(in);

    std::vector<std::pair<std::string, Tensor>> tensors;
    std::map<std::string, int> seen;
    uLong crc = crc32(0L, Z_NULL, 0);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw ContractError("checkpoint: truncated name");
        if (++seen[name] > 1) throw ContractError("checkpoint: duplicate tensor name: " + name);
        const std::uint32_t rank = read_u32(in);
        if (rank == 0 || rank > 8) throw ContractError("checkpoint: bad rank for " + name);
        std::vector<std::uint32_t> dims(rank);
        std::uint64_t numel = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            dims[r] = read_u32(in);
            if (dims[r] == 0) throw ContractError("checkpoint: zero dim for " + name);
            numel *= dims[r];
        }
        std::vector<unsigned char> bytes(numel * 4);
        in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!in) throw ContractError("checkpoint: truncated payload for " + name);
        crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
        std::vector<float> values(numel);
        for (std::uint64_t e = 0; e < numel; ++e) {
            const std::uint32_t bits = static_cast<std::uint32_t>(bytes[e * 4]) |
                                       (static_cast<std::uint32_t>(bytes[e * 4 + 1]) << 8) |
                                       (static_cast<std::uint32_t>(bytes[e * 4 + 2]) << 16) |
                                       (static_cast<std::uint32_t>(bytes[e * 4 + 3]) << 24);
            std::memcpy(&values[e], &bits, 4);
        }
        // Library tensors are rank-2; collapse higher ranks into rows.
        int rows = 1, cols = static_cast<int>(dims[rank - 1]);
        for (std::uint32_t r = 0; r + 1 < rank; ++r) rows *= static_cast<int>(dims[r]);
        tensors.emplace_back(name, Tensor::from_data(rows, cols, std::move(values)));
    }
    const std::uint32_t stored = read_u32(in);
    if (stored != static_cast<std::uint32_t>(crc))
        throw ContractError("checkpoint: CRC mismatch in " + path + " (payload corrupted)");
    return tensors;
}

namespace {

Tensor meta_tensor(const std::vector<float>& values) {
    return Tensor::from_data(1, static_cast<int>(values.size()), std::vector<float>(values));
}

std::map<std::string, Tensor> as_map(std::vector<std::pair<std::string, Tensor>> tensors) {
    std::map<std::string, Tensor> m;
    for (auto& [name, t] : tensors) m.emplace(name, t);
    return m;
}

const Tensor& expect(const std::map<std::string, Tensor>& m, const std::string& name) {
    auto it = m.find(name);
    if (it == m.end()) throw ContractError("checkpoint: missing tensor " + name);
    return it->second;
}

void fill_params(const std::vector<std::pair<std::string, Tensor>>& named, const std::map<std::string, Tensor>& src) {
    for (const auto& [name, t] : named) {
        const Tensor& loaded = expect(src, name);
        if (loaded.numel() != t.numel())
            throw ContractError("checkpoint: shape mismatch for " + name);
        std::memcpy(const_cast<Tensor&>(t).data(), loaded.data(), sizeof(float) * t.numel());
    }
}

ModelConfig arch_from_meta(const Tensor& meta) {
    if (meta.numel() < 8) throw ContractError("checkpoint: bad meta.arch");
    ModelConfig cfg;
    cfg.dim = static_cast<int>(meta.data()[0]);
    cfg.heads = static_cast<int>(meta.data()[1]);
    cfg.layers = static_cast<int>(meta.data()[2]);
    cfg.max_seq = static_cast<int>(meta.data()[3]);
    cfg.vocab = static_cast<int>(meta.data()[4]);
    cfg.variant = static_cast<Variant>(static_cast<int>(meta.data()[5]));
    cfg.ln_eps = meta.data()[6];
    cfg.dropout_rate = meta.data()[7];
    return cfg;
}

std::vector<float> meta_from_arch(const ModelConfig& cfg) {
    return {static_cast<float>(cfg.dim),     static_cast<float>(cfg.heads),
            static_cast<float>(cfg.layers),  static_cast<float>(cfg.max_seq),
            static_cast<float>(cfg.vocab),   static_cast<float>(static_cast<int>(cfg.variant)),
            cfg.ln_eps,                      cfg.dropout_rate};
}

}  // namespace

void save_lm(const std::string& path, const LmModel& model) {
    auto tensors = model.named_params();
    tensors.emplace_back("meta.arch", meta_tensor(meta_from_arch(model.tp.config)));
    save_checkpoint(path, tensors);
}

LmModel load_lm(const std::string& path) {
    auto m = as_map(load_checkpoint(path));
    ModelConfig cfg = arch_from_meta(expect(m, "meta.arch"));
    Rng rng(0);
    LmModel model = LmModel::init(cfg, rng);
    fill_params(model.named_params(), m);
    return model;
}

void save_generator(const std::string& path, const GeneratorBundle& bundle) {
    auto tensors = bundle.named_params();
    tensors.emplace_back("meta.arch", meta_tensor(meta_from_arch(bundle.decoder.config)));
    save_checkpoint(path, tensors);
}

GeneratorBundle load_generator(const std::string& path) {
    auto m = as_map(load_checkpoint(path));
    ModelConfig cfg = arch_from_meta(expect(m, "meta.arch"));
    Rng rng(0);
    GeneratorBundle bundle = GeneratorBundle::init(cfg, rng);
    fill_params(bundle.named_params(), m);
    return bundle;
}

void save_comparator(const std::string& path, const ComparatorNet& comparator) {
    auto tensors = comparator.named_params();
    tensors.emplace_back("meta.arch", meta_tensor({static_cast<float>(comparator.dim)}));
    save_checkpoint(path, tensors);
}

ComparatorNet load_comparator(const std::string& path) {
    auto m = as_map(load_checkpoint(path));
    const Tensor& meta = expect(m, "meta.arch");
    Rng rng(0);
    ComparatorNet comparator = ComparatorNet::init(static_cast<int>(meta.data()[0]), rng);
    fill_params(comparator.named_params(), m);
    return comparator;
}

void save_discriminator(const std::string& path, const DiscriminatorNet& discriminator) {
    auto tensors = discriminator.named_params();
    const ModelConfig& cfg = discriminator.config;
    tensors.emplace_back("meta.arch", meta_tensor({static_cast<float>(cfg.dim), static_cast<float>(cfg.heads),
                                                   static_cast<float>(cfg.layers), static_cast<float>(cfg.max_seq)}));
    save_checkpoint(path, tensors);
}

DiscriminatorNet load_discriminator(const std::string& path) {
    auto m = as_map(load_checkpoint(path));
    const Tensor& meta = expect(m, "meta.arch");
    if (meta.numel() < 4) throw ContractError("checkpoint: bad discriminator meta");
    Rng rng(0);
    DiscriminatorNet d = DiscriminatorNet::init(static_cast<int>(meta.data()[0]), static_cast<int>(meta.data()[1]),
                                                static_cast<int>(meta.data()[2]), static_cast<int>(meta.data()[3]), rng);
    fill_params(d.named_params(), m);
    return d;
}

std::uint64_t params_hash(const std::vector<std::pair<std::string, Tensor>>& named) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const void* data, std::size_t len) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, t] : named) {
        mix(name.data(), name.size());
        mix(t.data(), t.numel() * sizeof(float));
    }
    return h;
}

}  // namespace styf
