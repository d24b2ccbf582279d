#pragma once

#include <string>
#include <utility>
#include <vector>

#include "styf/models.hpp"

namespace styf {

// Flat binary checkpoint: "STYF" magic, version, tensor count; per tensor a
// length-prefixed name, rank, u32 dims and a little-endian f32 payload; a
// CRC32 over all payload bytes closes the file.
constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

void save_lm(const std::string& path, const LmModel& model);
LmModel load_lm(const std::string& path);

void save_generator(const std::string& path, const GeneratorBundle& bundle);
GeneratorBundle load_generator(const std::string& path);

void save_comparator(const std::string& path, const ComparatorNet& comparator);
ComparatorNet load_comparator(const std::string& path);

void save_discriminator(const std::string& path, const DiscriminatorNet& discriminator);
DiscriminatorNet load_discriminator(const std::string& path);

// FNV-1a over parameter bytes; used to assert phase isolation.
std::uint64_t params_hash(const std::vector<std::pair<std::string, Tensor>>& named);

}  // namespace styf
