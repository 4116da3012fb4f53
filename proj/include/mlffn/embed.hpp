#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mlffn/service.hpp"

namespace mlffn::embed {

inline constexpr std::size_t kEmbedDim = 768;
inline constexpr std::size_t kMaxRemoteTokens = 256;
inline constexpr std::uint64_t kHashSeed = 0x6d6c66666e2d6e67ULL;
inline constexpr std::string_view kLocalEncoderId = "hashed-char-ngram-3-5-v1";

struct TextEmbedding {
  std::vector<double> values;
  std::string encoder_id;
};

struct EmbedConfig {
  std::optional<service::EndpointConfig> endpoint;  // unset: local encoder
  std::string model_id = "roberta-base";
  std::optional<std::filesystem::path> cache_dir;
};

// Seeded 64-bit hash used for n-gram bucketing.
std::uint64_t ngram_hash(std::string_view gram);

// Lowercased, space-padded character 3/4/5-grams hashed into 768 signed buckets,
// then L2-normalized.
TextEmbedding embed_local(std::string_view text);

// First n whitespace-separated tokens joined by single spaces.
std::string truncate_tokens(std::string_view text, std::size_t n = kMaxRemoteTokens);

TextEmbedding embed_remote(std::string_view text, const EmbedConfig& config);

// Cached by text hash and encoder id; local when no endpoint is configured.
TextEmbedding embed(std::string_view text, const EmbedConfig& config);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace mlffn::embed
