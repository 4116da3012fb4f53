#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mlffn/features.hpp"
#include "mlffn/service.hpp"

namespace mlffn::semantic {

inline constexpr std::size_t kMaxTextChars = 4000;
inline constexpr int kWordLimit = 100;
inline constexpr int kValueDecimals = 9;
inline constexpr std::string_view kFallbackModelId = "rule-fallback-v1";

struct PromptDocument {
  std::string system;
  std::string example;      // one-shot block: feature lines + exemplar response
  std::string target;       // one "name: value" line per feature
  std::string instruction;  // word-limited analysis request
  std::size_t target_lines = 0;

  std::string render() const;
};

enum class Source { Remote, Fallback, Cache };
std::string_view source_name(Source source);

struct SemanticDescription {
  std::string text;
  Source source = Source::Fallback;
  std::string feature_hash;
  std::string model_id;
  int attempts = 0;  // remote requests issued for this description
};

struct LlmConfig {
  std::optional<service::EndpointConfig> endpoint;  // unset: offline fallback
  std::string model_id = "gpt-4o";
  double temperature = 0.5;
  int max_tokens = 500;
  std::optional<std::filesystem::path> cache_dir;
  std::size_t max_text_chars = kMaxTextChars;
};

// The exemplar response shown to the model in the one-shot block.
std::string_view exemplar_response();

PromptDocument build_prompt(const features::FeatureVector& fv);

// Hash of the feature names and values, as 16 hex digits.
std::string feature_hash(const features::FeatureVector& fv);

// feature_hash is copied into the result; pass the hash of the vector the
// prompt was built from.
SemanticDescription describe_remote(const PromptDocument& prompt, const LlmConfig& config,
                                    std::string_view feature_hash = {});

// Traits (speed level, acceleration volatility, hard events, smoothness) binned
// on z-scores at -0.5 / +0.5; fv is the raw vector, stats the training stats.
SemanticDescription describe_fallback(const features::FeatureVector& fv, const features::NormStats& stats);

// Normalizes fv, then: cache, else remote if configured, else fallback.
SemanticDescription describe(const features::FeatureVector& fv, const features::NormStats& stats,
                             const LlmConfig& config);

std::string cap_text(std::string_view text, std::size_t max_chars = kMaxTextChars);

}  // namespace mlffn::semantic
