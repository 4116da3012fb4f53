#include "mlffn/embed.hpp"

#include <bit>
#include <cmath>
#include <sstream>

#include "json.hpp"

#include "mlffn/error.hpp"
#include "mlffn/util.hpp"

namespace mlffn::embed {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::string encode_values(const std::vector<double>& values) {
  std::string out;
  for (double v : values) {
    out += util::format_double(v);
    out += '\n';
  }
  return out;
}

std::optional<std::vector<double>> decode_values(std::string_view text) {
  std::vector<double> values;
  for (const auto& line : util::split(text, '\n')) {
    if (line.empty()) {
      continue;
    }
    auto v = util::parse_double(line);
    if (!v || !std::isfinite(*v)) {
      return std::nullopt;
    }
    values.push_back(*v);
  }
  if (values.size() != kEmbedDim) {
    return std::nullopt;
  }
  return values;
}

}  // namespace

std::uint64_t ngram_hash(std::string_view gram) { return mix64(util::fnv1a(gram, util::kFnvOffset ^ kHashSeed)); }

TextEmbedding embed_local(std::string_view text) {
  if (util::trim(text).empty()) {
    throw Error(ErrorCode::EmptyText, "cannot embed empty text");
  }
  const std::string padded = " " + util::to_lower(text) + " ";
  std::vector<double> values(kEmbedDim, 0.0);
  for (std::size_t n = 3; n <= 5; ++n) {
    for (std::size_t i = 0; i + n <= padded.size(); ++i) {
      const auto h = ngram_hash(std::string_view(padded).substr(i, n));
      values[h % kEmbedDim] += (std::popcount(h) & 1) != 0 ? -1.0 : 1.0;
    }
  }
  double norm2 = 0.0;
  for (double v : values) {
    norm2 += v * v;
  }
  if (norm2 == 0.0) {
    // Every bucket cancelled; fall back to the bucket of the whole text.
    values[ngram_hash(padded) % kEmbedDim] = 1.0;
    norm2 = 1.0;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& v : values) {
    v *= inv;
  }
  return {std::move(values), std::string(kLocalEncoderId)};
}

std::string truncate_tokens(std::string_view text, std::size_t n) {
  std::istringstream in{std::string(text)};
  std::string out;
  std::string token;
  for (std::size_t count = 0; count < n && in >> token; ++count) {
    if (!out.empty()) {
      out += ' ';
    }
    out += token;
  }
  return out;
}

TextEmbedding embed_remote(std::string_view text, const EmbedConfig& config) {
  if (!config.endpoint) {
    throw Error(ErrorCode::ConfigError, "no embedding endpoint configured");
  }
  const auto input = truncate_tokens(text);
  if (input.empty()) {
    throw Error(ErrorCode::EmptyText, "cannot embed empty text");
  }
  const nlohmann::json request = {{"model", config.model_id}, {"input", input}};
  const auto result = service::post_json(*config.endpoint, request.dump());
  std::vector<double> values;
  try {
    const auto body = nlohmann::json::parse(result.body);
    const auto& arr = body.contains("data") ? body.at("data").at(0).at("embedding") : body.at("embedding");
    values = arr.get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedResponse, std::string("embedding response: ") + e.what());
  }
  if (values.size() != kEmbedDim) {
    throw Error(ErrorCode::WrongDimension, "embedding service returned " + std::to_string(values.size()) +
                                               " values, expected " + std::to_string(kEmbedDim));
  }
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::MalformedResponse, "embedding contains a non-finite value");
    }
  }
  return {std::move(values), config.model_id};
}

TextEmbedding embed(std::string_view text, const EmbedConfig& config) {
  const std::string encoder_id = config.endpoint ? config.model_id : std::string(kLocalEncoderId);
  const auto text_hash = util::hex64(util::fnv1a(text));
  std::optional<service::KeyedCache> cache;
  if (config.cache_dir) {
    cache.emplace(*config.cache_dir);
    if (auto record = cache->get(text_hash, encoder_id)) {
      if (auto values = decode_values(record->body)) {
        return {std::move(*values), encoder_id};
      }
    }
  }
  auto out = config.endpoint ? embed_remote(text, config) : embed_local(text);
  if (cache) {
    cache->put({encoder_id, config.endpoint ? "remote" : "local", text_hash, service::utc_timestamp(),
                encode_values(out.values)});
  }
  return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch, "cosine of vectors with different lengths");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    return 0.0;
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace mlffn::embed
