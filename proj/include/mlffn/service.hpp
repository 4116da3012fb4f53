#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace mlffn::service {

struct EndpointConfig {
  std::string url;  // http(s)://host[:port]/path
  std::string api_key_env = "MLFFN_API_KEY";
  double timeout_s = 60.0;
  int max_attempts = 3;
  double backoff_initial_s = 1.0;
  std::size_t max_in_flight = 4;
};

struct PostResult {
  std::string body;
  int attempts = 0;
};

// POSTs a JSON body. Timeouts, connection failures, 429 and 5xx are retried
// with exponential backoff up to max_attempts; 401/403 fail immediately.
// Throws AuthError, RateLimited, NetworkError.
PostResult post_json(const EndpointConfig& endpoint, const std::string& body);

// Number of requests currently in flight against the given URL's host.
std::size_t in_flight(const std::string& url);
std::size_t peak_in_flight(const std::string& url);
void reset_peak_in_flight(const std::string& url);

struct CacheRecord {
  std::string model_id;
  std::string source;
  std::string content_hash;
  std::string timestamp;
  std::string body;
};

// One file per key under a directory: a short "name: value" header, a blank
// line, then the body. Writes are atomic renames, so concurrent readers only
// ever see complete records.
class KeyedCache {
 public:
  explicit KeyedCache(std::filesystem::path dir);

  static std::string key(std::string_view content_hash, std::string_view model_id);

  std::optional<CacheRecord> get(std::string_view content_hash, std::string_view model_id) const;
  void put(const CacheRecord& record) const;
  std::size_t size() const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

std::string serialize_record(const CacheRecord& record);
std::optional<CacheRecord> parse_record(std::string_view text);
std::string utc_timestamp();

}  // namespace mlffn::service
