#include "mlffn/service.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <map>
#include <memory>
#include <mutex>
#include <regex>
#include <thread>

#include "httplib.h"
#include "mlffn/error.hpp"
#include "mlffn/util.hpp"

namespace mlffn::service {

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host:port
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  static const std::regex re(R"(^(https?)://([^/:]+)(?::(\d+))?(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) {
    throw Error(ErrorCode::ConfigError, "bad endpoint url '" + url + "'");
  }
  ParsedUrl out;
  out.origin = m[1].str() + "://" + m[2].str();
  if (m[3].matched) {
    out.origin += ":" + m[3].str();
  }
  out.path = m[4].matched ? m[4].str() : "/";
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (m[1].str() == "https") {
    throw Error(ErrorCode::NetworkError, "https endpoints need a build with OpenSSL");
  }
#endif
  return out;
}

class Limiter {
 public:
  void acquire(std::size_t limit) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return active_ < std::max<std::size_t>(1, limit); });
    active_++;
    peak_ = std::max(peak_, active_);
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      active_--;
    }
    cv_.notify_one();
  }
  std::size_t active() {
    std::lock_guard lock(mu_);
    return active_;
  }
  std::size_t peak() {
    std::lock_guard lock(mu_);
    return peak_;
  }
  void reset_peak() {
    std::lock_guard lock(mu_);
    peak_ = active_;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t active_ = 0;
  std::size_t peak_ = 0;
};

Limiter& limiter_for(const std::string& origin) {
  static std::mutex mu;
  static std::map<std::string, std::unique_ptr<Limiter>> limiters;
  std::lock_guard lock(mu);
  auto& slot = limiters[origin];
  if (!slot) {
    slot = std::make_unique<Limiter>();
  }
  return *slot;
}

class InFlightGuard {
 public:
  InFlightGuard(Limiter& limiter, std::size_t limit) : limiter_(limiter) { limiter_.acquire(limit); }
  ~InFlightGuard() { limiter_.release(); }
  InFlightGuard(const InFlightGuard&) = delete;
  InFlightGuard& operator=(const InFlightGuard&) = delete;

 private:
  Limiter& limiter_;
};

bool is_timeout(httplib::Error e) {
  return e == httplib::Error::Read || e == httplib::Error::Write ||
         e == httplib::Error::ConnectionTimeout;
}

}  // namespace

PostResult post_json(const EndpointConfig& endpoint, const std::string& body) {
  const auto url = parse_url(endpoint.url);
  httplib::Headers headers;
  if (const char* key = std::getenv(endpoint.api_key_env.c_str()); key != nullptr && *key != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const int attempts = std::max(1, endpoint.max_attempts);
  auto& limiter = limiter_for(url.origin);
  std::string last_failure;
  bool last_rate_limited = false;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    if (attempt > 1) {
      const double wait = endpoint.backoff_initial_s * static_cast<double>(1 << (attempt - 2));
      spdlog::warn("{} failed ({}); attempt {} of {} in {:.3f}s", url.origin + url.path, last_failure,
                   attempt, attempts, wait);
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    }
    httplib::Result res;
    {
      InFlightGuard guard(limiter, endpoint.max_in_flight);
      httplib::Client client(url.origin);
      const auto timeout = std::chrono::duration<double>(endpoint.timeout_s);
      client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      res = client.Post(url.path, headers, body, "application/json");
    }
    last_rate_limited = false;
    if (!res) {
      last_failure = (is_timeout(res.error()) ? "timeout: " : "connection: ") + httplib::to_string(res.error());
      continue;
    }
    const int status = res->status;
    if (status == 401 || status == 403) {
      throw Error(ErrorCode::AuthError, "HTTP " + std::to_string(status) + " from " + url.origin);
    }
    if (status == 429) {
      last_rate_limited = true;
      last_failure = "HTTP 429";
      continue;
    }
    if (status >= 500) {
      last_failure = "HTTP " + std::to_string(status);
      continue;
    }
    if (status < 200 || status >= 300) {
      throw Error(ErrorCode::NetworkError, "HTTP " + std::to_string(status) + " from " + url.origin);
    }
    if (attempt > 1) {
      spdlog::info("{} succeeded on attempt {}", url.origin + url.path, attempt);
    }
    return {res->body, attempt};
  }
  const std::string msg = last_failure + " after " + std::to_string(attempts) + " attempts";
  throw Error(last_rate_limited ? ErrorCode::RateLimited : ErrorCode::NetworkError, msg);
}

std::size_t in_flight(const std::string& url) { return limiter_for(parse_url(url).origin).active(); }
std::size_t peak_in_flight(const std::string& url) { return limiter_for(parse_url(url).origin).peak(); }
void reset_peak_in_flight(const std::string& url) { limiter_for(parse_url(url).origin).reset_peak(); }

namespace {
constexpr std::string_view kRecordMagic = "mlffn-cache 1";
}

std::string serialize_record(const CacheRecord& record) {
  std::string out(kRecordMagic);
  out += "\nmodel_id: " + record.model_id;
  out += "\nsource: " + record.source;
  out += "\ncontent_hash: " + record.content_hash;
  out += "\ntimestamp: " + record.timestamp;
  out += "\n\n";
  out += record.body;
  return out;
}

std::optional<CacheRecord> parse_record(std::string_view text) {
  const auto header_end = text.find("\n\n");
  if (header_end == std::string_view::npos) {
    return std::nullopt;
  }
  const auto lines = util::split(text.substr(0, header_end), '\n');
  if (lines.empty() || lines.front() != kRecordMagic) {
    return std::nullopt;
  }
  CacheRecord record;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto colon = lines[i].find(": ");
    if (colon == std::string::npos) {
      return std::nullopt;
    }
    const auto name = lines[i].substr(0, colon);
    auto value = lines[i].substr(colon + 2);
    if (name == "model_id") {
      record.model_id = std::move(value);
    } else if (name == "source") {
      record.source = std::move(value);
    } else if (name == "content_hash") {
      record.content_hash = std::move(value);
    } else if (name == "timestamp") {
      record.timestamp = std::move(value);
    }
  }
  record.body = std::string(text.substr(header_end + 2));
  return record;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

KeyedCache::KeyedCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) {
    throw Error(ErrorCode::IoError, "cannot create cache directory " + dir_.string() + ": " + ec.message());
  }
}

std::string KeyedCache::key(std::string_view content_hash, std::string_view model_id) {
  auto h = util::fnv1a(content_hash);
  h = util::fnv1a(std::string_view("\0", 1), h);
  return util::hex64(util::fnv1a(model_id, h));
}

std::optional<CacheRecord> KeyedCache::get(std::string_view content_hash, std::string_view model_id) const {
  const auto path = dir_ / key(content_hash, model_id);
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    return std::nullopt;
  }
  std::string text;
  try {
    text = util::read_file(path);
  } catch (const Error&) {
    return std::nullopt;
  }
  auto record = parse_record(text);
  if (!record || record->content_hash != content_hash || record->model_id != model_id) {
    return std::nullopt;
  }
  return record;
}

void KeyedCache::put(const CacheRecord& record) const {
  util::write_file_atomic(dir_ / key(record.content_hash, record.model_id), serialize_record(record));
}

std::size_t KeyedCache::size() const {
  std::size_t n = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    if (entry.is_regular_file() && entry.path().filename().string().size() == 16) {
      n++;
    }
  }
  return n;
}

}  // namespace mlffn::service
