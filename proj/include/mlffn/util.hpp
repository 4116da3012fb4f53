#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mlffn::util {

// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);
// Fixed-point text with the given number of decimals.
std::string format_fixed(double value, int decimals);
std::optional<double> parse_double(std::string_view text);

std::string trim(std::string_view text);
std::string to_lower(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t fnv1a_doubles(std::span<const double> values, std::uint64_t h = kFnvOffset);
std::string hex64(std::uint64_t value);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Minimal RFC 4180 CSV.
class CsvWriter {
 public:
  explicit CsvWriter(std::string& out) : out_(out) {}
  void row(const std::vector<std::string>& cells);

 private:
  std::string& out_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace mlffn::util
