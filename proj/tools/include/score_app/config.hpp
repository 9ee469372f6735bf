#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace score::app {

/// key = value lines grouped by [section] headers. Keys inside a section are
/// addressed as "section.key". '#' and ';' start comments.
class Config {
 public:
  static Config parse(std::string_view text, std::string origin = "<config>");
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  std::vector<std::string> keys() const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::uint64_t> get_uint_list(const std::string& key, std::vector<std::uint64_t> fallback) const;

  // Throws for the first key outside `allowed`, naming its line.
  void require_known(const std::set<std::string>& allowed) const;

  void set(const std::string& key, std::string value);
  const std::string& origin() const { return origin_; }

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };
  [[noreturn]] void fail(const std::string& key, const std::string& message) const;

  std::string origin_;
  std::map<std::string, Entry> entries_;
};

}  // namespace score::app
