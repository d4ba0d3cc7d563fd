#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsmtcr::cli {

/// Invalid configuration: unknown key, malformed value, or a value outside a
/// module's preconditions.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An input path that does not exist.
class MissingInput : public std::runtime_error {
 public:
  explicit MissingInput(const std::filesystem::path& path)
      : std::runtime_error("missing input: " + path.string()), path_(path) {}
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// key=value settings. Files hold one pair per line; '#' starts a comment and
/// blank lines are ignored. Later assignments win, so command-line overrides
/// are applied after the file.
class RunConfig {
 public:
  static RunConfig parse(std::istream& in, const std::string& origin = "config");
  static RunConfig load(const std::filesystem::path& path);

  /// Every key accepted anywhere; see the README for meanings.
  static const std::vector<std::string>& known_keys();

  void set(const std::string& key, const std::string& value);
  /// Parses "key=value".
  void set_assignment(const std::string& assignment);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string text(const std::string& key, const std::string& fallback) const;
  std::string require_text(const std::string& key) const;
  std::size_t count(const std::string& key, std::size_t fallback) const;
  std::uint64_t seed() const;
  double real(const std::string& key, double fallback) const;
  std::vector<double> reals(const std::string& key, const std::vector<double>& fallback) const;
  /// Path that must exist; throws MissingInput.
  std::filesystem::path input(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace lsmtcr::cli
