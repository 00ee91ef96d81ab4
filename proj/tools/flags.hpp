#pragma once

// Flag registry shared by all subcommands. Every flag is declared once with
// its default and help text; the same table drives CLI11 registration, the
// --help output, `--config` files and the config digest.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rrt::cli {

struct FlagSpec {
  std::string name;  // without leading dashes; also the config-file key
  std::string default_value;
  std::string help;
  bool in_digest = true;  // false for flags that cannot change any output
};

class FlagSet {
 public:
  FlagSet(CLI::App& app, std::string command, std::vector<FlagSpec> specs);

  // Applies `--config` (line-based key=value; '#' starts a comment) to every
  // flag not given on the command line. Unknown keys are a ConfigError.
  void resolve();

  const std::string& command() const { return command_; }
  bool has(const std::string& name) const { return values_.count(name) > 0; }
  std::string str(const std::string& name) const;
  bool given(const std::string& name) const;  // non-default value after resolve
  std::int64_t integer(const std::string& name) const;
  std::uint64_t unsigned_integer(const std::string& name) const;
  double real(const std::string& name) const;
  bool boolean(const std::string& name) const;
  std::filesystem::path path(const std::string& name) const;  // ConfigError when empty
  std::vector<std::size_t> size_list(const std::string& name) const;
  std::vector<std::string> string_list(const std::string& name) const;
  unsigned threads() const;

  // Effective configuration, used for the digest and the metadata sidecars.
  std::map<std::string, std::string> effective() const;
  std::string digest() const;
  // Writes <file>.meta.json with the command, effective config and digest.
  void write_meta(const std::filesystem::path& file) const;

 private:
  const FlagSpec& spec(const std::string& name) const;

  CLI::App* app_;
  std::string command_;
  std::vector<FlagSpec> specs_;
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
};

// Shortest round-trip text for a double ("0.3", "1e-05").
std::string format_double(double v);

}  // namespace rrt::cli
