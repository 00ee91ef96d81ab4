#include "flags.hpp"

#include <charconv>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "rrt/binary_io.hpp"
#include "rrt/errors.hpp"
#include "rrt/eval.hpp"

namespace rrt::cli {

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

FlagSet::FlagSet(CLI::App& app, std::string command, std::vector<FlagSpec> specs)
    : app_(&app), command_(std::move(command)), specs_(std::move(specs)) {
  specs_.push_back({"config", "", "file of key=value lines; command-line flags take precedence", false});
  specs_.push_back({"threads", "0", "worker threads for scoring; 0 uses all available cores", false});
  for (const auto& s : specs_) {
    auto& slot = values_[s.name];
    slot = s.default_value;
    auto* opt = app.add_option("--" + s.name, slot, s.help);
    opt->default_str(s.default_value.empty() ? "\"\"" : s.default_value);
    opt->run_callback_for_default(false);
    options_[s.name] = opt;
  }
}

const FlagSpec& FlagSet::spec(const std::string& name) const {
  for (const auto& s : specs_)
    if (s.name == name) return s;
  throw std::logic_error("flag not registered: " + name);
}

void FlagSet::resolve() {
  const auto& file = values_.at("config");
  if (file.empty()) return;
  if (!std::filesystem::is_regular_file(file)) throw ConfigError("--config: cannot read " + file);
  std::istringstream in(io::read_text_file(file));
  std::string line;
  std::size_t line_no = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(file + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!values_.count(key) || key == "config") {
      throw ConfigError(file + ":" + std::to_string(line_no) + ": unknown key '" + key + "' for command " + command_);
    }
    if (options_.at(key)->count() == 0) values_[key] = value;
  }
}

std::string FlagSet::str(const std::string& name) const {
  spec(name);
  return values_.at(name);
}

bool FlagSet::given(const std::string& name) const { return str(name) != spec(name).default_value; }

std::int64_t FlagSet::integer(const std::string& name) const {
  const auto& v = str(name);
  std::int64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("--" + name + ": expected an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t FlagSet::unsigned_integer(const std::string& name) const {
  const auto v = integer(name);
  if (v < 0) throw ConfigError("--" + name + " must not be negative");
  return static_cast<std::uint64_t>(v);
}

double FlagSet::real(const std::string& name) const {
  const auto& v = str(name);
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("--" + name + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool FlagSet::boolean(const std::string& name) const {
  const auto& v = str(name);
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ConfigError("--" + name + ": expected true or false, got '" + v + "'");
}

std::filesystem::path FlagSet::path(const std::string& name) const {
  const auto& v = str(name);
  if (v.empty()) throw ConfigError("--" + name + " is required for " + command_);
  return v;
}

std::vector<std::string> FlagSet::string_list(const std::string& name) const {
  std::vector<std::string> out;
  std::istringstream in(str(name));
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> FlagSet::size_list(const std::string& name) const {
  std::vector<std::size_t> out;
  for (const auto& item : string_list(name)) {
    std::size_t v = 0;
    const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
    if (r.ec != std::errc() || r.ptr != item.data() + item.size()) {
      throw ConfigError("--" + name + ": expected comma-separated integers, got '" + str(name) + "'");
    }
    out.push_back(v);
  }
  return out;
}

unsigned FlagSet::threads() const {
  const auto n = unsigned_integer("threads");
  if (n > 0) return static_cast<unsigned>(n);
  return std::max(1u, std::thread::hardware_concurrency());
}

std::map<std::string, std::string> FlagSet::effective() const {
  std::map<std::string, std::string> out;
  out["command"] = command_;
  for (const auto& s : specs_)
    if (s.in_digest) out[s.name] = values_.at(s.name);
  return out;
}

std::string FlagSet::digest() const { return config_digest(effective()); }

void FlagSet::write_meta(const std::filesystem::path& file) const {
  nlohmann::ordered_json j;
  j["command"] = command_;
  j["config"] = effective();
  j["config_digest"] = digest();
  io::write_text_file(file.string() + ".meta.json", j.dump(2) + "\n");
}

}  // namespace rrt::cli
