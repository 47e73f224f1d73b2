#pragma once

// Key-value run configuration ("section.key" = value), INI loading, git-style
// content hashes and the append-only run manifest.

#include <openssl/evp.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hyperkkl/error.hpp"

namespace hyperkkl {

inline const char* const kToolVersion = "0.3.0";
inline const std::vector<std::string> kConfigSections = {"system", "data", "train", "curriculum", "hypernet", "eval"};

/// Resolved settings. Values come from a config file and from flags; a key set
/// by both must agree, otherwise the run is rejected.
class Settings {
 public:
  void set_from_config(const std::string& key, std::string value) {
    check_key(key);
    value = canonical(value);
    auto [it, fresh] = config_.emplace(key, value);
    if (!fresh && it->second != value) throw ConfigError("config sets '" + key + "' twice");
  }

  void set_from_flag(const std::string& key, std::string value) {
    check_key(key);
    value = canonical(value);
    const auto c = config_.find(key);
    if (c != config_.end() && c->second != value)
      throw ConfigError("--" + flag_name(key) + "=" + value + " conflicts with " + key + " = " + c->second +
                        " in the config file");
    flags_[key] = value;
  }

  bool has(const std::string& key) const { return config_.count(key) || flags_.count(key); }

  std::optional<std::string> raw(const std::string& key) const {
    if (auto c = config_.find(key); c != config_.end()) return c->second;
    if (auto f = flags_.find(key); f != flags_.end()) return f->second;
    return std::nullopt;
  }

  /// Reads `key` (recording the resolved value) or returns and records `fallback`.
  std::string str(const std::string& key, const std::string& fallback) {
    const std::string v = raw(key).value_or(fallback);
    resolved_[key] = v;
    return v;
  }
  std::string str(const std::string& key) {
    const auto v = raw(key);
    if (!v) throw ConfigError("missing required setting '" + key + "' (flag --" + flag_name(key) + ")");
    resolved_[key] = *v;
    return *v;
  }
  long long integer(const std::string& key, long long fallback) {
    return parse_int(key, str(key, std::to_string(fallback)));
  }
  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    const std::string v = str(key, std::to_string(fallback));
    try {
      std::size_t pos = 0;
      if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
      const auto n = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing");
      return n;
    } catch (const std::exception&) {
      throw ConfigError("setting '" + key + "' must be a non-negative integer, got '" + v + "'");
    }
  }
  double real(const std::string& key, double fallback) {
    std::ostringstream os;
    os.precision(17);
    os << fallback;
    const std::string v = str(key, os.str());
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing");
      return d;
    } catch (const std::exception&) {
      throw ConfigError("setting '" + key + "' must be a number, got '" + v + "'");
    }
  }
  bool boolean(const std::string& key, bool fallback) {
    const std::string v = str(key, fallback ? "true" : "false");
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("setting '" + key + "' must be true or false, got '" + v + "'");
  }
  std::vector<std::string> list(const std::string& key, const std::string& fallback) {
    return split_list(str(key, fallback));
  }
  std::vector<std::string> list(const std::string& key) { return split_list(str(key)); }

  /// Replaces the recorded value of an already read key (e.g. a path made absolute).
  void note(const std::string& key, const std::string& value) { resolved_[key] = value; }

  /// Every value a command read, in key order.
  const std::map<std::string, std::string>& resolved() const { return resolved_; }

  /// Keys given explicitly but never read by the command.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto* m : {&config_, &flags_})
      for (const auto& [k, v] : *m)
        if (!resolved_.count(k)) out.push_back(k);
    return out;
  }

  static std::string flag_name(const std::string& key) {
    std::string s = key.substr(key.find('.') + 1);
    for (char& c : s)
      if (c == '_') c = '-';
    return s;
  }

  static std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(v);
    while (std::getline(is, cur, ',')) {
      const auto a = cur.find_first_not_of(" \t");
      const auto b = cur.find_last_not_of(" \t");
      if (a != std::string::npos) out.push_back(cur.substr(a, b - a + 1));
    }
    return out;
  }

 private:
  /// Lists compare equal regardless of spacing around commas.
  static std::string canonical(const std::string& v) {
    if (v.find(',') == std::string::npos) return v;
    std::string out;
    for (const auto& item : split_list(v)) out += (out.empty() ? "" : ",") + item;
    return out;
  }

  static void check_key(const std::string& key) {
    const auto dot = key.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == key.size())
      throw ConfigError("setting '" + key + "' must look like section.key");
    const std::string sec = key.substr(0, dot);
    for (const auto& s : kConfigSections)
      if (s == sec) return;
    throw ConfigError("unknown config section [" + sec + "]");
  }

  static long long parse_int(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const long long n = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing");
      return n;
    } catch (const std::exception&) {
      throw ConfigError("setting '" + key + "' must be an integer, got '" + v + "'");
    }
  }

  std::map<std::string, std::string> config_, flags_, resolved_;
};

/// Loads an INI file with sections [system] [data] [train] [curriculum]
/// [hypernet] [eval] into `s`.
inline void load_config_file(const std::string& path, Settings& s) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config " + path + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config " + path + ": key '" + section + "' is outside a section");
    for (const auto& [key, value] : body) s.set_from_config(section + "." + key, value.data());
  }
}

// ---- hashing -------------------------------------------------------------------

inline std::string to_hex(const unsigned char* d, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string out(2 * n, '0');
  for (std::size_t i = 0; i < n; ++i) {
    out[2 * i] = digits[d[i] >> 4];
    out[2 * i + 1] = digits[d[i] & 15];
  }
  return out;
}

/// SHA-1 of "blob <size>\0<content>", the id git gives the same file.
inline std::string git_blob_hash(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 && EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw InternalError("SHA-1 digest failed");
  return to_hex(md, len);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string file_hash(const std::string& path) { return git_blob_hash(read_file(path)); }

// ---- manifest ------------------------------------------------------------------

inline const char* const kManifestName = "MANIFEST.ini";

/// One command execution as recorded in the manifest of its output directory.
struct RunRecord {
  std::string command;
  std::map<std::string, std::string> config;   // resolved settings
  std::map<std::string, std::string> inputs;   // path -> git blob hash
  std::map<std::string, std::string> outputs;  // file name (relative to the directory) -> hash
  std::string tool_version = kToolVersion;
  std::string started, finished;               // wall clock, UTC
  int threads = 1;
  std::string out;  // output directory as given
};

inline std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

/// Runs already recorded in `dir`'s manifest (0 if there is none).
inline std::vector<RunRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("manifest " + path + ": " + e.message());
  }
  std::map<int, RunRecord> runs;
  for (const auto& [section, body] : tree) {
    // sections: run.N, run.N.config, run.N.inputs, run.N.outputs
    if (section.rfind("run.", 0) != 0) throw ConfigError("manifest " + path + ": unexpected section " + section);
    const std::string rest = section.substr(4);
    const auto dot = rest.find('.');
    const int id = std::stoi(rest.substr(0, dot));
    const std::string part = dot == std::string::npos ? "" : rest.substr(dot + 1);
    RunRecord& r = runs[id];
    for (const auto& [k, v] : body) {
      const std::string& val = v.data();
      if (part.empty()) {
        if (k == "command") r.command = val;
        else if (k == "tool_version") r.tool_version = val;
        else if (k == "started") r.started = val;
        else if (k == "finished") r.finished = val;
        else if (k == "threads") r.threads = std::stoi(val);
        else if (k == "out") r.out = val;
      } else if (part == "config") {
        r.config[k] = val;
      } else if (part == "inputs") {
        r.inputs[k] = val;
      } else if (part == "outputs") {
        r.outputs[k] = val;
      }
    }
  }
  std::vector<RunRecord> out;
  for (auto& [id, r] : runs) out.push_back(std::move(r));
  return out;
}

/// Appends `r` as the next run block of `dir/MANIFEST.ini`, creating the file if needed.
inline int append_manifest(const std::string& dir, const RunRecord& r) {
  const std::string path = (std::filesystem::path(dir) / kManifestName).string();
  int id = 1;
  if (std::filesystem::exists(path)) id = static_cast<int>(read_manifest(path).size()) + 1;
  std::ofstream os(path, std::ios::app);
  if (!os) throw IoError("cannot append to manifest " + path);
  const std::string s = "run." + std::to_string(id);
  os << "[" << s << "]\n"
     << "command = " << r.command << "\n"
     << "tool_version = " << r.tool_version << "\n"
     << "started = " << r.started << "\n"
     << "finished = " << r.finished << "\n"
     << "threads = " << r.threads << "\n"
     << "out = " << r.out << "\n\n";
  auto block = [&](const std::string& name, const std::map<std::string, std::string>& kv) {
    os << "[" << s << "." << name << "]\n";
    for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
    os << "\n";
  };
  block("config", r.config);
  block("inputs", r.inputs);
  block("outputs", r.outputs);
  if (!os) throw IoError("failed writing manifest " + path);
  return id;
}

}  // namespace hyperkkl
