#pragma once

#include <cstdint>
#include <ctime>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "smsn/errors.hpp"

namespace smsn {

inline constexpr const char* kVersion = "0.1.0";

inline std::uint64_t fnv1a64(const char* data, std::size_t n,
                             std::uint64_t h = 1469598103934665603ull) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string fnv1a_hex(const std::string& bytes) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "fnv1a:%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
  return buf;
}

inline std::string checksum_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open '" + path + "' for checksumming");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a_hex(bytes);
}

/// Provenance record for one CLI invocation. The timestamp lives only in the
/// sidecar JSON so that the main output files are byte-identical across
/// reruns with the same inputs, config, and seed.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> inputs;
  std::uint64_t seed = 0;
  bool seeded = false;
  std::string version = kVersion;
  std::string created_utc;

  void add_input(const std::string& path) { inputs.emplace_back(path, checksum_file(path)); }

  void hash_config(const nlohmann::json& effective) { config_hash = fnv1a_hex(effective.dump()); }

  void stamp_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    created_utc = buf;
  }

  /// Deterministic part, embedded in output headers.
  nlohmann::json header_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["config_hash"] = config_hash;
    nlohmann::json in = nlohmann::json::object();
    for (const auto& [path, sum] : inputs) in[path] = sum;
    j["inputs"] = std::move(in);
    if (seeded) j["seed"] = seed;
    j["version"] = version;
    return j;
  }

  nlohmann::json sidecar_json() const {
    nlohmann::json j = header_json();
    j["created_utc"] = created_utc;
    return j;
  }
};

}  // namespace smsn
