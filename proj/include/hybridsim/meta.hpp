#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

namespace hybridsim {

inline constexpr const char* kToolVersion = "0.1.0";

// FNV-1a over a byte string; used to stamp outputs with input fingerprints.
std::uint64_t fnv1a(const std::string& bytes);

std::string read_file(const std::string& path);  // throws InputError naming the path

// {"version", "seed", "inputs": {name: hash-hex}}
nlohmann::json make_meta(std::uint64_t seed, const std::map<std::string, std::string>& inputs);

// Same content as a single CSV comment line (leading '#').
std::string meta_csv_line(std::uint64_t seed, const std::map<std::string, std::string>& inputs);

void write_file(const std::string& path, const std::string& contents);

}  // namespace hybridsim
