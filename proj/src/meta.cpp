#include "hybridsim/meta.hpp"

#include <fstream>
#include <sstream>

#include "hybridsim/errors.hpp"

namespace hybridsim {

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {
std::string hash_hex(const std::string& bytes) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(bytes)));
    return buf;
}
}  // namespace

nlohmann::json make_meta(std::uint64_t seed, const std::map<std::string, std::string>& inputs) {
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& [name, bytes] : inputs) hashes[name] = hash_hex(bytes);
    return nlohmann::json{{"version", kToolVersion}, {"seed", seed}, {"inputs", hashes}};
}

std::string meta_csv_line(std::uint64_t seed, const std::map<std::string, std::string>& inputs) {
    std::ostringstream ss;
    ss << "# hybridsim version=" << kToolVersion << " seed=" << seed;
    for (const auto& [name, bytes] : inputs) ss << " " << name << "=" << hash_hex(bytes);
    return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write file: " + path);
    out << contents;
}

}  // namespace hybridsim
