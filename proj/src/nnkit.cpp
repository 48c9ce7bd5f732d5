#include "delayprop/nnkit.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

namespace delayprop::nn {

namespace {

constexpr char kMagic[] = "DPCK1\n";
constexpr std::size_t kMagicSize = sizeof(kMagic) - 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamList<double>& params, const nlohmann::json& meta) {
    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto* p : params) {
        tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(p->value.size()) * sizeof(double);
    }
    const std::string header = nlohmann::json{{"format", "float64-le-colmajor"}, {"tensors", tensors}, {"meta", meta}}.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint " + path);
    out.write(kMagic, kMagicSize);
    write_u64(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto* p : params) {
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!out) throw ConfigError("failed writing checkpoint " + path);
}

nlohmann::json load_checkpoint(const std::string& path, const ParamList<double>& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    char magic[kMagicSize];
    in.read(magic, kMagicSize);
    if (!in || std::memcmp(magic, kMagic, kMagicSize) != 0) throw DataError(path + " is not a checkpoint");
    std::uint64_t header_size = 0;
    in.read(reinterpret_cast<char*>(&header_size), sizeof header_size);
    if (!in || header_size > (1u << 30)) throw DataError("corrupt checkpoint header in " + path);
    std::string header(header_size, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_size));
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint header in " + path + ": " + e.what());
    }
    const auto data_start = in.tellg();
    std::map<std::string, nlohmann::json> by_name;
    for (const auto& t : h.at("tensors")) by_name[t.at("name").get<std::string>()] = t;
    for (auto* p : params) {
        const auto it = by_name.find(p->name);
        if (it == by_name.end()) throw DataError("checkpoint " + path + " lacks tensor " + p->name);
        const auto rows = it->second.at("rows").get<Eigen::Index>();
        const auto cols = it->second.at("cols").get<Eigen::Index>();
        if (rows != p->value.rows() || cols != p->value.cols()) {
            throw DataError("shape mismatch for " + p->name + " in checkpoint " + path);
        }
        in.seekg(data_start + static_cast<std::streamoff>(it->second.at("offset").get<std::uint64_t>()));
        in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(double)));
        if (!in) throw DataError("truncated checkpoint " + path);
    }
    return h.value("meta", nlohmann::json::object());
}

}  // namespace delayprop::nn
