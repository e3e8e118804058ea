#include "mgeo/nn/checkpoint.hpp"

#include <cstdint>
#include <fstream>

namespace mgeo::nn {

namespace {
constexpr char kMagic[8] = {'M', 'G', 'E', 'O', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t read_u32(std::istream& is, const std::string& path) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
        throw NnError("truncated checkpoint: " + path);
    return v;
}

std::string read_str(std::istream& is, const std::string& path) {
    uint32_t n = read_u32(is, path);
    std::string s(n, '\0');
    if (n && !is.read(s.data(), n)) throw NnError("truncated checkpoint: " + path);
    return s;
}

std::map<std::string, std::string> read_header(std::istream& is, const std::string& path) {
    char magic[8];
    if (!is.read(magic, 8) || std::string(magic, 8) != std::string(kMagic, 8))
        throw NnError("not a checkpoint file: " + path);
    uint32_t version = read_u32(is, path);
    if (version != kVersion)
        throw NnError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    uint32_t n_meta = read_u32(is, path);
    std::map<std::string, std::string> meta;
    for (uint32_t i = 0; i < n_meta; ++i) {
        std::string k = read_str(is, path);
        meta[k] = read_str(is, path);
    }
    return meta;
}
}  // namespace

void save_checkpoint(const ParameterStore& ps, const std::string& path,
                     const std::map<std::string, std::string>& metadata) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw NnError("unwritable destination: " + path);
    os.write(kMagic, 8);
    write_u32(os, kVersion);
    write_u32(os, static_cast<uint32_t>(metadata.size()));
    for (const auto& [k, v] : metadata) {
        write_str(os, k);
        write_str(os, v);
    }
    write_u32(os, static_cast<uint32_t>(ps.names().size()));
    for (const std::string& name : ps.names()) {
        const Tensor& t = ps.at(name);
        write_str(os, name);
        write_u32(os, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) write_u32(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t.values.data()),
                 static_cast<std::streamsize>(t.values.size() * sizeof(Real)));
    }
    if (!os) throw NnError("unwritable destination: " + path);
}

std::map<std::string, std::string> load_checkpoint(ParameterStore& ps, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NnError("missing checkpoint: " + path);
    auto meta = read_header(is, path);
    uint32_t n_params = read_u32(is, path);
    if (n_params != ps.names().size())
        throw NnError("checkpoint parameter count mismatch (" + std::to_string(n_params) +
                      " stored, " + std::to_string(ps.names().size()) + " expected): " + path);
    for (uint32_t i = 0; i < n_params; ++i) {
        std::string name = read_str(is, path);
        if (!ps.has(name)) throw NnError("checkpoint has unknown parameter '" + name + "': " + path);
        Tensor& t = ps.at(name);
        uint32_t ndim = read_u32(is, path);
        std::vector<int> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(read_u32(is, path));
        if (shape != t.shape)
            throw NnError("checkpoint shape mismatch for '" + name + "': " + path);
        if (!is.read(reinterpret_cast<char*>(t.values.data()),
                     static_cast<std::streamsize>(t.values.size() * sizeof(Real))))
            throw NnError("truncated checkpoint: " + path);
    }
    return meta;
}

std::map<std::string, std::string> read_checkpoint_meta(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NnError("missing checkpoint: " + path);
    return read_header(is, path);
}

}  // namespace mgeo::nn
