#include "d3t/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace d3t::ckpt {

namespace {

constexpr const char* kMagic = "d3t-checkpoint";
constexpr int kVersion = 1;

std::string role_name(backbone::Role r) {
    return r == backbone::Role::Source ? "source" : "target";
}

backbone::Role parse_role(const std::string& s) {
    if (s == "source") return backbone::Role::Source;
    if (s == "target") return backbone::Role::Target;
    throw std::runtime_error("checkpoint: unknown role '" + s + "'");
}

void put_le32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_le32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

} // namespace

void save_checkpoint(const std::string& path, const backbone::GanSnapshot& s) {
    s.config.validate();
    backbone::check_layout(s);

    long floats = 0;
    for (const auto& [name, t] : s.params) floats += t.numel();

    std::ostringstream head;
    head << kMagic << " " << kVersion << "\n"
         << "resolution " << s.config.resolution << "\n"
         << "style_dim " << s.config.style_dim << "\n"
         << "mapping_depth " << s.config.mapping_depth << "\n"
         << "channel_base " << s.config.channel_base << "\n"
         << "noise_injection " << (s.config.noise_injection ? 1 : 0) << "\n"
         << "role " << role_name(s.role) << "\n"
         << "step " << s.step << "\n"
         << "params_hash " << hex64(backbone::params_hash(s.params)) << "\n"
         << "floats " << floats << "\n";

    std::string body;
    body.reserve(static_cast<size_t>(floats) * 4);
    for (const auto& [name, t] : s.params)
        for (float f : t.data) put_le32(body, std::bit_cast<uint32_t>(f));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    const std::string h = head.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    out.flush();
    if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

backbone::GanSnapshot load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);

    auto next_line = [&](const std::string& key) {
        std::string line;
        if (!std::getline(in, line))
            throw std::runtime_error("checkpoint: truncated header in " + path);
        auto sp = line.find(' ');
        if (sp == std::string::npos || line.substr(0, sp) != key)
            throw std::runtime_error("checkpoint: malformed header in " + path +
                                     " (expected '" + key + "', got '" + line + "')");
        return line.substr(sp + 1);
    };

    {
        std::string line;
        if (!std::getline(in, line) || line != std::string(kMagic) + " " + std::to_string(kVersion))
            throw std::runtime_error("checkpoint: not a version-" + std::to_string(kVersion) +
                                     " checkpoint: " + path);
    }

    backbone::GanSnapshot s;
    s.config.resolution = std::stoi(next_line("resolution"));
    s.config.style_dim = std::stoi(next_line("style_dim"));
    s.config.mapping_depth = std::stoi(next_line("mapping_depth"));
    s.config.channel_base = std::stoi(next_line("channel_base"));
    s.config.noise_injection = std::stoi(next_line("noise_injection")) != 0;
    s.config.validate();
    s.role = parse_role(next_line("role"));
    s.step = std::stol(next_line("step"));
    const std::string stored_hash = next_line("params_hash");
    const long floats = std::stol(next_line("floats"));

    std::string body(static_cast<size_t>(floats) * 4, '\0');
    in.read(body.data(), static_cast<std::streamsize>(body.size()));
    if (in.gcount() != static_cast<std::streamsize>(body.size()))
        throw std::runtime_error("checkpoint: truncated body in " + path);
    char extra;
    if (in.read(&extra, 1); in.gcount() != 0)
        throw std::runtime_error("checkpoint: trailing bytes in " + path);

    const auto* p = reinterpret_cast<const unsigned char*>(body.data());
    long off = 0, total = 0;
    for (const auto& [name, shape] : backbone::param_layout(s.config)) {
        Tensor t{shape};
        total += t.numel();
        if (total > floats)
            throw std::runtime_error("checkpoint: body float count does not match layout in " + path);
        for (long i = 0; i < t.numel(); ++i, ++off)
            t[i] = std::bit_cast<float>(get_le32(p + off * 4));
        s.params.emplace(name, std::move(t));
    }
    if (total != floats)
        throw std::runtime_error("checkpoint: body float count does not match layout in " + path);

    const std::string got = hex64(backbone::params_hash(s.params));
    if (got != stored_hash)
        throw std::runtime_error("checkpoint: content hash mismatch in " + path +
                                 " (header lists " + stored_hash + ", loaded parameters hash to " +
                                 got + ")");
    return s;
}

} // namespace d3t::ckpt
