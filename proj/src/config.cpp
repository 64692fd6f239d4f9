#include "d3t/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "d3t/augment.hpp"

namespace d3t::config {

void MetricsConfig::validate() const {
    if (n_fake < 2) throw std::invalid_argument("metrics.n_fake must be at least 2");
    if (eval_every < 0) throw std::invalid_argument("metrics.eval_every must be non-negative");
}

void RunConfig::validate() const {
    network.validate();
    transfer.validate();
    inversion.validate();
    metrics.validate();
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

long parse_long(const std::string& v) {
    size_t idx = 0;
    long r = std::stol(v, &idx);
    if (idx != v.size()) throw std::invalid_argument("not an integer");
    return r;
}

uint64_t parse_u64(const std::string& v) {
    size_t idx = 0;
    unsigned long long r = std::stoull(v, &idx);
    if (idx != v.size()) throw std::invalid_argument("not an integer");
    return r;
}

float parse_float(const std::string& v) {
    size_t idx = 0;
    float r = std::stof(v, &idx);
    if (idx != v.size()) throw std::invalid_argument("not a number");
    return r;
}

bool parse_bool(const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw std::invalid_argument("not a boolean");
}

std::vector<float> parse_floats(const std::string& v) {
    std::vector<float> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(parse_float(tok));
    }
    return out;
}

std::vector<int> parse_ints(const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(static_cast<int>(parse_long(tok)));
    }
    return out;
}

std::string fmt_float(float f) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(f));
    return buf;
}

std::string fmt_floats(const std::vector<float>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += fmt_float(v[i]);
    }
    return s;
}

std::string fmt_ints(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

struct Field {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        {"network.resolution", [](const RunConfig& c) { return std::to_string(c.network.resolution); },
         [](RunConfig& c, const std::string& v) { c.network.resolution = static_cast<int>(parse_long(v)); }},
        {"network.style_dim", [](const RunConfig& c) { return std::to_string(c.network.style_dim); },
         [](RunConfig& c, const std::string& v) { c.network.style_dim = static_cast<int>(parse_long(v)); }},
        {"network.mapping_depth", [](const RunConfig& c) { return std::to_string(c.network.mapping_depth); },
         [](RunConfig& c, const std::string& v) { c.network.mapping_depth = static_cast<int>(parse_long(v)); }},
        {"network.channel_base", [](const RunConfig& c) { return std::to_string(c.network.channel_base); },
         [](RunConfig& c, const std::string& v) { c.network.channel_base = static_cast<int>(parse_long(v)); }},
        {"network.noise_injection", [](const RunConfig& c) { return std::string(c.network.noise_injection ? "true" : "false"); },
         [](RunConfig& c, const std::string& v) { c.network.noise_injection = parse_bool(v); }},

        {"transfer.weights.lambda2", [](const RunConfig& c) { return fmt_float(c.transfer.weights.lambda2); },
         [](RunConfig& c, const std::string& v) { c.transfer.weights.lambda2 = parse_float(v); }},
        {"transfer.weights.lambda3", [](const RunConfig& c) { return fmt_float(c.transfer.weights.lambda3); },
         [](RunConfig& c, const std::string& v) { c.transfer.weights.lambda3 = parse_float(v); }},
        {"transfer.weights.lambda4", [](const RunConfig& c) { return fmt_float(c.transfer.weights.lambda4); },
         [](RunConfig& c, const std::string& v) { c.transfer.weights.lambda4 = parse_float(v); }},
        {"transfer.mmd.metric", [](const RunConfig& c) { return c.transfer.mmd.metric; },
         [](RunConfig& c, const std::string& v) { c.transfer.mmd.metric = v; }},
        {"transfer.mmd.kernel", [](const RunConfig& c) { return c.transfer.mmd.kernel; },
         [](RunConfig& c, const std::string& v) { c.transfer.mmd.kernel = v; }},
        {"transfer.mmd.bandwidth_scales", [](const RunConfig& c) { return fmt_floats(c.transfer.mmd.bandwidth_scales); },
         [](RunConfig& c, const std::string& v) { c.transfer.mmd.bandwidth_scales = parse_floats(v); }},
        {"transfer.mmd.fixed_sigma", [](const RunConfig& c) { return fmt_float(c.transfer.mmd.fixed_sigma); },
         [](RunConfig& c, const std::string& v) { c.transfer.mmd.fixed_sigma = parse_float(v); }},
        {"transfer.mmd.take_sqrt", [](const RunConfig& c) { return std::string(c.transfer.mmd.take_sqrt ? "true" : "false"); },
         [](RunConfig& c, const std::string& v) { c.transfer.mmd.take_sqrt = parse_bool(v); }},
        {"transfer.mask.generator", [](const RunConfig& c) { return fmt_ints(c.transfer.mask.generator_layers); },
         [](RunConfig& c, const std::string& v) { c.transfer.mask.generator_layers = parse_ints(v); }},
        {"transfer.mask.discriminator", [](const RunConfig& c) { return fmt_ints(c.transfer.mask.discriminator_layers); },
         [](RunConfig& c, const std::string& v) { c.transfer.mask.discriminator_layers = parse_ints(v); }},
        {"transfer.batch_size", [](const RunConfig& c) { return std::to_string(c.transfer.batch_size); },
         [](RunConfig& c, const std::string& v) { c.transfer.batch_size = static_cast<int>(parse_long(v)); }},
        {"transfer.lr_g", [](const RunConfig& c) { return fmt_float(c.transfer.lr_g); },
         [](RunConfig& c, const std::string& v) { c.transfer.lr_g = parse_float(v); }},
        {"transfer.lr_d", [](const RunConfig& c) { return fmt_float(c.transfer.lr_d); },
         [](RunConfig& c, const std::string& v) { c.transfer.lr_d = parse_float(v); }},
        {"transfer.adam_beta1", [](const RunConfig& c) { return fmt_float(c.transfer.adam_beta1); },
         [](RunConfig& c, const std::string& v) { c.transfer.adam_beta1 = parse_float(v); }},
        {"transfer.adam_beta2", [](const RunConfig& c) { return fmt_float(c.transfer.adam_beta2); },
         [](RunConfig& c, const std::string& v) { c.transfer.adam_beta2 = parse_float(v); }},
        {"transfer.total_steps", [](const RunConfig& c) { return std::to_string(c.transfer.total_steps); },
         [](RunConfig& c, const std::string& v) { c.transfer.total_steps = static_cast<int>(parse_long(v)); }},
        {"transfer.augment", [](const RunConfig& c) { return augment::policy_string(c.transfer.augment); },
         [](RunConfig& c, const std::string& v) { c.transfer.augment = augment::parse_policy(v); }},
        {"transfer.r1_gamma", [](const RunConfig& c) { return fmt_float(c.transfer.r1_gamma); },
         [](RunConfig& c, const std::string& v) { c.transfer.r1_gamma = parse_float(v); }},
        {"transfer.r1_every", [](const RunConfig& c) { return std::to_string(c.transfer.r1_every); },
         [](RunConfig& c, const std::string& v) { c.transfer.r1_every = static_cast<int>(parse_long(v)); }},
        {"transfer.seed", [](const RunConfig& c) { return std::to_string(c.transfer.seed); },
         [](RunConfig& c, const std::string& v) { c.transfer.seed = parse_u64(v); }},
        {"transfer.snapshot_every", [](const RunConfig& c) { return std::to_string(c.transfer.snapshot_every); },
         [](RunConfig& c, const std::string& v) { c.transfer.snapshot_every = static_cast<int>(parse_long(v)); }},
        {"transfer.freeze_d_layers", [](const RunConfig& c) { return std::to_string(c.transfer.freeze_d_layers); },
         [](RunConfig& c, const std::string& v) { c.transfer.freeze_d_layers = static_cast<int>(parse_long(v)); }},

        {"inversion.iterations", [](const RunConfig& c) { return std::to_string(c.inversion.iterations); },
         [](RunConfig& c, const std::string& v) { c.inversion.iterations = static_cast<int>(parse_long(v)); }},
        {"inversion.lr_init", [](const RunConfig& c) { return fmt_float(c.inversion.lr_init); },
         [](RunConfig& c, const std::string& v) { c.inversion.lr_init = parse_float(v); }},
        {"inversion.decay_every", [](const RunConfig& c) { return std::to_string(c.inversion.decay_every); },
         [](RunConfig& c, const std::string& v) { c.inversion.decay_every = static_cast<int>(parse_long(v)); }},
        {"inversion.lr_decay_factor", [](const RunConfig& c) { return fmt_float(c.inversion.lr_decay_factor); },
         [](RunConfig& c, const std::string& v) { c.inversion.lr_decay_factor = parse_float(v); }},
        {"inversion.lambda1", [](const RunConfig& c) { return fmt_float(c.inversion.lambda1); },
         [](RunConfig& c, const std::string& v) { c.inversion.lambda1 = parse_float(v); }},
        {"inversion.init", [](const RunConfig& c) { return c.inversion.init; },
         [](RunConfig& c, const std::string& v) { c.inversion.init = v; }},

        {"metrics.n_fake", [](const RunConfig& c) { return std::to_string(c.metrics.n_fake); },
         [](RunConfig& c, const std::string& v) { c.metrics.n_fake = static_cast<int>(parse_long(v)); }},
        {"metrics.eval_every", [](const RunConfig& c) { return std::to_string(c.metrics.eval_every); },
         [](RunConfig& c, const std::string& v) { c.metrics.eval_every = parse_long(v); }},
        {"metrics.extractor_seed", [](const RunConfig& c) { return std::to_string(c.metrics.extractor_seed); },
         [](RunConfig& c, const std::string& v) { c.metrics.extractor_seed = parse_u64(v); }},

        {"data.source_dir", [](const RunConfig& c) { return c.data.source_dir; },
         [](RunConfig& c, const std::string& v) { c.data.source_dir = v; }},
        {"data.target_dir", [](const RunConfig& c) { return c.data.target_dir; },
         [](RunConfig& c, const std::string& v) { c.data.target_dir = v; }},
        {"data.cache_dir", [](const RunConfig& c) { return c.data.cache_dir; },
         [](RunConfig& c, const std::string& v) { c.data.cache_dir = v; }},
    };
    return f;
}

const Field* find_field(const std::string& key) {
    for (const auto& f : fields())
        if (key == f.key) return &f;
    return nullptr;
}

void apply_one(RunConfig& cfg, const std::string& key, const std::string& value,
               std::vector<std::string>& errors) {
    const Field* f = find_field(key);
    if (!f) {
        errors.push_back("unknown key '" + key + "'");
        return;
    }
    try {
        f->set(cfg, value);
    } catch (const std::exception& e) {
        errors.push_back("key '" + key + "': bad value '" + value + "' (" + e.what() + ")");
    }
}

void raise_if_errors(const std::vector<std::string>& errors, const std::string& where) {
    if (errors.empty()) return;
    std::string msg = where + ":";
    for (const auto& e : errors) msg += "\n  " + e;
    throw std::runtime_error(msg);
}

} // namespace

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    RunConfig cfg;
    std::vector<std::string> errors;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t sep = line.find('=');
        std::string key, value;
        if (sep != std::string::npos) {
            key = trim(line.substr(0, sep));
            value = trim(line.substr(sep + 1));
        } else {
            size_t sp = line.find_first_of(" \t");
            if (sp == std::string::npos) {
                errors.push_back("line " + std::to_string(lineno) + ": no value for '" + line + "'");
                continue;
            }
            key = trim(line.substr(0, sp));
            value = trim(line.substr(sp));
        }
        apply_one(cfg, key, value, errors);
    }
    raise_if_errors(errors, "config " + path);
    return cfg;
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& sets) {
    std::vector<std::string> errors;
    for (const auto& s : sets) {
        size_t sep = s.find('=');
        if (sep == std::string::npos) {
            errors.push_back("override '" + s + "' is not key=value");
            continue;
        }
        apply_one(cfg, trim(s.substr(0, sep)), trim(s.substr(sep + 1)), errors);
    }
    raise_if_errors(errors, "overrides");
}

std::string write_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) {
        out += f.key;
        out += " = ";
        out += f.get(cfg);
        out += "\n";
    }
    return out;
}

} // namespace d3t::config
