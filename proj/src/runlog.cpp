#include "d3t/runlog.hpp"

#include <stdexcept>

#include <json.hpp>

namespace d3t::runlog {

using nlohmann::json;

RunLog::RunLog(const std::string& path) : out_(path, std::ios::trunc), path_(path) {
    if (!out_) throw std::runtime_error("runlog: cannot open " + path);
}

void RunLog::step(const trainer::StepRecord& r) {
    json j{{"type", "step"},
           {"step", r.step},
           {"loss_g_total", r.loss_g_total},
           {"loss_g_adv", r.loss_g_adv},
           {"loss_g_dis", r.loss_g_dis},
           {"loss_g_reg", r.loss_g_reg},
           {"loss_d_total", r.loss_d_total},
           {"loss_d_adv", r.loss_d_adv},
           {"loss_d_dis", r.loss_d_dis},
           {"loss_r1", r.loss_r1}};
    out_ << j.dump() << "\n";
    out_.flush();
    if (!out_) throw std::runtime_error("runlog: write failed: " + path_);
}

void RunLog::fid(long step, const metrics::FIDReport& r) {
    json j{{"type", "fid"},
           {"step", step},
           {"score", r.score},
           {"extractor_id", r.extractor_id},
           {"n_real", r.n_real},
           {"n_fake", r.n_fake},
           {"snapshot_step", r.snapshot_step}};
    out_ << j.dump() << "\n";
    out_.flush();
    if (!out_) throw std::runtime_error("runlog: write failed: " + path_);
}

namespace {

std::vector<json> read_lines(const std::string& path, const std::string& type) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("runlog: cannot open " + path);
    std::vector<json> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        if (j.value("type", "") == type) out.push_back(std::move(j));
    }
    return out;
}

} // namespace

std::vector<trainer::StepRecord> read_steps(const std::string& path) {
    std::vector<trainer::StepRecord> out;
    for (const auto& j : read_lines(path, "step")) {
        trainer::StepRecord r;
        r.step = j.at("step").get<long>();
        r.loss_g_total = j.at("loss_g_total").get<double>();
        r.loss_g_adv = j.at("loss_g_adv").get<double>();
        r.loss_g_dis = j.at("loss_g_dis").get<double>();
        r.loss_g_reg = j.at("loss_g_reg").get<double>();
        r.loss_d_total = j.at("loss_d_total").get<double>();
        r.loss_d_adv = j.at("loss_d_adv").get<double>();
        r.loss_d_dis = j.at("loss_d_dis").get<double>();
        r.loss_r1 = j.at("loss_r1").get<double>();
        out.push_back(r);
    }
    return out;
}

std::vector<FidEntry> read_fids(const std::string& path) {
    std::vector<FidEntry> out;
    for (const auto& j : read_lines(path, "fid")) {
        FidEntry e;
        e.step = j.at("step").get<long>();
        e.report.score = j.at("score").get<double>();
        e.report.extractor_id = j.at("extractor_id").get<std::string>();
        e.report.n_real = j.at("n_real").get<long>();
        e.report.n_fake = j.at("n_fake").get<long>();
        e.report.snapshot_step = j.at("snapshot_step").get<long>();
        out.push_back(e);
    }
    return out;
}

void write_manifest(const std::string& path, const std::string& config_echo, uint64_t seed,
                    const std::map<std::string, std::string>& hashes) {
    json j{{"config", config_echo}, {"seed", seed}, {"hashes", hashes}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("runlog: cannot open " + path);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("runlog: write failed: " + path);
}

std::string error_record(const std::string& command, const std::string& message) {
    return json{{"type", "error"}, {"command", command}, {"message", message}}.dump();
}

} // namespace d3t::runlog
