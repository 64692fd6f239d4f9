#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "d3t/metrics.hpp"
#include "d3t/trainer.hpp"

namespace d3t::runlog {

/// Line-oriented JSON run log: one step or evaluation record per line,
/// flushed as written.
class RunLog {
public:
    explicit RunLog(const std::string& path);
    void step(const trainer::StepRecord& r);
    void fid(long step, const metrics::FIDReport& r);

private:
    std::ofstream out_;
    std::string path_;
};

std::vector<trainer::StepRecord> read_steps(const std::string& path);

struct FidEntry {
    long step = 0;
    metrics::FIDReport report;
};
std::vector<FidEntry> read_fids(const std::string& path);

/// Run manifest: the resolved configuration echo plus seed and named content
/// hashes, written as a single JSON document.
void write_manifest(const std::string& path, const std::string& config_echo, uint64_t seed,
                    const std::map<std::string, std::string>& hashes);

/// One-line machine-readable failure record for command wrappers.
std::string error_record(const std::string& command, const std::string& message);

} // namespace d3t::runlog
