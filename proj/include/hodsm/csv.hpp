#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace hodsm {

// CSV writer: header row first, data rows, then one trailing comment line
// with run metadata.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& columns)
        : f_(path) {
        if (!f_) throw std::runtime_error("cannot open for writing: " + path);
        for (size_t i = 0; i < columns.size(); ++i) f_ << (i ? "," : "") << columns[i];
        f_ << "\n";
    }

    template <typename... Ts>
    void row(Ts... vals) {
        std::ostringstream os;
        os << std::setprecision(17);
        bool first = true;
        ((os << (first ? "" : ",") << vals, first = false), ...);
        f_ << os.str() << "\n";
    }

    void finish(const std::string& metadata) { f_ << "# " << metadata << "\n"; }

private:
    std::ofstream f_;
};

// FNV-1a, used to stamp output files with the config they came from.
inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string run_metadata_line(const std::string& config_text);

} // namespace hodsm
