#pragma once

#include <iomanip>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "elattn/perf.hpp"

namespace elattn {

enum class ReportFormat { Csv, Markdown, Json };

inline ReportFormat parse_report_format(const std::string& s) {
    if (s == "csv") return ReportFormat::Csv;
    if (s == "md") return ReportFormat::Markdown;
    if (s == "json") return ReportFormat::Json;
    throw ParamError("unknown format '" + s + "' (expected csv, md, or json)");
}

namespace detail {

inline std::string fmt_g(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

}  // namespace detail

// Column order: n, beam, batch, mode, measured_s_per_sample, predicted_s,
// flops, bytes, ai.
inline std::string to_csv(const BenchReport& r) {
    std::ostringstream os;
    std::istringstream notes(r.header_notes);
    std::string line;
    while (std::getline(notes, line)) os << "# " << line << "\n";
    os << "n,beam,batch,mode,measured_s_per_sample,predicted_s,flops,bytes,ai\n";
    for (const BenchRow& row : r.rows)
        os << row.n << "," << row.x << "," << row.B << "," << to_string(row.mode) << ","
           << detail::fmt_g(row.measured_seconds) << "," << detail::fmt_g(row.predicted_seconds)
           << "," << detail::fmt_g(row.flops) << "," << detail::fmt_g(row.bytes) << ","
           << detail::fmt_g(row.ai) << "\n";
    return os.str();
}

inline std::string to_markdown(const BenchReport& r) {
    std::ostringstream os;
    std::istringstream notes(r.header_notes);
    std::string line;
    while (std::getline(notes, line)) os << "> " << line << "\n";
    os << "\n| n | beam | batch | mode | measured_s_per_sample | predicted_s | flops | bytes | ai |\n";
    os << "|---|------|-------|------|-----------------------|-------------|-------|-------|----|\n";
    for (const BenchRow& row : r.rows)
        os << "| " << row.n << " | " << row.x << " | " << row.B << " | " << to_string(row.mode)
           << " | " << detail::fmt_g(row.measured_seconds) << " | "
           << detail::fmt_g(row.predicted_seconds) << " | " << detail::fmt_g(row.flops) << " | "
           << detail::fmt_g(row.bytes) << " | " << detail::fmt_g(row.ai) << " |\n";
    return os.str();
}

inline std::string to_json(const BenchReport& r) {
    nlohmann::json j;
    j["conventions"] = r.header_notes;
    j["rows"] = nlohmann::json::array();
    for (const BenchRow& row : r.rows)
        j["rows"].push_back({{"n", row.n},
                             {"beam", row.x},
                             {"batch", row.B},
                             {"mode", to_string(row.mode)},
                             {"measured_s_per_sample", row.measured_seconds},
                             {"predicted_s", row.predicted_seconds},
                             {"flops", row.flops},
                             {"bytes", row.bytes},
                             {"ai", row.ai}});
    return j.dump(2) + "\n";
}

inline std::string render(const BenchReport& r, ReportFormat fmt) {
    switch (fmt) {
        case ReportFormat::Csv: return to_csv(r);
        case ReportFormat::Markdown: return to_markdown(r);
        case ReportFormat::Json: return to_json(r);
    }
    return {};
}

}  // namespace elattn
