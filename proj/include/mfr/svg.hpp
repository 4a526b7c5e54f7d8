#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mfr {

struct SweepRow {
    double exposure_ms = 0.0;
    std::string kind;
    double mean_infidelity = 0.0;
    double std_error = 0.0;
};

struct SweepReport {
    std::vector<SweepRow> rows;
};

/// Log-y line chart of infidelity vs exposure: one polyline per kind (when it has >= 2 points),
/// a marker and an error bar per row, and a legend. The y axis spans [min/2, max*2] of the
/// plotted values. Throws DataError on an empty report.
std::string render_svg(const SweepReport& report);
void emit_svg(const SweepReport& report, const std::filesystem::path& path);

std::string sweep_csv(const SweepReport& report);
SweepReport parse_sweep_csv(const std::string& text);

/// printf("%.10g") formatting used by every CSV writer.
std::string format_number(double value);

}  // namespace mfr
