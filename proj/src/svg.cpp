#include "mfr/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "mfr/error.hpp"
#include "mfr/serialize.hpp"

namespace mfr {
namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 150.0;
constexpr double kTop = 30.0;
constexpr double kBottom = 50.0;
constexpr double kFloor = 1e-6;

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

std::string format_number(double value) {
    if (std::isnan(value)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", value);
    return buf;
}

std::string render_svg(const SweepReport& report) {
    if (report.rows.empty()) throw DataError("emit_svg: empty sweep report");

    double x_lo = std::numeric_limits<double>::infinity();
    double x_hi = -x_lo;
    double v_lo = std::numeric_limits<double>::infinity();
    double v_hi = -v_lo;
    std::vector<std::string> kinds;
    for (const auto& r : report.rows) {
        x_lo = std::min(x_lo, r.exposure_ms);
        x_hi = std::max(x_hi, r.exposure_ms);
        const double v = std::max(r.mean_infidelity, kFloor);
        v_lo = std::min(v_lo, v);
        v_hi = std::max(v_hi, v);
        if (std::find(kinds.begin(), kinds.end(), r.kind) == kinds.end()) kinds.push_back(r.kind);
    }
    const double y_min = v_lo / 2.0;
    const double y_max = v_hi * 2.0;
    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    auto px = [&](double x) {
        if (x_hi == x_lo) return kLeft + plot_w / 2.0;
        return kLeft + (x - x_lo) / (x_hi - x_lo) * plot_w;
    };
    auto py = [&](double v) {
        const double t = (std::log10(std::clamp(v, y_min, y_max)) - std::log10(y_min)) /
                         (std::log10(y_max) - std::log10(y_min));
        return kTop + (1.0 - t) * plot_h;
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" data-ymin=\"" << format_number(y_min)
        << "\" data-ymax=\"" << format_number(y_max) << "\">\n";
    svg << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
    svg << "<rect class=\"frame\" x=\"" << fmt(kLeft) << "\" y=\"" << fmt(kTop) << "\" width=\"" << fmt(plot_w)
        << "\" height=\"" << fmt(plot_h) << "\" fill=\"none\" stroke=\"black\"/>\n";

    // Decade ticks inside the range, plus both ends.
    std::vector<double> ticks{y_min};
    for (int e = static_cast<int>(std::ceil(std::log10(y_min))); e <= static_cast<int>(std::floor(std::log10(y_max)));
         ++e)
        ticks.push_back(std::pow(10.0, e));
    ticks.push_back(y_max);
    for (double t : ticks) {
        svg << "<line class=\"ytick\" x1=\"" << fmt(kLeft - 5) << "\" y1=\"" << fmt(py(t)) << "\" x2=\""
            << fmt(kLeft) << "\" y2=\"" << fmt(py(t)) << "\" stroke=\"black\"/>"
            << "<text x=\"" << fmt(kLeft - 8) << "\" y=\"" << fmt(py(t) + 4)
            << "\" font-size=\"10\" text-anchor=\"end\">" << format_number(t) << "</text>\n";
    }
    std::vector<double> xs;
    for (const auto& r : report.rows)
        if (std::find(xs.begin(), xs.end(), r.exposure_ms) == xs.end()) xs.push_back(r.exposure_ms);
    std::sort(xs.begin(), xs.end());
    for (double x : xs) {
        svg << "<text class=\"xtick\" x=\"" << fmt(px(x)) << "\" y=\"" << fmt(kTop + plot_h + 16)
            << "\" font-size=\"10\" text-anchor=\"middle\">" << format_number(x) << "</text>\n";
    }
    svg << "<text x=\"" << fmt(kLeft + plot_w / 2) << "\" y=\"" << fmt(kHeight - 10)
        << "\" font-size=\"12\" text-anchor=\"middle\">exposure (ms)</text>\n";
    svg << "<text x=\"16\" y=\"" << fmt(kTop + plot_h / 2) << "\" font-size=\"12\" text-anchor=\"middle\" "
        << "transform=\"rotate(-90 16 " << fmt(kTop + plot_h / 2) << ")\">infidelity</text>\n";

    for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
        const char* color = kPalette[ki % (sizeof kPalette / sizeof *kPalette)];
        std::vector<SweepRow> series;
        for (const auto& r : report.rows)
            if (r.kind == kinds[ki]) series.push_back(r);
        std::stable_sort(series.begin(), series.end(),
                         [](const SweepRow& a, const SweepRow& b) { return a.exposure_ms < b.exposure_ms; });
        if (series.size() >= 2) {
            svg << "<polyline class=\"series\" data-kind=\"" << kinds[ki] << "\" fill=\"none\" stroke=\"" << color
                << "\" stroke-width=\"1.5\" points=\"";
            for (std::size_t i = 0; i < series.size(); ++i)
                svg << (i ? " " : "") << fmt(px(series[i].exposure_ms)) << ','
                    << fmt(py(std::max(series[i].mean_infidelity, kFloor)));
            svg << "\"/>\n";
        }
        for (const auto& r : series) {
            const double v = std::max(r.mean_infidelity, kFloor);
            const double x = px(r.exposure_ms);
            svg << "<line class=\"errbar\" x1=\"" << fmt(x) << "\" y1=\"" << fmt(py(v - r.std_error)) << "\" x2=\""
                << fmt(x) << "\" y2=\"" << fmt(py(v + r.std_error)) << "\" stroke=\"" << color << "\"/>"
                << "<circle class=\"marker\" cx=\"" << fmt(x) << "\" cy=\"" << fmt(py(v)) << "\" r=\"3\" fill=\""
                << color << "\"/>\n";
        }
        const double ly = kTop + 14.0 + 18.0 * static_cast<double>(ki);
        svg << "<line x1=\"" << fmt(kWidth - kRight + 12) << "\" y1=\"" << fmt(ly - 4) << "\" x2=\""
            << fmt(kWidth - kRight + 32) << "\" y2=\"" << fmt(ly - 4) << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/><text class=\"legend\" x=\"" << fmt(kWidth - kRight + 38) << "\" y=\""
            << fmt(ly) << "\" font-size=\"12\">" << kinds[ki] << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void emit_svg(const SweepReport& report, const std::filesystem::path& path) {
    write_text_file(path, render_svg(report));
}

std::string sweep_csv(const SweepReport& report) {
    std::string out = "exposure_ms,kind,mean_infidelity,stderr\n";
    for (const auto& r : report.rows)
        out += format_number(r.exposure_ms) + "," + r.kind + "," + format_number(r.mean_infidelity) + "," +
               format_number(r.std_error) + "\n";
    return out;
}

SweepReport parse_sweep_csv(const std::string& text) {
    SweepReport report;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw DataError("sweep csv: empty");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string e, kind, m, s;
        if (!std::getline(fields, e, ',') || !std::getline(fields, kind, ',') || !std::getline(fields, m, ',') ||
            !std::getline(fields, s, ','))
            throw DataError("sweep csv: malformed row '" + line + "'");
        try {
            report.rows.push_back({std::stod(e), kind, std::stod(m), std::stod(s)});
        } catch (const std::exception&) {
            throw DataError("sweep csv: malformed number in '" + line + "'");
        }
    }
    return report;
}

}  // namespace mfr
