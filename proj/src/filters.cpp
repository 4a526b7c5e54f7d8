#include "mfr/filters.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "mfr/error.hpp"

namespace mfr {

std::string_view to_string(FilterKind kind) {
    switch (kind) {
        case FilterKind::Square: return "square";
        case FilterKind::Gaussian: return "gaussian";
        case FilterKind::MFSite: return "mfsite";
        case FilterKind::MFArray: return "mfarray";
    }
    return "unknown";
}

FilterKind parse_filter_kind(std::string_view name) {
    if (name == "square") return FilterKind::Square;
    if (name == "gaussian") return FilterKind::Gaussian;
    if (name == "mfsite") return FilterKind::MFSite;
    if (name == "mfarray") return FilterKind::MFArray;
    throw ConfigError("unknown filter kind '" + std::string(name) + "'");
}

bool BoundarySpec::fits(std::size_t height, std::size_t width_px) const {
    return width >= 2 && top() >= 0 && left() >= 0 && top() + width <= static_cast<int>(height) &&
           left() + width <= static_cast<int>(width_px);
}

BoundarySpec make_boundary(const SiteFit& site, int width) {
    return {site.site_index, static_cast<int>(std::floor(site.center.row + 0.5)),
            static_cast<int>(std::floor(site.center.col + 0.5)), width};
}

void check_boundary(const BoundarySpec& boundary, std::size_t height, std::size_t width) {
    if (!boundary.fits(height, width)) {
        throw ConfigError("boundary of width " + std::to_string(boundary.width) + " around site " +
                          std::to_string(boundary.site_index) + " does not fit the frame");
    }
}

double square_score(const FrameView& frame, const BoundarySpec& b) {
    double sum = 0.0;
    for (int r = b.top(); r < b.top() + b.width; ++r)
        for (int c = b.left(); c < b.left() + b.width; ++c) sum += frame.at(r, c);
    return sum;
}

WeightMap gaussian_weight_map(const SiteFit& site, double cutoff, std::size_t height, std::size_t width) {
    if (!(cutoff > 0.0 && cutoff < 1.0)) throw ConfigError("gaussian_weight_map: cutoff must lie in (0, 1)");
    if (!(site.sigma > 0.0)) throw ConfigError("gaussian_weight_map: sigma must be > 0");
    WeightMap map;
    const double two_s2 = 2.0 * site.sigma * site.sigma;
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            const double dr = static_cast<double>(r) - site.center.row;
            const double dc = static_cast<double>(c) - site.center.col;
            const double wgt = std::exp(-(dr * dr + dc * dc) / two_s2);
            if (wgt > cutoff) map.push_back({static_cast<int>(r), static_cast<int>(c), wgt});
        }
    }
    return map;
}

double gaussian_score(const FrameView& frame, const WeightMap& weights) {
    double sum = 0.0;
    for (const auto& pw : weights) sum += pw.weight * frame.at(pw.row, pw.col);
    return sum;
}

namespace {

struct NormalFit {
    double mean;
    double sd;
};

NormalFit fit_normal(std::span<const double> xs, const char* which) {
    if (xs.size() < 2) throw DataError(std::string("threshold: fewer than 2 ") + which + " scores");
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    if (!(sd > 0.0)) throw DataError(std::string("threshold: ") + which + " scores have zero variance");
    return {mean, sd};
}

}  // namespace

double gaussian_intersection(double mean0, double sd0, double mean1, double sd1) {
    const double lo = std::min(mean0, mean1);
    const double hi = std::max(mean0, mean1);
    const double mid = 0.5 * (mean0 + mean1);
    const double v0 = sd0 * sd0;
    const double v1 = sd1 * sd1;
    const double a = 1.0 / (2.0 * v1) - 1.0 / (2.0 * v0);
    const double b = mean0 / v0 - mean1 / v1;
    const double c = mean1 * mean1 / (2.0 * v1) - mean0 * mean0 / (2.0 * v0) + std::log(sd1 / sd0);

    std::vector<double> roots;
    const double scale = std::max({std::abs(a) * hi * hi, std::abs(b) * hi, std::abs(c), 1e-300});
    if (std::abs(a) * std::max(1.0, hi * hi) <= 1e-14 * scale) {
        if (b != 0.0) roots.push_back(-c / b);
    } else {
        const double disc = b * b - 4.0 * a * c;
        if (disc >= 0.0) {
            const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
            if (q != 0.0) roots.push_back(c / q);
            roots.push_back(q / a);
        }
    }
    double best = mid;
    double best_gap = std::numeric_limits<double>::infinity();
    for (double x : roots) {
        if (std::isfinite(x) && x >= lo && x <= hi && std::abs(x - mid) < best_gap) {
            best = x;
            best_gap = std::abs(x - mid);
        }
    }
    return best;
}

double unsupervised_threshold(std::span<const double> dark_scores, std::span<const double> bright_scores) {
    const NormalFit dark = fit_normal(dark_scores, "dark");
    const NormalFit bright = fit_normal(bright_scores, "bright");
    return gaussian_intersection(dark.mean, dark.sd, bright.mean, bright.sd);
}

std::pair<std::vector<double>, std::vector<double>> split_by_mixture(std::span<const double> scores) {
    if (scores.size() < 4) throw DataError("mixture: need at least 4 scores");
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    const double range = sorted.back() - sorted.front();
    if (!(range > 0.0)) throw DataError("mixture: scores are constant");
    const std::size_t half = sorted.size() / 2;

    auto moments = [](std::span<const double> xs) {
        const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
        double v = 0.0;
        for (double x : xs) v += (x - m) * (x - m);
        return std::pair{m, v / static_cast<double>(xs.size())};
    };
    const double var_floor = 1e-6 * range * range;
    auto [m0, v0] = moments(std::span(sorted).first(half));
    auto [m1, v1] = moments(std::span(sorted).subspan(half));
    v0 = std::max(v0, var_floor);
    v1 = std::max(v1, var_floor);
    double w0 = 0.5;

    const std::size_t n = scores.size();
    std::vector<double> resp(n);
    auto log_pdf = [](double x, double m, double v) {
        return -0.5 * (x - m) * (x - m) / v - 0.5 * std::log(2.0 * M_PI * v);
    };
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 500; ++iter) {
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double l0 = std::log(w0) + log_pdf(scores[i], m0, v0);
            const double l1 = std::log(1.0 - w0) + log_pdf(scores[i], m1, v1);
            const double mx = std::max(l0, l1);
            const double lse = mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
            resp[i] = std::exp(l0 - lse);
            ll += lse;
        }
        double n0 = 0.0, s0 = 0.0, s1 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            n0 += resp[i];
            s0 += resp[i] * scores[i];
            s1 += (1.0 - resp[i]) * scores[i];
        }
        const double n1 = static_cast<double>(n) - n0;
        if (n0 < 1e-9 || n1 < 1e-9) throw DataError("mixture: a component collapsed");
        m0 = s0 / n0;
        m1 = s1 / n1;
        double q0 = 0.0, q1 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            q0 += resp[i] * (scores[i] - m0) * (scores[i] - m0);
            q1 += (1.0 - resp[i]) * (scores[i] - m1) * (scores[i] - m1);
        }
        v0 = std::max(q0 / n0, var_floor);
        v1 = std::max(q1 / n1, var_floor);
        w0 = n0 / static_cast<double>(n);
        if (std::abs(ll - prev_ll) < 1e-10 * std::max(1.0, std::abs(ll))) break;
        prev_ll = ll;
    }

    const bool swap = m0 > m1;
    std::vector<double> dark;
    std::vector<double> bright;
    for (std::size_t i = 0; i < n; ++i) {
        const bool in0 = resp[i] >= 0.5;
        ((in0 != swap) ? dark : bright).push_back(scores[i]);
    }
    return {std::move(dark), std::move(bright)};
}

double mixture_threshold(std::span<const double> scores) {
    const auto [dark, bright] = split_by_mixture(scores);
    return unsupervised_threshold(dark, bright);
}

void write_features(const FrameView& frame, const BoundarySpec& target, std::span<const BoundarySpec> neighbors,
                    double c, std::span<double> out) {
    const std::size_t s = static_cast<std::size_t>(target.width);
    if (out.size() != s * s + neighbors.size() + 1) throw DataError("write_features: output size mismatch");
    std::size_t i = 0;
    for (int r = target.top(); r < target.top() + target.width; ++r)
        for (int col = target.left(); col < target.left() + target.width; ++col) out[i++] = frame.at(r, col);
    for (const auto& nb : neighbors)
        out[i++] = square_score(frame, nb) / static_cast<double>(nb.width * nb.width);
    out[i] = c;
}

std::vector<double> extract_site_features(const FrameView& frame, const BoundarySpec& boundary, double c) {
    check_boundary(boundary, frame.height, frame.width);
    std::vector<double> out(static_cast<std::size_t>(boundary.width * boundary.width) + 1);
    write_features(frame, boundary, {}, c, out);
    return out;
}

std::vector<double> extract_array_features(const FrameView& frame, const BoundarySpec& target,
                                           std::span<const BoundarySpec> neighbors, double c) {
    check_boundary(target, frame.height, frame.width);
    for (const auto& nb : neighbors) check_boundary(nb, frame.height, frame.width);
    std::vector<double> out(static_cast<std::size_t>(target.width * target.width) + neighbors.size() + 1);
    write_features(frame, target, neighbors, c, out);
    return out;
}

std::vector<int> neighbor_sites(const SiteGeometry& sites, int target_site, const NeighborPolicy& policy) {
    const auto target = std::find_if(sites.begin(), sites.end(),
                                     [&](const SiteFit& s) { return s.site_index == target_site; });
    if (target == sites.end()) throw ConfigError("neighbor_sites: unknown site " + std::to_string(target_site));
    std::vector<int> out;
    if (sites.size() <= policy.all_sites_up_to) {
        for (const auto& s : sites)
            if (s.site_index != target_site) out.push_back(s.site_index);
    } else {
        double spacing = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < sites.size(); ++a)
            for (std::size_t b = a + 1; b < sites.size(); ++b)
                spacing = std::min(spacing, std::hypot(sites[a].center.row - sites[b].center.row,
                                                       sites[a].center.col - sites[b].center.col));
        for (const auto& s : sites) {
            if (s.site_index == target_site) continue;
            const double d = std::hypot(s.center.row - target->center.row, s.center.col - target->center.col);
            if (d <= policy.radius_factor * spacing) out.push_back(s.site_index);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t FilterModel::feature_dim() const {
    const auto s2 = static_cast<std::size_t>(boundary.width * boundary.width);
    switch (kind) {
        case FilterKind::Square: return s2;
        case FilterKind::Gaussian: return pixel_weights.size();
        case FilterKind::MFSite: return s2 + 1;
        case FilterKind::MFArray: return s2 + neighbors.size() + 1;
    }
    return 0;
}

Prediction predict(const FilterModel& model, std::span<const double> features) {
    if (features.size() != model.weights.size()) {
        throw DataError("predict: feature length " + std::to_string(features.size()) + " != weight length " +
                        std::to_string(model.weights.size()));
    }
    double y = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) y += model.weights[i] * features[i];
    return {y, classify_score(y, model.threshold)};
}

double score_frame(const FilterModel& model, const FrameView& frame) {
    switch (model.kind) {
        case FilterKind::Square: return square_score(frame, model.boundary);
        case FilterKind::Gaussian: return gaussian_score(frame, model.pixel_weights);
        case FilterKind::MFSite:
        case FilterKind::MFArray: {
            std::vector<double> x(model.feature_dim());
            write_features(frame, model.boundary, model.neighbors, model.bias_c, x);
            return predict(model, x).y_hat;
        }
    }
    return 0.0;
}

}  // namespace mfr
