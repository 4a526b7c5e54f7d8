#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mfr/image.hpp"
#include "mfr/locate.hpp"

namespace mfr {

enum class FilterKind { Square, Gaussian, MFSite, MFArray };

std::string_view to_string(FilterKind kind);
FilterKind parse_filter_kind(std::string_view name);
inline bool is_matched_filter(FilterKind kind) {
    return kind == FilterKind::MFSite || kind == FilterKind::MFArray;
}

/// s x s pixel window around a rounded site center. Rows are
/// [center_row - s/2, center_row - s/2 + s) with integer division; columns likewise.
struct BoundarySpec {
    int site_index = 0;
    int center_row = 0;
    int center_col = 0;
    int width = 2;

    int top() const { return center_row - width / 2; }
    int left() const { return center_col - width / 2; }
    bool fits(std::size_t height, std::size_t width_px) const;

    bool operator==(const BoundarySpec&) const = default;
};

/// Rounds the fitted center half-up. Does not check bounds.
BoundarySpec make_boundary(const SiteFit& site, int width);

/// Throws ConfigError if the boundary does not fit the frame or width < 2.
void check_boundary(const BoundarySpec& boundary, std::size_t height, std::size_t width);

struct PixelWeight {
    int row = 0;
    int col = 0;
    double weight = 0.0;
};
using WeightMap = std::vector<PixelWeight>;

double square_score(const FrameView& frame, const BoundarySpec& boundary);

/// Unit-amplitude Gaussian at the fitted center and sigma, evaluated at pixel centers of an
/// h x w frame, keeping weights > cutoff, in ascending pixel order.
WeightMap gaussian_weight_map(const SiteFit& site, double cutoff, std::size_t height, std::size_t width);

double gaussian_score(const FrameView& frame, const WeightMap& weights);

/// Crossing of two normal densities nearest the midpoint, restricted to [min mean, max mean];
/// the midpoint when none exists there.
double gaussian_intersection(double mean0, double sd0, double mean1, double sd1);

double unsupervised_threshold(std::span<const double> dark_scores, std::span<const double> bright_scores);

/// Two-component 1D Gaussian mixture (EM). Returns (dark, bright) partitions by posterior.
std::pair<std::vector<double>, std::vector<double>> split_by_mixture(std::span<const double> scores);

/// Threshold for unlabeled scores: mixture split followed by unsupervised_threshold.
double mixture_threshold(std::span<const double> scores);

/// Layout: s*s pixels row-major, then c.
std::vector<double> extract_site_features(const FrameView& frame, const BoundarySpec& boundary, double c);

/// Layout: target's s*s pixels row-major, mean pixel of each neighbor window (in the given
/// order, ascending site index), then c.
std::vector<double> extract_array_features(const FrameView& frame, const BoundarySpec& target,
                                           std::span<const BoundarySpec> neighbors, double c);

/// Same layout as above, written into `out` without bounds checks on the windows.
void write_features(const FrameView& frame, const BoundarySpec& target, std::span<const BoundarySpec> neighbors,
                    double c, std::span<double> out);

struct NeighborPolicy {
    /// Arrays with at most this many sites use every other site.
    std::size_t all_sites_up_to = 9;
    /// Otherwise, sites within radius_factor * nearest spacing (1.5 -> 8-connected).
    double radius_factor = 1.5;
};

/// 1-based site indices of the neighbors used by an MF-Array model, ascending.
std::vector<int> neighbor_sites(const SiteGeometry& sites, int target_site, const NeighborPolicy& policy);

struct FilterModel {
    FilterKind kind = FilterKind::MFSite;
    int site_index = 0;
    BoundarySpec boundary;
    std::vector<BoundarySpec> neighbors;  // MF-Array only
    std::vector<double> weights;          // MF kinds: feature weights W
    WeightMap pixel_weights;              // Gaussian only
    double threshold = 0.5;
    double bias_c = 1.0;
    double sigma = 0.0;      // Gaussian only
    double amplitude = 0.0;  // Gaussian only

    std::size_t feature_dim() const;
};

struct Prediction {
    double y_hat = 0.0;
    int y_bin = 0;
};

/// y_hat = W.x; bright iff y_hat >= threshold.
Prediction predict(const FilterModel& model, std::span<const double> features);

/// Raw score of a frame for any kind (square sum, Gaussian sum or W.x).
double score_frame(const FilterModel& model, const FrameView& frame);

inline int classify_score(double score, double threshold) { return score >= threshold ? 1 : 0; }

}  // namespace mfr
