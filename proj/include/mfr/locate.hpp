#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mfr/image.hpp"

namespace mfr {

/// Affine normalization fitted on training frames: out = (in - train_mean) / train_range.
struct PreprocessStats {
    double train_mean = 0.0;
    double train_range = 1.0;
};

/// One localized qubit site.
struct SiteFit {
    int site_index = 0;  // 1-based, row-major
    PixelPos center;
    double sigma = 0.0;
    double amplitude = 0.0;
    double offset = 0.0;
    bool fit_failed = false;  // true when the centroid fallback was used
};

using SiteGeometry = std::vector<SiteFit>;

ImageStack crop(const ImageStack& stack, std::size_t top, std::size_t left, std::size_t height,
                std::size_t width);

/// Stats over the listed frames only (all frames when `frames` is empty).
PreprocessStats fit_stats(const ImageStack& stack, std::span<const std::size_t> frames = {});

ImageStack apply_stats(const ImageStack& stack, const PreprocessStats& stats);
void apply_stats_inplace(std::span<float> pixels, const PreprocessStats& stats);
ImageStack invert_stats(const ImageStack& stack, const PreprocessStats& stats);

Image mean_image(const ImageStack& stack, std::span<const std::size_t> frames = {});

/// Local maxima (8-neighborhood, strict against earlier-ordered equal pixels), chosen greedily by
/// descending intensity with ties in (row, col) order, keeping only peaks farther than
/// `min_distance_px` from every accepted one. Returns exactly `n_expected` peaks in row-major
/// site order (rows grouped within min_distance/2).
std::vector<PixelPos> find_peaks(const Image& image, double min_distance_px, std::size_t n_expected);

struct GaussianFit {
    PixelPos center;
    double sigma = 0.0;
    double amplitude = 0.0;
    double offset = 0.0;
    bool converged = false;
    bool fallback = false;
    int iterations = 0;
    /// Residual sum of squares after each accepted step, starting with the initial guess.
    std::vector<double> cost_history;
};

/// Circular Gaussian A*exp(-((r-r0)^2+(c-c0)^2)/(2 sigma^2)) + b fitted by Levenberg-Marquardt
/// over the (2*window_radius+1)^2 window around `initial_center`.
GaussianFit fit_gaussian_2d(const Image& image, PixelPos initial_center, int window_radius);

struct LocateOptions {
    std::size_t n_sites = 9;
    double min_distance_px = 3.0;
    int window_radius = 3;
    /// Refine the per-window fits with one joint fit of every site over the whole image.
    bool joint_refine = true;
};

/// Sum of circular Gaussians with one shared offset, fitted jointly over the whole image from
/// the centers, amplitudes and offsets in `sites`. A fit with one common width comes first, then
/// per-site widths; the lower-cost converged stage is kept. Steps that move a center more than
/// `max_shift_px` are rejected. Same damping and stopping rules as fit_gaussian_2d. Returns false
/// (leaving `sites` untouched) when the common-width fit does not converge; `cost` receives the
/// final sum of squared residuals.
bool fit_gaussians_joint(const Image& image, SiteGeometry& sites, double max_shift_px, double* cost = nullptr);

/// mean image -> find_peaks -> fit_gaussian_2d per peak, then the joint refinement, seeded both
/// from the peaks and from greedy PSF subtraction (lower cost wins). Sites come back row-major.
SiteGeometry locate_sites(const Image& mean, const LocateOptions& options);

/// Number of distinct rows/cols in a located row-major geometry.
struct GridShape {
    int rows = 0;
    int cols = 0;
};
GridShape infer_grid(const SiteGeometry& sites);

}  // namespace mfr
