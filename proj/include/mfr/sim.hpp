#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mfr/image.hpp"

namespace mfr {

/// Rectangular qubit grid. Site (i, j) sits at origin + spacing * (i, j);
/// sites are numbered 1..rows*cols in row-major order.
struct ArrayGeometry {
    int rows = 3;
    int cols = 3;
    double spacing_px = 6.0;
    PixelPos origin_px{7.6, 7.3};
    double psf_sigma_px = 1.8;

    int n_sites() const { return rows * cols; }
    /// Nominal center of the 0-based site index.
    PixelPos site_center(int index) const;
    /// Throws ConfigError on bad fields or centers outside an h x w image.
    void validate(std::size_t height, std::size_t width) const;
};

struct SimConfig {
    ArrayGeometry geometry;
    std::size_t image_height = 28;
    std::size_t image_width = 28;
    double exposure_ms = 36.0;
    double bright_photon_rate = 12.0;  // photons/ms per bright atom on the unattenuated path
    double attenuation = 0.05;
    double dark_count_rate = 0.004;    // photons/ms/pixel
    double read_noise_sigma = 0.3;     // counts/pixel
    double p_bright = 0.5;
    double decay_prob_per_ms = 0.0;
    std::uint64_t seed = 1;
    std::size_t n_images = 6002;

    void validate() const;
    /// Mean detected photons from one bright atom over a full exposure.
    double mean_bright_photons() const { return bright_photon_rate * attenuation * exposure_ms; }
};

/// n_images x n_sites binary matrix, 1 = bright.
struct StateMatrix {
    std::size_t n_images = 0;
    std::size_t n_sites = 0;
    std::vector<std::uint8_t> values;

    StateMatrix() = default;
    StateMatrix(std::size_t n, std::size_t sites) : n_images(n), n_sites(sites), values(n * sites, 0) {}

    std::uint8_t at(std::size_t image, std::size_t site) const { return values[image * n_sites + site]; }
    std::uint8_t& at(std::size_t image, std::size_t site) { return values[image * n_sites + site]; }
    std::span<const std::uint8_t> row(std::size_t image) const {
        return {values.data() + image * n_sites, n_sites};
    }
    /// Column for one site, gathered over all images.
    std::vector<std::uint8_t> column(std::size_t site) const;

    bool operator==(const StateMatrix&) const = default;
};

struct LabeledImageStack {
    ImageStack images;
    StateMatrix truth;
    SimConfig config;
};

/// Row k is drawn from stream (seed, k), so rows never depend on one another.
StateMatrix sample_states(std::size_t n_images, std::size_t n_sites, double p_bright, std::uint64_t seed);

/// Renders one frame into `out` (height*width floats). Photons are sampled individually
/// from the PSF and binned; background and read noise are added per pixel.
void render_image(std::span<const std::uint8_t> states_row, const SimConfig& config, std::mt19937_64& rng,
                  std::span<float> out);

LabeledImageStack generate_dataset(const SimConfig& config, int threads = 1);

/// Renders the frames for given states (image k uses stream (seed, k, purpose)).
ImageStack render_stack(const SimConfig& config, const StateMatrix& states, int threads = 1,
                        bool label_stream = false);

struct LabelPathOptions {
    double attenuation = 1.0;
    double rate_scale = 1.0;
    double gaussian_cutoff = 1e-3;
};

/// Renders the high-SNR stack for `truth` and classifies every site with an unsupervised
/// Gaussian filter (nominal geometry, mixture-model threshold). Returns the labels.
StateMatrix generate_label_path(const SimConfig& config, const StateMatrix& truth,
                                const LabelPathOptions& options = {}, int threads = 1);

}  // namespace mfr
