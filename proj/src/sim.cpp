#include "mfr/sim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mfr/error.hpp"
#include "mfr/filters.hpp"
#include "mfr/parallel.hpp"
#include "mfr/rng.hpp"

namespace mfr {

PixelPos ArrayGeometry::site_center(int index) const {
    const int i = index / cols;
    const int j = index % cols;
    return {origin_px.row + spacing_px * i, origin_px.col + spacing_px * j};
}

void ArrayGeometry::validate(std::size_t height, std::size_t width) const {
    if (rows < 1 || cols < 1) throw ConfigError("geometry: rows and cols must be >= 1");
    if (!(spacing_px > 0.0)) throw ConfigError("geometry: spacing_px must be > 0");
    if (!(psf_sigma_px > 0.0)) throw ConfigError("geometry: psf_sigma_px must be > 0");
    for (int k = 0; k < n_sites(); ++k) {
        const PixelPos p = site_center(k);
        // Pixel centers span [0, h-1]; a site must sit strictly inside the covered area.
        if (!(p.row > -0.5 && p.row < static_cast<double>(height) - 0.5 && p.col > -0.5 &&
              p.col < static_cast<double>(width) - 0.5)) {
            throw ConfigError("geometry: site " + std::to_string(k + 1) + " lies outside the image");
        }
    }
}

void SimConfig::validate() const {
    if (image_height == 0 || image_width == 0) throw ConfigError("sim: image dimensions must be > 0");
    if (image_height > 65535 || image_width > 65535) throw ConfigError("sim: image dimensions exceed 65535");
    geometry.validate(image_height, image_width);
    if (!(exposure_ms > 0.0)) throw ConfigError("sim: exposure_ms must be > 0");
    if (!(p_bright >= 0.0 && p_bright <= 1.0)) throw ConfigError("sim: p_bright must lie in [0, 1]");
    if (!(attenuation > 0.0 && attenuation <= 1.0)) throw ConfigError("sim: attenuation must lie in (0, 1]");
    if (!(bright_photon_rate >= 0.0)) throw ConfigError("sim: bright_photon_rate must be >= 0");
    if (!(dark_count_rate >= 0.0)) throw ConfigError("sim: dark_count_rate must be >= 0");
    if (!(read_noise_sigma >= 0.0)) throw ConfigError("sim: read_noise_sigma must be >= 0");
    if (!(decay_prob_per_ms >= 0.0 && decay_prob_per_ms < 1.0))
        throw ConfigError("sim: decay_prob_per_ms must lie in [0, 1)");
}

std::vector<std::uint8_t> StateMatrix::column(std::size_t site) const {
    std::vector<std::uint8_t> out(n_images);
    for (std::size_t k = 0; k < n_images; ++k) out[k] = at(k, site);
    return out;
}

StateMatrix sample_states(std::size_t n_images, std::size_t n_sites, double p_bright, std::uint64_t seed) {
    if (!(p_bright >= 0.0 && p_bright <= 1.0)) throw ConfigError("sample_states: p_bright must lie in [0, 1]");
    StateMatrix states(n_images, n_sites);
    for (std::size_t k = 0; k < n_images; ++k) {
        auto rng = make_stream(seed, k, StreamPurpose::States);
        std::bernoulli_distribution bright(p_bright);
        for (std::size_t s = 0; s < n_sites; ++s) states.at(k, s) = bright(rng) ? 1 : 0;
    }
    return states;
}

void render_image(std::span<const std::uint8_t> states_row, const SimConfig& config, std::mt19937_64& rng,
                  std::span<float> out) {
    const auto& geom = config.geometry;
    const auto h = static_cast<long>(config.image_height);
    const auto w = static_cast<long>(config.image_width);
    if (states_row.size() != static_cast<std::size_t>(geom.n_sites()))
        throw DataError("render_image: states row length does not match the number of sites");
    if (out.size() != config.image_height * config.image_width)
        throw DataError("render_image: output buffer has the wrong size");

    std::fill(out.begin(), out.end(), 0.0f);
    std::normal_distribution<double> unit_normal(0.0, 1.0);

    const double full_mean = config.mean_bright_photons();
    const double decay_rate =
        config.decay_prob_per_ms > 0.0 ? -std::log1p(-config.decay_prob_per_ms) : 0.0;

    for (int site = 0; site < geom.n_sites(); ++site) {
        if (!states_row[site]) continue;
        double mean = full_mean;
        if (decay_rate > 0.0) {
            std::exponential_distribution<double> decay_time(decay_rate);
            const double t = decay_time(rng);
            if (t < config.exposure_ms) mean *= t / config.exposure_ms;
        }
        if (!(mean > 0.0)) continue;
        std::poisson_distribution<long> n_photons(mean);
        const long n = n_photons(rng);
        const PixelPos c = geom.site_center(site);
        for (long p = 0; p < n; ++p) {
            const double r = c.row + geom.psf_sigma_px * unit_normal(rng);
            const double q = c.col + geom.psf_sigma_px * unit_normal(rng);
            const long ir = static_cast<long>(std::floor(r + 0.5));
            const long ic = static_cast<long>(std::floor(q + 0.5));
            if (ir >= 0 && ir < h && ic >= 0 && ic < w) out[ir * w + ic] += 1.0f;
        }
    }

    const double background = config.dark_count_rate * config.exposure_ms;
    if (background > 0.0) {
        std::poisson_distribution<long> counts(background);
        for (auto& px : out) px += static_cast<float>(counts(rng));
    }
    if (config.read_noise_sigma > 0.0) {
        for (auto& px : out) px += static_cast<float>(config.read_noise_sigma * unit_normal(rng));
    }
}

ImageStack render_stack(const SimConfig& config, const StateMatrix& states, int threads, bool label_stream) {
    config.validate();
    if (states.n_sites != static_cast<std::size_t>(config.geometry.n_sites()))
        throw DataError("render_stack: state matrix has the wrong number of sites");
    ImageStack stack(states.n_images, config.image_height, config.image_width);
    const auto purpose = label_stream ? StreamPurpose::LabelRender : StreamPurpose::Render;
    parallel_for(states.n_images, threads, [&](std::size_t k) {
        auto rng = make_stream(config.seed, k, purpose);
        render_image(states.row(k), config, rng, stack.frame(k));
    });
    return stack;
}

LabeledImageStack generate_dataset(const SimConfig& config, int threads) {
    config.validate();
    LabeledImageStack out;
    out.config = config;
    out.truth = sample_states(config.n_images, static_cast<std::size_t>(config.geometry.n_sites()),
                              config.p_bright, config.seed);
    out.images = render_stack(config, out.truth, threads);
    return out;
}

StateMatrix generate_label_path(const SimConfig& config, const StateMatrix& truth,
                                const LabelPathOptions& options, int threads) {
    SimConfig label_config = config;
    label_config.attenuation = options.attenuation;
    label_config.bright_photon_rate = config.bright_photon_rate * options.rate_scale;
    const ImageStack stack = render_stack(label_config, truth, threads, /*label_stream=*/true);

    const auto n_sites = static_cast<std::size_t>(config.geometry.n_sites());
    StateMatrix labels(truth.n_images, n_sites);
    if (truth.n_images == 0) return labels;
    parallel_for(n_sites, threads, [&](std::size_t site) {
        SiteFit nominal;
        nominal.site_index = static_cast<int>(site) + 1;
        nominal.center = config.geometry.site_center(static_cast<int>(site));
        nominal.sigma = config.geometry.psf_sigma_px;
        nominal.amplitude = 1.0;
        const WeightMap weights =
            gaussian_weight_map(nominal, options.gaussian_cutoff, stack.height(), stack.width());
        std::vector<double> scores(stack.size());
        for (std::size_t k = 0; k < stack.size(); ++k) scores[k] = gaussian_score(stack.view(k), weights);
        const double threshold = mixture_threshold(scores);
        for (std::size_t k = 0; k < stack.size(); ++k)
            labels.at(k, site) = static_cast<std::uint8_t>(classify_score(scores[k], threshold));
    });
    return labels;
}

}  // namespace mfr
