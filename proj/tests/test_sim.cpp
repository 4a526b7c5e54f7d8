#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mfr/error.hpp"
#include "mfr/rng.hpp"
#include "mfr/sim.hpp"

using namespace mfr;

namespace {

SimConfig quiet_config() {
    SimConfig c;
    c.dark_count_rate = 0.0;
    c.read_noise_sigma = 0.0;
    return c;
}

// One site in the middle of a 41x41 frame, so no photons fall off the edge.
SimConfig single_site(double photons) {
    SimConfig c = quiet_config();
    c.geometry.rows = 1;
    c.geometry.cols = 1;
    c.geometry.origin_px = {20.3, 19.6};
    c.image_height = 41;
    c.image_width = 41;
    c.attenuation = 1.0;
    c.exposure_ms = 1.0;
    c.bright_photon_rate = photons;
    return c;
}

double label_error_rate(const StateMatrix& a, const StateMatrix& b) {
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) wrong += a.values[i] != b.values[i];
    return static_cast<double>(wrong) / static_cast<double>(a.values.size());
}

}  // namespace

TEST_CASE("sample_states degenerate probabilities") {
    const auto zeros = sample_states(50, 9, 0.0, 3);
    const auto ones = sample_states(50, 9, 1.0, 3);
    CHECK(std::all_of(zeros.values.begin(), zeros.values.end(), [](auto v) { return v == 0; }));
    CHECK(std::all_of(ones.values.begin(), ones.values.end(), [](auto v) { return v == 1; }));
    CHECK_THROWS_AS(sample_states(5, 9, 1.5, 3), ConfigError);
}

TEST_CASE("sample_states bright fraction within binomial bound") {
    const auto s = sample_states(10000, 1, 0.5, 11);
    const double frac = std::accumulate(s.values.begin(), s.values.end(), 0.0) / 10000.0;
    CHECK(std::abs(frac - 0.5) < 0.02);
}

TEST_CASE("sample_states rows depend only on (seed, row)") {
    const auto a = sample_states(20, 9, 0.5, 99);
    const auto b = sample_states(40, 9, 0.5, 99);
    for (std::size_t k = 0; k < 20; ++k)
        for (std::size_t s = 0; s < 9; ++s) CHECK(a.at(k, s) == b.at(k, s));
    CHECK(sample_states(40, 9, 0.5, 100).values != b.values);
}

TEST_CASE("render_image all dark without noise is zero") {
    const SimConfig c = quiet_config();
    std::vector<std::uint8_t> row(9, 0);
    std::vector<float> out(c.image_height * c.image_width, 5.0f);
    auto rng = make_stream(1, 0, StreamPurpose::Render);
    render_image(row, c, rng, out);
    CHECK(std::all_of(out.begin(), out.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("render_image rejects bad sizes") {
    const SimConfig c = quiet_config();
    std::vector<std::uint8_t> row(8, 0);
    std::vector<float> out(c.image_height * c.image_width);
    auto rng = make_stream(1, 0, StreamPurpose::Render);
    CHECK_THROWS_AS(render_image(row, c, rng, out), DataError);
    std::vector<std::uint8_t> good(9, 0);
    std::vector<float> small(10);
    CHECK_THROWS_AS(render_image(good, c, rng, small), DataError);
}

TEST_CASE("PSF sampler centroid and 3 sigma mass") {
    const SimConfig c = single_site(1e6);
    std::vector<std::uint8_t> row{1};
    std::vector<float> img(c.image_height * c.image_width);
    auto rng = make_stream(5, 0, StreamPurpose::Render);
    render_image(row, c, rng, img);

    double total = 0.0, mr = 0.0, mc = 0.0;
    for (std::size_t r = 0; r < c.image_height; ++r)
        for (std::size_t q = 0; q < c.image_width; ++q) {
            const double v = img[r * c.image_width + q];
            total += v;
            mr += v * static_cast<double>(r);
            mc += v * static_cast<double>(q);
        }
    const PixelPos center = c.geometry.site_center(0);
    CHECK(std::abs(mr / total - center.row) < 0.02);
    CHECK(std::abs(mc / total - center.col) < 0.02);

    // Continuous 2D Gaussian mass within radius R*sigma is 1 - exp(-R^2/2).
    const double sigma = c.geometry.psf_sigma_px;
    const double oracle = 1.0 - std::exp(-4.5);
    double inside = 0.0;
    for (std::size_t r = 0; r < c.image_height; ++r)
        for (std::size_t q = 0; q < c.image_width; ++q) {
            const double d = std::hypot(static_cast<double>(r) - center.row, static_cast<double>(q) - center.col);
            if (d <= 3.0 * sigma) inside += img[r * c.image_width + q];
        }
    CHECK(inside / total >= 0.98);
    CHECK(std::abs(inside / total - oracle) < 0.01);
}

TEST_CASE("total counts are Poisson: mean equals variance") {
    SimConfig c = single_site(30.0);
    c.dark_count_rate = 0.01;  // background stays Poisson
    c.n_images = 10000;
    c.p_bright = 1.0;
    const auto data = generate_dataset(c);
    std::vector<double> totals(c.n_images);
    for (std::size_t k = 0; k < c.n_images; ++k) {
        const auto f = data.images.frame(k);
        totals[k] = std::accumulate(f.begin(), f.end(), 0.0);
    }
    const double n = static_cast<double>(totals.size());
    const double mean = std::accumulate(totals.begin(), totals.end(), 0.0) / n;
    double var = 0.0;
    for (double t : totals) var += (t - mean) * (t - mean);
    var /= n - 1.0;
    const double expected = 30.0 + 0.01 * static_cast<double>(c.image_height * c.image_width);
    CHECK(std::abs(mean - expected) < 3.0 * std::sqrt(expected / n));
    CHECK(std::abs(var / mean - 1.0) < 0.05);

    // Per-pixel moment check on the brightest pixel.
    const PixelPos center = c.geometry.site_center(0);
    const std::size_t pr = static_cast<std::size_t>(std::lround(center.row));
    const std::size_t pc = static_cast<std::size_t>(std::lround(center.col));
    double pm = 0.0, pv = 0.0;
    for (std::size_t k = 0; k < c.n_images; ++k) pm += data.images.at(k, pr, pc);
    pm /= n;
    for (std::size_t k = 0; k < c.n_images; ++k) pv += std::pow(data.images.at(k, pr, pc) - pm, 2);
    pv /= n - 1.0;
    CHECK(pm > 1.0);
    CHECK(std::abs(pv / pm - 1.0) < 0.05);
}

TEST_CASE("mean intensity is linear in the number of bright atoms") {
    SimConfig c;
    c.n_images = 2000;
    c.seed = 21;
    const auto data = generate_dataset(c);
    // Least-squares slope of total intensity against bright count.
    std::vector<double> x, y;
    for (std::size_t k = 0; k < c.n_images; ++k) {
        const auto row = data.truth.row(k);
        x.push_back(std::accumulate(row.begin(), row.end(), 0.0));
        const auto f = data.images.frame(k);
        y.push_back(std::accumulate(f.begin(), f.end(), 0.0));
    }
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    const double slope = sxy / sxx;
    double rss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) rss += std::pow(y[i] - my - slope * (x[i] - mx), 2);
    const double slope_se = std::sqrt(rss / (n - 2.0) / sxx);
    CHECK(std::abs(slope - c.mean_bright_photons()) < 3.0 * slope_se);
}

TEST_CASE("decay truncation lowers the mean photon count") {
    SimConfig c = single_site(40.0);
    c.exposure_ms = 10.0;
    c.attenuation = 0.1;
    c.decay_prob_per_ms = 0.05;
    c.p_bright = 1.0;
    c.n_images = 20000;
    const auto data = generate_dataset(c);
    const double total = std::accumulate(data.images.data().begin(), data.images.data().end(), 0.0);
    const double mean = total / static_cast<double>(c.n_images);
    // E[min(t, T)] / T for t ~ Exp(lambda), lambda = -ln(1 - p).
    const double lambda = -std::log1p(-c.decay_prob_per_ms);
    const double lt = lambda * c.exposure_ms;
    const double expected = c.mean_bright_photons() * (1.0 - std::exp(-lt)) / lt;
    CHECK(mean < c.mean_bright_photons());
    CHECK(std::abs(mean - expected) / expected < 0.01);
}

TEST_CASE("generate_dataset shape and determinism") {
    SimConfig c;
    c.n_images = 0;
    const auto empty = generate_dataset(c);
    CHECK(empty.images.size() == 0);
    CHECK(empty.truth.n_images == 0);

    c.n_images = 6002;
    const auto full = generate_dataset(c);
    CHECK(full.images.size() == 6002);
    CHECK(full.truth.n_images == 6002);
    CHECK(full.truth.n_sites == 9);

    c.n_images = 300;
    const auto a = generate_dataset(c, 1);
    const auto b = generate_dataset(c, 3);
    CHECK(a.images == b.images);
    CHECK(a.truth == b.truth);
    c.seed = 2;
    CHECK_FALSE(generate_dataset(c).images == a.images);
}

TEST_CASE("config validation") {
    SimConfig c;
    c.geometry.origin_px = {-3.0, 5.0};
    CHECK_THROWS_AS(generate_dataset(c), ConfigError);
    c = SimConfig{};
    c.exposure_ms = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SimConfig{};
    c.attenuation = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SimConfig{};
    c.p_bright = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SimConfig{};
    c.geometry.psf_sigma_px = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("label path accuracy") {
    SimConfig c;
    c.n_images = 10000;
    c.seed = 8;
    const auto data = generate_dataset(c);

    LabelPathOptions high;
    high.attenuation = 1.0;
    high.rate_scale = 10.0;
    const auto high_labels = generate_label_path(c, data.truth, high);
    const double high_err = label_error_rate(high_labels, data.truth);
    CHECK(high_err < 1e-3);

    LabelPathOptions low;
    low.attenuation = 0.05;
    const auto low_labels = generate_label_path(c, data.truth, low);
    CHECK(label_error_rate(low_labels, data.truth) > high_err);
}

TEST_CASE("noiseless label path equals truth") {
    SimConfig c = quiet_config();
    c.n_images = 500;
    const auto data = generate_dataset(c);
    CHECK(generate_label_path(c, data.truth) == data.truth);
}

TEST_CASE("stream derivation") {
    CHECK(hash_combine(1, 2) == hash_combine(1, 2));
    CHECK(hash_combine(1, 2) != hash_combine(2, 1));
    auto a = make_stream(7, 3, StreamPurpose::Render);
    auto b = make_stream(7, 3, StreamPurpose::Render);
    auto d = make_stream(7, 3, StreamPurpose::LabelRender);
    const auto va = a();
    CHECK(va == b());
    CHECK(va != d());
}
