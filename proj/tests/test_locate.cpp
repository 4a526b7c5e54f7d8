#include <doctest.h>

#include <cmath>
#include <random>

#include "mfr/error.hpp"
#include "mfr/locate.hpp"
#include "mfr/sim.hpp"

using namespace mfr;

namespace {

Image gaussian_image(std::size_t h, std::size_t w, double a, PixelPos c, double sigma, double b) {
    Image im(h, w, b);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t q = 0; q < w; ++q) {
            const double dr = static_cast<double>(r) - c.row;
            const double dc = static_cast<double>(q) - c.col;
            im.at(r, q) += a * std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
        }
    return im;
}

ImageStack random_stack(std::size_t n, std::size_t h, std::size_t w, unsigned seed) {
    ImageStack s(n, h, w);
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(-2.0f, 5.0f);
    for (auto& v : s.data()) v = u(rng);
    return s;
}

}  // namespace

TEST_CASE("crop identity, shape and composition") {
    const ImageStack s = random_stack(3, 10, 12, 1);
    CHECK(crop(s, 0, 0, 10, 12) == s);

    const ImageStack big = random_stack(2, 442, 62, 2);
    const ImageStack small = crop(big, 200, 17, 28, 28);
    CHECK(small.size() == 2);
    CHECK(small.height() == 28);
    CHECK(small.width() == 28);
    CHECK(small.at(1, 0, 0) == big.at(1, 200, 17));
    CHECK(small.at(1, 27, 27) == big.at(1, 227, 44));

    const ImageStack twice = crop(crop(s, 1, 2, 8, 9), 2, 3, 4, 5);
    CHECK(twice == crop(s, 3, 5, 4, 5));

    CHECK_THROWS_AS(crop(s, 5, 0, 6, 12), ConfigError);
    CHECK_THROWS_AS(crop(s, 0, 0, 0, 12), ConfigError);
}

TEST_CASE("fit_stats hand example and degenerate stack") {
    ImageStack s(2, 2, 2);
    s.at(1, 0, 1) = 2.0f;
    const PreprocessStats st = fit_stats(s);
    CHECK(st.train_mean == doctest::Approx(0.25));
    CHECK(st.train_range == doctest::Approx(2.0));

    ImageStack flat(3, 2, 2);
    for (auto& v : flat.data()) v = 4.0f;
    CHECK_THROWS_AS(fit_stats(flat), DataError);
}

TEST_CASE("fit_stats reads only the listed frames") {
    ImageStack s(3, 2, 2);
    for (std::size_t p = 0; p < 4; ++p) {
        s.frame(0)[p] = static_cast<float>(p);
        s.frame(1)[p] = 100.0f;  // never listed
        s.frame(2)[p] = static_cast<float>(2 * p);
    }
    const std::vector<std::size_t> train{0, 2};
    const PreprocessStats st = fit_stats(s, train);
    CHECK(st.train_mean == doctest::Approx((0 + 1 + 2 + 3 + 0 + 2 + 4 + 6) / 8.0));
    CHECK(st.train_range == doctest::Approx(6.0));
    const std::vector<std::size_t> bad{5};
    CHECK_THROWS_AS(fit_stats(s, bad), DataError);
}

TEST_CASE("apply_stats is affine with an exact inverse") {
    const ImageStack s = random_stack(4, 5, 6, 3);
    const PreprocessStats st = fit_stats(s);

    ImageStack at_mean(1, 2, 2);
    for (auto& v : at_mean.data()) v = static_cast<float>(st.train_mean);
    const ImageStack zeroed = apply_stats(at_mean, st);
    for (float v : zeroed.data()) CHECK(v == doctest::Approx(0.0).epsilon(1e-6));

    CHECK(apply_stats(s, PreprocessStats{0.0, 1.0}) == s);

    const ImageStack n = apply_stats(s, st);
    const ImageStack back = invert_stats(n, st);
    for (std::size_t i = 0; i < s.data().size(); ++i)
        CHECK(back.data()[i] == doctest::Approx(s.data()[i]).epsilon(1e-6));
    for (std::size_t i = 0; i < s.data().size(); ++i)
        CHECK(n.data()[i] == doctest::Approx((s.data()[i] - st.train_mean) / st.train_range).epsilon(1e-6));

    // Same stats applied to a scaled stack, no refit.
    ImageStack scaled = s;
    for (auto& v : scaled.data()) v *= 2.0f;
    const ImageStack ns = apply_stats(scaled, st);
    for (std::size_t i = 0; i < s.data().size(); ++i)
        CHECK(ns.data()[i] == doctest::Approx((2.0 * s.data()[i] - st.train_mean) / st.train_range).epsilon(1e-6));

    std::vector<float> px(s.frame(1).begin(), s.frame(1).end());
    apply_stats_inplace(px, st);
    for (std::size_t i = 0; i < px.size(); ++i) CHECK(px[i] == n.frame(1)[i]);
}

TEST_CASE("mean_image") {
    const ImageStack s = random_stack(1, 3, 3, 4);
    const Image m = mean_image(s);
    for (std::size_t p = 0; p < 9; ++p) CHECK(m.pixels[p] == doctest::Approx(s.frame(0)[p]));

    ImageStack pm(2, 3, 3);
    for (std::size_t p = 0; p < 9; ++p) {
        pm.frame(0)[p] = static_cast<float>(p) - 4.0f;
        pm.frame(1)[p] = 4.0f - static_cast<float>(p);
    }
    for (double v : mean_image(pm).pixels) CHECK(v == 0.0);
    CHECK_THROWS_AS(mean_image(ImageStack(0, 3, 3)), DataError);
}

TEST_CASE("find_peaks single blob and exclusion") {
    const Image one = gaussian_image(20, 20, 3.0, {8.2, 11.7}, 1.5, 0.0);
    const auto p = find_peaks(one, 3.0, 1);
    REQUIRE(p.size() == 1);
    CHECK(p[0].row == 8.0);
    CHECK(p[0].col == 12.0);

    Image two = gaussian_image(20, 20, 3.0, {8.0, 8.0}, 1.0, 0.0);
    const Image other = gaussian_image(20, 20, 2.0, {8.0, 10.0}, 1.0, 0.0);
    for (std::size_t i = 0; i < two.pixels.size(); ++i) two.pixels[i] = std::max(two.pixels[i], other.pixels[i]);
    CHECK_THROWS_AS(find_peaks(two, 3.0, 2), DataError);
    CHECK(find_peaks(two, 1.5, 2).size() == 2);
    CHECK_THROWS_AS(find_peaks(two, 1.5, 0), ConfigError);
}

TEST_CASE("find_peaks is row-major and tie-stable") {
    Image im(12, 12, 0.0);
    // Equal heights: ties break by (row, col); output is row-major regardless.
    im.at(9, 2) = 1.0;
    im.at(2, 9) = 1.0;
    im.at(2, 2) = 1.0;
    im.at(9, 9) = 1.0;
    im.at(5, 5) = 0.5;
    const auto p = find_peaks(im, 2.0, 4);
    REQUIRE(p.size() == 4);
    CHECK(p[0].row == 2.0);
    CHECK(p[0].col == 2.0);
    CHECK(p[1].row == 2.0);
    CHECK(p[1].col == 9.0);
    CHECK(p[2].row == 9.0);
    CHECK(p[2].col == 2.0);
    CHECK(p[3].row == 9.0);
    CHECK(p[3].col == 9.0);

    // A transposed image gives transposed peaks.
    Image t(12, 12, 0.0);
    for (std::size_t r = 0; r < 12; ++r)
        for (std::size_t c = 0; c < 12; ++c) t.at(c, r) = im.at(r, c);
    const auto pt = find_peaks(t, 2.0, 4);
    CHECK(pt.size() == 4);
}

TEST_CASE("fit_gaussian_2d recovers a noiseless Gaussian") {
    const Image im = gaussian_image(28, 28, 5.0, {13.4, 14.2}, 1.8, 0.0);
    const GaussianFit fit = fit_gaussian_2d(im, {13.0, 14.0}, 5);
    CHECK(fit.converged);
    CHECK_FALSE(fit.fallback);
    CHECK(fit.amplitude == doctest::Approx(5.0).epsilon(1e-3));
    CHECK(std::abs(fit.center.row - 13.4) < 1e-3);
    CHECK(std::abs(fit.center.col - 14.2) < 1e-3);
    CHECK(std::abs(fit.sigma - 1.8) < 1e-3);
    CHECK(std::abs(fit.offset) < 1e-3);
    CHECK(fit.iterations <= 100);

    const Image with_offset = gaussian_image(28, 28, 2.0, {10.7, 9.1}, 2.2, 0.4);
    const GaussianFit f2 = fit_gaussian_2d(with_offset, {11.0, 9.0}, 6);
    CHECK(f2.converged);
    CHECK(f2.offset == doctest::Approx(0.4).epsilon(1e-3));
    CHECK(f2.sigma == doctest::Approx(2.2).epsilon(1e-3));
}

TEST_CASE("fit_gaussian_2d symmetric image and monotone cost") {
    Image im(15, 15, 0.0);
    for (std::size_t r = 0; r < 15; ++r)
        for (std::size_t c = 0; c < 15; ++c) {
            const double d2 = std::pow(r - 7.0, 2) + std::pow(c - 7.0, 2);
            im.at(r, c) = 1.0 / (1.0 + d2 / 4.0);  // not Gaussian, but symmetric about (7,7)
        }
    const GaussianFit fit = fit_gaussian_2d(im, {7.0, 7.0}, 4);
    CHECK(fit.converged);
    CHECK(std::abs(fit.center.row - 7.0) < 1e-6);
    CHECK(std::abs(fit.center.col - 7.0) < 1e-6);
    REQUIRE(fit.cost_history.size() >= 2);
    for (std::size_t i = 1; i < fit.cost_history.size(); ++i) CHECK(fit.cost_history[i] <= fit.cost_history[i - 1]);
}

TEST_CASE("fit_gaussian_2d flags a centroid fallback") {
    Image flat(11, 11, 1.0);
    const GaussianFit fit = fit_gaussian_2d(flat, {5.0, 5.0}, 3);
    CHECK(fit.fallback);
    CHECK_FALSE(fit.converged);
    CHECK(std::isfinite(fit.center.row));
    CHECK_THROWS_AS(fit_gaussian_2d(flat, {5.0, 5.0}, 0), ConfigError);
}

TEST_CASE("joint fit separates overlapping spots") {
    ArrayGeometry g;
    g.psf_sigma_px = 2.4;
    Image im(28, 28, 0.2);
    for (int s = 0; s < 9; ++s) {
        const Image spot = gaussian_image(28, 28, 1.5, g.site_center(s), 2.4, 0.0);
        for (std::size_t p = 0; p < im.pixels.size(); ++p) im.pixels[p] += spot.pixels[p];
    }
    LocateOptions o;
    const SiteGeometry sites = locate_sites(im, o);
    REQUIRE(sites.size() == 9);
    for (int s = 0; s < 9; ++s) {
        CHECK(sites[s].site_index == s + 1);
        CHECK(std::abs(sites[s].center.row - g.site_center(s).row) < 1e-3);
        CHECK(std::abs(sites[s].center.col - g.site_center(s).col) < 1e-3);
        CHECK(std::abs(sites[s].sigma - 2.4) < 1e-3);
    }
}

TEST_CASE("localization pipeline on simulated frames") {
    SimConfig c;
    c.n_images = 1000;
    c.seed = 17;
    const auto data = generate_dataset(c);
    const Image mean = mean_image(data.images);

    const auto peaks = find_peaks(mean, c.geometry.spacing_px / 2.0, 9);
    REQUIRE(peaks.size() == 9);
    for (int s = 0; s < 9; ++s) {
        const PixelPos truth = c.geometry.site_center(s);
        CHECK(std::abs(peaks[s].row - truth.row) <= 1.0);
        CHECK(std::abs(peaks[s].col - truth.col) <= 1.0);
    }

    LocateOptions o;
    o.min_distance_px = c.geometry.spacing_px / 2.0;
    const SiteGeometry sites = locate_sites(mean, o);
    for (int s = 0; s < 9; ++s) {
        const PixelPos truth = c.geometry.site_center(s);
        CHECK(std::hypot(sites[s].center.row - truth.row, sites[s].center.col - truth.col) < 0.1);
        CHECK(sites[s].sigma > 0.0);
    }
    const GridShape grid = infer_grid(sites);
    CHECK(grid.rows == 3);
    CHECK(grid.cols == 3);
}

TEST_CASE("crowded dim array keeps one fit per site") {
    // psf = spacing / 2.5 at short exposure: noise on the merged plateau can outrank a corner peak.
    // Each mean covers 3600 frames, the training share of a 6000-frame run.
    SimConfig c;
    c.geometry.psf_sigma_px = 2.4;
    c.exposure_ms = 18.0;
    c.n_images = 7200;
    c.seed = 2;
    const auto data = generate_dataset(c);
    LocateOptions o;
    for (std::uint64_t part = 0; part < 2; ++part) {
        std::vector<std::size_t> frames;
        for (std::size_t k = part; k < c.n_images; k += 2) frames.push_back(k);
        const SiteGeometry sites = locate_sites(mean_image(data.images, frames), o);
        REQUIRE(sites.size() == 9);
        for (int s = 0; s < 9; ++s) {
            const PixelPos truth = c.geometry.site_center(s);
            CHECK(std::hypot(sites[s].center.row - truth.row, sites[s].center.col - truth.col) < 0.75);
            for (int t = s + 1; t < 9; ++t) CHECK(std::hypot(sites[s].center.row - sites[t].center.row,
                                                             sites[s].center.col - sites[t].center.col) >= 2.0);
        }
    }
}

TEST_CASE("joint fit rejects a center that would leave its anchor") {
    Image im(20, 20, 0.0);
    const Image spot = gaussian_image(20, 20, 1.0, {10.0, 10.0}, 2.0, 0.0);
    im.pixels = spot.pixels;
    SiteGeometry start(1);
    start[0].center = {5.0, 5.0};
    start[0].sigma = 2.0;
    start[0].amplitude = 0.1;
    double cost = -1.0;
    const bool ok = fit_gaussians_joint(im, start, 1.0, &cost);
    if (ok) {
        CHECK(std::hypot(start[0].center.row - 5.0, start[0].center.col - 5.0) <= 1.0 + 1e-9);
        CHECK(cost > 0.0);
    }
    SiteGeometry near(1);
    near[0].center = {10.4, 9.7};
    near[0].sigma = 1.5;
    near[0].amplitude = 0.5;
    REQUIRE(fit_gaussians_joint(im, near, 2.0, &cost));
    CHECK(std::abs(near[0].center.row - 10.0) < 1e-4);
    CHECK(std::abs(near[0].sigma - 2.0) < 1e-4);
    CHECK(cost < 1e-12);
}
