#include "mfr/locate.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>

#include "mfr/error.hpp"

namespace mfr {
namespace {

std::vector<std::size_t> all_frames_if_empty(const ImageStack& stack, std::span<const std::size_t> frames) {
    std::vector<std::size_t> out(frames.begin(), frames.end());
    if (out.empty()) {
        out.resize(stack.size());
        std::iota(out.begin(), out.end(), std::size_t{0});
    }
    return out;
}

double distance(const PixelPos& a, const PixelPos& b) { return std::hypot(a.row - b.row, a.col - b.col); }

/// Groups positions into rows (consecutive row gaps <= tolerance) and sorts each by column.
template <typename T, typename Pos>
void order_row_major(std::vector<T>& items, double tolerance, Pos pos) {
    std::stable_sort(items.begin(), items.end(),
                     [&](const T& a, const T& b) { return pos(a).row < pos(b).row; });
    std::size_t begin = 0;
    for (std::size_t i = 1; i <= items.size(); ++i) {
        if (i == items.size() || pos(items[i]).row - pos(items[i - 1]).row > tolerance) {
            std::stable_sort(items.begin() + static_cast<long>(begin), items.begin() + static_cast<long>(i),
                             [&](const T& a, const T& b) { return pos(a).col < pos(b).col; });
            begin = i;
        }
    }
}

}  // namespace

ImageStack crop(const ImageStack& stack, std::size_t top, std::size_t left, std::size_t height,
                std::size_t width) {
    if (height == 0 || width == 0 || top + height > stack.height() || left + width > stack.width()) {
        throw ConfigError("crop: rectangle " + std::to_string(top) + "," + std::to_string(left) + "," +
                          std::to_string(height) + "," + std::to_string(width) + " exceeds " +
                          std::to_string(stack.height()) + "x" + std::to_string(stack.width()));
    }
    ImageStack out(stack.size(), height, width);
    for (std::size_t k = 0; k < stack.size(); ++k)
        for (std::size_t r = 0; r < height; ++r)
            for (std::size_t c = 0; c < width; ++c) out.at(k, r, c) = stack.at(k, top + r, left + c);
    return out;
}

PreprocessStats fit_stats(const ImageStack& stack, std::span<const std::size_t> frames) {
    const auto idx = all_frames_if_empty(stack, frames);
    if (idx.empty() || stack.frame_pixels() == 0) throw DataError("fit_stats: no training frames");
    double sum = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t k : idx) {
        if (k >= stack.size()) throw DataError("fit_stats: frame index out of range");
        for (float v : stack.frame(k)) {
            sum += v;
            lo = std::min(lo, static_cast<double>(v));
            hi = std::max(hi, static_cast<double>(v));
        }
    }
    const double range = hi - lo;
    if (!(range > 0.0)) throw DataError("fit_stats: training frames are constant (zero intensity range)");
    return {sum / static_cast<double>(idx.size() * stack.frame_pixels()), range};
}

void apply_stats_inplace(std::span<float> pixels, const PreprocessStats& stats) {
    for (auto& v : pixels)
        v = static_cast<float>((static_cast<double>(v) - stats.train_mean) / stats.train_range);
}

ImageStack apply_stats(const ImageStack& stack, const PreprocessStats& stats) {
    ImageStack out = stack;
    apply_stats_inplace(out.data(), stats);
    return out;
}

ImageStack invert_stats(const ImageStack& stack, const PreprocessStats& stats) {
    ImageStack out = stack;
    for (auto& v : out.data())
        v = static_cast<float>(static_cast<double>(v) * stats.train_range + stats.train_mean);
    return out;
}

Image mean_image(const ImageStack& stack, std::span<const std::size_t> frames) {
    const auto idx = all_frames_if_empty(stack, frames);
    if (idx.empty()) throw DataError("mean_image: no frames");
    Image out(stack.height(), stack.width());
    for (std::size_t k : idx) {
        const auto f = stack.frame(k);
        for (std::size_t p = 0; p < f.size(); ++p) out.pixels[p] += f[p];
    }
    for (auto& v : out.pixels) v /= static_cast<double>(idx.size());
    return out;
}

std::vector<PixelPos> find_peaks(const Image& image, double min_distance_px, std::size_t n_expected) {
    if (n_expected == 0) throw ConfigError("find_peaks: n_expected must be >= 1");
    struct Candidate {
        double value;
        int row;
        int col;
    };
    std::vector<Candidate> candidates;
    const int h = static_cast<int>(image.height);
    const int w = static_cast<int>(image.width);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double v = image.at(r, c);
            bool is_max = true;
            for (int dr = -1; dr <= 1 && is_max; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const int rr = r + dr;
                    const int cc = c + dc;
                    if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                    if (image.at(rr, cc) > v) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (is_max) candidates.push_back({v, r, c});
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.value != b.value) return a.value > b.value;
        if (a.row != b.row) return a.row < b.row;
        return a.col < b.col;
    });

    std::vector<PixelPos> accepted;
    for (const auto& cand : candidates) {
        const PixelPos p{static_cast<double>(cand.row), static_cast<double>(cand.col)};
        const bool far = std::all_of(accepted.begin(), accepted.end(),
                                     [&](const PixelPos& q) { return distance(p, q) >= min_distance_px; });
        if (far) accepted.push_back(p);
        if (accepted.size() == n_expected) break;
    }
    if (accepted.size() < n_expected) {
        throw DataError("find_peaks: found " + std::to_string(accepted.size()) + " separated maxima, expected " +
                        std::to_string(n_expected));
    }
    order_row_major(accepted, min_distance_px / 2.0, [](const PixelPos& p) -> const PixelPos& { return p; });
    return accepted;
}

GaussianFit fit_gaussian_2d(const Image& image, PixelPos initial_center, int window_radius) {
    if (window_radius < 1) throw ConfigError("fit_gaussian_2d: window radius must be >= 1");
    const int h = static_cast<int>(image.height);
    const int w = static_cast<int>(image.width);
    const int cr = static_cast<int>(std::floor(initial_center.row + 0.5));
    const int cc = static_cast<int>(std::floor(initial_center.col + 0.5));
    const int r_lo = std::max(0, cr - window_radius);
    const int r_hi = std::min(h - 1, cr + window_radius);
    const int c_lo = std::max(0, cc - window_radius);
    const int c_hi = std::min(w - 1, cc + window_radius);
    if (r_hi - r_lo < 2 || c_hi - c_lo < 2) throw DataError("fit_gaussian_2d: window lies outside the image");

    std::vector<double> rows;
    std::vector<double> cols;
    std::vector<double> values;
    for (int r = r_lo; r <= r_hi; ++r) {
        for (int c = c_lo; c <= c_hi; ++c) {
            rows.push_back(r);
            cols.push_back(c);
            values.push_back(image.at(r, c));
        }
    }
    const std::size_t n = values.size();
    const double vmin = *std::min_element(values.begin(), values.end());

    // Moment-based starting point.
    double mass = 0.0;
    double mr = 0.0;
    double mc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double m = values[i] - vmin;
        mass += m;
        mr += m * rows[i];
        mc += m * cols[i];
    }
    PixelPos centroid = initial_center;
    if (mass > 0.0) centroid = {mr / mass, mc / mass};
    double m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dr = rows[i] - centroid.row;
        const double dc = cols[i] - centroid.col;
        m2 += (values[i] - vmin) * (dr * dr + dc * dc);
    }
    const double moment_sigma =
        mass > 0.0 ? std::clamp(std::sqrt(m2 / (2.0 * mass)), 0.5, static_cast<double>(window_radius)) : 1.0;

    const double peak = image.at(std::clamp(cr, 0, h - 1), std::clamp(cc, 0, w - 1));
    Eigen::Matrix<double, 5, 1> p;
    p << peak - vmin, initial_center.row, initial_center.col, moment_sigma, vmin;

    auto cost_of = [&](const Eigen::Matrix<double, 5, 1>& q) {
        double cost = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dr = rows[i] - q(1);
            const double dc = cols[i] - q(2);
            const double e = std::exp(-(dr * dr + dc * dc) / (2.0 * q(3) * q(3)));
            const double res = q(0) * e + q(4) - values[i];
            cost += res * res;
        }
        return cost;
    };

    GaussianFit fit;
    double cost = cost_of(p);
    fit.cost_history.push_back(cost);
    double lambda = 1e-3;
    Eigen::Matrix<double, Eigen::Dynamic, 5> jac(static_cast<long>(n), 5);
    Eigen::VectorXd res(static_cast<long>(n));
    for (int iter = 0; iter < 100; ++iter) {
        fit.iterations = iter + 1;
        const double s2 = p(3) * p(3);
        for (std::size_t i = 0; i < n; ++i) {
            const double dr = rows[i] - p(1);
            const double dc = cols[i] - p(2);
            const double d2 = dr * dr + dc * dc;
            const double e = std::exp(-d2 / (2.0 * s2));
            const auto row = static_cast<long>(i);
            res(row) = p(0) * e + p(4) - values[i];
            jac(row, 0) = e;
            jac(row, 1) = p(0) * e * dr / s2;
            jac(row, 2) = p(0) * e * dc / s2;
            jac(row, 3) = p(0) * e * d2 / (s2 * p(3));
            jac(row, 4) = 1.0;
        }
        const Eigen::Matrix<double, 5, 5> jtj = jac.transpose() * jac;
        const Eigen::Matrix<double, 5, 1> grad = jac.transpose() * res;
        Eigen::Matrix<double, 5, 5> damped = jtj;
        for (int d = 0; d < 5; ++d) damped(d, d) += lambda * std::max(jtj(d, d), 1e-12);
        const Eigen::Matrix<double, 5, 1> step = damped.ldlt().solve(-grad);
        if (!step.allFinite()) break;

        const Eigen::Matrix<double, 5, 1> trial = p + step;
        const double trial_cost = trial(3) > 0.0 ? cost_of(trial) : std::numeric_limits<double>::infinity();
        if (trial_cost <= cost) {
            p = trial;
            cost = trial_cost;
            fit.cost_history.push_back(cost);
            lambda = std::max(lambda / 10.0, 1e-12);
        } else {
            lambda *= 10.0;
        }
        if (step.norm() < 1e-6) {
            fit.converged = true;
            break;
        }
        if (lambda > 1e12) break;
    }

    const bool inside = p(1) >= r_lo - 0.5 && p(1) <= r_hi + 0.5 && p(2) >= c_lo - 0.5 && p(2) <= c_hi + 0.5;
    if (fit.converged && p.allFinite() && p(3) > 0.0 && p(0) > 0.0 && inside) {
        fit.center = {p(1), p(2)};
        fit.sigma = p(3);
        fit.amplitude = p(0);
        fit.offset = p(4);
    } else {
        fit.fallback = true;
        fit.converged = false;
        fit.center = centroid;
        fit.sigma = moment_sigma;
        fit.amplitude = peak - vmin;
        fit.offset = vmin;
    }
    return fit;
}

namespace {

/// Levenberg-Marquardt on a sum of circular Gaussians plus one offset. Per site the parameters
/// are [A, r0, c0] and, unless `shared_sigma`, sigma; a shared sigma and the offset come last.
/// Trial steps that push a center more than `max_shift_px` from `anchor`, or make an amplitude
/// negative or a width non-positive, are rejected like cost increases.
struct JointFit {
    std::vector<double> amplitude, row, col, sigma;
    double offset = 0.0;
    double cost = std::numeric_limits<double>::infinity();
    bool converged = false;
};

JointFit joint_lm(const Image& image, const JointFit& start, const std::vector<PixelPos>& anchor, bool shared_sigma,
                  double max_shift_px) {
    const long k = static_cast<long>(start.amplitude.size());
    const long per = shared_sigma ? 3 : 4;
    const long dim = per * k + (shared_sigma ? 2 : 1);
    const long n = static_cast<long>(image.pixels.size());
    const long w = static_cast<long>(image.width);

    Eigen::VectorXd p(dim);
    for (long i = 0; i < k; ++i) {
        const auto u = static_cast<std::size_t>(i);
        p(per * i) = start.amplitude[u];
        p(per * i + 1) = start.row[u];
        p(per * i + 2) = start.col[u];
        if (!shared_sigma) p(per * i + 3) = start.sigma[u];
    }
    if (shared_sigma) p(dim - 2) = start.sigma[0];
    p(dim - 1) = start.offset;

    auto sigma_index = [&](long i) { return shared_sigma ? dim - 2 : per * i + 3; };
    auto residuals = [&](const Eigen::VectorXd& q, Eigen::VectorXd& res, Eigen::MatrixXd* jac) {
        res.setConstant(q(dim - 1));
        if (jac) {
            jac->setZero();
            jac->col(dim - 1).setOnes();
        }
        for (long i = 0; i < k; ++i) {
            const long o = per * i;
            const long si = sigma_index(i);
            const double a = q(o), r0 = q(o + 1), c0 = q(o + 2), sg = q(si);
            const double s2 = sg * sg;
            for (long px = 0; px < n; ++px) {
                const double dr = static_cast<double>(px / w) - r0;
                const double dc = static_cast<double>(px % w) - c0;
                const double d2 = dr * dr + dc * dc;
                const double e = std::exp(-d2 / (2.0 * s2));
                res(px) += a * e;
                if (jac) {
                    (*jac)(px, o) = e;
                    (*jac)(px, o + 1) = a * e * dr / s2;
                    (*jac)(px, o + 2) = a * e * dc / s2;
                    (*jac)(px, si) += a * e * d2 / (s2 * sg);
                }
            }
        }
        for (long px = 0; px < n; ++px) res(px) -= image.pixels[static_cast<std::size_t>(px)];
    };
    auto admissible = [&](const Eigen::VectorXd& q) {
        if (!q.allFinite()) return false;
        for (long i = 0; i < k; ++i) {
            if (q(per * i) < 0.0 || !(q(sigma_index(i)) > 0.0)) return false;
            if (distance({q(per * i + 1), q(per * i + 2)}, anchor[static_cast<std::size_t>(i)]) > max_shift_px)
                return false;
        }
        return true;
    };

    JointFit out;
    if (!admissible(p)) return out;
    Eigen::VectorXd res(n), trial_res(n);
    Eigen::MatrixXd jac(n, dim);
    residuals(p, res, nullptr);
    double cost = res.squaredNorm();
    double lambda = 1e-3;
    for (int iter = 0; iter < 100; ++iter) {
        residuals(p, res, &jac);
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        const Eigen::VectorXd grad = jac.transpose() * res;
        Eigen::MatrixXd damped = jtj;
        for (long d = 0; d < dim; ++d) damped(d, d) += lambda * std::max(jtj(d, d), 1e-12);
        const Eigen::VectorXd step = damped.ldlt().solve(-grad);
        if (!step.allFinite()) break;
        const Eigen::VectorXd trial = p + step;
        double trial_cost = std::numeric_limits<double>::infinity();
        if (admissible(trial)) {
            residuals(trial, trial_res, nullptr);
            trial_cost = trial_res.squaredNorm();
        }
        if (trial_cost <= cost) {
            p = trial;
            cost = trial_cost;
            lambda = std::max(lambda / 10.0, 1e-12);
        } else {
            lambda *= 10.0;
        }
        if (step.norm() < 1e-6) {
            out.converged = true;
            break;
        }
        if (lambda > 1e12) break;
    }
    for (long i = 0; i < k; ++i) {
        out.amplitude.push_back(p(per * i));
        out.row.push_back(p(per * i + 1));
        out.col.push_back(p(per * i + 2));
        out.sigma.push_back(p(sigma_index(i)));
    }
    out.offset = p(dim - 1);
    out.cost = cost;
    return out;
}

}  // namespace

bool fit_gaussians_joint(const Image& image, SiteGeometry& sites, double max_shift_px, double* cost) {
    if (sites.empty()) return false;
    JointFit start;
    std::vector<PixelPos> anchor;
    std::vector<double> widths;
    for (const auto& s : sites) {
        start.amplitude.push_back(std::max(s.amplitude, 0.0));
        start.row.push_back(s.center.row);
        start.col.push_back(s.center.col);
        start.sigma.push_back(s.sigma);
        start.offset += s.offset / static_cast<double>(sites.size());
        anchor.push_back(s.center);
        widths.push_back(s.sigma);
    }
    // One common width first: with free widths, overlapping sites can trade light and a site can
    // escape the array.
    std::nth_element(widths.begin(), widths.begin() + static_cast<long>(widths.size() / 2), widths.end());
    std::fill(start.sigma.begin(), start.sigma.end(), widths[widths.size() / 2]);
    const JointFit common = joint_lm(image, start, anchor, /*shared_sigma=*/true, max_shift_px);
    if (!common.converged) return false;
    JointFit free = joint_lm(image, common, anchor, /*shared_sigma=*/false, max_shift_px);
    const JointFit& best = free.converged && free.cost <= common.cost ? free : common;
    for (double a : best.amplitude)
        if (!(a > 0.0)) return false;

    for (std::size_t i = 0; i < sites.size(); ++i) {
        sites[i].amplitude = best.amplitude[i];
        sites[i].center = {best.row[i], best.col[i]};
        sites[i].sigma = best.sigma[i];
        sites[i].offset = best.offset;
        sites[i].fit_failed = false;
    }
    if (cost) *cost = best.cost;
    return true;
}

namespace {

/// Greedy subtraction seeds: take the brightest remaining pixel at least `min_distance_px` from
/// earlier seeds, subtract a Gaussian of width `sigma` and that height, repeat.
std::vector<PixelPos> subtraction_seeds(const Image& mean, std::size_t n, double sigma, double offset,
                                        double min_distance_px) {
    Image residual = mean;
    for (double& v : residual.pixels) v -= offset;
    std::vector<PixelPos> seeds;
    while (seeds.size() < n) {
        double best = -std::numeric_limits<double>::infinity();
        PixelPos at{-1.0, -1.0};
        for (std::size_t r = 0; r < residual.height; ++r)
            for (std::size_t c = 0; c < residual.width; ++c) {
                const PixelPos q{static_cast<double>(r), static_cast<double>(c)};
                if (residual.at(r, c) <= best) continue;
                if (std::any_of(seeds.begin(), seeds.end(),
                                [&](const PixelPos& s) { return distance(s, q) < min_distance_px; }))
                    continue;
                best = residual.at(r, c);
                at = q;
            }
        if (at.row < 0.0) break;
        seeds.push_back(at);
        for (std::size_t r = 0; r < residual.height; ++r)
            for (std::size_t c = 0; c < residual.width; ++c) {
                const double d2 = std::pow(static_cast<double>(r) - at.row, 2) + std::pow(static_cast<double>(c) - at.col, 2);
                residual.at(r, c) -= best * std::exp(-d2 / (2.0 * sigma * sigma));
            }
    }
    return seeds;
}

}  // namespace

SiteGeometry locate_sites(const Image& mean, const LocateOptions& options) {
    const auto peaks = find_peaks(mean, options.min_distance_px, options.n_sites);
    SiteGeometry sites;
    sites.reserve(peaks.size());
    std::vector<double> sigmas, offsets;
    for (std::size_t i = 0; i < peaks.size(); ++i) {
        const GaussianFit fit = fit_gaussian_2d(mean, peaks[i], options.window_radius);
        SiteFit site;
        site.site_index = static_cast<int>(i) + 1;
        site.center = fit.center;
        site.sigma = fit.sigma;
        site.amplitude = fit.amplitude;
        site.offset = fit.offset;
        site.fit_failed = fit.fallback;
        sites.push_back(site);
        sigmas.push_back(std::clamp(fit.sigma, 0.5, static_cast<double>(options.window_radius)));
        offsets.push_back(fit.offset);
    }
    if (!options.joint_refine) return sites;

    auto median = [](std::vector<double> v) {
        std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
        return v[v.size() / 2];
    };
    const double sigma0 = median(sigmas);
    const double offset0 = median(offsets);
    const double max_shift = std::max(1.0, options.min_distance_px);

    // Overlapping windows make single fits unreliable, and on a crowded mean image noise can
    // outrank a dim site. Fit all sites jointly from the peaks and from subtraction seeds and
    // keep the lower cost.
    std::vector<std::vector<PixelPos>> seed_sets{peaks};
    const auto extra = subtraction_seeds(mean, peaks.size(), sigma0, offset0, options.min_distance_px);
    if (extra.size() == peaks.size()) seed_sets.push_back(extra);

    std::optional<SiteGeometry> best;
    double best_cost = std::numeric_limits<double>::infinity();
    for (const auto& seeds : seed_sets) {
        SiteGeometry start(seeds.size());
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            start[i].center = seeds[i];
            start[i].sigma = sigma0;
            start[i].offset = offset0;
            start[i].amplitude = std::max(
                mean.at(static_cast<std::size_t>(seeds[i].row), static_cast<std::size_t>(seeds[i].col)) - offset0,
                1e-6);
        }
        double cost = 0.0;
        if (fit_gaussians_joint(mean, start, max_shift, &cost) && cost < best_cost) {
            best_cost = cost;
            best = std::move(start);
        }
    }
    if (!best) return sites;
    order_row_major(*best, options.min_distance_px / 2.0, [](const SiteFit& s) -> const PixelPos& { return s.center; });
    for (std::size_t i = 0; i < best->size(); ++i) (*best)[i].site_index = static_cast<int>(i) + 1;
    return *best;
}

GridShape infer_grid(const SiteGeometry& sites) {
    if (sites.empty()) return {};
    double min_dist = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < sites.size(); ++a)
        for (std::size_t b = a + 1; b < sites.size(); ++b)
            min_dist = std::min(min_dist, distance(sites[a].center, sites[b].center));
    if (!std::isfinite(min_dist)) return {1, 1};
    const double tol = min_dist / 2.0;
    int rows = 1;
    std::size_t run = 1;
    std::size_t longest = 1;
    for (std::size_t i = 1; i < sites.size(); ++i) {
        if (std::abs(sites[i].center.row - sites[i - 1].center.row) > tol) {
            ++rows;
            run = 1;
        } else {
            longest = std::max(longest, ++run);
        }
    }
    return {rows, static_cast<int>(longest)};
}

}  // namespace mfr
