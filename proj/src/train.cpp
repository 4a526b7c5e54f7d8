#include "mfr/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "mfr/error.hpp"
#include "mfr/metrics.hpp"
#include "mfr/parallel.hpp"
#include "mfr/rng.hpp"

namespace mfr {

DatasetSplit split_dataset(std::size_t n_frames, std::array<double, 3> fractions, std::uint64_t seed) {
    for (double f : fractions)
        if (!(f >= 0.0)) throw ConfigError("split_dataset: fractions must be non-negative");
    if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
        throw ConfigError("split_dataset: fractions must sum to 1");

    std::vector<std::size_t> perm(n_frames);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    auto rng = make_stream(seed, 0, StreamPurpose::Shuffle);
    for (std::size_t i = n_frames; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(perm[i - 1], perm[pick(rng)]);
    }

    const auto n = static_cast<double>(n_frames);
    const auto n_test = static_cast<std::size_t>(std::floor(n * fractions[1] + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(n * fractions[2] + 1e-9));
    const std::size_t n_train = n_frames - n_test - n_val;
    if (n_train == 0 || n_test == 0 || n_val == 0)
        throw ConfigError("split_dataset: " + std::to_string(n_frames) + " frames leave an empty split");

    DatasetSplit split;
    split.shuffle_seed = seed;
    split.train_idx.assign(perm.begin(), perm.begin() + static_cast<long>(n_train));
    split.test_idx.assign(perm.begin() + static_cast<long>(n_train),
                          perm.begin() + static_cast<long>(n_train + n_test));
    split.val_idx.assign(perm.begin() + static_cast<long>(n_train + n_test), perm.end());
    return split;
}

Eigen::VectorXd solve_normal_equations(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs, double alpha) {
    if (!(alpha >= 0.0)) throw ConfigError("ridge: alpha must be >= 0");
    if (!gram.allFinite() || !rhs.allFinite()) throw NumericalError("ridge: non-finite inputs");
    const auto d = gram.rows();
    Eigen::MatrixXd a = gram;
    a.diagonal().array() += alpha;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-12) {
        Eigen::VectorXd w = ldlt.solve(rhs);
        if (w.allFinite()) return w;
    }

    // Singular or nearly so: minimum-norm solution through the eigen pseudo-inverse.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    if (eig.info() != Eigen::Success) throw NumericalError("ridge: eigen decomposition failed");
    const Eigen::VectorXd& lambda = eig.eigenvalues();
    const double lmax = std::max(std::abs(lambda.maxCoeff()), std::abs(lambda.minCoeff()));
    const double tol = static_cast<double>(std::max<Eigen::Index>(d, 1)) * 1e-14 * lmax;
    const Eigen::VectorXd proj = eig.eigenvectors().transpose() * rhs;
    Eigen::VectorXd scaled = Eigen::VectorXd::Zero(d);
    for (Eigen::Index i = 0; i < d; ++i)
        if (lambda(i) > tol) scaled(i) = proj(i) / lambda(i);
    Eigen::VectorXd w = eig.eigenvectors() * scaled;
    if (!w.allFinite()) throw NumericalError("ridge: non-finite solution");
    return w;
}

Eigen::RowVectorXd fit_ridge(const Eigen::MatrixXd& X, const Eigen::RowVectorXd& Y, double alpha) {
    if (X.cols() != Y.cols()) throw DataError("fit_ridge: X has " + std::to_string(X.cols()) +
                                              " columns but Y has " + std::to_string(Y.cols()));
    if (X.cols() < 1) throw DataError("fit_ridge: no samples");
    if (!X.allFinite() || !Y.allFinite()) throw NumericalError("fit_ridge: non-finite inputs");
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(X.rows(), X.rows());
    gram.selfadjointView<Eigen::Lower>().rankUpdate(X);
    gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
    const Eigen::VectorXd rhs = X * Y.transpose();
    return solve_normal_equations(gram, rhs, alpha).transpose();
}

RecursiveLeastSquares::RecursiveLeastSquares(std::size_t dim, double alpha0) {
    if (!(alpha0 > 0.0)) throw ConfigError("rls: alpha0 must be > 0");
    const auto d = static_cast<Eigen::Index>(dim);
    p_ = Eigen::MatrixXd::Identity(d, d) / alpha0;
    weights_ = Eigen::VectorXd::Zero(d);
}

void RecursiveLeastSquares::update(std::span<const double> x_in, double y) {
    if (static_cast<Eigen::Index>(x_in.size()) != weights_.size()) throw DataError("rls: feature length mismatch");
    const Eigen::Map<const Eigen::VectorXd> x(x_in.data(), static_cast<Eigen::Index>(x_in.size()));
    const Eigen::VectorXd px = p_ * x;
    const double denom = 1.0 + x.dot(px);
    const Eigen::VectorXd gain = px / denom;
    const double err = y - weights_.dot(x);
    weights_ += gain * err;
    p_.noalias() -= gain * px.transpose();
    p_ = 0.5 * (p_ + p_.transpose()).eval();
    if (!weights_.allFinite() || !p_.allFinite()) throw NumericalError("rls: non-finite update");
    ++samples_;
}

Eigen::RowVectorXd fit_rls(const Eigen::MatrixXd& X, const Eigen::RowVectorXd& Y, double alpha0) {
    if (X.cols() != Y.cols()) throw DataError("fit_rls: sample count mismatch");
    RecursiveLeastSquares rls(static_cast<std::size_t>(X.rows()), alpha0);
    Eigen::VectorXd col(X.rows());
    for (Eigen::Index m = 0; m < X.cols(); ++m) {
        col = X.col(m);
        rls.update({col.data(), static_cast<std::size_t>(col.size())}, Y(m));
    }
    return rls.weights().transpose();
}

std::size_t FrameAudit::count_touched(std::span<const std::size_t> frames) const {
    return static_cast<std::size_t>(
        std::count_if(frames.begin(), frames.end(), [&](std::size_t k) { return touched(k); }));
}

std::vector<int> TuneOptions::default_s_grid() {
    std::vector<int> grid;
    for (int s = 2; s <= 14; ++s) grid.push_back(s);
    return grid;
}

std::vector<double> TuneOptions::default_theta_grid() { return theta_range(0.01, 0.99, 0.01); }

std::vector<double> TuneOptions::theta_range(double lo, double hi, double step) {
    if (!(step > 0.0) || !(hi >= lo)) throw ConfigError("theta grid: need step > 0 and hi >= lo");
    std::vector<double> grid;
    const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
    for (long i = 0; i <= n; ++i) grid.push_back(std::round((lo + static_cast<double>(i) * step) * 1e12) / 1e12);
    return grid;
}

namespace {

const SiteFit& find_site(const SiteGeometry& geometry, int site_index) {
    for (const auto& s : geometry)
        if (s.site_index == site_index) return s;
    throw ConfigError("unknown site " + std::to_string(site_index));
}

void mark_frames(FrameAudit* audit, std::span<const std::size_t> frames) {
    if (!audit) return;
    for (std::size_t k : frames) audit->mark(k);
}

double validation_fidelity(std::span<const double> scores, std::span<const std::uint8_t> labels, double theta) {
    std::vector<std::uint8_t> preds(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) preds[i] = static_cast<std::uint8_t>(classify_score(scores[i], theta));
    return fidelity(confusion(preds, labels));
}

/// Square and Gaussian filters: threshold from training-score class fits.
TuneResult tune_traditional(const TrainingSet& data, const SiteFit& site, FilterKind kind,
                            const TuneOptions& options) {
    const auto& images = data.images;
    const auto site_col = static_cast<std::size_t>(site.site_index - 1);
    FilterModel model;
    model.kind = kind;
    model.site_index = site.site_index;
    model.bias_c = options.bias_c;

    if (kind == FilterKind::Square) {
        int s = options.square_width;
        if (s <= 0) s = default_square_width(data.geometry);
        while (s > 2 && !make_boundary(site, s).fits(images.height(), images.width())) --s;
        model.boundary = make_boundary(site, s);
        check_boundary(model.boundary, images.height(), images.width());
    } else {
        model.pixel_weights = gaussian_weight_map(site, options.gaussian_cutoff, images.height(), images.width());
        model.sigma = site.sigma;
        model.amplitude = site.amplitude;
        const double radius = site.sigma * std::sqrt(-2.0 * std::log(options.gaussian_cutoff));
        model.boundary = make_boundary(site, 2 * static_cast<int>(std::ceil(radius)) + 1);
    }

    mark_frames(data.audit, data.split.train_idx);
    std::vector<double> dark;
    std::vector<double> bright;
    std::vector<double> all;
    for (std::size_t k : data.split.train_idx) {
        const double score = score_frame(model, images.view(k));
        all.push_back(score);
        (data.labels.at(k, site_col) ? bright : dark).push_back(score);
    }
    model.threshold =
        options.threshold_mode == ThresholdMode::Labeled ? unsupervised_threshold(dark, bright) : mixture_threshold(all);

    mark_frames(data.audit, data.split.val_idx);
    std::vector<double> val_scores;
    std::vector<std::uint8_t> val_labels;
    for (std::size_t k : data.split.val_idx) {
        val_scores.push_back(score_frame(model, images.view(k)));
        val_labels.push_back(data.labels.at(k, site_col));
    }

    TuneResult result;
    result.best_s = model.boundary.width;
    result.best_theta = model.threshold;
    result.val_fidelity = validation_fidelity(val_scores, val_labels, model.threshold);
    result.search_trace.push_back({result.best_s, result.best_theta, result.val_fidelity});
    result.model = std::move(model);
    return result;
}

TuneResult tune_matched(const TrainingSet& data, const SiteFit& site, FilterKind kind, const TuneOptions& options) {
    const auto& images = data.images;
    const auto site_col = static_cast<std::size_t>(site.site_index - 1);
    const auto& train = data.split.train_idx;
    const auto& val = data.split.val_idx;
    if (options.s_grid.empty() || options.theta_grid.empty()) throw ConfigError("tune: grids must be non-empty");
    if (train.empty() || val.empty()) throw DataError("tune: empty training or validation split");

    std::vector<int> neighbor_ids;
    if (kind == FilterKind::MFArray) neighbor_ids = neighbor_sites(data.geometry, site.site_index, options.neighbors);

    Eigen::RowVectorXd y(static_cast<Eigen::Index>(train.size()));
    for (std::size_t m = 0; m < train.size(); ++m) y(static_cast<Eigen::Index>(m)) = data.labels.at(train[m], site_col);
    std::vector<std::uint8_t> val_labels(val.size());
    for (std::size_t m = 0; m < val.size(); ++m) val_labels[m] = data.labels.at(val[m], site_col);

    TuneResult result;
    bool have_best = false;
    Eigen::VectorXd best_w;
    FilterModel best_model;

    for (int s : options.s_grid) {
        FilterModel model;
        model.kind = kind;
        model.site_index = site.site_index;
        model.bias_c = options.bias_c;
        model.boundary = make_boundary(site, s);
        bool fits = model.boundary.fits(images.height(), images.width());
        for (int id : neighbor_ids) {
            const BoundarySpec nb = make_boundary(find_site(data.geometry, id), s);
            fits = fits && nb.fits(images.height(), images.width());
            model.neighbors.push_back(nb);
        }
        if (!fits) {
            result.skipped_s.push_back(s);
            continue;
        }

        const auto d = static_cast<Eigen::Index>(model.feature_dim());
        mark_frames(data.audit, train);
        Eigen::MatrixXd x(d, static_cast<Eigen::Index>(train.size()));
        for (std::size_t m = 0; m < train.size(); ++m) {
            write_features(images.view(train[m]), model.boundary, model.neighbors, model.bias_c,
                           {x.col(static_cast<Eigen::Index>(m)).data(), static_cast<std::size_t>(d)});
        }
        const Eigen::RowVectorXd w = fit_ridge(x, y, options.alpha);
        model.weights.assign(w.data(), w.data() + w.size());

        mark_frames(data.audit, val);
        std::vector<double> val_scores(val.size());
        std::vector<double> feat(static_cast<std::size_t>(d));
        for (std::size_t m = 0; m < val.size(); ++m) {
            write_features(images.view(val[m]), model.boundary, model.neighbors, model.bias_c, feat);
            val_scores[m] = predict(model, feat).y_hat;
        }
        for (double theta : options.theta_grid) {
            const double f = validation_fidelity(val_scores, val_labels, theta);
            result.search_trace.push_back({s, theta, f});
            const bool better = !have_best || f > result.val_fidelity ||
                                (f == result.val_fidelity &&
                                 (s < result.best_s || (s == result.best_s && theta < result.best_theta)));
            if (better) {
                have_best = true;
                result.val_fidelity = f;
                result.best_s = s;
                result.best_theta = theta;
                best_model = model;
                best_model.threshold = theta;
            }
        }
    }
    if (!have_best) {
        throw ConfigError("tune: no boundary size in the grid fits site " + std::to_string(site.site_index));
    }
    result.weights = best_model.weights;
    result.model = std::move(best_model);
    return result;
}

}  // namespace

int default_square_width(const SiteGeometry& geometry) {
    std::vector<double> sigmas;
    for (const auto& site : geometry)
        if (site.sigma > 0.0) sigmas.push_back(site.sigma);
    if (sigmas.empty()) return 6;
    std::nth_element(sigmas.begin(), sigmas.begin() + static_cast<long>(sigmas.size() / 2), sigmas.end());
    return std::max(2, static_cast<int>(std::lround(4.0 * sigmas[sigmas.size() / 2])));
}

TuneResult tune(const TrainingSet& data, int site_index, FilterKind kind, const TuneOptions& options) {
    if (data.labels.n_images != data.images.size())
        throw DataError("tune: label count does not match frame count");
    const SiteFit& site = find_site(data.geometry, site_index);
    if (static_cast<std::size_t>(site_index) > data.labels.n_sites)
        throw DataError("tune: site index exceeds label columns");
    if (is_matched_filter(kind)) return tune_matched(data, site, kind, options);
    return tune_traditional(data, site, kind, options);
}

ModelSet train_all_sites(const TrainingSet& data, FilterKind kind, const TuneOptions& options, int threads) {
    const std::size_t n = data.geometry.size();
    std::vector<std::optional<TuneResult>> results(n);
    std::vector<std::string> failures(n);
    parallel_for(n, threads, [&](std::size_t i) {
        try {
            results[i] = tune(data, data.geometry[i].site_index, kind, options);
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    });
    ModelSet set;
    set.kind = kind;
    set.grid = infer_grid(data.geometry);
    for (std::size_t i = 0; i < n; ++i) {
        if (results[i]) {
            set.models.push_back(std::move(results[i]->model));
            set.val_fidelity.push_back(results[i]->val_fidelity);
        } else {
            set.errors.push_back({data.geometry[i].site_index, failures[i]});
        }
    }
    return set;
}

ComplexityReport count_complexity(const ModelSet& set) {
    ComplexityReport report;
    report.kind = set.kind;
    bool first = true;
    for (const auto& m : set.models) {
        std::size_t params = 0;
        std::size_t mults = 0;
        switch (m.kind) {
            case FilterKind::Square: break;
            case FilterKind::Gaussian:
                params = 2;  // sigma and amplitude
                mults = m.pixel_weights.size();
                break;
            case FilterKind::MFSite:
            case FilterKind::MFArray:
                params = m.weights.size();
                mults = static_cast<std::size_t>(
                    std::count_if(m.weights.begin(), m.weights.end(), [](double w) { return w != 0.0; }));
                break;
        }
        report.n_trainable += params;
        report.n_multiplications += mults;
        report.min_site_params = first ? params : std::min(report.min_site_params, params);
        report.max_site_params = std::max(report.max_site_params, params);
        first = false;
    }
    return report;
}

}  // namespace mfr
