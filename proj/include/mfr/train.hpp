#pragma once

#include <Eigen/Dense>
#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mfr/filters.hpp"
#include "mfr/locate.hpp"
#include "mfr/sim.hpp"

namespace mfr {

struct DatasetSplit {
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
    std::vector<std::size_t> test_idx;
    std::uint64_t shuffle_seed = 0;
};

/// Fisher-Yates shuffle, then contiguous train | test | validation blocks. Test and validation
/// get floor(n * fraction) frames; train takes the remainder. fractions = {train, test, val}.
DatasetSplit split_dataset(std::size_t n_frames, std::array<double, 3> fractions, std::uint64_t seed);

/// Solves (G + alpha I) w = b for symmetric PSD G. Uses a Cholesky-type factorization when the
/// system is well conditioned, otherwise the eigen pseudo-inverse (minimum-norm solution).
Eigen::VectorXd solve_normal_equations(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs, double alpha);

/// W = Y X^T (X X^T + alpha I)^-1 for X (d x M, samples as columns) and Y (1 x M).
Eigen::RowVectorXd fit_ridge(const Eigen::MatrixXd& X, const Eigen::RowVectorXd& Y, double alpha);

/// Rank-1 (Sherman-Morrison) recursive least squares. After any sample stream it holds the ridge
/// solution for that stream with regularization alpha0.
class RecursiveLeastSquares {
public:
    RecursiveLeastSquares(std::size_t dim, double alpha0);

    void update(std::span<const double> x, double y);
    const Eigen::VectorXd& weights() const { return weights_; }
    const Eigen::MatrixXd& inverse_covariance() const { return p_; }
    std::size_t samples() const { return samples_; }

private:
    Eigen::MatrixXd p_;
    Eigen::VectorXd weights_;
    std::size_t samples_ = 0;
};

Eigen::RowVectorXd fit_rls(const Eigen::MatrixXd& X, const Eigen::RowVectorXd& Y, double alpha0);

/// Records every frame index touched during training or tuning.
class FrameAudit {
public:
    explicit FrameAudit(std::size_t n_frames) : touched_(n_frames) {}
    void mark(std::size_t frame) { touched_[frame].store(1, std::memory_order_relaxed); }
    bool touched(std::size_t frame) const { return touched_[frame].load(std::memory_order_relaxed) != 0; }
    std::size_t count_touched(std::span<const std::size_t> frames) const;

private:
    std::vector<std::atomic<std::uint8_t>> touched_;
};

/// Everything a per-site fit reads. Images are normalized frames; labels may be truth or label-path.
struct TrainingSet {
    const ImageStack& images;
    const StateMatrix& labels;
    const DatasetSplit& split;
    const SiteGeometry& geometry;
    FrameAudit* audit = nullptr;
};

enum class ThresholdMode { Labeled, Mixture };

struct TuneOptions {
    std::vector<int> s_grid = default_s_grid();
    std::vector<double> theta_grid = default_theta_grid();
    double alpha = 0.0;
    double bias_c = 1.0;
    NeighborPolicy neighbors;
    double gaussian_cutoff = 1e-3;
    int square_width = 0;  // 0: default_square_width of the located sites
    ThresholdMode threshold_mode = ThresholdMode::Labeled;

    static std::vector<int> default_s_grid();
    /// 0.01, 0.02, ..., 0.99
    static std::vector<double> default_theta_grid();
    static std::vector<double> theta_range(double lo, double hi, double step);
};

struct TracePoint {
    int s = 0;
    double theta = 0.0;
    double fidelity = 0.0;
};

struct TuneResult {
    int best_s = 0;
    double best_theta = 0.0;
    std::vector<double> weights;
    double val_fidelity = 0.0;
    std::vector<TracePoint> search_trace;
    std::vector<int> skipped_s;
    FilterModel model;
};

/// Per-site fit and metaparameter search. MF kinds: ridge fit on train for each s, fidelity on
/// validation for each theta; maximize with ties to smaller s then smaller theta. Square and
/// Gaussian: fixed window or weight map, threshold from training scores.
/// Square filter side covering +-2 sigma of the median fitted PSF: round(4 sigma), at least 2.
int default_square_width(const SiteGeometry& geometry);

TuneResult tune(const TrainingSet& data, int site_index, FilterKind kind, const TuneOptions& options);

struct SiteError {
    int site_index = 0;
    std::string message;
};

struct ModelSet {
    FilterKind kind = FilterKind::MFSite;
    GridShape grid;
    std::vector<FilterModel> models;  // ascending site index
    std::vector<double> val_fidelity;
    std::vector<SiteError> errors;
};

ModelSet train_all_sites(const TrainingSet& data, FilterKind kind, const TuneOptions& options, int threads = 1);

struct ComplexityReport {
    FilterKind kind = FilterKind::MFSite;
    std::size_t n_trainable = 0;
    std::size_t n_multiplications = 0;
    std::size_t n_nonlinear = 0;
    std::size_t min_site_params = 0;
    std::size_t max_site_params = 0;
};

ComplexityReport count_complexity(const ModelSet& models);

}  // namespace mfr
