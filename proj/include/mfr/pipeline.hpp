#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mfr/filters.hpp"
#include "mfr/metrics.hpp"
#include "mfr/serialize.hpp"
#include "mfr/sim.hpp"
#include "mfr/svg.hpp"
#include "mfr/train.hpp"

namespace mfr {

struct CropRect {
    std::size_t top = 0;
    std::size_t left = 0;
    std::size_t height = 0;
    std::size_t width = 0;
};

struct ThetaGridSpec {
    double lo = 0.01;
    double hi = 0.99;
    double step = 0.01;
};

/// Settings shared by every exposure of a run.
struct ExperimentOptions {
    std::vector<FilterKind> kinds{FilterKind::Square, FilterKind::Gaussian, FilterKind::MFSite,
                                  FilterKind::MFArray};
    std::optional<CropRect> crop;
    double alpha = 0.0;
    std::vector<int> s_grid = TuneOptions::default_s_grid();
    ThetaGridSpec theta_grid;
    std::size_t n_shuffles = 10;
    std::uint64_t seed = 0;
    bool label_path = true;           // labels from the simulated high-SNR path; false uses truth
    LabelPathOptions label_options;
    std::size_t crossfid_frames = 0;  // extra held-out frames for cross-fidelity; 0 disables
    double gaussian_cutoff = 1e-3;
    int square_width = 0;
    double min_distance_px = 0.0;     // 0: half the array spacing
    int window_radius = 0;            // 0: half the array spacing, rounded
    NeighborPolicy neighbors;
    int threads = 1;

    TuneOptions tune_options() const;
};

struct RunConfig {
    SimConfig sim;
    std::vector<double> exposure_sweep_ms{12.0, 18.0, 24.0, 36.0, 48.0, 64.0};
    ExperimentOptions experiment;
    std::filesystem::path output_dir = "run";
    bool cache = true;

    void validate() const;
};

/// Unknown keys are rejected; missing keys keep defaults.
RunConfig run_config_from_json(const Json& j);
Json to_json(const RunConfig& config);

struct PairSummary {
    int k = 0;
    int l = 0;
    bool center_neighbor = false;
    ShuffleSummary value;
    std::size_t n_defined = 0;
};

struct KindResult {
    FilterKind kind = FilterKind::MFSite;
    ShuffleSummary mean_infidelity;                // site-averaged infidelity, over shuffles
    std::vector<ShuffleSummary> site_fidelity;     // ascending site
    std::vector<ShuffleSummary> site_reduction;    // eta vs Gaussian per site (empty without Gaussian)
    std::optional<ShuffleSummary> mean_reduction;  // eta of site-mean fidelities vs Gaussian
    std::vector<PairSummary> cross_fidelity;
    std::optional<ShuffleSummary> mean_abs_center_neighbor;
    std::optional<ShuffleSummary> mean_abs_edge_edge;
    ComplexityReport complexity;  // first shuffle
    ModelSet first_models;
};

struct AuditRow {
    std::size_t shuffle = 0;
    std::size_t train_frames = 0;
    std::size_t val_frames = 0;
    std::size_t test_frames = 0;
    std::size_t test_frames_touched = 0;
};

struct ExposureResult {
    double exposure_ms = 0.0;
    std::vector<KindResult> kinds;
    std::vector<AuditRow> audit;
    std::vector<SiteGeometry> geometry;  // per shuffle

    const KindResult* find(FilterKind kind) const;
};

/// Simulated inputs for one exposure: training stack plus optional cross-fidelity stack.
struct ExposureData {
    LabeledImageStack train;
    StateMatrix train_labels;
    std::optional<LabeledImageStack> crossfid;
    StateMatrix crossfid_labels;
};

ExposureData simulate_exposure(const SimConfig& sim, const ExperimentOptions& options);

/// split -> normalize -> locate -> train per kind -> evaluate, repeated over shuffles.
ExposureResult run_exposure(const ExposureData& data, const ExperimentOptions& options);

/// run_exposure for every exposure, writing CSVs, models, SVG and audit logs under output_dir.
SweepReport run_pipeline(const RunConfig& config);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace mfr
