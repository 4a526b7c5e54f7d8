#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mfr/locate.hpp"
#include "mfr/sim.hpp"

namespace mfr {

struct ModelSet;

struct ConfusionCounts {
    std::size_t n_bright_true = 0;
    std::size_t n_dark_true = 0;
    std::size_t n_false_bright = 0;  // predicted bright, truly dark
    std::size_t n_false_dark = 0;    // predicted dark, truly bright

    bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> labels);

/// F = 1 - (P(B_p|D) + P(D_p|B)) / 2. Throws DataError when either true class is empty.
double fidelity(const ConfusionCounts& counts);

/// F^CF_kl = 1 - P(D_k|B_l) - P(B_k|D_l), conditioned on predictions at site l.
/// Throws DataError when site l is predicted single-class.
double cross_fidelity(std::span<const std::uint8_t> preds_k, std::span<const std::uint8_t> preds_l);

/// eta = ((1 - F_sigma) - (1 - F_mf)) / (1 - F_sigma). Throws DataError when F_sigma == 1.
double infidelity_reduction(double f_baseline, double f_mf);

struct ShuffleSummary {
    double mean = 0.0;
    double std_error = 0.0;  // population std / sqrt(n)
    std::vector<double> values;
};

ShuffleSummary summarize(std::span<const double> values);

/// Seed of shuffle i for a base seed.
std::uint64_t shuffle_seed(std::uint64_t base_seed, std::size_t i);

/// Runs metric(shuffle_seed(base_seed, i)) for i < n_shuffles and summarizes.
ShuffleSummary shuffle_statistics(const std::function<double(std::uint64_t)>& metric, std::size_t n_shuffles,
                                  std::uint64_t base_seed);

/// Vector-valued variant: one summary per output component.
std::vector<ShuffleSummary> shuffle_statistics_multi(
    const std::function<std::vector<double>(std::uint64_t)>& metric, std::size_t n_shuffles,
    std::uint64_t base_seed);

/// Binary predictions for every listed frame (all frames when empty) and every model, site order.
/// When `stats` is set each frame is normalized on the fly.
StateMatrix predict_all(const ModelSet& models, const ImageStack& stack, std::span<const std::size_t> frames = {},
                        const std::optional<PreprocessStats>& stats = std::nullopt);

struct PairValue {
    int k = 0;
    int l = 0;
    std::optional<double> value;  // empty when undefined
};

/// Site pairs for a grid: center to 4-neighbors, and the six corner pairs
/// (TL,TR) (BL,BR) (TL,BL) (TR,BR) (TL,BR) (TR,BL). 1-based site indices.
std::vector<std::pair<int, int>> center_neighbor_pairs(const GridShape& grid);
std::vector<std::pair<int, int>> edge_edge_pairs(const GridShape& grid);

/// Mean of |value| over defined pairs; empty if none are defined.
std::optional<double> mean_abs(std::span<const PairValue> pairs);

struct MetricsReport {
    std::vector<int> sites;
    std::vector<ConfusionCounts> counts;
    std::vector<double> fidelity;
    std::vector<PairValue> center_neighbor;
    std::vector<PairValue> edge_edge;
    std::optional<double> mean_abs_center_neighbor;
    std::optional<double> mean_abs_edge_edge;
    std::vector<double> baseline_fidelity;     // empty without a baseline
    std::vector<std::optional<double>> reduction;  // eta per site vs baseline

    double mean_fidelity() const;
};

/// Metrics from prediction tables. `preds` columns follow `sites`.
MetricsReport evaluate_predictions(const StateMatrix& preds, const StateMatrix& labels, std::span<const int> sites,
                                   const GridShape& grid, const StateMatrix* baseline_preds = nullptr);

MetricsReport evaluate(const ModelSet& models, const ImageStack& stack, const StateMatrix& labels,
                       const ModelSet* baseline = nullptr, std::span<const std::size_t> frames = {},
                       const std::optional<PreprocessStats>& stats = std::nullopt);

}  // namespace mfr
