#include "mfr/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "mfr/error.hpp"
#include "mfr/filters.hpp"
#include "mfr/rng.hpp"
#include "mfr/train.hpp"

namespace mfr {

ConfusionCounts confusion(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> labels) {
    if (preds.size() != labels.size())
        throw DataError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                        std::to_string(labels.size()) + " labels");
    ConfusionCounts c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i]) {
            ++c.n_bright_true;
            if (!preds[i]) ++c.n_false_dark;
        } else {
            ++c.n_dark_true;
            if (preds[i]) ++c.n_false_bright;
        }
    }
    return c;
}

double fidelity(const ConfusionCounts& c) {
    if (c.n_bright_true == 0 || c.n_dark_true == 0) throw DataError("fidelity: a true class is empty");
    const double false_bright = static_cast<double>(c.n_false_bright) / static_cast<double>(c.n_dark_true);
    const double false_dark = static_cast<double>(c.n_false_dark) / static_cast<double>(c.n_bright_true);
    return 1.0 - (false_bright + false_dark) / 2.0;
}

double cross_fidelity(std::span<const std::uint8_t> preds_k, std::span<const std::uint8_t> preds_l) {
    if (preds_k.size() != preds_l.size()) throw DataError("cross_fidelity: length mismatch");
    std::size_t bright_l = 0, dark_l = 0, dark_k_bright_l = 0, bright_k_dark_l = 0;
    for (std::size_t i = 0; i < preds_k.size(); ++i) {
        if (preds_l[i]) {
            ++bright_l;
            if (!preds_k[i]) ++dark_k_bright_l;
        } else {
            ++dark_l;
            if (preds_k[i]) ++bright_k_dark_l;
        }
    }
    if (bright_l == 0 || dark_l == 0) throw DataError("cross_fidelity: site l is predicted single-class");
    return 1.0 - static_cast<double>(dark_k_bright_l) / static_cast<double>(bright_l) -
           static_cast<double>(bright_k_dark_l) / static_cast<double>(dark_l);
}

double infidelity_reduction(double f_baseline, double f_mf) {
    if (f_baseline == 1.0) throw DataError("infidelity_reduction: baseline fidelity is 1");
    return ((1.0 - f_baseline) - (1.0 - f_mf)) / (1.0 - f_baseline);
}

ShuffleSummary summarize(std::span<const double> values) {
    ShuffleSummary out;
    out.values.assign(values.begin(), values.end());
    if (values.empty()) return out;
    const auto n = static_cast<double>(values.size());
    out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std_error = std::sqrt(ss / n) / std::sqrt(n);
    return out;
}

std::uint64_t shuffle_seed(std::uint64_t base_seed, std::size_t i) { return hash_combine(base_seed, i); }

ShuffleSummary shuffle_statistics(const std::function<double(std::uint64_t)>& metric, std::size_t n_shuffles,
                                  std::uint64_t base_seed) {
    if (n_shuffles < 2) throw ConfigError("shuffle_statistics: need at least 2 shuffles");
    std::vector<double> values;
    values.reserve(n_shuffles);
    for (std::size_t i = 0; i < n_shuffles; ++i) values.push_back(metric(shuffle_seed(base_seed, i)));
    return summarize(values);
}

std::vector<ShuffleSummary> shuffle_statistics_multi(
    const std::function<std::vector<double>(std::uint64_t)>& metric, std::size_t n_shuffles,
    std::uint64_t base_seed) {
    if (n_shuffles < 2) throw ConfigError("shuffle_statistics: need at least 2 shuffles");
    std::vector<std::vector<double>> columns;
    for (std::size_t i = 0; i < n_shuffles; ++i) {
        const auto row = metric(shuffle_seed(base_seed, i));
        if (i == 0) columns.resize(row.size());
        if (row.size() != columns.size()) throw DataError("shuffle_statistics: metric length changed");
        for (std::size_t j = 0; j < row.size(); ++j) columns[j].push_back(row[j]);
    }
    std::vector<ShuffleSummary> out;
    for (const auto& col : columns) out.push_back(summarize(col));
    return out;
}

StateMatrix predict_all(const ModelSet& models, const ImageStack& stack, std::span<const std::size_t> frames,
                        const std::optional<PreprocessStats>& stats) {
    std::vector<std::size_t> idx(frames.begin(), frames.end());
    if (idx.empty()) {
        idx.resize(stack.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
    }
    for (const auto& m : models.models) {
        if (m.kind == FilterKind::Gaussian) continue;
        check_boundary(m.boundary, stack.height(), stack.width());
        for (const auto& nb : m.neighbors) check_boundary(nb, stack.height(), stack.width());
    }
    StateMatrix preds(idx.size(), models.models.size());
    std::vector<float> scratch(stack.frame_pixels());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= stack.size()) throw DataError("predict_all: frame index out of range");
        FrameView view = stack.view(idx[i]);
        if (stats) {
            std::copy(view.pixels.begin(), view.pixels.end(), scratch.begin());
            apply_stats_inplace(scratch, *stats);
            view.pixels = scratch;
        }
        for (std::size_t s = 0; s < models.models.size(); ++s) {
            const auto& m = models.models[s];
            preds.at(i, s) = static_cast<std::uint8_t>(classify_score(score_frame(m, view), m.threshold));
        }
    }
    return preds;
}

std::vector<std::pair<int, int>> center_neighbor_pairs(const GridShape& g) {
    if (g.rows < 3 || g.cols < 3 || g.rows % 2 == 0 || g.cols % 2 == 0) return {};
    const int ci = g.rows / 2;
    const int cj = g.cols / 2;
    auto id = [&](int i, int j) { return i * g.cols + j + 1; };
    const int center = id(ci, cj);
    return {{center, id(ci - 1, cj)}, {center, id(ci, cj - 1)}, {center, id(ci, cj + 1)}, {center, id(ci + 1, cj)}};
}

std::vector<std::pair<int, int>> edge_edge_pairs(const GridShape& g) {
    if (g.rows < 2 || g.cols < 2) return {};
    const int tl = 1;
    const int tr = g.cols;
    const int bl = (g.rows - 1) * g.cols + 1;
    const int br = g.rows * g.cols;
    return {{tl, tr}, {bl, br}, {tl, bl}, {tr, br}, {tl, br}, {tr, bl}};
}

std::optional<double> mean_abs(std::span<const PairValue> pairs) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& p : pairs) {
        if (p.value) {
            sum += std::abs(*p.value);
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

double MetricsReport::mean_fidelity() const {
    if (fidelity.empty()) return 0.0;
    return std::accumulate(fidelity.begin(), fidelity.end(), 0.0) / static_cast<double>(fidelity.size());
}

MetricsReport evaluate_predictions(const StateMatrix& preds, const StateMatrix& labels, std::span<const int> sites,
                                   const GridShape& grid, const StateMatrix* baseline_preds) {
    if (preds.n_images != labels.n_images) throw DataError("evaluate: prediction/label frame count mismatch");
    if (preds.n_sites != sites.size()) throw DataError("evaluate: prediction columns do not match sites");
    MetricsReport report;
    report.sites.assign(sites.begin(), sites.end());
    std::vector<std::vector<std::uint8_t>> cols(sites.size());
    for (std::size_t s = 0; s < sites.size(); ++s) {
        const auto site_col = static_cast<std::size_t>(sites[s] - 1);
        if (site_col >= labels.n_sites) throw DataError("evaluate: site has no label column");
        cols[s] = preds.column(s);
        const auto c = confusion(cols[s], labels.column(site_col));
        report.counts.push_back(c);
        report.fidelity.push_back(fidelity(c));
    }
    if (baseline_preds) {
        if (baseline_preds->n_images != preds.n_images || baseline_preds->n_sites != preds.n_sites)
            throw DataError("evaluate: baseline prediction table has a different shape");
        for (std::size_t s = 0; s < sites.size(); ++s) {
            const auto site_col = static_cast<std::size_t>(sites[s] - 1);
            const double fb = fidelity(confusion(baseline_preds->column(s), labels.column(site_col)));
            report.baseline_fidelity.push_back(fb);
            report.reduction.push_back(fb < 1.0 ? std::optional(infidelity_reduction(fb, report.fidelity[s]))
                                                : std::nullopt);
        }
    }

    auto column_of = [&](int site) -> const std::vector<std::uint8_t>* {
        for (std::size_t s = 0; s < sites.size(); ++s)
            if (sites[s] == site) return &cols[s];
        return nullptr;
    };
    auto pair_values = [&](const std::vector<std::pair<int, int>>& pairs) {
        std::vector<PairValue> out;
        for (auto [k, l] : pairs) {
            PairValue pv{k, l, std::nullopt};
            const auto* ck = column_of(k);
            const auto* cl = column_of(l);
            if (ck && cl) {
                try {
                    pv.value = cross_fidelity(*ck, *cl);
                } catch (const DataError&) {
                    pv.value = std::nullopt;
                }
            }
            out.push_back(pv);
        }
        return out;
    };
    report.center_neighbor = pair_values(center_neighbor_pairs(grid));
    report.edge_edge = pair_values(edge_edge_pairs(grid));
    report.mean_abs_center_neighbor = mean_abs(report.center_neighbor);
    report.mean_abs_edge_edge = mean_abs(report.edge_edge);
    return report;
}

MetricsReport evaluate(const ModelSet& models, const ImageStack& stack, const StateMatrix& labels,
                       const ModelSet* baseline, std::span<const std::size_t> frames,
                       const std::optional<PreprocessStats>& stats) {
    if (labels.n_images != stack.size()) throw DataError("evaluate: label/frame count mismatch");
    std::vector<std::size_t> idx(frames.begin(), frames.end());
    if (idx.empty()) {
        idx.resize(stack.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
    }
    StateMatrix sub_labels(idx.size(), labels.n_sites);
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t s = 0; s < labels.n_sites; ++s) sub_labels.at(i, s) = labels.at(idx[i], s);

    std::vector<int> sites;
    for (const auto& m : models.models) sites.push_back(m.site_index);
    const StateMatrix preds = predict_all(models, stack, idx, stats);
    std::optional<StateMatrix> base;
    if (baseline) {
        std::vector<int> base_sites;
        for (const auto& m : baseline->models) base_sites.push_back(m.site_index);
        if (base_sites != sites) throw DataError("evaluate: baseline covers different sites");
        base = predict_all(*baseline, stack, idx, stats);
    }
    return evaluate_predictions(preds, sub_labels, sites, models.grid, base ? &*base : nullptr);
}

}  // namespace mfr
