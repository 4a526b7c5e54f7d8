#include "mfr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "mfr/error.hpp"
#include "mfr/locate.hpp"
#include "mfr/rng.hpp"

namespace mfr {

TuneOptions ExperimentOptions::tune_options() const {
    TuneOptions t;
    t.s_grid = s_grid;
    t.theta_grid = TuneOptions::theta_range(theta_grid.lo, theta_grid.hi, theta_grid.step);
    t.alpha = alpha;
    t.neighbors = neighbors;
    t.gaussian_cutoff = gaussian_cutoff;
    t.square_width = square_width;
    return t;
}

void RunConfig::validate() const {
    sim.validate();
    if (exposure_sweep_ms.empty()) throw ConfigError("run config: exposure_sweep_ms must be non-empty");
    for (double e : exposure_sweep_ms)
        if (!(e > 0.0)) throw ConfigError("run config: exposures must be > 0");
    if (experiment.kinds.empty()) throw ConfigError("run config: kinds must be non-empty");
    if (experiment.s_grid.empty()) throw ConfigError("run config: s_grid must be non-empty");
    for (int s : experiment.s_grid)
        if (s < 2) throw ConfigError("run config: s_grid entries must be >= 2");
    const auto& tg = experiment.theta_grid;
    if (!(tg.lo > 0.0 && tg.hi < 1.0 && tg.lo <= tg.hi && tg.step > 0.0))
        throw ConfigError("run config: theta_grid must satisfy 0 < lo <= hi < 1 and step > 0");
    if (experiment.n_shuffles < 2) throw ConfigError("run config: n_shuffles must be >= 2");
    if (!(experiment.alpha >= 0.0)) throw ConfigError("run config: alpha must be >= 0");
    if (experiment.threads < 1) throw ConfigError("run config: threads must be >= 1");
}

RunConfig run_config_from_json(const Json& j) {
    static const std::set<std::string> allowed{
        "sim",           "exposure_sweep_ms", "kinds",          "crop",           "alpha",
        "s_grid",        "theta_grid",        "n_shuffles",     "seed",           "output_dir",
        "label_path",    "label_path_options", "crossfid_frames", "gaussian_cutoff", "square_width",
        "min_distance_px", "window_radius",   "neighbor_radius_factor", "neighbor_all_sites_up_to",
        "threads",       "cache"};
    if (!j.is_object()) throw ConfigError("run config: expected a JSON object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw ConfigError("run config: unknown key '" + key + "'");
    RunConfig c;
    auto& e = c.experiment;
    try {
        if (j.contains("sim")) c.sim = sim_config_from_json(j.at("sim"));
        if (j.contains("exposure_sweep_ms")) c.exposure_sweep_ms = j.at("exposure_sweep_ms").get<std::vector<double>>();
        if (j.contains("kinds")) {
            e.kinds.clear();
            for (const auto& k : j.at("kinds")) e.kinds.push_back(parse_filter_kind(k.get<std::string>()));
        }
        if (j.contains("crop") && !j.at("crop").is_null()) {
            const auto r = j.at("crop").get<std::array<std::size_t, 4>>();
            e.crop = CropRect{r[0], r[1], r[2], r[3]};
        }
        if (j.contains("alpha")) e.alpha = j.at("alpha").get<double>();
        if (j.contains("s_grid")) e.s_grid = j.at("s_grid").get<std::vector<int>>();
        if (j.contains("theta_grid")) {
            const auto& tg = j.at("theta_grid");
            e.theta_grid.lo = tg.value("lo", e.theta_grid.lo);
            e.theta_grid.hi = tg.value("hi", e.theta_grid.hi);
            e.theta_grid.step = tg.value("step", e.theta_grid.step);
        }
        if (j.contains("n_shuffles")) e.n_shuffles = j.at("n_shuffles").get<std::size_t>();
        if (j.contains("seed")) e.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        if (j.contains("label_path")) e.label_path = j.at("label_path").get<bool>();
        if (j.contains("label_path_options")) {
            const auto& lp = j.at("label_path_options");
            e.label_options.attenuation = lp.value("attenuation", e.label_options.attenuation);
            e.label_options.rate_scale = lp.value("rate_scale", e.label_options.rate_scale);
            e.label_options.gaussian_cutoff = lp.value("gaussian_cutoff", e.label_options.gaussian_cutoff);
        }
        if (j.contains("crossfid_frames")) e.crossfid_frames = j.at("crossfid_frames").get<std::size_t>();
        if (j.contains("gaussian_cutoff")) e.gaussian_cutoff = j.at("gaussian_cutoff").get<double>();
        if (j.contains("square_width")) e.square_width = j.at("square_width").get<int>();
        if (j.contains("min_distance_px")) e.min_distance_px = j.at("min_distance_px").get<double>();
        if (j.contains("window_radius")) e.window_radius = j.at("window_radius").get<int>();
        if (j.contains("neighbor_radius_factor")) e.neighbors.radius_factor = j.at("neighbor_radius_factor").get<double>();
        if (j.contains("neighbor_all_sites_up_to"))
            e.neighbors.all_sites_up_to = j.at("neighbor_all_sites_up_to").get<std::size_t>();
        if (j.contains("threads")) e.threads = j.at("threads").get<int>();
        if (j.contains("cache")) c.cache = j.at("cache").get<bool>();
    } catch (const Json::exception& ex) {
        throw ConfigError(std::string("run config: ") + ex.what());
    }
    c.validate();
    return c;
}

Json to_json(const RunConfig& c) {
    const auto& e = c.experiment;
    Json kinds = Json::array();
    for (auto k : e.kinds) kinds.push_back(std::string(to_string(k)));
    Json crop = nullptr;
    if (e.crop) crop = Json::array({e.crop->top, e.crop->left, e.crop->height, e.crop->width});
    return {{"sim", to_json(c.sim)},
            {"exposure_sweep_ms", c.exposure_sweep_ms},
            {"kinds", kinds},
            {"crop", crop},
            {"alpha", e.alpha},
            {"s_grid", e.s_grid},
            {"theta_grid", {{"lo", e.theta_grid.lo}, {"hi", e.theta_grid.hi}, {"step", e.theta_grid.step}}},
            {"n_shuffles", e.n_shuffles},
            {"seed", e.seed},
            {"output_dir", c.output_dir.string()},
            {"label_path", e.label_path},
            {"label_path_options",
             {{"attenuation", e.label_options.attenuation},
              {"rate_scale", e.label_options.rate_scale},
              {"gaussian_cutoff", e.label_options.gaussian_cutoff}}},
            {"crossfid_frames", e.crossfid_frames},
            {"gaussian_cutoff", e.gaussian_cutoff},
            {"square_width", e.square_width},
            {"min_distance_px", e.min_distance_px},
            {"window_radius", e.window_radius},
            {"neighbor_radius_factor", e.neighbors.radius_factor},
            {"neighbor_all_sites_up_to", e.neighbors.all_sites_up_to},
            {"threads", e.threads},
            {"cache", c.cache}};
}

const KindResult* ExposureResult::find(FilterKind kind) const {
    for (const auto& k : kinds)
        if (k.kind == kind) return &k;
    return nullptr;
}

namespace {

constexpr std::uint64_t kCrossfidSalt = 0xC5F1DE11ULL;

void apply_crop(LabeledImageStack& data, const std::optional<CropRect>& rect) {
    if (!rect) return;
    data.images = crop(data.images, rect->top, rect->left, rect->height, rect->width);
}

LabeledImageStack simulate_one(const SimConfig& sim, const ExperimentOptions& options, StateMatrix& labels) {
    LabeledImageStack data = generate_dataset(sim, options.threads);
    labels = options.label_path ? generate_label_path(sim, data.truth, options.label_options, options.threads)
                                : data.truth;
    apply_crop(data, options.crop);
    return data;
}

SimConfig crossfid_config(const SimConfig& sim, std::size_t n) {
    SimConfig cf = sim;
    cf.seed = hash_combine(sim.seed, kCrossfidSalt);
    cf.n_images = n;
    return cf;
}

}  // namespace

ExposureData simulate_exposure(const SimConfig& sim, const ExperimentOptions& options) {
    ExposureData out;
    out.train = simulate_one(sim, options, out.train_labels);
    if (options.crossfid_frames > 0)
        out.crossfid = simulate_one(crossfid_config(sim, options.crossfid_frames), options, out.crossfid_labels);
    return out;
}

ExposureResult run_exposure(const ExposureData& data, const ExperimentOptions& options) {
    const auto& images = data.train.images;
    const auto& labels = data.train_labels;
    const auto& geom = data.train.config.geometry;
    const std::size_t n_sites = labels.n_sites;
    if (labels.n_images != images.size()) throw DataError("run_exposure: label/frame count mismatch");
    if (options.n_shuffles < 2) throw ConfigError("run_exposure: need at least 2 shuffles");

    LocateOptions loc;
    loc.n_sites = n_sites;
    loc.min_distance_px = options.min_distance_px > 0.0 ? options.min_distance_px : geom.spacing_px / 2.0;
    loc.window_radius =
        options.window_radius > 0 ? options.window_radius : std::max(2, static_cast<int>(std::lround(geom.spacing_px / 2.0)));
    const TuneOptions tune = options.tune_options();
    const std::size_t n_kinds = options.kinds.size();
    const auto gauss_pos = std::find(options.kinds.begin(), options.kinds.end(), FilterKind::Gaussian);
    const bool have_gauss = gauss_pos != options.kinds.end();
    const auto gauss_index = static_cast<std::size_t>(gauss_pos - options.kinds.begin());

    // [kind][shuffle][site]
    std::vector<std::vector<std::vector<double>>> site_f(n_kinds);
    std::vector<std::vector<std::vector<PairValue>>> pairs(n_kinds);
    std::vector<std::vector<std::optional<double>>> cnn(n_kinds), ee(n_kinds);

    ExposureResult result;
    result.exposure_ms = data.train.config.exposure_ms;
    result.kinds.resize(n_kinds);

    for (std::size_t sh = 0; sh < options.n_shuffles; ++sh) {
        const std::uint64_t seed = shuffle_seed(options.seed, sh);
        const DatasetSplit split = split_dataset(images.size(), {0.6, 0.2, 0.2}, seed);
        const PreprocessStats stats = fit_stats(images, split.train_idx);
        const ImageStack norm = apply_stats(images, stats);
        const SiteGeometry sites = locate_sites(mean_image(norm, split.train_idx), loc);
        result.geometry.push_back(sites);
        FrameAudit audit(images.size());
        const TrainingSet ts{norm, labels, split, sites, &audit};

        for (std::size_t ki = 0; ki < n_kinds; ++ki) {
            const FilterKind kind = options.kinds[ki];
            ModelSet models = train_all_sites(ts, kind, tune, options.threads);
            if (!models.errors.empty()) {
                const auto& err = models.errors.front();
                throw DataError("train " + std::string(to_string(kind)) + " site " + std::to_string(err.site_index) +
                                " (shuffle seed " + std::to_string(seed) + "): " + err.message);
            }
            const MetricsReport rep = evaluate(models, norm, labels, nullptr, split.test_idx);
            site_f[ki].push_back(rep.fidelity);
            if (data.crossfid) {
                const MetricsReport cf =
                    evaluate(models, data.crossfid->images, data.crossfid_labels, nullptr, {}, stats);
                std::vector<PairValue> pv = cf.center_neighbor;
                pv.insert(pv.end(), cf.edge_edge.begin(), cf.edge_edge.end());
                pairs[ki].push_back(std::move(pv));
                cnn[ki].push_back(cf.mean_abs_center_neighbor);
                ee[ki].push_back(cf.mean_abs_edge_edge);
            }
            if (sh == 0) {
                result.kinds[ki].complexity = count_complexity(models);
                result.kinds[ki].first_models = std::move(models);
            }
        }

        const std::size_t touched = audit.count_touched(split.test_idx);
        result.audit.push_back({sh, split.train_idx.size(), split.val_idx.size(), split.test_idx.size(), touched});
        if (touched != 0)
            throw DataError("audit: training read " + std::to_string(touched) + " test frames (shuffle seed " +
                            std::to_string(seed) + ")");
    }

    auto mean_of = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    auto summarize_opt = [](const std::vector<std::optional<double>>& v) -> std::optional<ShuffleSummary> {
        std::vector<double> defined;
        for (const auto& x : v)
            if (x) defined.push_back(*x);
        if (defined.empty()) return std::nullopt;
        return summarize(defined);
    };

    for (std::size_t ki = 0; ki < n_kinds; ++ki) {
        KindResult& kr = result.kinds[ki];
        kr.kind = options.kinds[ki];
        std::vector<double> infid;
        for (const auto& f : site_f[ki]) infid.push_back(1.0 - mean_of(f));
        kr.mean_infidelity = summarize(infid);
        for (std::size_t s = 0; s < n_sites; ++s) {
            std::vector<double> col;
            for (const auto& f : site_f[ki]) col.push_back(f[s]);
            kr.site_fidelity.push_back(summarize(col));
        }
        if (have_gauss) {
            std::vector<double> eta_mean;
            for (std::size_t sh = 0; sh < options.n_shuffles; ++sh) {
                const double fg = mean_of(site_f[gauss_index][sh]);
                eta_mean.push_back(fg < 1.0 ? infidelity_reduction(fg, mean_of(site_f[ki][sh])) : std::nan(""));
            }
            kr.mean_reduction = summarize(eta_mean);
            for (std::size_t s = 0; s < n_sites; ++s) {
                std::vector<double> col;
                for (std::size_t sh = 0; sh < options.n_shuffles; ++sh) {
                    const double fg = site_f[gauss_index][sh][s];
                    col.push_back(fg < 1.0 ? infidelity_reduction(fg, site_f[ki][sh][s]) : std::nan(""));
                }
                kr.site_reduction.push_back(summarize(col));
            }
        }
        if (data.crossfid && !pairs[ki].empty()) {
            const std::size_t n_cnn = center_neighbor_pairs(kr.first_models.grid).size();
            for (std::size_t p = 0; p < pairs[ki].front().size(); ++p) {
                PairSummary ps;
                ps.k = pairs[ki].front()[p].k;
                ps.l = pairs[ki].front()[p].l;
                ps.center_neighbor = p < n_cnn;
                std::vector<double> vals;
                for (const auto& row : pairs[ki])
                    if (row[p].value) vals.push_back(*row[p].value);
                ps.n_defined = vals.size();
                ps.value = summarize(vals);
                kr.cross_fidelity.push_back(std::move(ps));
            }
            kr.mean_abs_center_neighbor = summarize_opt(cnn[ki]);
            kr.mean_abs_edge_edge = summarize_opt(ee[ki]);
        }
    }
    return result;
}

namespace {

struct ExposureCache {
    std::filesystem::path dir;
    bool enabled = true;

    LabeledImageStack load_or_simulate(const SimConfig& sim, const ExperimentOptions& options, StateMatrix& labels) const {
        Json key = to_json(sim);
        if (options.label_path) {
            key["label_path"] = {{"attenuation", options.label_options.attenuation},
                                 {"rate_scale", options.label_options.rate_scale},
                                 {"gaussian_cutoff", options.label_options.gaussian_cutoff}};
        }
        const auto stem = dir / content_hash(key.dump());
        if (enabled && std::filesystem::exists(stem.string() + ".qimg") && std::filesystem::exists(stem.string() + ".json")) {
            Dataset ds = read_dataset(stem);
            LabeledImageStack out{std::move(ds.images), std::move(ds.meta.truth), ds.meta.config};
            labels = options.label_path && ds.meta.labels ? *ds.meta.labels : out.truth;
            if (!options.label_path || ds.meta.labels) {
                apply_crop(out, options.crop);
                return out;
            }
        }
        ExperimentOptions uncropped = options;
        uncropped.crop.reset();
        LabeledImageStack out = simulate_one(sim, uncropped, labels);
        if (enabled) {
            DatasetMeta meta;
            meta.config = sim;
            meta.truth = out.truth;
            if (options.label_path) meta.labels = labels;
            write_dataset(stem, out.images, meta);
        }
        apply_crop(out, options.crop);
        return out;
    }
};

std::string exposure_tag(double e) { return format_number(e) + "ms"; }

struct RunOutputs {
    SweepReport sweep;
    std::string fidelity = "exposure_ms,site,kind,F,stderr\n";
    std::string reduction = "exposure_ms,site,kind,eta,stderr\n";
    std::string crossfid = "exposure_ms,kind,k,l,group,F_CF,stderr\n";
    std::string complexity = "exposure_ms,kind,n_trainable,n_multiplications,n_nonlinear,min_site_params,max_site_params\n";
    std::string audit = "exposure_ms,shuffle,train_frames,val_frames,test_frames,test_frames_touched\n";
    bool any_crossfid = false;

    void add(const ExposureResult& r) {
        const std::string e = format_number(r.exposure_ms);
        for (const auto& k : r.kinds) {
            const std::string kind(to_string(k.kind));
            sweep.rows.push_back({r.exposure_ms, kind, k.mean_infidelity.mean, k.mean_infidelity.std_error});
            for (std::size_t s = 0; s < k.site_fidelity.size(); ++s)
                fidelity += e + "," + std::to_string(s + 1) + "," + kind + "," + format_number(k.site_fidelity[s].mean) +
                            "," + format_number(k.site_fidelity[s].std_error) + "\n";
            for (std::size_t s = 0; s < k.site_reduction.size(); ++s)
                reduction += e + "," + std::to_string(s + 1) + "," + kind + "," +
                             format_number(k.site_reduction[s].mean) + "," +
                             format_number(k.site_reduction[s].std_error) + "\n";
            if (k.mean_reduction)
                reduction += e + ",mean," + kind + "," + format_number(k.mean_reduction->mean) + "," +
                             format_number(k.mean_reduction->std_error) + "\n";
            for (const auto& p : k.cross_fidelity) {
                any_crossfid = true;
                const bool defined = p.n_defined > 0;
                crossfid += e + "," + kind + "," + std::to_string(p.k) + "," + std::to_string(p.l) + "," +
                            (p.center_neighbor ? "C-NN" : "E-E") + "," +
                            (defined ? format_number(p.value.mean) : "nan") + "," +
                            (defined ? format_number(p.value.std_error) : "nan") + "\n";
            }
            if (k.mean_abs_center_neighbor)
                crossfid += e + "," + kind + ",mean,abs,C-NN," + format_number(k.mean_abs_center_neighbor->mean) + "," +
                            format_number(k.mean_abs_center_neighbor->std_error) + "\n";
            if (k.mean_abs_edge_edge)
                crossfid += e + "," + kind + ",mean,abs,E-E," + format_number(k.mean_abs_edge_edge->mean) + "," +
                            format_number(k.mean_abs_edge_edge->std_error) + "\n";
            const auto& c = k.complexity;
            complexity += e + "," + kind + "," + std::to_string(c.n_trainable) + "," +
                          std::to_string(c.n_multiplications) + "," + std::to_string(c.n_nonlinear) + "," +
                          std::to_string(c.min_site_params) + "," + std::to_string(c.max_site_params) + "\n";
        }
        for (const auto& a : r.audit)
            audit += e + "," + std::to_string(a.shuffle) + "," + std::to_string(a.train_frames) + "," +
                     std::to_string(a.val_frames) + "," + std::to_string(a.test_frames) + "," +
                     std::to_string(a.test_frames_touched) + "\n";
    }

    void write(const std::filesystem::path& dir) const {
        const std::string csv = sweep_csv(sweep);
        write_text_file(dir / "sweep.csv", csv);
        // Chart from the written values so `plot` on sweep.csv reproduces it byte for byte.
        if (!sweep.rows.empty()) emit_svg(parse_sweep_csv(csv), dir / "sweep.svg");
        write_text_file(dir / "fidelity.csv", fidelity);
        write_text_file(dir / "reduction.csv", reduction);
        write_text_file(dir / "complexity.csv", complexity);
        write_text_file(dir / "audit.csv", audit);
        if (any_crossfid) write_text_file(dir / "crossfidelity.csv", crossfid);
    }
};

template <typename E>
[[noreturn]] void rethrow_with(const E& e, const std::string& context) {
    throw E(context + ": " + e.what());
}

}  // namespace

SweepReport run_pipeline(const RunConfig& config) {
    config.validate();
    const auto& dir = config.output_dir;
    std::filesystem::create_directories(dir);
    write_text_file(dir / "run_config.json", to_json(config).dump(2) + "\n");
    const ExposureCache cache{dir / "cache", config.cache};

    RunOutputs outputs;
    for (double exposure : config.exposure_sweep_ms) {
        const std::string context =
            "exposure " + exposure_tag(exposure) + " (sim seed " + std::to_string(config.sim.seed) + ", shuffle seed " +
            std::to_string(config.experiment.seed) + ")";
        try {
            SimConfig sim = config.sim;
            sim.exposure_ms = exposure;
            ExposureData data;
            data.train = cache.load_or_simulate(sim, config.experiment, data.train_labels);
            if (config.experiment.crossfid_frames > 0)
                data.crossfid = cache.load_or_simulate(crossfid_config(sim, config.experiment.crossfid_frames),
                                                       config.experiment, data.crossfid_labels);
            const ExposureResult result = run_exposure(data, config.experiment);
            for (const auto& k : result.kinds)
                save_model_set(dir / "models" / exposure_tag(exposure) / std::string(to_string(k.kind)), k.first_models);
            outputs.add(result);
        } catch (const ConfigError& e) {
            outputs.write(dir);
            rethrow_with(e, context);
        } catch (const DataError& e) {
            outputs.write(dir);
            rethrow_with(e, context);
        } catch (const NumericalError& e) {
            outputs.write(dir);
            rethrow_with(e, context);
        }
    }
    outputs.write(dir);
    return outputs.sweep;
}

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw DataError("spearman: need two equal-length samples of size >= 2");
    auto ranks = [](std::span<const double> v) {
        std::vector<std::size_t> order(v.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < order.size();) {
            std::size_t j = i;
            while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x);
    const auto ry = ranks(y);
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(rx.size());
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(ry.size());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace mfr
