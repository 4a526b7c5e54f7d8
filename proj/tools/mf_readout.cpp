// mf-readout: simulate, preprocess, locate, train, classify, evaluate and sweep.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include "mfr/error.hpp"
#include "mfr/locate.hpp"
#include "mfr/metrics.hpp"
#include "mfr/pipeline.hpp"
#include "mfr/serialize.hpp"
#include "mfr/sim.hpp"
#include "mfr/svg.hpp"
#include "mfr/train.hpp"

namespace fs = std::filesystem;
using namespace mfr;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
    std::string config;
};

const std::array<double, 3> kSplit{0.6, 0.2, 0.2};

std::array<std::size_t, 4> parse_crop(const std::string& text) {
    std::array<std::size_t, 4> out{};
    std::stringstream ss(text);
    std::string tok;
    std::size_t i = 0;
    while (std::getline(ss, tok, ',')) {
        if (i >= 4) throw ConfigError("--crop expects r,c,h,w");
        try {
            std::size_t used = 0;
            const long v = std::stol(tok, &used);
            if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
            out[i++] = static_cast<std::size_t>(v);
        } catch (const std::logic_error&) {
            throw ConfigError("--crop: bad value '" + tok + "'");
        }
    }
    if (i != 4) throw ConfigError("--crop expects r,c,h,w");
    return out;
}

const StateMatrix& labels_of(const Dataset& ds) { return ds.meta.labels ? *ds.meta.labels : ds.meta.truth; }

std::uint64_t split_seed_of(const Dataset& ds, const Globals& g) {
    if (g.seed_set) return g.seed;
    return ds.meta.split_seed.value_or(g.seed);
}

int cmd_simulate(const Globals& g, const std::string& out, bool label_path) {
    if (g.config.empty()) throw ConfigError("simulate: --config is required");
    SimConfig sim = sim_config_from_json(read_json_file(g.config));
    if (g.seed_set) sim.seed = g.seed;
    LabeledImageStack data = generate_dataset(sim, g.threads);
    DatasetMeta meta;
    meta.config = sim;
    meta.truth = data.truth;
    if (label_path) meta.labels = generate_label_path(sim, data.truth, {}, g.threads);
    write_dataset(out, data.images, meta);
    return 0;
}

int cmd_preprocess(const Globals& g, const std::string& in, const std::string& crop_text, const std::string& out) {
    Dataset ds = read_dataset(in);
    if (!crop_text.empty()) {
        const auto r = parse_crop(crop_text);
        ds.images = crop(ds.images, r[0], r[1], r[2], r[3]);
        ds.meta.crop = r;
    }
    const DatasetSplit split = split_dataset(ds.images.size(), kSplit, g.seed);
    const PreprocessStats stats = fit_stats(ds.images, split.train_idx);
    ds.images = apply_stats(ds.images, stats);
    ds.meta.stats = stats;
    ds.meta.split_seed = g.seed;
    write_dataset(out, ds.images, ds.meta);
    return 0;
}

int cmd_locate(const Globals& g, const std::string& in, std::size_t n_sites, double min_distance, int window,
               const std::string& out) {
    const Dataset ds = read_dataset(in);
    std::vector<std::size_t> frames;
    if (ds.meta.split_seed) frames = split_dataset(ds.images.size(), kSplit, split_seed_of(ds, g)).train_idx;
    const double spacing = ds.meta.config.geometry.spacing_px;
    LocateOptions opts;
    opts.n_sites = n_sites;
    opts.min_distance_px = min_distance > 0.0 ? min_distance : spacing / 2.0;
    opts.window_radius = window > 0 ? window : std::max(2, static_cast<int>(std::lround(spacing / 2.0)));
    const SiteGeometry geometry = locate_sites(mean_image(ds.images, frames), opts);
    write_text_file(out, to_json(geometry).dump(2) + "\n");
    return 0;
}

int cmd_train(const Globals& g, const std::string& in, const std::string& kind_name, const std::string& geometry_path,
              double alpha, const std::string& out) {
    const FilterKind kind = parse_filter_kind(kind_name);
    if (alpha < 0.0) throw ConfigError("--alpha must be >= 0");
    const Dataset ds = read_dataset(in);
    const SiteGeometry geometry = site_geometry_from_json(read_json_file(geometry_path));
    const DatasetSplit split = split_dataset(ds.images.size(), kSplit, split_seed_of(ds, g));
    FrameAudit audit(ds.images.size());
    const TrainingSet ts{ds.images, labels_of(ds), split, geometry, &audit};
    TuneOptions opts;
    opts.alpha = alpha;
    const ModelSet models = train_all_sites(ts, kind, opts, g.threads);
    if (!models.errors.empty()) {
        for (const auto& e : models.errors) std::cerr << "site " << e.site_index << ": " << e.message << "\n";
        throw NumericalError("train: " + std::to_string(models.errors.size()) + " site(s) failed");
    }
    if (audit.count_touched(split.test_idx) != 0) throw DataError("train: test frames were read during training");
    save_model_set(out, models);
    return 0;
}

int cmd_classify(const std::string& model_path, const std::string& in, const std::string& out) {
    const FilterModel model = filter_model_from_json(read_json_file(model_path));
    const Dataset ds = read_dataset(in);
    std::string csv = "frame,site,y_hat,y_bin\n";
    for (std::size_t k = 0; k < ds.images.size(); ++k) {
        const double y = score_frame(model, ds.images.view(k));
        csv += std::to_string(k) + "," + std::to_string(model.site_index) + "," + format_number(y) + "," +
               std::to_string(classify_score(y, model.threshold)) + "\n";
    }
    write_text_file(out, csv);
    return 0;
}

int cmd_evaluate(const Globals& g, const std::string& models_dir, const std::string& in, const std::string& baseline_dir,
                 const std::string& out) {
    const ModelSet models = load_model_set(models_dir);
    std::optional<ModelSet> baseline;
    if (!baseline_dir.empty()) baseline = load_model_set(baseline_dir);
    const Dataset ds = read_dataset(in);
    std::vector<std::size_t> frames;
    if (ds.meta.split_seed) frames = split_dataset(ds.images.size(), kSplit, split_seed_of(ds, g)).test_idx;
    const MetricsReport rep = evaluate(models, ds.images, labels_of(ds), baseline ? &*baseline : nullptr, frames);
    const std::string kind(to_string(models.kind));
    fs::create_directories(out);

    // A single evaluation has no shuffle spread, so stderr columns are nan.
    std::string fid = "site,kind,F,stderr\n";
    for (std::size_t i = 0; i < rep.sites.size(); ++i)
        fid += std::to_string(rep.sites[i]) + "," + kind + "," + format_number(rep.fidelity[i]) + ",nan\n";
    write_text_file(fs::path(out) / "fidelity.csv", fid);

    std::string cf = "k,l,F_CF,stderr\n";
    auto pair_rows = [&](const std::vector<PairValue>& pairs) {
        for (const auto& p : pairs)
            cf += std::to_string(p.k) + "," + std::to_string(p.l) + "," +
                  (p.value ? format_number(*p.value) : std::string("nan")) + ",nan\n";
    };
    pair_rows(rep.center_neighbor);
    pair_rows(rep.edge_edge);
    write_text_file(fs::path(out) / "crossfidelity.csv", cf);

    if (baseline) {
        std::string red = "site,eta\n";
        for (std::size_t i = 0; i < rep.sites.size(); ++i)
            red += std::to_string(rep.sites[i]) + "," +
                   (rep.reduction[i] ? format_number(*rep.reduction[i]) : std::string("nan")) + "\n";
        write_text_file(fs::path(out) / "reduction.csv", red);
    }
    return 0;
}

int cmd_complexity(const std::string& models_dir, const std::string& out) {
    const ComplexityReport c = count_complexity(load_model_set(models_dir));
    std::string csv = "kind,n_trainable,n_multiplications,n_nonlinear,min_site_params,max_site_params\n";
    csv += std::string(to_string(c.kind)) + "," + std::to_string(c.n_trainable) + "," +
           std::to_string(c.n_multiplications) + "," + std::to_string(c.n_nonlinear) + "," +
           std::to_string(c.min_site_params) + "," + std::to_string(c.max_site_params) + "\n";
    write_text_file(out, csv);
    return 0;
}

int cmd_sweep(const Globals& g, const std::string& out_override) {
    if (g.config.empty()) throw ConfigError("sweep: --config is required");
    RunConfig rc = run_config_from_json(read_json_file(g.config));
    if (g.seed_set) rc.experiment.seed = g.seed;
    if (g.threads > 1) rc.experiment.threads = g.threads;
    if (!out_override.empty()) rc.output_dir = out_override;
    const SweepReport report = run_pipeline(rc);
    std::cout << sweep_csv(report);
    return 0;
}

int cmd_plot(const std::string& in, const std::string& out) {
    std::ifstream f(in);
    if (!f) throw DataError("cannot open " + in);
    std::stringstream ss;
    ss << f.rdbuf();
    emit_svg(parse_sweep_csv(ss.str()), out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Matched-filter readout of qubit-array images"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Seed for simulation, splits and shuffles")
        ->each([&](const std::string&) { g.seed_set = true; });
    app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--config", g.config, "SimConfig JSON (simulate) or RunConfig JSON (sweep)");
    app.fallthrough();

    std::string in, out, crop_text, kind, geometry, model, models, baseline;
    std::size_t n_sites = 9;
    double min_distance = 0.0, alpha = 0.0;
    int window = 0;
    bool label_path = false;

    auto* sim = app.add_subcommand("simulate", "Render a labeled image stack (<out>.qimg + <out>.json)");
    sim->add_option("--out", out, "Output stem")->required();
    sim->add_flag("--label-path", label_path, "Also store labels from the high-SNR label path");

    auto* pre = app.add_subcommand("preprocess", "Crop and normalize with training-split statistics");
    pre->add_option("--in", in, "Input stem")->required();
    pre->add_option("--crop", crop_text, "Crop rectangle r,c,h,w");
    pre->add_option("--out", out, "Output stem")->required();

    auto* loc = app.add_subcommand("locate", "Find site centers on the mean training image");
    loc->add_option("--in", in, "Input stem")->required();
    loc->add_option("--sites", n_sites, "Expected number of sites")->capture_default_str();
    loc->add_option("--min-distance", min_distance, "Peak separation in px (0: half the spacing)");
    loc->add_option("--window", window, "Fit window radius in px (0: half the spacing)");
    loc->add_option("--out", out, "Geometry JSON")->required();

    auto* tr = app.add_subcommand("train", "Tune and train one model per site");
    tr->add_option("--in", in, "Preprocessed stem")->required();
    tr->add_option("--kind", kind, "square|gaussian|mfsite|mfarray")->required();
    tr->add_option("--geometry", geometry, "Geometry JSON from locate")->required();
    tr->add_option("--alpha", alpha, "Ridge regularization")->capture_default_str();
    tr->add_option("--out", out, "Model directory")->required();

    auto* cl = app.add_subcommand("classify", "Score every frame with one site model");
    cl->add_option("--model", model, "Model JSON")->required();
    cl->add_option("--in", in, "Preprocessed stem")->required();
    cl->add_option("--out", out, "Predictions CSV")->required();

    auto* ev = app.add_subcommand("evaluate", "Fidelity, cross-fidelity and reduction on the test split");
    ev->add_option("--models", models, "Model directory")->required();
    ev->add_option("--in", in, "Preprocessed stem")->required();
    ev->add_option("--baseline", baseline, "Baseline model directory for the reduction");
    ev->add_option("--out", out, "Report directory")->required();

    auto* cx = app.add_subcommand("complexity", "Parameter and operation counts of a model set");
    cx->add_option("--models", models, "Model directory")->required();
    cx->add_option("--out", out, "Complexity CSV")->required();

    auto* sw = app.add_subcommand("sweep", "Run the full pipeline over an exposure sweep (--config RunConfig)");
    sw->add_option("--out", out, "Override output_dir");

    auto* pl = app.add_subcommand("plot", "Render sweep.csv as an SVG chart");
    pl->add_option("--in", in, "Sweep CSV")->required();
    pl->add_option("--out", out, "SVG path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*sim) return cmd_simulate(g, out, label_path);
        if (*pre) return cmd_preprocess(g, in, crop_text, out);
        if (*loc) return cmd_locate(g, in, n_sites, min_distance, window, out);
        if (*tr) return cmd_train(g, in, kind, geometry, alpha, out);
        if (*cl) return cmd_classify(model, in, out);
        if (*ev) return cmd_evaluate(g, models, in, baseline, out);
        if (*cx) return cmd_complexity(models, out);
        if (*sw) return cmd_sweep(g, out);
        if (*pl) return cmd_plot(in, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
