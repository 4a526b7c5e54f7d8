#include "mfr/serialize.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mfr/error.hpp"
#include "mfr/qimg.hpp"

namespace mfr {
namespace {

void check_keys(const Json& j, const std::set<std::string>& allowed, const char* what) {
    if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
}

template <typename T>
void read_opt(const Json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

Json pos_json(double r, double c) { return Json::array({r, c}); }

PixelPos pos_from_json(const Json& j) {
    if (!j.is_array() || j.size() != 2) throw DataError("expected [row, col]");
    return {j[0].get<double>(), j[1].get<double>()};
}

std::string site_file_name(int site) { return "site_" + std::to_string(site) + ".json"; }

}  // namespace

Json to_json(const ArrayGeometry& g) {
    return {{"rows", g.rows},
            {"cols", g.cols},
            {"spacing_px", g.spacing_px},
            {"origin_px", pos_json(g.origin_px.row, g.origin_px.col)},
            {"psf_sigma_px", g.psf_sigma_px}};
}

ArrayGeometry geometry_from_json(const Json& j) {
    check_keys(j, {"rows", "cols", "spacing_px", "origin_px", "psf_sigma_px"}, "geometry");
    ArrayGeometry g;
    read_opt(j, "rows", g.rows);
    read_opt(j, "cols", g.cols);
    read_opt(j, "spacing_px", g.spacing_px);
    read_opt(j, "psf_sigma_px", g.psf_sigma_px);
    if (j.contains("origin_px")) g.origin_px = pos_from_json(j.at("origin_px"));
    return g;
}

Json to_json(const SimConfig& c) {
    return {{"geometry", to_json(c.geometry)},
            {"image_height", c.image_height},
            {"image_width", c.image_width},
            {"exposure_ms", c.exposure_ms},
            {"bright_photon_rate", c.bright_photon_rate},
            {"attenuation", c.attenuation},
            {"dark_count_rate", c.dark_count_rate},
            {"read_noise_sigma", c.read_noise_sigma},
            {"p_bright", c.p_bright},
            {"decay_prob_per_ms", c.decay_prob_per_ms},
            {"seed", c.seed},
            {"n_images", c.n_images}};
}

SimConfig sim_config_from_json(const Json& j) {
    check_keys(j,
               {"geometry", "image_height", "image_width", "exposure_ms", "bright_photon_rate", "attenuation",
                "dark_count_rate", "read_noise_sigma", "p_bright", "decay_prob_per_ms", "seed", "n_images"},
               "sim config");
    SimConfig c;
    try {
        if (j.contains("geometry")) c.geometry = geometry_from_json(j.at("geometry"));
        read_opt(j, "image_height", c.image_height);
        read_opt(j, "image_width", c.image_width);
        read_opt(j, "exposure_ms", c.exposure_ms);
        read_opt(j, "bright_photon_rate", c.bright_photon_rate);
        read_opt(j, "attenuation", c.attenuation);
        read_opt(j, "dark_count_rate", c.dark_count_rate);
        read_opt(j, "read_noise_sigma", c.read_noise_sigma);
        read_opt(j, "p_bright", c.p_bright);
        read_opt(j, "decay_prob_per_ms", c.decay_prob_per_ms);
        read_opt(j, "seed", c.seed);
        read_opt(j, "n_images", c.n_images);
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("sim config: ") + e.what());
    }
    return c;
}

Json to_json(const StateMatrix& m) {
    Json rows = Json::array();
    for (std::size_t k = 0; k < m.n_images; ++k) {
        Json row = Json::array();
        for (std::size_t s = 0; s < m.n_sites; ++s) row.push_back(static_cast<int>(m.at(k, s)));
        rows.push_back(std::move(row));
    }
    return rows;
}

StateMatrix state_matrix_from_json(const Json& j) {
    if (!j.is_array()) throw DataError("state matrix: expected an array of arrays");
    const std::size_t n = j.size();
    const std::size_t sites = n ? j[0].size() : 0;
    StateMatrix m(n, sites);
    for (std::size_t k = 0; k < n; ++k) {
        if (j[k].size() != sites) throw DataError("state matrix: ragged rows");
        for (std::size_t s = 0; s < sites; ++s) {
            const int v = j[k][s].get<int>();
            if (v != 0 && v != 1) throw DataError("state matrix: entries must be 0 or 1");
            m.at(k, s) = static_cast<std::uint8_t>(v);
        }
    }
    return m;
}

Json to_json(const PreprocessStats& s) { return {{"train_mean", s.train_mean}, {"train_range", s.train_range}}; }

PreprocessStats stats_from_json(const Json& j) {
    PreprocessStats s{j.at("train_mean").get<double>(), j.at("train_range").get<double>()};
    if (!(s.train_range > 0.0)) throw DataError("preprocess stats: train_range must be > 0");
    return s;
}

Json to_json(const SiteGeometry& g) {
    Json out = Json::array();
    for (const auto& s : g) {
        out.push_back({{"site", s.site_index},
                       {"center", pos_json(s.center.row, s.center.col)},
                       {"sigma", s.sigma},
                       {"amplitude", s.amplitude},
                       {"offset", s.offset},
                       {"fit_failed", s.fit_failed}});
    }
    return out;
}

SiteGeometry site_geometry_from_json(const Json& j) {
    if (!j.is_array()) throw DataError("geometry: expected a list of sites");
    SiteGeometry g;
    for (const auto& e : j) {
        SiteFit s;
        s.site_index = e.at("site").get<int>();
        s.center = pos_from_json(e.at("center"));
        s.sigma = e.at("sigma").get<double>();
        s.amplitude = e.value("amplitude", 0.0);
        s.offset = e.value("offset", 0.0);
        s.fit_failed = e.value("fit_failed", false);
        if (!(s.sigma > 0.0)) throw DataError("geometry: sigma must be > 0");
        g.push_back(s);
    }
    std::sort(g.begin(), g.end(), [](const SiteFit& a, const SiteFit& b) { return a.site_index < b.site_index; });
    return g;
}

Json to_json(const FilterModel& m) {
    Json j{{"kind", std::string(to_string(m.kind))},
           {"site", m.site_index},
           {"s", m.boundary.width},
           {"center", Json::array({m.boundary.center_row, m.boundary.center_col})},
           {"c", m.bias_c},
           {"theta", m.threshold}};
    if (m.kind == FilterKind::Gaussian) {
        Json w = Json::array();
        for (const auto& pw : m.pixel_weights) w.push_back(Json::array({pw.row, pw.col, pw.weight}));
        j["weights"] = std::move(w);
        j["sigma"] = m.sigma;
        j["amplitude"] = m.amplitude;
    } else {
        j["weights"] = m.weights;
    }
    if (m.kind == FilterKind::MFArray) {
        Json nbs = Json::array();
        for (const auto& nb : m.neighbors)
            nbs.push_back({{"site", nb.site_index}, {"center", Json::array({nb.center_row, nb.center_col})}});
        j["neighbors"] = std::move(nbs);
    }
    return j;
}

FilterModel filter_model_from_json(const Json& j) {
    try {
        FilterModel m;
        m.kind = parse_filter_kind(j.at("kind").get<std::string>());
        m.site_index = j.at("site").get<int>();
        const int s = j.at("s").get<int>();
        const auto& center = j.at("center");
        m.boundary = {m.site_index, center.at(0).get<int>(), center.at(1).get<int>(), s};
        m.bias_c = j.value("c", 1.0);
        m.threshold = j.at("theta").get<double>();
        if (m.kind == FilterKind::Gaussian) {
            for (const auto& e : j.at("weights"))
                m.pixel_weights.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<double>()});
            m.sigma = j.value("sigma", 0.0);
            m.amplitude = j.value("amplitude", 0.0);
        } else {
            m.weights = j.at("weights").get<std::vector<double>>();
        }
        if (m.kind == FilterKind::MFArray) {
            for (const auto& nb : j.at("neighbors")) {
                const auto& c = nb.at("center");
                m.neighbors.push_back({nb.at("site").get<int>(), c.at(0).get<int>(), c.at(1).get<int>(), s});
            }
        }
        if (is_matched_filter(m.kind) && m.weights.size() != m.feature_dim())
            throw DataError("model: weight count does not match the feature layout");
        return m;
    } catch (const Json::exception& e) {
        throw DataError(std::string("model file: ") + e.what());
    }
}

void save_model_set(const std::filesystem::path& dir, const ModelSet& set) {
    std::filesystem::create_directories(dir);
    for (const auto& m : set.models) write_text_file(dir / site_file_name(m.site_index), to_json(m).dump(1) + "\n");
}

ModelSet load_model_set(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw DataError("models: " + dir.string() + " is not a directory");
    ModelSet set;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("site_", 0) == 0 && entry.path().extension() == ".json")
            set.models.push_back(filter_model_from_json(read_json_file(entry.path())));
    }
    if (set.models.empty()) throw DataError("models: no site_*.json files in " + dir.string());
    std::sort(set.models.begin(), set.models.end(),
              [](const FilterModel& a, const FilterModel& b) { return a.site_index < b.site_index; });
    set.kind = set.models.front().kind;
    SiteGeometry centers;
    for (const auto& m : set.models) {
        if (m.kind != set.kind) throw DataError("models: mixed kinds in " + dir.string());
        centers.push_back({m.site_index, {double(m.boundary.center_row), double(m.boundary.center_col)}, 1.0});
    }
    set.grid = infer_grid(centers);
    return set;
}

Json to_json(const DatasetMeta& meta) {
    Json j{{"format", "qimg-sidecar"},
           {"version", 1},
           {"seed", meta.config.seed},
           {"config", to_json(meta.config)},
           {"truth", to_json(meta.truth)}};
    if (meta.labels) j["labels"] = to_json(*meta.labels);
    if (meta.stats) j["preprocess"] = to_json(*meta.stats);
    if (meta.split_seed) j["split_seed"] = *meta.split_seed;
    if (meta.crop) j["crop"] = *meta.crop;
    return j;
}

DatasetMeta dataset_meta_from_json(const Json& j) {
    try {
        DatasetMeta meta;
        meta.config = sim_config_from_json(j.at("config"));
        meta.truth = state_matrix_from_json(j.at("truth"));
        if (j.contains("labels")) meta.labels.emplace(state_matrix_from_json(j.at("labels")));
        if (j.contains("preprocess")) meta.stats = stats_from_json(j.at("preprocess"));
        if (j.contains("split_seed")) meta.split_seed = j.at("split_seed").get<std::uint64_t>();
        if (j.contains("crop")) meta.crop = j.at("crop").get<std::array<std::size_t, 4>>();
        return meta;
    } catch (const Json::exception& e) {
        throw DataError(std::string("sidecar: ") + e.what());
    }
}

void write_dataset(const std::filesystem::path& stem, const ImageStack& images, const DatasetMeta& meta) {
    if (meta.truth.n_images != images.size()) throw DataError("dataset: truth rows do not match image count");
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    write_qimg(std::filesystem::path(stem.string() + ".qimg"), images);
    write_text_file(stem.string() + ".json", to_json(meta).dump() + "\n");
}

Dataset read_dataset(const std::filesystem::path& stem) {
    Dataset ds;
    ds.images = read_qimg(std::filesystem::path(stem.string() + ".qimg"));
    ds.meta = dataset_meta_from_json(read_json_file(stem.string() + ".json"));
    if (ds.meta.truth.n_images != ds.images.size())
        throw DataError("dataset " + stem.string() + ": truth rows do not match image count");
    return ds;
}

Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed: " + path.string());
}

std::string content_hash(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace mfr
