#include <doctest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "mfr/error.hpp"
#include "mfr/qimg.hpp"
#include "mfr/serialize.hpp"
#include "mfr/train.hpp"

using namespace mfr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "mfr_test_io";
    fs::create_directories(dir);
    return dir / name;
}

ImageStack ramp_stack(std::size_t n, std::size_t h, std::size_t w) {
    ImageStack s(n, h, w);
    float v = -1.5f;
    for (auto& px : s.data()) px = (v += 0.25f);
    return s;
}

std::uint32_t le32(const std::string& b, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[off + i]);
    return v;
}

std::uint16_t le16(const std::string& b, std::size_t off) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(b[off]) |
                                      (static_cast<unsigned char>(b[off + 1]) << 8));
}

}  // namespace

TEST_CASE("qimg byte layout") {
    const ImageStack s = ramp_stack(2, 3, 4);
    std::ostringstream out;
    write_qimg(out, s);
    const std::string b = out.str();
    REQUIRE(b.size() == 4 + 2 + 4 + 2 + 2 + 2 * 3 * 4 * 4);
    CHECK(b.substr(0, 4) == "QIMG");
    CHECK(le16(b, 4) == 1);
    CHECK(le32(b, 6) == 2);
    CHECK(le16(b, 10) == 3);
    CHECK(le16(b, 12) == 4);
    const std::uint32_t first = le32(b, 14);
    CHECK(std::bit_cast<float>(first) == s.data()[0]);
    const std::uint32_t last = le32(b, b.size() - 4);
    CHECK(std::bit_cast<float>(last) == s.data()[s.data().size() - 1]);
}

TEST_CASE("qimg round trip through a file") {
    const ImageStack s = ramp_stack(5, 7, 6);
    const auto path = scratch("round.qimg");
    write_qimg(path, s);
    CHECK(read_qimg(path) == s);

    const ImageStack empty(0, 4, 4);
    write_qimg(path, empty);
    const ImageStack back = read_qimg(path);
    CHECK(back.size() == 0);
    CHECK(back.height() == 4);
}

TEST_CASE("qimg rejects damaged input") {
    std::ostringstream out;
    write_qimg(out, ramp_stack(2, 2, 2));
    std::string b = out.str();

    std::istringstream truncated(b.substr(0, b.size() - 3));
    CHECK_THROWS_AS(read_qimg(truncated), DataError);
    std::istringstream short_header(b.substr(0, 7));
    CHECK_THROWS_AS(read_qimg(short_header), DataError);

    std::string bad = b;
    bad[0] = 'X';
    std::istringstream bad_magic(bad);
    CHECK_THROWS_AS(read_qimg(bad_magic), DataError);

    std::string bad_version = b;
    bad_version[4] = 9;
    std::istringstream v(bad_version);
    CHECK_THROWS_AS(read_qimg(v), DataError);

    CHECK_THROWS_AS(read_qimg(scratch("does_not_exist.qimg")), DataError);
}

TEST_CASE("sim config json round trip and unknown keys") {
    SimConfig c;
    c.exposure_ms = 12.5;
    c.geometry.psf_sigma_px = 2.1;
    c.seed = 0xFFFFFFFFFFFFULL;
    const SimConfig back = sim_config_from_json(Json::parse(to_json(c).dump()));
    CHECK(back.exposure_ms == 12.5);
    CHECK(back.geometry.psf_sigma_px == 2.1);
    CHECK(back.seed == c.seed);
    CHECK(to_json(back) == to_json(c));

    Json j = to_json(c);
    j["photon_rate"] = 3;
    CHECK_THROWS_AS(sim_config_from_json(j), ConfigError);
    Json g = to_json(c);
    g["geometry"]["pitch"] = 1;
    CHECK_THROWS_AS(sim_config_from_json(g), ConfigError);
    Json t = to_json(c);
    t["exposure_ms"] = "long";
    CHECK_THROWS_AS(sim_config_from_json(t), ConfigError);

    // Missing keys keep defaults.
    const SimConfig partial = sim_config_from_json(Json::parse(R"({"exposure_ms": 8})"));
    CHECK(partial.exposure_ms == 8.0);
    CHECK(partial.n_images == SimConfig{}.n_images);
}

TEST_CASE("dataset sidecar round trip") {
    SimConfig c;
    c.n_images = 4;
    DatasetMeta meta;
    meta.config = c;
    meta.truth = sample_states(4, 9, 0.5, 1);
    meta.labels = sample_states(4, 9, 0.5, 2);
    meta.stats = PreprocessStats{1.25, 3.5};
    meta.split_seed = 77;
    meta.crop = std::array<std::size_t, 4>{1, 2, 20, 21};
    const ImageStack images = ramp_stack(4, 28, 28);
    const auto stem = scratch("ds");
    write_dataset(stem, images, meta);
    CHECK(fs::exists(stem.string() + ".qimg"));
    CHECK(fs::exists(stem.string() + ".json"));

    const Dataset ds = read_dataset(stem);
    CHECK(ds.images == images);
    CHECK(ds.meta.truth == meta.truth);
    REQUIRE(ds.meta.labels);
    CHECK(*ds.meta.labels == *meta.labels);
    REQUIRE(ds.meta.stats);
    CHECK(ds.meta.stats->train_mean == 1.25);
    CHECK(ds.meta.stats->train_range == 3.5);
    CHECK(ds.meta.split_seed == 77u);
    CHECK(ds.meta.crop == meta.crop);

    const Json side = read_json_file(stem.string() + ".json");
    CHECK(side.contains("config"));
    CHECK(side.contains("truth"));
    CHECK(side.contains("seed"));
    CHECK(side["truth"].size() == 4);

    // Truth rows must match the image count, on write and on read.
    DatasetMeta wrong = meta;
    wrong.truth = sample_states(3, 9, 0.5, 1);
    CHECK_THROWS_AS(write_dataset(stem, images, wrong), DataError);
    write_qimg(stem.string() + ".qimg", ramp_stack(3, 28, 28));
    CHECK_THROWS_AS(read_dataset(stem), DataError);
}

TEST_CASE("state matrix json validation") {
    CHECK_THROWS_AS(state_matrix_from_json(Json::parse("[[0,1],[1]]")), DataError);
    CHECK_THROWS_AS(state_matrix_from_json(Json::parse("[[0,2]]")), DataError);
    const StateMatrix m = state_matrix_from_json(Json::parse("[[0,1,1],[1,0,0]]"));
    CHECK(m.n_images == 2);
    CHECK(m.at(0, 2) == 1);
    CHECK(m.at(1, 0) == 1);
}

TEST_CASE("model json round trip for every kind") {
    SiteFit site{5, {13.4, 13.6}, 1.8, 2.0, 0.1, false};
    FilterModel mf;
    mf.kind = FilterKind::MFSite;
    mf.site_index = 5;
    mf.boundary = make_boundary(site, 3);
    mf.weights = {0.1, -0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    mf.threshold = 0.37;
    FilterModel back = filter_model_from_json(Json::parse(to_json(mf).dump()));
    CHECK(back.kind == FilterKind::MFSite);
    CHECK(back.boundary == mf.boundary);
    CHECK(back.weights == mf.weights);
    CHECK(back.threshold == 0.37);
    const Json j = to_json(mf);
    for (const char* key : {"kind", "site", "s", "center", "c", "theta", "weights"}) CHECK(j.contains(key));
    CHECK(j["s"] == 3);

    FilterModel arr = mf;
    arr.kind = FilterKind::MFArray;
    SiteFit other{6, {13.4, 19.6}, 1.8, 2.0, 0.1, false};
    arr.neighbors = {make_boundary(other, 3)};
    arr.weights.push_back(-0.5);
    back = filter_model_from_json(Json::parse(to_json(arr).dump()));
    CHECK(back.neighbors == arr.neighbors);
    CHECK(back.weights == arr.weights);

    FilterModel g;
    g.kind = FilterKind::Gaussian;
    g.site_index = 5;
    g.boundary = make_boundary(site, 6);
    g.pixel_weights = gaussian_weight_map(site, 1e-3, 28, 28);
    g.sigma = 1.8;
    g.amplitude = 2.0;
    g.threshold = 4.5;
    back = filter_model_from_json(Json::parse(to_json(g).dump()));
    REQUIRE(back.pixel_weights.size() == g.pixel_weights.size());
    for (std::size_t i = 0; i < g.pixel_weights.size(); ++i) {
        CHECK(back.pixel_weights[i].row == g.pixel_weights[i].row);
        CHECK(back.pixel_weights[i].col == g.pixel_weights[i].col);
        CHECK(back.pixel_weights[i].weight == g.pixel_weights[i].weight);
    }
    CHECK(back.sigma == 1.8);

    FilterModel sq;
    sq.kind = FilterKind::Square;
    sq.site_index = 5;
    sq.boundary = make_boundary(site, 6);
    sq.threshold = 12.0;
    back = filter_model_from_json(Json::parse(to_json(sq).dump()));
    CHECK(back.boundary == sq.boundary);
    CHECK(back.weights.empty());

    Json bad = to_json(mf);
    bad["kind"] = "cnn";
    CHECK_THROWS(filter_model_from_json(bad));
    Json wrong_dim = to_json(mf);
    wrong_dim["weights"] = Json::array({1.0, 2.0});
    CHECK_THROWS_AS(filter_model_from_json(wrong_dim), DataError);
}

TEST_CASE("content hash is stable") {
    CHECK(content_hash("") == "cbf29ce484222325");
    CHECK(content_hash("a") == "af63dc4c8601ec8c");
    CHECK(content_hash("abc") != content_hash("acb"));
}
