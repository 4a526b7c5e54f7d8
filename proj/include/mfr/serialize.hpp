#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "mfr/filters.hpp"
#include "mfr/locate.hpp"
#include "mfr/sim.hpp"
#include "mfr/train.hpp"

namespace mfr {

using Json = nlohmann::json;

Json to_json(const ArrayGeometry& g);
ArrayGeometry geometry_from_json(const Json& j);
Json to_json(const SimConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
SimConfig sim_config_from_json(const Json& j);

Json to_json(const StateMatrix& m);
StateMatrix state_matrix_from_json(const Json& j);

Json to_json(const PreprocessStats& s);
PreprocessStats stats_from_json(const Json& j);

/// [{site, center:[r,c], sigma, amplitude, offset, fit_failed}, ...]
Json to_json(const SiteGeometry& g);
SiteGeometry site_geometry_from_json(const Json& j);

/// {kind, site, s, center:[r,c], c, theta, weights:[...]}. Gaussian models store weights as
/// [[row, col, w], ...] plus sigma and amplitude; MF-Array models add neighbors.
Json to_json(const FilterModel& m);
FilterModel filter_model_from_json(const Json& j);

/// Writes site_<k>.json for every model into `dir` (created if needed).
void save_model_set(const std::filesystem::path& dir, const ModelSet& set);
ModelSet load_model_set(const std::filesystem::path& dir);

/// Sidecar metadata stored next to a .qimg stack.
struct DatasetMeta {
    SimConfig config;
    StateMatrix truth;
    std::optional<StateMatrix> labels;  // label-path labels when generated
    std::optional<PreprocessStats> stats;
    std::optional<std::uint64_t> split_seed;
    std::optional<std::array<std::size_t, 4>> crop;  // top, left, height, width
};

struct Dataset {
    ImageStack images;
    DatasetMeta meta;
};

Json to_json(const DatasetMeta& meta);
DatasetMeta dataset_meta_from_json(const Json& j);

/// <stem>.qimg and <stem>.json
void write_dataset(const std::filesystem::path& stem, const ImageStack& images, const DatasetMeta& meta);
Dataset read_dataset(const std::filesystem::path& stem);

Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// FNV-1a 64-bit over a byte string, as 16 hex digits.
std::string content_hash(const std::string& bytes);

}  // namespace mfr
