#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocelot/field.hpp"
#include "ocelot/geometry.hpp"
#include "ocelot/labels.hpp"

namespace ocelot::dataio {

inline constexpr const char* kManifestSchema = "ocelot-manifest/1";
inline constexpr const char* kRoiSpecSchema = "ocelot-roispec/1";
inline constexpr std::array<const char*, 3> kSubsets = {"train", "val", "test"};

// One two-FoV sample: cell patch, tissue patch, annotations, placement.
struct PatchPairRecord {
    std::string pair_id;
    std::string wsi_id;
    std::string organ;
    std::string subset;  // train | val | test
    geometry::PatchGeometry geom;
    // paths relative to the manifest directory
    std::string cell_image_path;
    std::string tissue_image_path;
    std::string cell_points_path;  // may be empty (unannotated record)
    std::string tissue_mask_path;
    std::vector<labels::CellPoint> cell_points;
};

struct Dataset {
    std::string base_dir;
    std::vector<PatchPairRecord> records;

    std::string resolve(const std::string& relative) const;
};

class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(std::vector<std::string> issues);
    const std::vector<std::string>& issues() const { return issues_; }

private:
    std::vector<std::string> issues_;
};

// Every violation across the whole manifest, empty when valid.
// `manifest_path` may name the JSON file or a directory holding manifest.json.
std::vector<std::string> validate_dataset(const std::string& manifest_path);

// Parses, validates and loads annotation points. Throws ValidationError
// listing every violation.
Dataset load_dataset(const std::string& manifest_path);

void save_manifest(const std::string& path, const Dataset& dataset);

// Single-channel mask on the stored tissue grid; verifies codes {1, 2, 255}.
ScalarField load_tissue_mask(const Dataset& dataset, const PatchPairRecord& record);

struct WsiInfo {
    std::string wsi_id;
    std::string organ;
};

// Organ-stratified subset assignment: within each organ the (sorted, unique)
// WSI ids are shuffled by the seeded RNG and cut at cumulative-rounded
// boundaries, so every patch of a WSI lands in one subset and per-organ
// ratios hold to within one WSI.
std::map<std::string, std::string> split_wsis(const std::vector<WsiInfo>& wsis,
                                              const std::array<double, 3>& ratios,
                                              std::uint64_t seed);

// Rewrites record subsets from a wsi_id -> subset map; unknown wsi_id throws.
void apply_split(Dataset& dataset, const std::map<std::string, std::string>& assignment);

struct Rect {
    long long x = 0;
    long long y = 0;
    long long w = 0;
    long long h = 0;
};

// Annotated-region description for converting datasets with one-FoV
// annotations (TIGER-style) into two-FoV pairs.
struct RoiSpec {
    std::string source_kind;  // fully_overlapping | roi_in_region
    Rect region;              // tissue-annotated region, pixels at cell resolution
    std::vector<Rect> cell_rois;
    double mpp = 0.2;
};

RoiSpec read_roi_spec(const std::string& path);

struct PairPlacement {
    long long tissue_left = 0;
    long long tissue_top = 0;
    long long cell_left = 0;
    long long cell_top = 0;
    double c_x = 0.0;
    double c_y = 0.0;
    int roi_index = -1;  // -1 when not tied to a cell ROI
};

struct PairingResult {
    std::vector<PairPlacement> pairs;
    std::vector<std::string> warnings;
};

// One tissue patch at the region's top-left corner, its area tiled into a
// (tissue_side/cell_side)^2 grid of cell sub-patches.
PairingResult pair_overlapping(const RoiSpec& spec, int cell_side, int tissue_side);

// For each cell ROI: center a cell patch on it (clamped into the region),
// then enumerate tissue windows on a cell_side-stride grid that contain the
// cell patch and fit in the region; up to (tissue_side/cell_side)^2 pairs.
// Oversized ROIs are skipped with a warning.
PairingResult pair_roi_in_region(const RoiSpec& spec, int cell_side, int tissue_side);

std::string pairing_json(const PairingResult& result, const RoiSpec& spec, int cell_side,
                         int tissue_side);

// Remaps mask codes through the table; codes absent from the table become
// default_code.
ScalarField apply_class_map(const ScalarField& mask, const std::map<int, int>& class_map,
                            int default_code);

// TIGER tissue codes: stroma classes (2, 6) -> positive class 2, unlabeled
// (0) -> unknown 255, everything else -> background 1.
std::map<int, int> tiger_default_class_map();

}  // namespace ocelot::dataio
