#pragma once

#include "ocelot/field.hpp"

namespace ocelot::geometry {

// Two-FoV patch layout: a high-resolution cell patch whose center sits at
// relative coordinates (c_x, c_y) inside a larger tissue patch, which is
// stored downsampled. All cross-FoV coordinate math derives from this.
struct PatchGeometry {
    double mpp_cell = 0.2;            // microns per pixel of the cell patch
    int cell_side_px = 1024;
    int fov_ratio = 4;                // tissue raw FoV side / cell FoV side
    int tissue_store_downsample = 4;  // storage downsample of the tissue patch
    double c_x = 0.5;                 // cell-patch center in [0,1] over the tissue extent
    double c_y = 0.5;

    static PatchGeometry ocelot_defaults() { return PatchGeometry{}; }

    // stored tissue side implied by the fields
    int tissue_store_side() const {
        return cell_side_px * fov_ratio / tissue_store_downsample;
    }

    // throws std::invalid_argument on any violated invariant
    void validate() const;
};

// Axis-aligned square window in the stored tissue grid.
struct WindowRect {
    int top = 0;
    int left = 0;
    int side = 0;
};

enum class ResampleMode { Nearest, Bilinear };

// Declared by the caller; class-label fields must never be interpolated.
enum class FieldSemantics { Continuous, Labels };

// The cell-patch-associated window in the stored tissue grid.
// side = tissue_store_side_px / fov_ratio (exact division required),
// offsets rounded half-up from c * side - window/2.
WindowRect crop_window(const PatchGeometry& geom, int tissue_store_side_px);

// Crop the cell window out of a tissue-grid field and upsample it to the
// cell grid. Nearest replicates source pixels into integer blocks; bilinear
// interpolates with the pixel-center convention, clamped at window edges.
ScalarField crop_and_upsample(const ScalarField& map, const PatchGeometry& geom,
                              ResampleMode mode,
                              FieldSemantics semantics = FieldSemantics::Continuous);

// Mean-pool a cell-grid field by the integer window factor and place it at
// the crop window of an otherwise all-zero tissue-grid field.
ScalarField downsample_and_pad(const ScalarField& cell_map, const PatchGeometry& geom,
                               int tissue_store_side_px);

struct MappedPoint {
    double x = 0.0;
    double y = 0.0;
    bool inside = false;  // false when the mapped point leaves the target grid
};

// Affine point transforms determined by the crop window. Coordinates scale
// by the window factor (corner convention), so forward/inverse compose to
// the identity in exact arithmetic.
MappedPoint cell_to_tissue_point(double x, double y, const PatchGeometry& geom,
                                 int tissue_store_side_px);
MappedPoint tissue_to_cell_point(double x, double y, const PatchGeometry& geom,
                                 int tissue_store_side_px);

}  // namespace ocelot::geometry
