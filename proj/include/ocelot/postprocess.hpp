#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ocelot/field.hpp"
#include "ocelot/geometry.hpp"

namespace ocelot::postprocess {

// OCELOT tissue mask codes
inline constexpr int kTissueBackground = 1;
inline constexpr int kTissueCancer = 2;
inline constexpr int kTissueUnknown = 255;

struct Detection {
    double x = 0.0;
    double y = 0.0;
    int class_id = 0;
    double confidence = 0.0;
};

using DetectionSet = std::vector<Detection>;

// throws if per-pixel channel sums stray from 1 by more than 1e-5
void validate_probability_map(const ScalarField& prob);

// Local maxima of a single-channel map at or above the threshold, greedily
// kept by descending value (row-major on ties) so that no two returned
// peaks lie within min_distance_px in Chebyshev distance. A candidate must
// equal the maximum of its (2*min_distance+1)^2 window. Returns (x, y).
std::vector<std::pair<int, int>> extract_peaks(const ScalarField& foreground,
                                               int min_distance_px, double threshold);

// Peaks of foreground := 1 - background channel; class by argmax over the
// class channels at the peak, confidence = that class's probability.
DetectionSet detect(const ScalarField& prob, int min_distance_px, double threshold);

struct ConstraintResult {
    DetectionSet detections;
    std::vector<std::size_t> out_of_bounds;  // inputs whose mapped point left the mask
};

// Hard tissue constraint. Bidirectional (default): a detection over cancer
// area becomes a tumor cell and one over background becomes a background
// cell. One-directional: only tumor cells over background are demoted.
// Unknown tissue leaves the class unchanged. Count, coordinates and
// confidences are preserved.
ConstraintResult apply_tissue_constraint(const DetectionSet& detections,
                                         const ScalarField& tissue_mask,
                                         const geometry::PatchGeometry& geom,
                                         bool bidirectional = true);

// CSV with header "x,y,class,confidence"
DetectionSet read_detections_csv(const std::string& path);
void write_detections_csv(const std::string& path, const DetectionSet& detections);

}  // namespace ocelot::postprocess
