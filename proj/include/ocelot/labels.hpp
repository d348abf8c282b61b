#pragma once

#include <string>
#include <vector>

#include "ocelot/field.hpp"

namespace ocelot::labels {

// OCELOT cell classes
inline constexpr int kTumorCell = 1;
inline constexpr int kBackgroundCell = 2;

struct CellPoint {
    double x = 0.0;
    double y = 0.0;
    int class_id = 0;
    double confidence = 1.0;  // 1.0 for ground truth
};

// round(radius_um / mpp); 1.4 um at 0.2 MPP gives 7 px
int radius_px_from_um(double radius_um, double mpp);

// Rasterize point annotations into a one-hot segmentation map with
// num_classes + 1 channels (channel 0 is background). A pixel within the
// disk radius of several points takes the class of the nearest center,
// ties going to the lower point index.
ScalarField rasterize_points(const std::vector<CellPoint>& points, int side_px,
                             double radius_um, double mpp, int num_classes = 2);

struct ConsensusReport {
    struct AgreedPoint {
        double x = 0.0;
        double y = 0.0;
        int class_id = 0;
    };
    struct ClassConflict {
        CellPoint a;
        CellPoint b;
    };
    std::vector<AgreedPoint> agreed;
    std::vector<ClassConflict> class_conflicts;
    std::vector<CellPoint> only_a;
    std::vector<CellPoint> only_b;
};

// Greedy nearest-pair matching of two annotation sets under the radius.
// Matched same-class points merge at the midpoint; matched different-class
// points become class conflicts; unmatched points are listed per rater.
ConsensusReport merge_annotations(const std::vector<CellPoint>& set_a,
                                  const std::vector<CellPoint>& set_b,
                                  double match_radius_px);

// CSV with header "x,y,class" (optionally ",confidence").
std::vector<CellPoint> read_points_csv(const std::string& path);
void write_points_csv(const std::string& path, const std::vector<CellPoint>& points);

std::string consensus_report_json(const ConsensusReport& report);

}  // namespace ocelot::labels
