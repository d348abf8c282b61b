#pragma once

#include <map>
#include <string>
#include <vector>

#include "ocelot/labels.hpp"
#include "ocelot/postprocess.hpp"

namespace ocelot::metrics {

// 3 um matching radius at 0.2 MPP
inline constexpr double kMatchRadiusPx = 15.0;

struct ClassCounts {
    long long tp = 0;
    long long fp = 0;
    long long fn = 0;
    bool defined() const { return tp + fp + fn > 0; }
};

struct MatchCounts {
    std::map<int, ClassCounts> per_class;

    ClassCounts& operator[](int class_id) { return per_class[class_id]; }
    void add(const MatchCounts& other);
};

struct F1Report {
    std::map<int, double> per_class_f1;  // defined classes only
    double mean_f1 = 0.0;
};

// Greedy matching in descending confidence (ties: row-major coordinate,
// then input order). Each detection takes its nearest still-unmatched
// ground-truth point within the radius (inclusive, class-agnostic; distance
// ties go to the lower GT index). Equal classes make a TP and consume the
// GT; unequal classes make an FP of the detection's class and leave the GT
// available; GTs never consumed count as FN.
MatchCounts match_detections(const postprocess::DetectionSet& dets,
                             const std::vector<labels::CellPoint>& gts,
                             double radius_px = kMatchRadiusPx);

// Per-class F1 = 2TP/(2TP+FP+FN); classes with all-zero counts are excluded
// from the mean. Throws if no class is evaluable.
F1Report f1_from_counts(const MatchCounts& counts);

struct RunSummary {
    double mean = 0.0;
    double ci_half_width = 0.0;  // 95%, Student-t with n-1 dof
    int n = 0;
};

// Mean and 95% confidence-interval half-width over repeated runs. n >= 2.
RunSummary aggregate_runs(const std::vector<double>& scores);

// "64.44±1.82"
std::string format_mean_ci(const RunSummary& summary);

// Micro-average within each organ: counts are summed per organ before the
// F1 computation. Organs with no evaluable class are omitted from the table.
std::map<std::string, F1Report> per_organ_report(
    const std::vector<std::pair<std::string, MatchCounts>>& entries);

// Two-sided Welch t-test p-value. Both samples need n >= 2. When both
// sample variances vanish the p-value degenerates to 1 for equal means and
// 0 otherwise.
double significance_test(const std::vector<double>& runs_a,
                         const std::vector<double>& runs_b);

// Report JSON: counts, per-class F1, mean F1, optional per-organ table.
std::string report_json(const MatchCounts& counts, const F1Report& report,
                        const std::map<std::string, F1Report>& per_organ = {});

}  // namespace ocelot::metrics
