#pragma once

#include <map>
#include <string>
#include <vector>

#include "ocelot/dataio.hpp"
#include "ocelot/field.hpp"
#include "ocelot/geometry.hpp"
#include "ocelot/labels.hpp"

namespace ocelot::stats {

// Cell-class x tissue-class attribution counts. Points whose mapped
// location leaves the stored tissue grid land in the out_of_bounds bucket
// and are excluded from the fractions.
struct CooccurrenceTable {
    std::map<int, std::map<int, long long>> counts;  // cell class -> tissue code -> n
    std::map<int, long long> out_of_bounds;          // cell class -> n

    // per cell class, fraction of in-bounds points per tissue code; each
    // row sums to 1
    std::map<int, std::map<int, double>> fractions() const;
    long long total_in_bounds() const;
};

// Attribute each point to the mask code at its nearest stored-tissue pixel.
void accumulate_cooccurrence(CooccurrenceTable& table,
                             const std::vector<labels::CellPoint>& points,
                             const ScalarField& tissue_mask,
                             const geometry::PatchGeometry& geom);

CooccurrenceTable cooccurrence(const dataio::Dataset& dataset);

struct ClassRatios {
    std::map<int, long long> cell_counts;    // by annotated point
    std::map<int, long long> tissue_counts;  // by mask pixel
    std::map<int, double> cell;              // fractions
    std::map<int, double> tissue;
};

ClassRatios class_ratios(const dataio::Dataset& dataset);

struct SubsetCounts {
    long long pairs = 0;
    long long wsis = 0;
};

// organ -> subset -> {pairs, wsis}, with "all" rows for both axes
using DatasetSummary = std::map<std::string, std::map<std::string, SubsetCounts>>;

DatasetSummary dataset_summary(const dataio::Dataset& dataset);

std::string cooccurrence_json(const CooccurrenceTable& table);
std::string cooccurrence_csv(const CooccurrenceTable& table);
std::string ratios_json(const ClassRatios& ratios);
std::string summary_json(const DatasetSummary& summary);

}  // namespace ocelot::stats
